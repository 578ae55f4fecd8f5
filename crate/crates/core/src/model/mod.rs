//! End-to-end label-relation model: adjacency transform, graph convolution,
//! dot-product prediction against pooled image features, and binary
//! cross-entropy, with exact gradients for every learnable matrix.

mod gradcheck;
mod train;

pub use gradcheck::{
    central_difference, check_gradients, finite_diff_gradients, relative_error, GradCheckReport,
    ToyInstance, RELATIVE_ERROR_FLOOR,
};
pub use train::{sgd_step, train, LrDecay, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corr::AdjacencyMatrix;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::gat::{self, GatLayerParams};
use crate::gcn::{self, GcnLayerParams, DEFAULT_LEAKY_SLOPE};
use crate::linalg::{stable_sigmoid, Matrix};

/// Shape of the attention layer. `d_h = None` means "same as the number of
/// classes".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub k: usize,
    pub h: usize,
    #[serde(default)]
    pub d_h: Option<usize>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            k: 2,
            h: 4,
            d_h: None,
        }
    }
}

/// Architecture knobs that are independent of the data sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden GCN widths between the embedding size and the feature size.
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// `None` bypasses the attention layer and propagates over `A` directly.
    pub attention: Option<AttentionConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![1024],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            attention: Some(AttentionConfig::default()),
        }
    }
}

/// Shape-matched gradient (or momentum) bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub gat: Option<GatLayerParams>,
    pub gcn: Vec<Matrix>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = self
            .gat
            .as_ref()
            .map_or_else(Vec::new, GatLayerParams::tensors);
        out.extend(self.gcn.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self
            .gat
            .as_mut()
            .map_or_else(Vec::new, GatLayerParams::tensors_mut);
        out.extend(self.gcn.iter_mut());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }
}

/// All learnable state plus SGD momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatnParams {
    pub gat: Option<GatLayerParams>,
    pub gcn: Vec<GcnLayerParams>,
    pub velocity: Gradients,
}

impl GatnParams {
    pub fn new(gat: Option<GatLayerParams>, gcn: Vec<GcnLayerParams>) -> Self {
        let mut p = GatnParams {
            gat,
            gcn,
            velocity: Gradients {
                gat: None,
                gcn: Vec::new(),
            },
        };
        p.velocity = p.zeros_like();
        p
    }

    /// Seeded initialization for `n` labels, embedding size `d` and
    /// feature size `feat_dim`.
    pub fn init(n: usize, d: usize, feat_dim: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gat = cfg
            .attention
            .map(|a| GatLayerParams::init(n, a.k, a.h, a.d_h.unwrap_or(n), &mut rng))
            .transpose()?;
        let mut dims = vec![d];
        dims.extend(&cfg.hidden);
        dims.push(feat_dim);
        let gcn = GcnLayerParams::chain(&dims, cfg.leaky_slope, &mut rng)?;
        Ok(GatnParams::new(gat, gcn))
    }

    /// A bundle of zeros with this parameter set's shapes.
    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            gat: self.gat.as_ref().map(|g| {
                let mut z = g.clone();
                z.tensors_mut()
                    .into_iter()
                    .for_each(|t| *t = Matrix::zeros(t.rows(), t.cols()));
                z
            }),
            gcn: self
                .gcn
                .iter()
                .map(|l| Matrix::zeros(l.w.rows(), l.w.cols()))
                .collect(),
        }
    }

    /// Learnable matrices in canonical order (attention first, then GCN).
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = self
            .gat
            .as_ref()
            .map_or_else(Vec::new, GatLayerParams::tensors);
        out.extend(self.gcn.iter().map(|l| &l.w));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self
            .gat
            .as_mut()
            .map_or_else(Vec::new, GatLayerParams::tensors_mut);
        out.extend(self.gcn.iter_mut().map(|l| &mut l.w));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = self
            .gat
            .as_ref()
            .map_or_else(Vec::new, GatLayerParams::tensor_names);
        out.extend((0..self.gcn.len()).map(|l| format!("gcn.{l}.w")));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    /// Validates shapes against the data sizes; returns the feature size.
    pub fn validate(&self, n: usize, d: usize) -> Result<usize> {
        if let Some(g) = &self.gat {
            g.validate(n)?;
        }
        let feat = gcn::validate_chain(&self.gcn, d)?;
        let zeros = self.zeros_like();
        let matches = self.velocity.gat.is_some() == zeros.gat.is_some()
            && self.velocity.tensors().len() == zeros.tensors().len()
            && self
                .velocity
                .tensors()
                .iter()
                .zip(zeros.tensors())
                .all(|(a, b)| a.shape() == b.shape());
        if !matches {
            return Err(Error::Config(
                "momentum buffers do not match parameter shapes".into(),
            ));
        }
        Ok(feat)
    }
}

/// Image-side input: a `D x locations` feature map or an already pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Pooled(Vec<f64>),
    Map(Matrix),
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Pooled(v) => v.len(),
            Features::Map(m) => m.rows(),
        }
    }

    pub fn pooled(&self) -> Result<Vec<f64>> {
        match self {
            Features::Pooled(v) => Ok(v.clone()),
            Features::Map(m) => global_max_pool(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Features,
    pub targets: Vec<u8>,
}

impl LabeledSample {
    pub fn new(features: Features, targets: Vec<u8>) -> Result<Self> {
        validate_targets(&targets)?;
        Ok(LabeledSample { features, targets })
    }
}

fn validate_targets(targets: &[u8]) -> Result<()> {
    if let Some(t) = targets.iter().find(|&&t| t > 1) {
        return Err(Error::Invalid(format!("target value {t} is not 0 or 1")));
    }
    Ok(())
}

/// Per-channel maximum over spatial locations.
pub fn global_max_pool(feature_map: &Matrix) -> Result<Vec<f64>> {
    if feature_map.cols() == 0 {
        return Err(Error::shape(
            "global_max_pool",
            feature_map.shape(),
            (feature_map.rows(), 1),
        ));
    }
    Ok((0..feature_map.rows())
        .map(|c| {
            feature_map
                .row(c)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// Raw scores `W x`.
pub fn predict(label_features: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    label_features.matvec(x)
}

/// Binary cross-entropy summed over labels, evaluated from logits.
pub fn bce_loss(logits: &[f64], targets: &[u8]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::shape(
            "bce_loss",
            (logits.len(), 1),
            (targets.len(), 1),
        ));
    }
    validate_targets(targets)?;
    Ok(logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) - z * f64::from(y) + (-z.abs()).exp().ln_1p())
        .sum())
}

/// Logits and mean batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `batch x n`.
    pub logits: Matrix,
    pub loss: f64,
}

struct BranchCache {
    gat: Option<gat::GatCache>,
    norm: gcn::NormCache,
    gcn: gcn::GcnCache,
}

fn branch_forward(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
) -> Result<BranchCache> {
    if a.n() != z.n() {
        return Err(Error::shape(
            "adjacency vs embeddings",
            a.matrix().shape(),
            z.matrix().shape(),
        ));
    }
    let gat = params
        .gat
        .as_ref()
        .map(|lp| gat::transform_forward(a.matrix(), lp))
        .transpose()?;
    let a_prime = gat.as_ref().map_or(a.matrix(), gat::GatCache::output);
    let norm = gcn::normalize_forward(a_prime)?;
    let gcn = gcn::gcn_forward_cached(z.matrix(), &norm.ahat, &params.gcn)?;
    Ok(BranchCache { gat, norm, gcn })
}

/// The `n x D` label feature matrix produced by the label-relation branch.
pub fn label_features(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
) -> Result<Matrix> {
    Ok(branch_forward(params, z, a)?.gcn.output)
}

fn pooled_batch(batch: &[LabeledSample], n: usize, feat: usize) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(batch.len());
    for s in batch {
        if s.targets.len() != n {
            return Err(Error::shape("sample targets", (s.targets.len(), 1), (n, 1)));
        }
        if s.features.dim() != feat {
            return Err(Error::shape(
                "sample features",
                (s.features.dim(), 1),
                (feat, 1),
            ));
        }
        rows.push(s.features.pooled()?);
    }
    Matrix::from_rows(&rows)
}

fn loss_from_logits(logits: &Matrix, batch: &[LabeledSample]) -> Result<f64> {
    let mut total = 0.0;
    for (s, sample) in batch.iter().enumerate() {
        total += bce_loss(logits.row(s), &sample.targets)?;
    }
    Ok(total / batch.len() as f64)
}

/// Full forward pass over a batch.
pub fn forward(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    batch: &[LabeledSample],
) -> Result<ForwardOutput> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let w = label_features(params, z, a)?;
    let x = pooled_batch(batch, z.n(), w.cols())?;
    let logits = x.matmul(&w.transpose())?;
    let loss = loss_from_logits(&logits, batch)?;
    Ok(ForwardOutput { logits, loss })
}

/// Mean batch loss and its exact gradient. `z` and `a` are constants.
pub fn loss_and_gradients(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    batch: &[LabeledSample],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let cache = branch_forward(params, z, a)?;
    let w = &cache.gcn.output;
    let x = pooled_batch(batch, z.n(), w.cols())?;
    let logits = x.matmul(&w.transpose())?;
    let loss = loss_from_logits(&logits, batch)?;

    let inv_b = 1.0 / batch.len() as f64;
    let d_logits = Matrix::from_fn(logits.rows(), logits.cols(), |s, i| {
        (stable_sigmoid(logits.get(s, i)) - f64::from(batch[s].targets[i])) * inv_b
    });
    // logits = X W^T  =>  dW = dlogits^T X
    let d_w = d_logits.transpose().matmul(&x)?;
    let (gcn_grads, d_ahat) = gcn::gcn_backward(&cache.norm.ahat, &params.gcn, &cache.gcn, &d_w)?;
    let gat_grads = match (&params.gat, &cache.gat) {
        (Some(lp), Some(gc)) => {
            let d_aprime = gcn::normalize_backward(&cache.norm, &d_ahat);
            Some(gat::transform_backward(a.matrix(), lp, gc, &d_aprime)?)
        }
        _ => None,
    };
    Ok((
        loss,
        Gradients {
            gat: gat_grads,
            gcn: gcn_grads,
        },
    ))
}

/// Exact gradient of the mean batch loss.
pub fn gradients(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    batch: &[LabeledSample],
) -> Result<Gradients> {
    Ok(loss_and_gradients(params, z, a, batch)?.1)
}
