//! Central-difference gradient oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corr::{build_correlation, AdjacencyMatrix, CorrPipelineConfig};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{
    forward, gradients, AttentionConfig, Features, GatnParams, Gradients, LabeledSample,
    ModelConfig,
};

/// Magnitudes below this are compared absolutely rather than relatively.
/// Central differences at step 1e-5 carry roundoff near `eps * |L| / step`,
/// i.e. ~1e-11 for O(1) losses, so the floor must sit well above that for
/// a 1e-4 relative tolerance to be meaningful on near-zero entries.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `(f(x + step) - f(x - step)) / (2 step)`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, step: f64) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let hi = f(x + step)?;
    let lo = f(x - step)?;
    Ok((hi - lo) / (2.0 * step))
}

/// Numerical gradient of the mean batch loss, one scalar at a time.
pub fn finite_diff_gradients(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    batch: &[LabeledSample],
    step: f64,
) -> Result<Gradients> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut work = params.clone();
    let mut out = params.zeros_like();
    let count = params.tensors().len();
    for t in 0..count {
        let len = params.tensors()[t].as_slice().len();
        for e in 0..len {
            let orig = params.tensors()[t].as_slice()[e];
            let g = central_difference(
                |v| {
                    work.tensors_mut()[t].as_mut_slice()[e] = v;
                    forward(&work, z, a, batch).map(|o| o.loss)
                },
                orig,
                step,
            )?;
            work.tensors_mut()[t].as_mut_slice()[e] = orig;
            out.tensors_mut()[t].as_mut_slice()[e] = g;
        }
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Location of the worst entry, e.g. `gat.sub1.head0.wk[3]`.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error <= tol
    }
}

/// Compares [`gradients`] with [`finite_diff_gradients`] entry by entry.
pub fn check_gradients(
    params: &GatnParams,
    z: &EmbeddingMatrix,
    a: &AdjacencyMatrix,
    batch: &[LabeledSample],
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = gradients(params, z, a, batch)?;
    let numeric = finite_diff_gradients(params, z, a, batch, step)?;
    let names = params.tensor_names();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for ((name, an), nu) in names.iter().zip(analytic.tensors()).zip(numeric.tensors()) {
        for (e, (&x, &y)) in an.as_slice().iter().zip(nu.as_slice()).enumerate() {
            let err = relative_error(x, y);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = err;
                report.worst = format!("{name}[{e}]");
                report.analytic = x;
                report.numeric = y;
            }
        }
    }
    Ok(report)
}

/// A small, fully random problem for gradient checking.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub params: GatnParams,
    pub z: EmbeddingMatrix,
    pub a: AdjacencyMatrix,
    pub batch: Vec<LabeledSample>,
}

impl ToyInstance {
    /// `n` labels with `d`-dimensional embeddings, `feat_dim` features, a
    /// `k x h` attention layer with head width `d_h`, one hidden GCN layer
    /// and `batch` samples; everything drawn from `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        d: usize,
        feat_dim: usize,
        k: usize,
        h: usize,
        d_h: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let z = EmbeddingMatrix::new(Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)))?;
        let a = build_correlation(&z, &CorrPipelineConfig::default())?;
        let batch = (0..batch)
            .map(|_| {
                let x = (0..feat_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
                LabeledSample::new(Features::Pooled(x), y)
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = ModelConfig {
            hidden: vec![(d + feat_dim) / 2],
            attention: Some(AttentionConfig {
                k,
                h,
                d_h: Some(d_h),
            }),
            ..ModelConfig::default()
        };
        let params = GatnParams::init(n, d, feat_dim, &cfg, seed)?;
        Ok(ToyInstance {
            params,
            z,
            a,
            batch,
        })
    }

    /// The reference gradient-check problem: 5 labels, 8-dim embeddings,
    /// 6 features, two sub-graphs of two heads with width 5.
    pub fn standard(seed: u64) -> Result<Self> {
        ToyInstance::new(5, 8, 6, 2, 2, 5, 4, seed)
    }

    pub fn check(&self, step: f64) -> Result<GradCheckReport> {
        check_gradients(&self.params, &self.z, &self.a, &self.batch, step)
    }
}
