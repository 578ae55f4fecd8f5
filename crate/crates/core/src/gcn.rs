//! Graph convolution over the transformed adjacency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corr::{AdjacencyMatrix, Stage};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{leaky_relu, Matrix};

/// Degree floor used by [`normalize_adjacency`].
pub const DEGREE_EPS: f64 = 1e-6;

/// Hidden-layer slope used when none is configured.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => leaky_relu(x, slope),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) if x < 0.0 => slope,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayerParams {
    pub w: Matrix,
    pub activation: Activation,
}

impl GcnLayerParams {
    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    /// Builds a layer chain through `dims` (`dims[0]` is the embedding size,
    /// the last entry the feature size). Hidden layers use leaky ReLU with
    /// `slope`; the last layer is linear. Weights are uniform on
    /// `[-1/sqrt(out), 1/sqrt(out)]`.
    pub fn chain<R: Rng>(dims: &[usize], slope: f64, rng: &mut R) -> Result<Vec<GcnLayerParams>> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "invalid GCN dimension chain {dims:?}"
            )));
        }
        let last = dims.len() - 2;
        Ok(dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let bound = 1.0 / (w[1] as f64).sqrt();
                GcnLayerParams {
                    w: Matrix::from_fn(w[0], w[1], |_, _| rng.gen_range(-bound..=bound)),
                    activation: if l == last {
                        Activation::Identity
                    } else {
                        Activation::LeakyRelu(slope)
                    },
                }
            })
            .collect())
    }
}

/// Checks that the chain starts at `in_dim`, is internally consistent and
/// ends in a linear layer. Returns the final output width.
pub fn validate_chain(layers: &[GcnLayerParams], in_dim: usize) -> Result<usize> {
    let Some(last) = layers.last() else {
        return Err(Error::Config("GCN needs at least one layer".into()));
    };
    let mut dim = in_dim;
    for (l, layer) in layers.iter().enumerate() {
        if layer.in_dim() != dim {
            return Err(Error::Config(format!(
                "GCN layer {l} expects input width {} but receives {dim}",
                layer.in_dim()
            )));
        }
        dim = layer.out_dim();
    }
    if last.activation != Activation::Identity {
        return Err(Error::Config("final GCN layer must be linear".into()));
    }
    Ok(dim)
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    tilde: Matrix,
    /// `deg^{-1/2}` per node.
    inv_sqrt: Vec<f64>,
    floored: Vec<bool>,
    pub(crate) ahat: Matrix,
}

pub(crate) fn normalize_forward(ap: &Matrix) -> Result<NormCache> {
    if !ap.is_square() {
        return Err(Error::shape(
            "normalize_adjacency",
            ap.shape(),
            (ap.rows(), ap.rows()),
        ));
    }
    let n = ap.rows();
    let tilde = ap.add(&Matrix::identity(n))?;
    let mut inv_sqrt = Vec::with_capacity(n);
    let mut floored = Vec::with_capacity(n);
    for i in 0..n {
        let deg: f64 = tilde.row(i).iter().map(|v| v.abs()).sum();
        floored.push(deg < DEGREE_EPS);
        inv_sqrt.push(deg.max(DEGREE_EPS).sqrt().recip());
    }
    let ahat = Matrix::from_fn(n, n, |i, j| inv_sqrt[i] * tilde.get(i, j) * inv_sqrt[j]);
    Ok(NormCache {
        tilde,
        inv_sqrt,
        floored,
        ahat,
    })
}

/// `D^{-1/2} (A' + I) D^{-1/2}` with `D_ii = max(sum_j |A'_ij + I_ij|, eps)`.
pub fn normalize_adjacency(ap: &AdjacencyMatrix) -> Result<AdjacencyMatrix> {
    AdjacencyMatrix::new(normalize_forward(ap.matrix())?.ahat, Stage::Normalized)
}

pub(crate) fn normalize_backward(cache: &NormCache, d_ahat: &Matrix) -> Matrix {
    let n = cache.tilde.rows();
    let r = &cache.inv_sqrt;
    let t = &cache.tilde;
    let mut d_r = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let g = d_ahat.get(i, j) * t.get(i, j);
            d_r[i] += g * r[j];
            d_r[j] += g * r[i];
        }
    }
    // r = deg^{-1/2}  =>  dr/ddeg = -r^3 / 2
    let d_deg: Vec<f64> = (0..n)
        .map(|i| {
            if cache.floored[i] {
                0.0
            } else {
                -0.5 * d_r[i] * r[i].powi(3)
            }
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let v = t.get(i, j);
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        d_ahat.get(i, j) * r[i] * r[j] + d_deg[i] * sign
    })
}

/// `activation(A_hat H W)`.
pub fn gcn_layer(h: &Matrix, ahat: &AdjacencyMatrix, lp: &GcnLayerParams) -> Result<Matrix> {
    let pre = ahat.matrix().matmul(h)?.matmul(&lp.w)?;
    Ok(pre.map(|v| lp.activation.apply(v)))
}

#[derive(Debug, Clone)]
pub(crate) struct GcnCache {
    /// Layer inputs `H_l`.
    inputs: Vec<Matrix>,
    /// `A_hat H_l`.
    propagated: Vec<Matrix>,
    /// Pre-activations `A_hat H_l W_l`.
    pre: Vec<Matrix>,
    pub(crate) output: Matrix,
}

pub(crate) fn gcn_forward_cached(
    z: &Matrix,
    ahat: &Matrix,
    layers: &[GcnLayerParams],
) -> Result<GcnCache> {
    validate_chain(layers, z.cols())?;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut propagated = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut h = z.clone();
    for lp in layers {
        let ah = ahat.matmul(&h)?;
        let m = ah.matmul(&lp.w)?;
        let next = m.map(|v| lp.activation.apply(v));
        inputs.push(h);
        propagated.push(ah);
        pre.push(m);
        h = next;
    }
    Ok(GcnCache {
        inputs,
        propagated,
        pre,
        output: h,
    })
}

/// Runs the layer chain from the label embeddings to the `n x D` label
/// feature matrix.
pub fn gcn_forward(
    z: &EmbeddingMatrix,
    ahat: &AdjacencyMatrix,
    layers: &[GcnLayerParams],
) -> Result<Matrix> {
    Ok(gcn_forward_cached(z.matrix(), ahat.matrix(), layers)?.output)
}

/// Returns `(weight gradients, gradient w.r.t. A_hat)`.
pub(crate) fn gcn_backward(
    ahat: &Matrix,
    layers: &[GcnLayerParams],
    cache: &GcnCache,
    d_out: &Matrix,
) -> Result<(Vec<Matrix>, Matrix)> {
    let n = ahat.rows();
    let mut d_w = vec![Matrix::zeros(0, 0); layers.len()];
    let mut d_ahat = Matrix::zeros(n, n);
    let ahat_t = ahat.transpose();
    let mut d_h = d_out.clone();
    for l in (0..layers.len()).rev() {
        let lp = &layers[l];
        let pre = &cache.pre[l];
        let d_pre = Matrix::from_fn(pre.rows(), pre.cols(), |i, j| {
            d_h.get(i, j) * lp.activation.derivative(pre.get(i, j))
        });
        d_w[l] = cache.propagated[l].transpose().matmul(&d_pre)?;
        let hw = cache.inputs[l].matmul(&lp.w)?;
        d_ahat.add_assign(&d_pre.matmul(&hw.transpose())?)?;
        if l > 0 {
            d_h = ahat_t.matmul(&d_pre)?.matmul(&lp.w.transpose())?;
        }
    }
    Ok((d_w, d_ahat))
}
