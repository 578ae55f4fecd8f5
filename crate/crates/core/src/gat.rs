//! Graph attention transformer layer.
//!
//! Each sub-graph runs `h` self-attention heads whose *input is the
//! adjacency matrix itself*, concatenates the head outputs and projects them
//! back to `n x n`. The `k` sub-graphs are fused by an ordered matrix product
//! `G_1 G_2 ... G_k`, which yields the transformed adjacency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corr::{AdjacencyMatrix, Stage};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Query, key and value projections of one head, each `n x d_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// One attention branch: `h` heads plus the `(h * d_h) x n` output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGraphParams {
    pub heads: Vec<HeadParams>,
    pub wo: Matrix,
}

/// All `k` branches. Branches never share parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GatLayerRepr", into = "GatLayerRepr")]
pub struct GatLayerParams {
    pub subgraphs: Vec<SubGraphParams>,
}

#[derive(Serialize, Deserialize)]
struct GatLayerRepr {
    k: usize,
    h: usize,
    d_h: usize,
    subgraphs: Vec<SubGraphParams>,
}

impl TryFrom<GatLayerRepr> for GatLayerParams {
    type Error = Error;

    fn try_from(r: GatLayerRepr) -> Result<Self> {
        let p = GatLayerParams {
            subgraphs: r.subgraphs,
        };
        let n = p
            .subgraphs
            .first()
            .map(|s| s.wo.cols())
            .ok_or_else(|| Error::Config("attention layer has no sub-graphs".into()))?;
        p.validate(n)?;
        if (p.k(), p.h(), p.d_h()) != (r.k, r.h, r.d_h) {
            return Err(Error::Config(format!(
                "attention bundle header (k={}, h={}, d_h={}) disagrees with its matrices",
                r.k, r.h, r.d_h
            )));
        }
        Ok(p)
    }
}

impl From<GatLayerParams> for GatLayerRepr {
    fn from(p: GatLayerParams) -> Self {
        GatLayerRepr {
            k: p.k(),
            h: p.h(),
            d_h: p.d_h(),
            subgraphs: p.subgraphs,
        }
    }
}

fn uniform_matrix<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

impl HeadParams {
    pub fn zeros(n: usize, d_h: usize) -> Self {
        HeadParams {
            wq: Matrix::zeros(n, d_h),
            wk: Matrix::zeros(n, d_h),
            wv: Matrix::zeros(n, d_h),
        }
    }

    pub fn d_h(&self) -> usize {
        self.wq.cols()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let want = (n, self.d_h());
        for m in [&self.wq, &self.wk, &self.wv] {
            if m.shape() != want || want.1 == 0 {
                return Err(Error::shape("attention head", m.shape(), want));
            }
        }
        Ok(())
    }
}

impl SubGraphParams {
    pub fn zeros(n: usize, h: usize, d_h: usize) -> Self {
        SubGraphParams {
            heads: (0..h).map(|_| HeadParams::zeros(n, d_h)).collect(),
            wo: Matrix::zeros(h * d_h, n),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let first = self
            .heads
            .first()
            .ok_or_else(|| Error::Config("sub-graph has no heads".into()))?;
        let d_h = first.d_h();
        for head in &self.heads {
            if head.d_h() != d_h {
                return Err(Error::shape(
                    "sub-graph heads",
                    head.wq.shape(),
                    first.wq.shape(),
                ));
            }
            head.validate(n)?;
        }
        let want = (self.heads.len() * d_h, n);
        if self.wo.shape() != want {
            return Err(Error::shape("output projection", self.wo.shape(), want));
        }
        Ok(())
    }
}

impl GatLayerParams {
    /// Uniform initialization on `[-1/sqrt(n), 1/sqrt(n)]`.
    pub fn init<R: Rng>(n: usize, k: usize, h: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || k == 0 || h == 0 || d_h == 0 {
            return Err(Error::Config(format!(
                "attention dims must be positive (n={n}, k={k}, h={h}, d_h={d_h})"
            )));
        }
        let bound = 1.0 / (n as f64).sqrt();
        let subgraphs = (0..k)
            .map(|_| SubGraphParams {
                heads: (0..h)
                    .map(|_| HeadParams {
                        wq: uniform_matrix(n, d_h, bound, rng),
                        wk: uniform_matrix(n, d_h, bound, rng),
                        wv: uniform_matrix(n, d_h, bound, rng),
                    })
                    .collect(),
                wo: uniform_matrix(h * d_h, n, bound, rng),
            })
            .collect();
        Ok(GatLayerParams { subgraphs })
    }

    pub fn zeros(n: usize, k: usize, h: usize, d_h: usize) -> Self {
        GatLayerParams {
            subgraphs: (0..k).map(|_| SubGraphParams::zeros(n, h, d_h)).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn h(&self) -> usize {
        self.subgraphs.first().map_or(0, |s| s.heads.len())
    }

    pub fn d_h(&self) -> usize {
        self.subgraphs
            .first()
            .and_then(|s| s.heads.first())
            .map_or(0, HeadParams::d_h)
    }

    /// Checks every matrix against node count `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.subgraphs.is_empty() {
            return Err(Error::Config("attention layer has no sub-graphs".into()));
        }
        for sg in &self.subgraphs {
            sg.validate(n)?;
        }
        Ok(())
    }

    /// Every weight matrix in canonical order: per sub-graph, per head
    /// `wq, wk, wv`, then the sub-graph's `wo`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for sg in &self.subgraphs {
            for hp in &sg.heads {
                out.extend([&hp.wq, &hp.wk, &hp.wv]);
            }
            out.push(&sg.wo);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for sg in &mut self.subgraphs {
            for hp in &mut sg.heads {
                out.extend([&mut hp.wq, &mut hp.wk, &mut hp.wv]);
            }
            out.push(&mut sg.wo);
        }
        out
    }

    /// Names matching [`GatLayerParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (j, sg) in self.subgraphs.iter().enumerate() {
            for i in 0..sg.heads.len() {
                for w in ["wq", "wk", "wv"] {
                    out.push(format!("gat.sub{j}.head{i}.{w}"));
                }
            }
            out.push(format!("gat.sub{j}.wo"));
        }
        out
    }
}

fn check_input(a: &Matrix, n_expected: usize) -> Result<()> {
    if !a.is_square() || a.rows() != n_expected {
        return Err(Error::shape(
            "attention input",
            a.shape(),
            (n_expected, n_expected),
        ));
    }
    Ok(())
}

/// Intermediate values of one head, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Row-stochastic attention weights.
    attn: Matrix,
    out: Matrix,
}

fn head_forward(a: &Matrix, hp: &HeadParams) -> Result<HeadCache> {
    check_input(a, hp.wq.rows())?;
    hp.validate(a.rows())?;
    let q = a.matmul(&hp.wq)?;
    let k = a.matmul(&hp.wk)?;
    let v = a.matmul(&hp.wv)?;
    let scale = 1.0 / (hp.d_h() as f64).sqrt();
    let attn = q.matmul(&k.transpose())?.scale(scale).row_softmax();
    let out = attn.matmul(&v)?;
    Ok(HeadCache { q, k, v, attn, out })
}

/// Scaled dot-product attention head over the adjacency: `n x d_h`.
pub fn attention_head(a: &AdjacencyMatrix, hp: &HeadParams) -> Result<Matrix> {
    Ok(head_forward(a.matrix(), hp)?.out)
}

/// The row-stochastic attention weights of one head, `n x n`.
pub fn attention_weights(a: &AdjacencyMatrix, hp: &HeadParams) -> Result<Matrix> {
    Ok(head_forward(a.matrix(), hp)?.attn)
}

#[derive(Debug, Clone)]
pub(crate) struct SubGraphCache {
    heads: Vec<HeadCache>,
    concat: Matrix,
    g: Matrix,
}

fn subgraph_forward(a: &Matrix, sp: &SubGraphParams) -> Result<SubGraphCache> {
    sp.validate(a.rows())?;
    let heads = sp
        .heads
        .iter()
        .map(|hp| head_forward(a, hp))
        .collect::<Result<Vec<_>>>()?;
    let outs: Vec<Matrix> = heads.iter().map(|h| h.out.clone()).collect();
    let concat = Matrix::hcat(&outs)?;
    let g = concat.matmul(&sp.wo)?;
    Ok(SubGraphCache { heads, concat, g })
}

/// One sub-graph adjacency `G_j`: concatenated heads times `W^O`.
pub fn subgraph(a: &AdjacencyMatrix, sp: &SubGraphParams) -> Result<Matrix> {
    Ok(subgraph_forward(a.matrix(), sp)?.g)
}

#[derive(Debug, Clone)]
pub(crate) struct GatCache {
    subgraphs: Vec<SubGraphCache>,
    /// `prefix[j] = G_0 ... G_j`.
    prefix: Vec<Matrix>,
}

impl GatCache {
    pub(crate) fn output(&self) -> &Matrix {
        self.prefix.last().expect("at least one sub-graph")
    }
}

pub(crate) fn transform_forward(a: &Matrix, lp: &GatLayerParams) -> Result<GatCache> {
    lp.validate(a.rows())?;
    let subgraphs = lp
        .subgraphs
        .iter()
        .map(|sp| subgraph_forward(a, sp))
        .collect::<Result<Vec<_>>>()?;
    let mut prefix: Vec<Matrix> = Vec::with_capacity(subgraphs.len());
    for sg in &subgraphs {
        let next = match prefix.last() {
            None => sg.g.clone(),
            Some(p) => p.matmul(&sg.g)?,
        };
        prefix.push(next);
    }
    Ok(GatCache { subgraphs, prefix })
}

/// `A' = G_1 G_2 ... G_k`, multiplied in ascending sub-graph order.
pub fn transform_adjacency(a: &AdjacencyMatrix, lp: &GatLayerParams) -> Result<AdjacencyMatrix> {
    let cache = transform_forward(a.matrix(), lp)?;
    AdjacencyMatrix::new(cache.output().clone(), Stage::Transformed)
}

fn head_backward(a_t: &Matrix, cache: &HeadCache, d_out: &Matrix) -> Result<HeadParams> {
    let d_h = cache.q.cols() as f64;
    let scale = 1.0 / d_h.sqrt();
    // out = attn * v
    let d_attn = d_out.matmul(&cache.v.transpose())?;
    let d_v = cache.attn.transpose().matmul(d_out)?;
    // softmax Jacobian, row by row: ds = p * (dp - <dp, p>)
    let n = cache.attn.rows();
    let mut d_scores = Matrix::zeros(n, n);
    for i in 0..n {
        let p = cache.attn.row(i);
        let dp = d_attn.row(i);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for j in 0..n {
            d_scores.set(i, j, p[j] * (dp[j] - dot) * scale);
        }
    }
    let d_q = d_scores.matmul(&cache.k)?;
    let d_k = d_scores.transpose().matmul(&cache.q)?;
    Ok(HeadParams {
        wq: a_t.matmul(&d_q)?,
        wk: a_t.matmul(&d_k)?,
        wv: a_t.matmul(&d_v)?,
    })
}

fn subgraph_backward(
    a_t: &Matrix,
    sp: &SubGraphParams,
    cache: &SubGraphCache,
    d_g: &Matrix,
) -> Result<SubGraphParams> {
    let wo = cache.concat.transpose().matmul(d_g)?;
    let d_concat = d_g.matmul(&sp.wo.transpose())?;
    let mut heads = Vec::with_capacity(sp.heads.len());
    let mut offset = 0;
    for hc in &cache.heads {
        let width = hc.out.cols();
        let d_out = d_concat.col_block(offset, width);
        heads.push(head_backward(a_t, hc, &d_out)?);
        offset += width;
    }
    Ok(SubGraphParams { heads, wo })
}

/// Gradient of a scalar loss with respect to every attention parameter,
/// given the upstream gradient `d_aprime` of the transformed adjacency.
pub(crate) fn transform_backward(
    a: &Matrix,
    lp: &GatLayerParams,
    cache: &GatCache,
    d_aprime: &Matrix,
) -> Result<GatLayerParams> {
    let k = lp.k();
    let a_t = a.transpose();
    // d G_j = (G_0..G_{j-1})^T dA' (G_{j+1}..G_{k-1})^T
    let mut suffix_t: Vec<Option<Matrix>> = vec![None; k];
    let mut acc: Option<Matrix> = None;
    for j in (0..k).rev() {
        suffix_t[j] = acc.clone();
        let g_t = cache.subgraphs[j].g.transpose();
        acc = Some(match acc {
            None => g_t,
            Some(s) => s.matmul(&g_t)?,
        });
    }
    let mut subgraphs = Vec::with_capacity(k);
    for (j, suffix) in suffix_t.iter().enumerate() {
        let mut d_g = d_aprime.clone();
        if j > 0 {
            d_g = cache.prefix[j - 1].transpose().matmul(&d_g)?;
        }
        if let Some(s) = suffix {
            // suffix_t[j] holds (G_{j+1}..G_{k-1})^T
            d_g = d_g.matmul(s)?;
        }
        subgraphs.push(subgraph_backward(
            &a_t,
            &lp.subgraphs[j],
            &cache.subgraphs[j],
            &d_g,
        )?);
    }
    Ok(GatLayerParams { subgraphs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adjacency(n: usize, seed: u64) -> AdjacencyMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AdjacencyMatrix::new(
            Matrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0)),
            Stage::Reweighted,
        )
        .unwrap()
    }

    #[test]
    fn zero_projections_give_zero_output() {
        let a = adjacency(4, 1);
        let out = attention_head(&a, &HeadParams::zeros(4, 3)).unwrap();
        assert_eq!(out, Matrix::zeros(4, 3));
        let w = attention_weights(&a, &HeadParams::zeros(4, 3)).unwrap();
        assert!(w.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn singleton_attention_returns_values() {
        let a =
            AdjacencyMatrix::new(Matrix::from_rows(&[[0.7]]).unwrap(), Stage::Reweighted).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = GatLayerParams::init(1, 1, 1, 2, &mut rng).unwrap();
        let hp = &lp.subgraphs[0].heads[0];
        let out = attention_head(&a, hp).unwrap();
        let v = a.matrix().matmul(&hp.wv).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn single_head_identity_projection() {
        let a = adjacency(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lp = GatLayerParams::init(3, 1, 1, 3, &mut rng).unwrap();
        lp.subgraphs[0].wo = Matrix::identity(3);
        let g = subgraph(&a, &lp.subgraphs[0]).unwrap();
        let head = attention_head(&a, &lp.subgraphs[0].heads[0]).unwrap();
        assert_eq!(g, head);
        lp.subgraphs[0].wo = Matrix::zeros(3, 3);
        assert_eq!(subgraph(&a, &lp.subgraphs[0]).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn single_subgraph_transform_is_bit_identical() {
        let a = adjacency(5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lp = GatLayerParams::init(5, 1, 3, 2, &mut rng).unwrap();
        let t = transform_adjacency(&a, &lp).unwrap();
        assert_eq!(t.matrix(), &subgraph(&a, &lp.subgraphs[0]).unwrap());
        assert_eq!(t.stage(), Stage::Transformed);
    }

    #[test]
    fn zero_subgraph_annihilates() {
        let a = adjacency(4, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut lp = GatLayerParams::init(4, 3, 2, 2, &mut rng).unwrap();
        lp.subgraphs[1].wo = Matrix::zeros(4, 4);
        let t = transform_adjacency(&a, &lp).unwrap();
        assert_eq!(t.matrix().max_abs(), 0.0);
    }

    #[test]
    fn output_is_square_for_any_head_config() {
        let a = adjacency(4, 11);
        for (k, h, d_h) in [(1, 1, 1), (2, 3, 5), (3, 2, 4)] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let lp = GatLayerParams::init(4, k, h, d_h, &mut rng).unwrap();
            assert_eq!(
                transform_adjacency(&a, &lp).unwrap().matrix().shape(),
                (4, 4)
            );
        }
    }

    #[test]
    fn subgraphs_do_not_share_parameters() {
        let a = adjacency(4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lp = GatLayerParams::init(4, 2, 2, 3, &mut rng).unwrap();
        let g1 = subgraph(&a, &lp.subgraphs[0]).unwrap();
        let g2 = subgraph(&a, &lp.subgraphs[1]).unwrap();
        assert!(g1.max_abs_diff(&g2).unwrap() > 1e-6);
        let mut perturbed = lp.clone();
        perturbed.subgraphs[1].heads[0].wq = perturbed.subgraphs[1].heads[0].wq.scale(3.0);
        perturbed.subgraphs[1].wo = perturbed.subgraphs[1].wo.scale(-2.0);
        assert_eq!(subgraph(&a, &perturbed.subgraphs[0]).unwrap(), g1);
        assert_ne!(subgraph(&a, &perturbed.subgraphs[1]).unwrap(), g2);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = adjacency(4, 1);
        assert!(matches!(
            attention_head(&a, &HeadParams::zeros(3, 2)),
            Err(Error::Shape { .. })
        ));
        let mut lp = GatLayerParams::zeros(4, 1, 2, 2);
        lp.subgraphs[0].wo = Matrix::zeros(3, 4);
        assert!(transform_adjacency(&a, &lp).is_err());
    }

    #[test]
    fn bundle_json_schema() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = GatLayerParams::init(3, 2, 2, 4, &mut rng).unwrap();
        let v = serde_json::to_value(&lp).unwrap();
        assert_eq!(
            (v["k"].as_u64(), v["h"].as_u64(), v["d_h"].as_u64()),
            (Some(2), Some(2), Some(4))
        );
        assert_eq!(v["subgraphs"][1]["heads"][0]["wk"]["cols"], 4);
        assert_eq!(v["subgraphs"][0]["wo"]["rows"], 8);
        let back: GatLayerParams = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, lp);
        let mut bad = v;
        bad["h"] = 3.into();
        assert!(serde_json::from_value::<GatLayerParams>(bad).is_err());
    }
}
