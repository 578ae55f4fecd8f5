//! Initial label adjacency: cosine similarity of label embeddings, or
//! conditional co-occurrence probabilities, followed by thresholding and
//! re-weighting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embeddings::{row_norm, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Which transformation produced an adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Cosine similarity.
    #[serde(rename = "R")]
    Similarity,
    /// Thresholded to {0, 1}.
    #[serde(rename = "Rp")]
    Binary,
    /// Re-weighted correlation matrix fed to the network.
    #[serde(rename = "A")]
    Reweighted,
    /// Output of the graph attention transformer layer.
    #[serde(rename = "At")]
    Transformed,
    /// Symmetric-normalized with self loops, ready for propagation.
    #[serde(rename = "Ahat")]
    Normalized,
}

/// Square matrix tagged with the pipeline stage that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AdjacencyRepr", into = "AdjacencyRepr")]
pub struct AdjacencyMatrix {
    a: Matrix,
    stage: Stage,
}

#[derive(Serialize, Deserialize)]
struct AdjacencyRepr {
    n: usize,
    stage: Stage,
    data: Vec<Vec<f64>>,
}

impl TryFrom<AdjacencyRepr> for AdjacencyMatrix {
    type Error = Error;

    fn try_from(r: AdjacencyRepr) -> Result<Self> {
        if r.data.len() != r.n {
            return Err(Error::Invalid(format!(
                "adjacency declares n={} but has {} rows",
                r.n,
                r.data.len()
            )));
        }
        AdjacencyMatrix::new(Matrix::from_rows(&r.data)?, r.stage)
    }
}

impl From<AdjacencyMatrix> for AdjacencyRepr {
    fn from(m: AdjacencyMatrix) -> Self {
        AdjacencyRepr {
            n: m.n(),
            stage: m.stage,
            data: m.a.to_rows(),
        }
    }
}

impl AdjacencyMatrix {
    pub fn new(a: Matrix, stage: Stage) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::shape("adjacency", a.shape(), (a.rows(), a.rows())));
        }
        Ok(AdjacencyMatrix { a, stage })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn into_matrix(self) -> Matrix {
        self.a
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// CSV with a header row of label names followed by one row per label.
    pub fn to_csv(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.n() {
            return Err(Error::shape("to_csv", (labels.len(), 1), self.a.shape()));
        }
        let mut out = labels
            .iter()
            .map(|l| csv_field(l))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for i in 0..self.n() {
            let row: Vec<String> = self.a.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        Ok(out)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Threshold `tau` and re-weighting mass `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrPipelineConfig {
    pub tau: f64,
    pub p: f64,
}

impl Default for CorrPipelineConfig {
    fn default() -> Self {
        CorrPipelineConfig { tau: 0.2, p: 0.2 }
    }
}

impl CorrPipelineConfig {
    /// `tau` must be finite and non-negative (values above 1 disconnect every
    /// pair); `p` must lie strictly inside (0, 1).
    pub fn new(tau: f64, p: f64) -> Result<Self> {
        let cfg = CorrPipelineConfig { tau, p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Invalid(format!(
                "tau must be >= 0, got {}",
                self.tau
            )));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Invalid(format!(
                "p must lie in (0, 1), got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Pairwise cosine similarity of embedding rows. Each unordered pair is
/// evaluated once so the result is exactly symmetric; the diagonal is 1.
pub fn cosine_similarity_matrix(z: &EmbeddingMatrix) -> Result<AdjacencyMatrix> {
    let z = z.matrix();
    let n = z.rows();
    let norms: Vec<f64> = (0..n).map(|i| row_norm(z.row(i))).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateEmbedding {
            index: i,
            label: format!("#{i}"),
        });
    }
    let mut r = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
            let v = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            r.set(i, j, v);
            r.set(j, i, v);
        }
    }
    AdjacencyMatrix::new(r, Stage::Similarity)
}

/// 1 where the relation is at least `tau`, else 0.
pub fn binarize(r: &AdjacencyMatrix, tau: f64) -> AdjacencyMatrix {
    AdjacencyMatrix {
        a: r.a.map(|v| if v >= tau { 1.0 } else { 0.0 }),
        stage: Stage::Binary,
    }
}

/// Puts `1 - p` on the diagonal and spreads `p` evenly over each row's
/// off-diagonal neighbours. Rows with no neighbour keep zero off-diagonals.
pub fn reweight(rp: &AdjacencyMatrix, p: f64) -> AdjacencyMatrix {
    let n = rp.n();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let degree: f64 = (0..n).filter(|&j| j != i).map(|j| rp.a.get(i, j)).sum();
        for j in 0..n {
            let v = if i == j {
                1.0 - p
            } else if degree > 0.0 {
                p * rp.a.get(i, j) / degree
            } else {
                0.0
            };
            a.set(i, j, v);
        }
    }
    AdjacencyMatrix {
        a,
        stage: Stage::Reweighted,
    }
}

/// Full embedding-based pipeline: similarity, threshold, re-weight.
pub fn build_correlation(z: &EmbeddingMatrix, cfg: &CorrPipelineConfig) -> Result<AdjacencyMatrix> {
    cfg.validate()?;
    let r = cosine_similarity_matrix(z)?;
    Ok(reweight(&binarize(&r, cfg.tau), cfg.p))
}

/// Conditional probabilities `P(j | i) = count(i and j) / count(i)` over a
/// binary samples-by-classes label matrix. Row `i` conditions on class `i`.
pub fn conditional_probabilities(labels: &Matrix) -> Result<Matrix> {
    if labels.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid("label matrix must be binary".into()));
    }
    let n = labels.cols();
    let mut counts = Matrix::zeros(n, n);
    for s in 0..labels.rows() {
        let row = labels.row(s);
        for i in (0..n).filter(|&i| row[i] == 1.0) {
            for j in (0..n).filter(|&j| row[j] == 1.0) {
                counts.set(i, j, counts.get(i, j) + 1.0);
            }
        }
    }
    if let Some(c) = (0..n).find(|&i| counts.get(i, i) == 0.0) {
        return Err(Error::DegenerateCount(c));
    }
    Ok(Matrix::from_fn(n, n, |i, j| {
        counts.get(i, j) / counts.get(i, i)
    }))
}

/// Co-occurrence variant of the pipeline: conditional probabilities, then the
/// same threshold and re-weight steps.
pub fn cooccurrence_matrix(labels: &Matrix, cfg: &CorrPipelineConfig) -> Result<AdjacencyMatrix> {
    cfg.validate()?;
    let probs = AdjacencyMatrix::new(conditional_probabilities(labels)?, Stage::Similarity)?;
    Ok(reweight(&binarize(&probs, cfg.tau), cfg.p))
}
