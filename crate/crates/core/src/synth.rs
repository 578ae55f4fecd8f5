//! Seeded, linearly separable toy data: label names, label embeddings and
//! train/test feature sets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embeddings::{build_embedding_matrix, EmbeddingMatrix, EmbeddingTable, LabelVocabulary};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Features, LabeledSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_labels: usize,
    pub embed_dim: usize,
    pub feat_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Marginal probability of each label before pairing.
    pub label_prob: f64,
    /// Half-width of the uniform feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_labels: 6,
            embed_dim: 8,
            feat_dim: 12,
            train_samples: 64,
            test_samples: 32,
            label_prob: 0.35,
            noise: 0.05,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub labels: Vec<String>,
    pub embeddings: EmbeddingTable,
    pub train: Dataset,
    pub test: Dataset,
}

impl SynthData {
    pub fn vocabulary(&self) -> Result<LabelVocabulary> {
        LabelVocabulary::new(&self.labels)
    }

    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        build_embedding_matrix(&self.vocabulary()?, &self.embeddings)
    }

    pub fn labels_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }
}

fn uniform_vec<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Labels of neighbouring class pairs (0/1, 2/3, ...) are tied half of the
/// time, and their embeddings share a common component, so both adjacency
/// constructions see some structure. Features are `P (2y - 1) + noise` for
/// a fixed random `feat_dim x n` matrix `P`.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthData> {
    let n = cfg.n_labels;
    if n == 0 || cfg.embed_dim == 0 || cfg.feat_dim == 0 || cfg.train_samples == 0 {
        return Err(Error::Config("synthetic sizes must be positive".into()));
    }
    if !(cfg.label_prob > 0.0 && cfg.label_prob < 1.0) || cfg.noise.is_nan() || cfg.noise < 0.0 {
        return Err(Error::Config(
            "label_prob must lie in (0, 1) and noise be >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let labels: Vec<String> = (0..n).map(|c| format!("c{c}")).collect();
    let groups: Vec<Vec<f64>> = (0..n.div_ceil(2))
        .map(|_| uniform_vec(cfg.embed_dim, &mut rng))
        .collect();
    let entries: Vec<(String, Vec<f64>)> = labels
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let jitter = uniform_vec(cfg.embed_dim, &mut rng);
            let v = groups[c / 2]
                .iter()
                .zip(jitter)
                .map(|(g, j)| g + 0.5 * j)
                .collect();
            (name.clone(), v)
        })
        .collect();
    let embeddings = EmbeddingTable::from_entries(&entries)?;

    let proto = Matrix::from_fn(cfg.feat_dim, n, |_, _| rng.gen_range(-1.0..1.0));

    let draw = |count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<LabeledSample>> {
        (0..count)
            .map(|_| {
                let mut y: Vec<u8> = (0..n)
                    .map(|_| u8::from(rng.gen_bool(cfg.label_prob)))
                    .collect();
                for c in (1..n).step_by(2) {
                    if rng.gen_bool(0.5) {
                        y[c] = y[c - 1];
                    }
                }
                if y.iter().all(|&v| v == 0) {
                    y[rng.gen_range(0..n)] = 1;
                }
                let signs: Vec<f64> = y.iter().map(|&v| 2.0 * f64::from(v) - 1.0).collect();
                let mut x = proto.matvec(&signs)?;
                for v in &mut x {
                    *v += cfg.noise * rng.gen_range(-1.0..1.0);
                }
                LabeledSample::new(Features::Pooled(x), y)
            })
            .collect()
    };

    // Co-occurrence statistics need every class present in training data.
    let mut train = None;
    for _ in 0..100 {
        let candidate = draw(cfg.train_samples, &mut rng)?;
        if (0..n).all(|c| candidate.iter().any(|s| s.targets[c] == 1)) {
            train = Some(candidate);
            break;
        }
    }
    let train = train.ok_or_else(|| {
        Error::Config("could not draw a training set covering every class".into())
    })?;
    let test = draw(cfg.test_samples, &mut rng)?;

    Ok(SynthData {
        labels,
        embeddings,
        train: Dataset::new(n, cfg.feat_dim, train)?,
        test: Dataset::new(n, cfg.feat_dim, test)?,
    })
}
