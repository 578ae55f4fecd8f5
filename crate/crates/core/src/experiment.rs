//! Glue between the numerical modules and the files the CLI reads and
//! writes: experiment configuration, checkpoints, train/evaluate pipelines
//! and the four-way ablation grid.

use serde::{Deserialize, Serialize};

use crate::corr::{build_correlation, cooccurrence_matrix, AdjacencyMatrix, CorrPipelineConfig};
use crate::dataset::Dataset;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::gcn::DEFAULT_LEAKY_SLOPE;
use crate::linalg::{stable_sigmoid, Matrix};
use crate::metrics::{evaluate, DecisionRule, MetricsReport, METRIC_NAMES};
use crate::model::{self, AttentionConfig, GatnParams, LrDecay, ModelConfig, TrainConfig};
use crate::synth::{synthesize, SynthConfig, SynthData};

/// Where the initial adjacency comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencySource {
    /// Cosine similarity of label embeddings.
    Corr,
    /// Conditional co-occurrence probabilities of training labels.
    Cooc,
}

impl std::str::FromStr for AdjacencySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corr" => Ok(AdjacencySource::Corr),
            "cooc" => Ok(AdjacencySource::Cooc),
            other => Err(Error::Invalid(format!("unknown adjacency mode `{other}`"))),
        }
    }
}

/// Training configuration file: optimizer settings, model shape and
/// adjacency construction in one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_decay: Option<LrDecay>,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub tau: f64,
    pub p: f64,
    pub k: usize,
    pub h: usize,
    /// Attention hidden size; `None` uses the number of classes.
    pub d_h: Option<usize>,
    pub attention: bool,
    pub mode: AdjacencySource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = AttentionConfig::default();
        ExperimentConfig {
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            lr_decay: t.lr_decay,
            hidden: ModelConfig::default().hidden,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            tau: CorrPipelineConfig::default().tau,
            p: CorrPipelineConfig::default().p,
            k: a.k,
            h: a.h,
            d_h: a.d_h,
            attention: true,
            mode: AdjacencySource::Corr,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset used by the synthetic runs: a 16-wide hidden layer,
    /// two heads, 200 epochs and no weight decay.
    pub fn toy() -> Self {
        ExperimentConfig {
            weight_decay: 0.0,
            epochs: 200,
            hidden: vec![16],
            h: 2,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.corr_config().validate()?;
        if self.attention && (self.k == 0 || self.h == 0 || self.d_h == Some(0)) {
            return Err(Error::Config("attention needs k, h and d_h >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lr_decay: self.lr_decay,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden.clone(),
            leaky_slope: self.leaky_slope,
            attention: self.attention.then_some(AttentionConfig {
                k: self.k,
                h: self.h,
                d_h: self.d_h,
            }),
        }
    }

    pub fn corr_config(&self) -> CorrPipelineConfig {
        CorrPipelineConfig {
            tau: self.tau,
            p: self.p,
        }
    }
}

/// Builds the stage-A adjacency for `mode`.
pub fn build_adjacency(
    mode: AdjacencySource,
    z: &EmbeddingMatrix,
    train: &Dataset,
    cfg: &CorrPipelineConfig,
) -> Result<AdjacencyMatrix> {
    match mode {
        AdjacencySource::Corr => build_correlation(z, cfg),
        AdjacencySource::Cooc => cooccurrence_matrix(&train.label_matrix(), cfg),
    }
}

/// Everything needed to evaluate a trained model without the original
/// label and embedding files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub labels: Vec<String>,
    pub embeddings: Matrix,
    pub adjacency: AdjacencyMatrix,
    pub params: GatnParams,
}

impl Checkpoint {
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.labels.len() != ck.embeddings.rows() || ck.adjacency.n() != ck.embeddings.rows() {
            return Err(Error::Config(
                "checkpoint labels, embeddings and adjacency disagree".into(),
            ));
        }
        ck.params
            .validate(ck.embeddings.rows(), ck.embeddings.cols())?;
        Ok(ck)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.embeddings.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub loss_history: Vec<f64>,
}

/// Initializes from `cfg.seed`, builds the adjacency and trains.
pub fn run_training(
    cfg: &ExperimentConfig,
    labels: &[String],
    z: &EmbeddingMatrix,
    train: &Dataset,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train.n() != z.n() || labels.len() != z.n() {
        return Err(Error::Config(format!(
            "dataset has {} classes, embeddings {}, labels {}",
            train.n(),
            z.n(),
            labels.len()
        )));
    }
    let a = build_adjacency(cfg.mode, z, train, &cfg.corr_config())?;
    let init = GatnParams::init(
        z.n(),
        z.dim(),
        train.d_feat(),
        &cfg.model_config(),
        cfg.seed,
    )?;
    let outcome = model::train(&cfg.train_config(), init, z, &a, train.samples())?;
    Ok(TrainRun {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            labels: labels.to_vec(),
            embeddings: z.matrix().clone(),
            adjacency: a,
            params: outcome.params,
        },
        loss_history: outcome.loss_history,
    })
}

/// Loss-history CSV: `epoch,loss`, one row per epoch.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", e + 1));
    }
    out
}

/// Sigmoid probabilities, `samples x n`.
pub fn predict_probabilities(ck: &Checkpoint, data: &Dataset) -> Result<Matrix> {
    let z = ck.embedding_matrix()?;
    let out = model::forward(&ck.params, &z, &ck.adjacency, data.samples())?;
    Ok(out.logits.map(stable_sigmoid))
}

/// Mean loss of a checkpoint on a dataset.
pub fn dataset_loss(ck: &Checkpoint, data: &Dataset) -> Result<f64> {
    let z = ck.embedding_matrix()?;
    Ok(model::forward(&ck.params, &z, &ck.adjacency, data.samples())?.loss)
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &Dataset,
    rule: DecisionRule,
) -> Result<MetricsReport> {
    if data.n() != ck.labels.len() {
        return Err(Error::Config(format!(
            "dataset has {} classes but checkpoint has {}",
            data.n(),
            ck.labels.len()
        )));
    }
    evaluate(
        &predict_probabilities(ck, data)?,
        &data.label_matrix(),
        rule,
    )
}

/// One ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub mode: AdjacencySource,
    pub attention: bool,
    pub report: MetricsReport,
}

/// Trains the four variants (co-occurrence or embedding adjacency, with or
/// without the attention layer) on the synthetic training split and scores
/// each on the held-out split.
pub fn run_ablation(base: &ExperimentConfig, synth: &SynthConfig) -> Result<Vec<AblationRow>> {
    let data: SynthData = synthesize(synth)?;
    let z = data.embedding_matrix()?;
    let grid = [
        ("ML-GCN (CO-OCC)", AdjacencySource::Cooc, false),
        ("ML-GCN (CORR)", AdjacencySource::Corr, false),
        ("GATN (CO-OCC)", AdjacencySource::Cooc, true),
        ("GATN (CORR)", AdjacencySource::Corr, true),
    ];
    grid.iter()
        .map(|&(name, mode, attention)| {
            let cfg = ExperimentConfig {
                mode,
                attention,
                ..base.clone()
            };
            let run = run_training(&cfg, &data.labels, &z, &data.train)?;
            let report = evaluate_checkpoint(&run.checkpoint, &data.test, DecisionRule::default())?;
            Ok(AblationRow {
                variant: name.to_string(),
                mode,
                attention,
                report,
            })
        })
        .collect()
}

/// `variant,mAP,CP,CR,CF1,OP,OR,OF1` with six-decimal values.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("variant,{}\n", METRIC_NAMES.join(","));
    for r in rows {
        let vals: Vec<String> = r
            .report
            .values()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect();
        out.push_str(&format!("{},{}\n", r.variant, vals.join(",")));
    }
    out
}
