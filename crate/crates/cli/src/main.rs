//! `gatn`: build label relation matrices, train and evaluate the label
//! branch, check gradients, and run the adjacency/attention ablation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error,
//! 3 numerical-check failure. Failures print one line to stderr of the form
//! `error[<code>]: <message>`.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gatn_core::corr::{build_correlation, cooccurrence_matrix};
use gatn_core::dot::{relation_graph, DEFAULT_EDGE_THRESHOLD};
use gatn_core::embeddings::{build_embedding_matrix, parse_embedding_file, EmbeddingMatrix};
use gatn_core::experiment::{
    ablation_csv, evaluate_checkpoint, loss_history_csv, run_ablation, run_training,
    AdjacencySource, Checkpoint, ExperimentConfig,
};
use gatn_core::model::ToyInstance;
use gatn_core::synth::{synthesize, SynthConfig};
use gatn_core::{
    AdjacencyMatrix, CorrPipelineConfig, Dataset, DecisionRule, Error, LabelVocabulary,
};

const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "gatn",
    version,
    about = "Graph attention label-relation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the re-weighted label adjacency from embeddings or co-occurrence.
    BuildCorr(BuildCorrArgs),
    /// Render an adjacency matrix as a Graphviz graph.
    ExportDot(ExportDotArgs),
    /// Train the label branch and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write the metrics report.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a toy problem.
    Gradcheck(GradcheckArgs),
    /// Write a seeded, separable toy dataset.
    Synth(SynthArgs),
    /// Train and score the four adjacency/attention variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct BuildCorrArgs {
    /// Label vocabulary, one label per line.
    #[arg(long)]
    labels: PathBuf,
    /// Word embedding text file (`token v1 ... vd`); required for `corr`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Dataset JSON whose targets feed the `cooc` mode.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value = "corr")]
    mode: AdjacencySource,
    /// Output JSON path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(Args)]
struct ExportDotArgs {
    /// Adjacency matrix JSON.
    #[arg(long)]
    adj: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    edge_threshold: f64,
    /// Optional label file used for node names.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dot")]
    format: GraphFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Training dataset JSON.
    #[arg(long)]
    dataset: PathBuf,
    /// Experiment config JSON; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's adjacency source.
    #[arg(long)]
    mode: Option<AdjacencySource>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path; the loss history goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Probability threshold for the P/R/F1 family.
    #[arg(long, default_value_t = 0.5, conflicts_with = "topk")]
    threshold: f64,
    /// Predict the `k` highest-scoring labels per sample instead.
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for labels.txt, embeddings.txt, train.json, test.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Experiment config JSON; the toy preset otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Data(Error),
    Io(PathBuf, std::io::Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl Failure {
    fn report(&self) -> (u8, String) {
        match self {
            Failure::Data(e @ Error::NonFinite(_)) => (3, format!("error[{}]: {e}", e.code())),
            Failure::Data(e) => (2, format!("error[{}]: {e}", e.code())),
            Failure::Io(p, e) => (2, format!("error[io]: {}: {e}", p.display())),
            Failure::Check(msg) => (3, format!("error[gradcheck]: {msg}")),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Io(PathBuf::from("<stdout>"), e))
        }
    }
}

fn load_vocabulary(path: &Path) -> CliResult<LabelVocabulary> {
    Ok(LabelVocabulary::parse(&read(path)?)?)
}

fn load_embeddings(vocab: &LabelVocabulary, path: &Path) -> CliResult<EmbeddingMatrix> {
    let file = fs::File::open(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    let table = parse_embedding_file(BufReader::new(file))?;
    Ok(build_embedding_matrix(vocab, &table)?)
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(Dataset::from_json(&read(path)?)?)
}

fn check_classes(vocab: &LabelVocabulary, data: &Dataset) -> CliResult {
    if data.n() != vocab.len() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the label file lists {}",
            data.n(),
            vocab.len()
        ))
        .into());
    }
    Ok(())
}

fn build_corr(a: BuildCorrArgs) -> CliResult {
    let cfg = CorrPipelineConfig::new(a.tau, a.p)?;
    let vocab = load_vocabulary(&a.labels)?;
    let adj = match a.mode {
        AdjacencySource::Corr => {
            let path = a
                .embeddings
                .as_deref()
                .ok_or_else(|| Error::Config("--embeddings is required for --mode corr".into()))?;
            build_correlation(&load_embeddings(&vocab, path)?, &cfg)?
        }
        AdjacencySource::Cooc => {
            let path = a
                .samples
                .as_deref()
                .ok_or_else(|| Error::Config("--samples is required for --mode cooc".into()))?;
            let data = load_dataset(path)?;
            check_classes(&vocab, &data)?;
            cooccurrence_matrix(&data.label_matrix(), &cfg)?
        }
    };
    let text = serde_json::to_string_pretty(&adj).map_err(Error::from)?;
    emit(a.out.as_deref(), &(text + "\n"))
}

fn export_dot(a: ExportDotArgs) -> CliResult {
    let adj: AdjacencyMatrix = serde_json::from_str(&read(&a.adj)?).map_err(Error::from)?;
    let labels = a.labels.as_deref().map(load_vocabulary).transpose()?;
    let graph = relation_graph(&adj, labels.as_ref().map(|v| v.labels()), a.edge_threshold)?;
    let text = match a.format {
        GraphFormat::Dot => graph.to_dot(),
        GraphFormat::Json => graph.to_json()? + "\n",
    };
    emit(a.out.as_deref(), &text)
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let vocab = load_vocabulary(&a.labels)?;
    let z = load_embeddings(&vocab, &a.embeddings)?;
    let data = load_dataset(&a.dataset)?;
    check_classes(&vocab, &data)?;
    let run = run_training(&cfg, vocab.labels(), &z, &data)?;
    write(&a.out, &run.checkpoint.to_json()?)?;
    write(
        &a.out.with_extension("loss.csv"),
        &loss_history_csv(&run.loss_history),
    )?;
    eprintln!(
        "trained {} epochs, final loss {:.6}",
        run.loss_history.len(),
        run.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let ck = Checkpoint::from_json(&read(&a.checkpoint)?)?;
    let data = load_dataset(&a.dataset)?;
    let rule = match a.topk {
        Some(k) => DecisionRule::TopK(k),
        None => DecisionRule::Threshold(a.threshold),
    };
    let report = evaluate_checkpoint(&ck, &data, rule)?;
    emit(a.out.as_deref(), &report.to_json())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let toy = ToyInstance::standard(a.seed)?;
    let r = toy.check(GRADCHECK_STEP)?;
    println!(
        "max_relative_error={:.6e} worst={} analytic={:.6e} numeric={:.6e} checked={} tol={GRADCHECK_TOL:e}",
        r.max_relative_error, r.worst, r.analytic, r.numeric, r.checked
    );
    if r.passes(GRADCHECK_TOL) {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:.3e} at {} exceeds {GRADCHECK_TOL:e}",
            r.max_relative_error, r.worst
        )))
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let data = synthesize(&SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    })?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::Io(a.out.clone(), e))?;
    write(&a.out.join("labels.txt"), &data.labels_text())?;
    write(&a.out.join("embeddings.txt"), &data.embeddings.to_text())?;
    write(&a.out.join("train.json"), &data.train.to_json()?)?;
    write(&a.out.join("test.json"), &data.test.to_json()?)
}

fn ablate(a: AblateArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::toy(),
    };
    cfg.seed = a.seed;
    let rows = run_ablation(
        &cfg,
        &SynthConfig {
            seed: a.seed,
            ..SynthConfig::default()
        },
    )?;
    emit(a.out.as_deref(), &ablation_csv(&rows))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::BuildCorr(a) => build_corr(a),
        Command::ExportDot(a) => export_dot(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, line) = f.report();
            eprintln!("{}", line.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
