//! `autous` subcommands. Machine-readable results go to stdout, progress and
//! summaries to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use autous_agent::assessment::{
    format_score, grades_for_case, parse_grades_csv, score_case, GradeSheet, MeteorParams,
};
use autous_agent::diagnosis::{
    build_prompt, generate_report, opinion_from_prediction, parse_report, render_sections, BackendKind,
    ClinicalContext, DiagnosisError, DiagnosisReport, LlmBackendSpec, DEFAULT_MODEL_NAME,
};
use autous_core::ctu_net::{checkpoint, Ablation, ModelConfig, ModelError};
use autous_core::train_eval::{
    emit_report, evaluate, load_split, metrics_table, run_ablations, train, write_loss_curve, LossPoint, RadarData,
    TrainError, TrainSpec,
};
use autous_core::video_data::{
    evaluate_dataset_acceptance, merge_categories, split_train_test, write_synthetic_corpus, DataError,
    DatasetManifest, LogBase, Split, DEFAULT_THETA,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::api::{self, AppState, ServiceConfig, DEFAULT_LLM_INFLIGHT};
use crate::classifier::{default_class_names, Classifier};
use crate::plot::{loss_curve_svg, radar_svg};
use crate::workflow::WorkflowError;
use crate::{ServiceError, ENV_LLM_ENDPOINT, ENV_LLM_TOKEN, ENV_STORE_DIR};

pub const EXIT_OK: i32 = 0;
/// Invalid input, or a dataset that fails the acceptance rule.
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "autous", version, about = "Ultrasound video classification and diagnostic report workflow")]
#[command(after_help = "Exit codes: 0 ok, 1 validation error or rejected dataset, 2 usage, 3 runtime/IO, 4 language-model backend failure.\n\
Environment: AUTOUS_LLM_ENDPOINT, AUTOUS_LLM_TOKEN, AUTOUS_STORE_DIR.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dataset screening and manifest tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model on a manifest's train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train every path ablation with the same seed and compare.
    Ablate(AblateArgs),
    /// Classify one clip (.npy, .npz or .zip).
    Classify(ClassifyArgs),
    /// Build the prompt and generate a structured report.
    Diagnose(DiagnoseArgs),
    /// Combine Likert grades and METEOR into the final score.
    Score(ScoreArgs),
    /// Render a radar chart or loss curve as SVG.
    Plot(PlotArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Accept or reject a candidate dataset from its baseline accuracy.
    Filter(FilterArgs),
    /// Relabel classes through a JSON mapping {"old_id": "new name"}.
    Merge(MergeArgs),
    /// Stratified train/test assignment.
    Split(SplitArgs),
    /// Write a synthetic 5-class corpus with a split manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// Top-1 accuracy of the baseline classifier, in [0, 1].
    #[arg(long)]
    pub acc: f64,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// e, 2 or 10.
    #[arg(long, default_value = "e")]
    pub log_base: String,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives videos/, manifest.tsv and classes.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Tiny,
    Desk,
    Full,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Tiny => ModelConfig::tiny(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::full_scale(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainingOpts {
    /// Manifest (.tsv); media paths resolve against its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainingOpts {
    fn config(&self, num_classes: usize) -> ModelConfig {
        let mut c = self.preset.config().with_seed(self.seed);
        c.num_classes = num_classes;
        c
    }

    fn spec(&self, config: &ModelConfig) -> TrainSpec {
        TrainSpec {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed: self.seed,
            input_size: (config.input.height, config.input.width),
            ..TrainSpec::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub opts: TrainingOpts,
    #[arg(long, default_value = "full")]
    pub ablation: String,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-step loss CSV.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory for metrics.csv and radar.json.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub opts: TrainingOpts,
    /// Directory for metrics.csv and radar.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    pub video: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class names, one per line; defaults to the five built-in classes.
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum BackendChoice {
    Mock,
    Http,
}

#[derive(Args, Debug, Clone)]
pub struct LlmOpts {
    /// Defaults to http when an endpoint is configured, mock otherwise.
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    #[arg(long, env = ENV_LLM_ENDPOINT)]
    pub endpoint: Option<String>,
    #[arg(long, env = ENV_LLM_TOKEN, hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, default_value = DEFAULT_MODEL_NAME)]
    pub model: String,
    #[arg(long, default_value_t = 120_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    pub max_retries: u32,
}

impl LlmOpts {
    fn config(&self, store_dir: PathBuf) -> ServiceConfig {
        let kind = match self.backend {
            Some(BackendChoice::Http) => BackendKind::HttpChat,
            Some(BackendChoice::Mock) => BackendKind::Mock,
            None if self.endpoint.as_deref().is_some_and(|e| !e.trim().is_empty()) => BackendKind::HttpChat,
            None => BackendKind::Mock,
        };
        let mut cfg = ServiceConfig::new(store_dir);
        cfg.llm = LlmBackendSpec {
            kind,
            endpoint_url: self.endpoint.clone(),
            model_name: self.model.clone(),
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            ..LlmBackendSpec::default()
        };
        cfg.llm_token = self.token.clone();
        cfg
    }
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Class name for the imaging opinion (e.g. Malignant).
    #[arg(long, conflicts_with = "video")]
    pub label: Option<String>,
    #[arg(long, default_value_t = 1.0, requires = "label")]
    pub confidence: f64,
    #[arg(long, requires = "checkpoint")]
    pub video: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub chief_complaint: String,
    #[arg(long, default_value = "")]
    pub physical_exam: String,
    #[arg(long, default_value = "")]
    pub additional_info: String,
    /// Print the rendered prompt and stop.
    #[arg(long)]
    pub prompt_only: bool,
    #[command(flatten)]
    pub llm: LlmOpts,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// CSV with header case_id,rater_id,role,score.
    #[arg(long)]
    pub grades: PathBuf,
    #[arg(long = "case")]
    pub case_id: String,
    /// Precomputed METEOR score.
    #[arg(long, conflicts_with_all = ["report", "reference"], required_unless_present = "report")]
    pub meteor: Option<f64>,
    /// Generated report text.
    #[arg(long, requires = "reference")]
    pub report: Option<PathBuf>,
    /// Reference report text.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// radar.json written by `eval` or `ablate`.
    #[arg(long, conflicts_with = "loss_curve", required_unless_present = "loss_curve")]
    pub radar: Option<PathBuf>,
    /// step,loss CSV written by `train`.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, env = ENV_STORE_DIR, default_value = "autous-store")]
    pub store_dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_upload_mb: usize,
    #[arg(long, default_value_t = DEFAULT_LLM_INFLIGHT)]
    pub llm_inflight: usize,
    #[command(flatten)]
    pub llm: LlmOpts,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &ServiceError) -> i32 {
    match e {
        ServiceError::Validation(_)
        | ServiceError::NotFound(_)
        | ServiceError::Assessment(_)
        | ServiceError::PayloadTooLarge { .. }
        | ServiceError::Workflow(WorkflowError::Validation(_)) => EXIT_VALIDATION,
        ServiceError::Diagnosis(DiagnosisError::Validation(_)) => EXIT_VALIDATION,
        ServiceError::Diagnosis(_) => EXIT_BACKEND,
        ServiceError::Data(d) | ServiceError::Train(TrainError::Data(d)) => match d {
            DataError::Io { .. } => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        },
        ServiceError::Model(ModelError::Config(_) | ModelError::Shape(_))
        | ServiceError::Train(TrainError::Validation(_))
        | ServiceError::Train(TrainError::Model(ModelError::Config(_) | ModelError::Shape(_))) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> Result<i32, ServiceError> {
    match cli.command {
        Command::Dataset(cmd) => dataset(cmd),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Classify(a) => run_classify(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Score(a) => run_score(a),
        Command::Plot(a) => run_plot(a),
        Command::Serve(a) => run_serve(a),
    }
}

fn read_text(path: &Path) -> Result<String, ServiceError> {
    std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), ServiceError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| ServiceError::io(path, e))
}

fn class_names(path: Option<&Path>) -> Result<Option<Vec<String>>, ServiceError> {
    path.map(|p| {
        Ok(read_text(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    })
    .transpose()
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn print_counts(m: &DatasetManifest) {
    for (name, n) in m.class_names.iter().zip(m.class_counts()) {
        println!("{name}\t{n}");
    }
}

fn dataset(cmd: DatasetCommand) -> Result<i32, ServiceError> {
    match cmd {
        DatasetCommand::Filter(a) => {
            let base: LogBase = a.log_base.parse()?;
            let d = evaluate_dataset_acceptance(a.acc, a.classes, a.theta, base)?;
            let verdict = if d.accepted { "accepted" } else { "rejected" };
            println!("{verdict} (threshold {:.4})", d.threshold);
            eprintln!(
                "accuracy {:.4} vs 1 - {} * log({}) = {:.6}",
                d.accuracy, d.theta, d.num_classes, d.threshold
            );
            Ok(if d.accepted { EXIT_OK } else { EXIT_VALIDATION })
        }
        DatasetCommand::Merge(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let raw: BTreeMap<String, String> = serde_json::from_str(&read_text(&a.mapping)?)
                .map_err(|e| ServiceError::Validation(format!("{}: {e}", a.mapping.display())))?;
            let mapping = raw
                .into_iter()
                .map(|(k, v)| {
                    k.trim()
                        .parse::<usize>()
                        .map(|k| (k, v))
                        .map_err(|_| ServiceError::Validation(format!("mapping key {k:?} is not a class id")))
                })
                .collect::<Result<BTreeMap<_, _>, _>>()?;
            let merged = merge_categories(&manifest, &mapping)?;
            merged.save(&a.out)?;
            print_counts(&merged);
            eprintln!("{} classes -> {}", manifest.class_names.len(), merged.class_names.len());
            Ok(EXIT_OK)
        }
        DatasetCommand::Split(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let out = split_train_test(&manifest, a.train_fraction, a.seed)?;
            out.save(&a.out)?;
            let train = out.split(Split::Train).count();
            println!("train\t{train}");
            println!("test\t{}", out.entries.len() - train);
            Ok(EXIT_OK)
        }
        DatasetCommand::Synth(a) => {
            let m = write_synthetic_corpus(&a.out, a.per_class, (a.frames, a.size, a.size), a.seed)?;
            let m = split_train_test(&m, a.train_fraction, a.seed)?;
            let path = a.out.join("manifest.tsv");
            m.save(&path)?;
            println!("{}", path.display());
            eprintln!("{} clips written", m.entries.len());
            Ok(EXIT_OK)
        }
    }
}

fn run_train(a: TrainArgs) -> Result<i32, ServiceError> {
    let manifest = DatasetManifest::load(&a.opts.manifest)?;
    let ablation: Ablation = a.ablation.parse()?;
    let config = a.opts.config(manifest.num_classes()).with_ablation(ablation);
    let spec = a.opts.spec(&config);
    eprintln!("training {} ({} epochs)", ablation.name(), spec.epochs);
    let outcome = train(&config, &manifest, &manifest_base(&a.opts.manifest), &spec)?;
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        eprintln!("epoch {:>3}  loss {l:.4}", e + 1);
    }
    checkpoint::save(&outcome.model, &a.out)?;
    if let Some(p) = &a.loss_curve {
        write_loss_curve(&outcome.loss_curve, p)?;
    }
    println!("epoch,loss");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        println!("{},{l}", e + 1);
    }
    Ok(EXIT_OK)
}

fn run_eval(a: EvalArgs) -> Result<i32, ServiceError> {
    let model = checkpoint::load(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let split: Split = a.split.parse()?;
    let report = evaluate(&model, &manifest, &manifest_base(&a.manifest), split)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    if let Some(dir) = &a.report_dir {
        let emitted = emit_report(&[("model".to_string(), report)], &manifest.class_names, dir)?;
        eprintln!("wrote {} and {}", emitted.table.display(), emitted.radar.display());
    }
    Ok(EXIT_OK)
}

fn run_ablate(a: AblateArgs) -> Result<i32, ServiceError> {
    let manifest = DatasetManifest::load(&a.opts.manifest)?;
    let base = manifest_base(&a.opts.manifest);
    let config = a.opts.config(manifest.num_classes());
    let spec = a.opts.spec(&config);
    let train_set = load_split(&manifest, &base, Split::Train, &config)?;
    let test_set = load_split(&manifest, &base, Split::Test, &config)?;
    let table = run_ablations(&config, &train_set, &test_set, &spec);
    let mut reports = Vec::new();
    for row in table.rows {
        match row.result {
            Ok(r) => reports.push((row.variant.name().to_string(), r)),
            Err(e) => eprintln!("{} failed: {e}", row.variant.name()),
        }
    }
    let emitted = emit_report(&reports, &manifest.class_names, &a.out)?;
    print!("{}", metrics_table(&reports));
    eprintln!("wrote {} and {}", emitted.table.display(), emitted.radar.display());
    Ok(if reports.len() == Ablation::ALL.len() { EXIT_OK } else { EXIT_RUNTIME })
}

fn run_classify(a: ClassifyArgs) -> Result<i32, ServiceError> {
    let classifier = Classifier::load(&a.checkpoint, class_names(a.classes.as_deref())?)?;
    let c = classifier.classify_path(&a.video)?;
    println!("{} {:.2}", c.label, c.confidence);
    let probs: Vec<String> = classifier
        .class_names()
        .iter()
        .zip(&c.probs)
        .map(|(n, p)| format!("{n}={p:.4}"))
        .collect();
    eprintln!("{}", probs.join(" "));
    Ok(EXIT_OK)
}

fn run_diagnose(a: DiagnoseArgs) -> Result<i32, ServiceError> {
    let ctx = ClinicalContext::new(a.chief_complaint, a.physical_exam, a.additional_info)?;
    let names = class_names(a.classes.as_deref())?;
    let opinion = match (&a.label, &a.video) {
        (Some(label), _) => {
            let names = names.unwrap_or_else(default_class_names);
            let idx = names
                .iter()
                .position(|n| n == label)
                .ok_or_else(|| ServiceError::Validation(format!("unknown class {label:?}; expected one of {names:?}")))?;
            if !(0.0..=1.0).contains(&a.confidence) {
                return Err(ServiceError::Validation(format!("confidence {} outside [0, 1]", a.confidence)));
            }
            let rest = if names.len() > 1 { (1.0 - a.confidence) / (names.len() - 1) as f64 } else { 0.0 };
            let probs: Vec<f64> = (0..names.len()).map(|j| if j == idx { a.confidence } else { rest }).collect();
            opinion_from_prediction(&probs, &names)?
        }
        (None, Some(video)) => {
            let ck = a.checkpoint.as_deref().expect("clap requires --checkpoint with --video");
            let classifier = Classifier::load(ck, names)?;
            let c = classifier.classify_path(video)?;
            eprintln!("classified as {} ({:.2})", c.label, c.confidence);
            classifier.opinion(&c)?
        }
        (None, None) => return Err(ServiceError::Validation("pass --label or --video".into())),
    };
    let prompt = build_prompt(&opinion, &ctx);
    if a.prompt_only {
        println!("{prompt}");
        return Ok(EXIT_OK);
    }
    let cfg = a.llm.config(PathBuf::new());
    let backend = cfg.backend()?;
    let report = generate_report(&prompt, &cfg.llm, backend)?;
    println!("{}", render_sections(&report.sections()));
    eprintln!("{} in {} ms", report.model_id, report.latency_ms);
    Ok(EXIT_OK)
}

fn run_score(a: ScoreArgs) -> Result<i32, ServiceError> {
    let rows = parse_grades_csv(&read_text(&a.grades)?)?;
    let grades = grades_for_case(&rows, &a.case_id);
    if grades.is_empty() {
        return Err(ServiceError::NotFound(a.case_id));
    }
    let summary = match (a.meteor, &a.report, &a.reference) {
        (Some(m), _, _) => GradeSheet::new(grades, m)?.summary()?,
        (None, Some(report), Some(reference)) => {
            let raw = read_text(report)?;
            let s = parse_report(&raw)?;
            let report = DiagnosisReport {
                preliminary_diagnosis: s.preliminary_diagnosis,
                justification: s.justification,
                follow_up: s.follow_up,
                raw_response: raw,
                model_id: "file".into(),
                latency_ms: 0,
            };
            score_case(&report, &read_text(reference)?, &grades, &MeteorParams::default())?.summary
        }
        _ => return Err(ServiceError::Validation("pass --meteor or --report with --reference".into())),
    };
    println!("{}", format_score(summary.final_score));
    eprintln!(
        "S_amateur {:.4}  S_expert {:.4}  meteor {:.4}  final {:.4}",
        summary.s_amateur, summary.s_expert, summary.meteor, summary.final_score
    );
    Ok(EXIT_OK)
}

fn parse_loss_csv(text: &str) -> Result<Vec<LossPoint>, ServiceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("step")) {
            continue;
        }
        let bad = || ServiceError::Validation(format!("loss curve line {}: {line:?}", i + 1));
        let (step, loss) = line.split_once(',').ok_or_else(bad)?;
        out.push(LossPoint {
            step: step.trim().parse().map_err(|_| bad())?,
            epoch: 0,
            loss: loss.trim().parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn run_plot(a: PlotArgs) -> Result<i32, ServiceError> {
    let svg = if let Some(p) = &a.radar {
        let data: RadarData = serde_json::from_str(&read_text(p)?)
            .map_err(|e| ServiceError::Validation(format!("{}: {e}", p.display())))?;
        radar_svg(&data, a.title.as_deref().unwrap_or("Per-class AUC"))
    } else {
        let p = a.loss_curve.as_deref().expect("clap requires --radar or --loss-curve");
        loss_curve_svg(&parse_loss_csv(&read_text(p)?)?, a.title.as_deref().unwrap_or("Training loss"))
    };
    write_text(&a.out, &svg)?;
    println!("{}", a.out.display());
    Ok(EXIT_OK)
}

fn run_serve(a: ServeArgs) -> Result<i32, ServiceError> {
    let mut cfg = a.llm.config(a.store_dir.clone());
    cfg.max_upload_bytes = a.max_upload_mb.saturating_mul(1024 * 1024);
    cfg.llm_inflight = a.llm_inflight;
    let classifier = Arc::new(Classifier::load(&a.checkpoint, class_names(a.classes.as_deref())?)?);
    let backend = cfg.backend()?;
    let state = Arc::new(AppState::open(&cfg, classifier, backend)?);
    eprintln!("store {} ({} cases)", a.store_dir.display(), state.store.len());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    rt.block_on(api::serve(state, &a.addr))?;
    Ok(EXIT_OK)
}
