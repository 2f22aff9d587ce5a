//! `hvfcast` command line. Every stage reads and writes plain files so runs
//! can be replayed stage by stage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use hvfcast_core::arch::{candidate_specs, write_file_atomic, ArchError, ModelSpec};
use hvfcast_core::eval::{ensemble_predict, evaluate_testset, report_csvs, EvalConfig, EvalError, MetricsReport};
use hvfcast_core::hvf::{parse_dataset, parse_record, serialize_dataset, VisualField};
use hvfcast_core::pipeline::{
    make_pairs, pair_records, parse_pairs, resolve_pairs, serialize_pairs, split_patients, BinnedPairs, FeatureCombo,
    FieldPair, IntervalBin, PipelineError, SplitPlan,
};
use hvfcast_core::synth::{generate_cohort, CohortConfig};
use hvfcast_core::trainer::{
    load_chain, select_architecture, select_features, train_interval_chain, ChainInit, PhaseResult, TrainConfig,
    TrainError, PHASE_ARCH, PHASE_FEATURES, PHASE_INTERVALS,
};

const DATASET_HELP: &str = "\
Dataset format: JSON Lines, one field per line:
  {\"patient_id\": str, \"eye\": \"OD\"|\"OS\", \"gender\": \"M\"|\"F\", \"age\": years,
   \"test_date\": \"YYYY-MM-DD\", \"test_index\": int >= 1, \"values\": [54 dB values, 2 decimals]}
Values run row-major over the 54 measured cells of the 8x9 grid, right-eye orientation.";

const PAIRS_HELP: &str = "\
Pair format: JSON Lines, one pair per line:
  {\"bin\": center years, \"input_ref\": ref, \"target_ref\": ref, \"delta\": years}
  ref = {\"patient_id\": str, \"eye\": \"OD\"|\"OS\", \"test_index\": int}
Pairs closer than 0.75 y or further than 5.5 y apart are dropped.";

const SPLIT_HELP: &str = "\
Split format: JSON {\"seed\", \"ratio\", \"test_patients\": [id], \"folds\": [[id]; 10]}.";

const TRAIN_HELP: &str = "\
Layout under --runs:
  <phase>/result.json                      phase summary (fold x candidate matrix, winner)
  <phase>/<candidate>/fold-<f>/weights.bin raw little-endian f64 parameters
  <phase>/<candidate>/fold-<f>/manifest.json  tensor names, shapes, offsets, sha256
  <phase>/<candidate>/fold-<f>/history.json   losses, best epoch, digests
The intervals phase names candidates by bin (bin-1.0 .. bin-5.5).
Phases: arch (nine networks, HVF only), features (winner x 16 feature combos),
intervals (winner x combo chained across the ten bins).";

const EVALUATE_HELP: &str = "\
Writes report.json (metrics with bootstrap intervals, MD agreement, per-bin and
baseline rows, reference constants) and md_scatter.csv, bland_altman.csv,
per_bin_mae.csv. Pairs are scored by their bin's fold ensemble.";

const PREDICT_HELP: &str = "\
--field takes one dataset record. Output JSON:
  {\"architecture\", \"combo\", \"bin\", \"models\", \"input_ref\", \"values\": [54], \"raw\": [54]}
values are clamped to [0, 50] dB; raw is the unclamped ensemble mean.";

const REPORT_HELP: &str = "\
Re-emits the plot-ready CSV tables from an existing report.json.";

#[derive(Parser)]
#[command(name = "hvfcast", version, about = "Forecast 24-2 visual fields from earlier tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic longitudinal cohort as a dataset.
    #[command(after_help = DATASET_HELP)]
    Simulate(SimulateArgs),
    /// Enumerate and bin every forward pair of each eye.
    #[command(after_help = PAIRS_HELP)]
    Pairs(PairsArgs),
    /// Partition patients into a test set and ten folds.
    #[command(after_help = SPLIT_HELP)]
    Split(SplitArgs),
    /// Run one training phase.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Score the interval ensembles on the test pairs.
    #[command(after_help = EVALUATE_HELP)]
    Evaluate(EvaluateArgs),
    /// Forecast one field at a horizon.
    #[command(after_help = PREDICT_HELP)]
    Predict(PredictArgs),
    /// Rebuild CSV tables from a report.
    #[command(after_help = REPORT_HELP)]
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Mixed archetypes with test-retest noise.
    Default,
    /// Progressive archetypes only, noiseless, six-year follow-up.
    Progressive,
}

#[derive(Args)]
struct SimulateArgs {
    /// Dataset output (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long, env = "HVFCAST_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// Full cohort configuration as JSON; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_noise: bool,
    /// Ground-truth sidecar; defaults to cohort_meta.json next to --out.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "HVFCAST_SEED")]
    seed: Option<u64>,
    /// Share of patients kept for training and validation.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Phase {
    Arch,
    Features,
    Intervals,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    phase: Phase,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Block widths as w1,w2,w3.
    #[arg(long, value_parser = parse_widths)]
    widths: Option<[usize; 3]>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, env = "HVFCAST_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// 1000 epochs at widths 64,128,256.
    #[arg(long)]
    paper_scale: bool,
    /// Architecture for later phases instead of the arch-phase winner.
    #[arg(long)]
    arch: Option<String>,
    /// Feature combo for the intervals phase instead of the features-phase winner.
    #[arg(long)]
    combo: Option<String>,
    /// Start bin 1.0 from the features-phase checkpoints of the chosen combo.
    #[arg(long)]
    init_from_features: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Pairs to score; restricted to test patients when --split is given.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    bootstrap_resamples: usize,
    /// Bootstrap seed.
    #[arg(long, env = "HVFCAST_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    #[arg(long)]
    field: Option<PathBuf>,
    /// Horizon in years, 1.0 to 5.5; forecast by the bin that holds it.
    #[arg(long, allow_negative_numbers = true)]
    interval: f64,
    /// Forecast output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_widths(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok([a, b, c]),
        _ => Err("expected three positive widths, e.g. 8,16,24".into()),
    }
}

/// Failure classes, one per non-zero exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => f.write_str(m),
        }
    }
}

fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        data(e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        data(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        data(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_divergence() {
            CliError::Divergence(e.to_string())
        } else {
            data(e)
        }
    }
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    started_at: String,
    config: Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, argv: &[String]) -> Run {
        Run {
            command,
            argv: argv.to_vec(),
            started_at: now(),
            config: Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn finish(self, path: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command.into(),
            argv: self.argv,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            finished_at: now(),
        };
        write_json(path, &manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// `d.jsonl` → `d.run_manifest.json` in the same directory.
fn manifest_beside(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.run_manifest.json"))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    write_file_atomic(path, text.as_bytes()).map_err(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(data)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Vec<VisualField>, CliError> {
    parse_dataset(&read_text(path)?)
        .map_err(|(line, e)| CliError::Data(format!("{}:{line}: {e}", path.display())))
}

fn load_pairs(path: &Path, fields: &[VisualField]) -> Result<BinnedPairs, CliError> {
    let records = parse_pairs(&read_text(path)?)?;
    Ok(resolve_pairs(&records, fields)?)
}

/// Runs the command line in `argv` (program name first) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    1
                }
            }
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a, argv),
        Command::Pairs(a) => pairs(a, argv),
        Command::Split(a) => split(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Report(a) => report(a, argv),
    }
}

fn simulate(a: SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let mut run = Run::new("simulate", argv);
    let mut cfg = match &a.config {
        Some(path) => {
            run.inputs.push(path.clone());
            read_json::<CohortConfig>(path)?
        }
        None => match a.preset {
            Preset::Default => CohortConfig::default(),
            Preset::Progressive => CohortConfig::noiseless_progressive(CohortConfig::default().patients, 0),
        },
    };
    if let Some(p) = a.patients {
        cfg.patients = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.no_noise {
        cfg.noise = false;
    }
    let cohort = generate_cohort(&cfg).map_err(data)?;
    let text = serialize_dataset(&cohort.fields).map_err(|v| CliError::Data(format!("{} invalid fields", v.len())))?;
    let meta_path = a.meta.unwrap_or_else(|| a.out.with_file_name("cohort_meta.json"));
    write_text(&a.out, &text)?;
    write_json(&meta_path, &cohort.meta)?;

    run.config = serde_json::to_value(&cfg).map_err(data)?;
    run.seeds.insert("cohort".into(), cfg.seed);
    run.outputs = vec![a.out.clone(), meta_path];
    println!("{} fields from {} patients -> {}", cohort.fields.len(), cfg.patients, a.out.display());
    run.finish(&manifest_beside(&a.out))
}

fn pairs(a: PairsArgs, argv: &[String]) -> Result<(), CliError> {
    let mut run = Run::new("pairs", argv);
    let fields = load_dataset(&a.dataset)?;
    let binned = BinnedPairs::from_pairs(make_pairs(&fields));
    write_text(&a.out, &serialize_pairs(&pair_records(&binned)))?;

    let per_bin: BTreeMap<String, usize> = binned.bins.iter().map(|(b, p)| (b.label(), p.len())).collect();
    run.config = json!({ "pairs": binned.total(), "excluded": binned.excluded, "per_bin": per_bin });
    run.inputs.push(a.dataset);
    run.outputs.push(a.out.clone());
    println!("{} pairs, {} excluded -> {}", binned.total(), binned.excluded, a.out.display());
    run.finish(&manifest_beside(&a.out))
}

fn split(a: SplitArgs, argv: &[String]) -> Result<(), CliError> {
    let mut run = Run::new("split", argv);
    let fields = load_dataset(&a.dataset)?;
    let seed = a.seed.unwrap_or(0);
    let plan = split_patients(&fields, a.ratio, seed)?;
    write_json(&a.out, &plan)?;

    run.config = json!({ "ratio": a.ratio });
    run.seeds.insert("split".into(), seed);
    run.inputs.push(a.dataset);
    run.outputs.push(a.out.clone());
    let train: usize = plan.folds.iter().map(Vec::len).sum();
    println!("{} training patients in 10 folds, {} test -> {}", train, plan.test_patients.len(), a.out.display());
    run.finish(&manifest_beside(&a.out))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let seed = a.seed.unwrap_or(0);
    let mut cfg = if a.paper_scale { TrainConfig::paper(seed) } else { TrainConfig::desk(seed) };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(w) = a.widths {
        cfg.widths = w;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    cfg
}

fn phase_winner(runs: &Path, phase: &str) -> Result<String, CliError> {
    let result = PhaseResult::load(runs, phase)
        .map_err(|e| CliError::Data(format!("no {phase} phase result under {}: {e}", runs.display())))?;
    result
        .winner
        .ok_or_else(|| CliError::Data(format!("{phase} phase has no winner")))
}

fn chosen_spec(a: &TrainArgs, cfg: &TrainConfig) -> Result<ModelSpec, CliError> {
    let name = match &a.arch {
        Some(n) => n.clone(),
        None => phase_winner(&a.runs, PHASE_ARCH)?,
    };
    ModelSpec::from_name(&name, cfg.widths, 1, cfg.seed).map_err(|e| CliError::Usage(e.to_string()))
}

fn report_phase(result: &PhaseResult) -> Result<(), CliError> {
    for (c, m) in result.candidates.iter().zip(&result.means) {
        match m {
            Some(m) => println!("{c:<28} {m:.4}"),
            None => println!("{c:<28} incomplete"),
        }
    }
    if result.diverged() {
        return Err(CliError::Divergence(format!(
            "{} job(s) diverged in the {} phase",
            result.failures.len(),
            result.phase
        )));
    }
    match &result.winner {
        Some(w) => {
            println!("winner: {w}");
            Ok(())
        }
        None => Err(CliError::Data(format!("no candidate completed every fold in the {} phase", result.phase))),
    }
}

fn train(a: TrainArgs, argv: &[String]) -> Result<(), CliError> {
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let mut run = Run::new("train", argv);
    let cfg = train_config(&a);
    let fields = load_dataset(&a.dataset)?;
    let binned = load_pairs(&a.pairs, &fields)?;
    let plan: SplitPlan = read_json(&a.split)?;
    let bin1 = binned.get(IntervalBin::from_index(0).expect("first bin"));
    run.inputs = vec![a.dataset.clone(), a.pairs.clone(), a.split.clone()];
    run.seeds.insert("train".into(), cfg.seed);
    run.seeds.insert("split".into(), plan.seed);

    let (phase, outcome, extra) = match a.phase {
        Phase::Arch => {
            let specs = candidate_specs(cfg.widths, 1, cfg.seed);
            let result = select_architecture(&specs, bin1, &plan, &cfg, a.workers, Some(&a.runs))?;
            (PHASE_ARCH, report_phase(&result), json!({ "winner": result.winner }))
        }
        Phase::Features => {
            let spec = chosen_spec(&a, &cfg)?;
            run.inputs.push(a.runs.join(PHASE_ARCH));
            let combos: Vec<FeatureCombo> = FeatureCombo::all().collect();
            let result = select_features(&spec, &combos, bin1, &plan, &cfg, a.workers, Some(&a.runs))?;
            let extra = json!({ "architecture": spec.name(), "winner": result.winner });
            (PHASE_FEATURES, report_phase(&result), extra)
        }
        Phase::Intervals => {
            let spec = chosen_spec(&a, &cfg)?;
            let combo_name = match &a.combo {
                Some(c) => c.clone(),
                None => phase_winner(&a.runs, PHASE_FEATURES)?,
            };
            let combo: FeatureCombo = combo_name.parse().map_err(|e: PipelineError| CliError::Usage(e.to_string()))?;
            let init = if a.init_from_features {
                run.inputs.push(a.runs.join(PHASE_FEATURES));
                ChainInit::FromFeatures(a.runs.clone())
            } else {
                ChainInit::Fresh
            };
            let result = train_interval_chain(&spec, combo, &binned, &plan, &cfg, &init, a.workers, Some(&a.runs))?;
            println!("{} checkpoints, {} gaps", result.entries.len(), result.gaps.len());
            for g in &result.gaps {
                println!("gap {} fold {}: {}", g.bin.label(), g.fold, g.reason);
            }
            let outcome = if result.diverged() {
                Err(CliError::Divergence("training diverged in the intervals phase".into()))
            } else {
                Ok(())
            };
            let extra = json!({
                "architecture": spec.name(),
                "combo": combo.name(),
                "init": if a.init_from_features { "features" } else { "fresh" },
                "checkpoints": result.entries.len(),
            });
            (PHASE_INTERVALS, outcome, extra)
        }
    };
    run.config = json!({ "phase": phase, "train": cfg, "result": extra });
    run.outputs.push(a.runs.join(phase));
    run.finish(&a.runs.join(phase).join("run_manifest.json"))?;
    outcome
}

fn evaluate(a: EvaluateArgs, argv: &[String]) -> Result<(), CliError> {
    let mut run = Run::new("evaluate", argv);
    let fields = load_dataset(&a.dataset)?;
    let binned = load_pairs(&a.pairs, &fields)?;
    run.inputs = vec![a.dataset.clone(), a.pairs.clone()];
    let test = match &a.split {
        Some(path) => {
            run.inputs.push(path.clone());
            let plan: SplitPlan = read_json(path)?;
            let mut t = BinnedPairs::default();
            for (&bin, ps) in &binned.bins {
                let kept: Vec<FieldPair> = plan.test_pairs(ps).into_iter().cloned().collect();
                if !kept.is_empty() {
                    t.bins.insert(bin, kept);
                }
            }
            t
        }
        None => binned,
    };
    if test.total() == 0 {
        return Err(CliError::Data(format!("no test pairs in {}", a.pairs.display())));
    }
    let (chain, models) = load_chain(&a.runs)?;
    run.inputs.push(a.runs.join(PHASE_INTERVALS));
    let combo: FeatureCombo = chain.combo.parse()?;
    let cfg = EvalConfig {
        bootstrap_resamples: a.bootstrap_resamples,
        bootstrap_seed: a.seed.unwrap_or(0),
    };
    let report = evaluate_testset(&models, combo, &test, &fields, &cfg)?;
    let outputs = write_report(&report, &a.out)?;

    run.config = json!({ "architecture": chain.architecture, "combo": chain.combo, "eval": cfg });
    run.seeds.insert("bootstrap".into(), cfg.bootstrap_seed);
    run.outputs = outputs;
    println!(
        "{} pairs ({} skipped): MAE {:.3} dB, RMSE {:.3} dB -> {}",
        report.evaluated_pairs,
        report.skipped_pairs,
        report.mae.value,
        report.rmse.value,
        a.out.display()
    );
    run.finish(&a.out.join("run_manifest.json"))
}

fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut outputs = vec![dir.join("report.json")];
    write_json(&outputs[0], report)?;
    for (name, csv) in report_csvs(report) {
        let path = dir.join(name);
        write_text(&path, &csv)?;
        outputs.push(path);
    }
    Ok(outputs)
}

fn predict(a: PredictArgs, argv: &[String]) -> Result<(), CliError> {
    let bin = IntervalBin::for_horizon(a.interval).map_err(|e| CliError::Usage(e.to_string()))?;
    let field_path = a.field.ok_or_else(|| CliError::Usage("--field is required".into()))?;
    let mut run = Run::new("predict", argv);
    let field = parse_record(read_text(&field_path)?.trim())
        .map_err(|e| CliError::Data(format!("{}: {e}", field_path.display())))?;
    let (chain, mut models) = load_chain(&a.runs)?;
    let combo: FeatureCombo = chain.combo.parse()?;
    let fold_models = models
        .remove(&bin)
        .ok_or_else(|| CliError::Data(format!("no trained models for {}", bin.label())))?;
    let pair = FieldPair {
        input: field.clone(),
        target: field,
        delta_years: bin.center(),
    };
    let forecast = ensemble_predict(&fold_models, &[&pair], combo, Some(bin))?
        .pop()
        .expect("one forecast per pair");
    let out = json!({
        "architecture": chain.architecture,
        "combo": chain.combo,
        "bin": bin,
        "models": forecast.models,
        "input_ref": forecast.input_ref,
        "values": forecast.exported(),
        "raw": forecast.raw,
    });
    match &a.out {
        Some(path) => {
            write_json(path, &out)?;
            run.config = json!({ "interval": bin, "architecture": chain.architecture, "combo": chain.combo });
            run.inputs = vec![field_path, a.runs.join(PHASE_INTERVALS)];
            run.outputs.push(path.clone());
            run.finish(&manifest_beside(path))
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&out).map_err(data)?);
            Ok(())
        }
    }
}

fn report(a: ReportArgs, argv: &[String]) -> Result<(), CliError> {
    let mut run = Run::new("report", argv);
    let report: MetricsReport = read_json(&a.report)?;
    let mut outputs = Vec::new();
    for (name, csv) in report_csvs(&report) {
        let path = a.out.join(name);
        write_text(&path, &csv)?;
        outputs.push(path);
    }
    run.inputs.push(a.report);
    run.outputs = outputs;
    run.finish(&a.out.join("run_manifest.json"))
}
