//! Training loop, the three selection phases and the horizon chain.
//!
//! Each (candidate, fold) job owns its model and its random streams, which
//! derive from the base seed, the candidate, the feature combo, the bin and
//! the fold. The phase name is deliberately left out, so a phase-2 job with
//! the empty combo replays the phase-1 job for the same network.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hvfcast_nn::{adam_step, Adam, Graph, Mode, NnError, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{build_model, load_weights, transfer_weights, write_file_atomic, ArchError, Model, ModelSpec, Provenance};
use crate::hvf::{valid_offsets, GRID_CELLS, GRID_COLS, GRID_ROWS, N_POINTS};
use crate::pipeline::{encode_input_into, BinnedPairs, FeatureCombo, FieldPair, IntervalBin, SplitPlan, N_FOLDS};
use crate::seed::{derive_seed, rng_for};

pub const PHASE_ARCH: &str = "arch";
pub const PHASE_FEATURES: &str = "features";
pub const PHASE_INTERVALS: &str = "intervals";
const RESULT_FILE: &str = "result.json";
const HISTORY_FILE: &str = "history.json";
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    /// Weights of the epoch with the lowest validation MAE.
    Best,
    /// Weights after the final epoch.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub widths: [usize; 3],
    pub freeze: Freeze,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            seed,
            widths: [8, 16, 24],
            freeze: Freeze::Best,
            shuffle: true,
        }
    }

    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            epochs: 1000,
            widths: crate::arch::CANONICAL_WIDTHS,
            ..Self::desk(seed)
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("divergence: {message}")]
    Divergence { message: String, last_good: Box<Model> },
    #[error("no data: {0}")]
    NoData(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Arch(ArchError::Nn(e))
    }
}

impl TrainError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, TrainError::Divergence { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub initial_digest: String,
    pub frozen_digest: String,
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// The frozen model (best or last epoch per [`Freeze`]).
    pub model: Model,
}

/// Pre-encoded inputs and targets.
struct Encoded {
    x: Vec<f64>,
    y: Vec<f64>,
    channels: usize,
    n: usize,
}

impl Encoded {
    fn new(pairs: &[&FieldPair], combo: FeatureCombo) -> Encoded {
        let channels = combo.in_channels();
        let mut x = Vec::with_capacity(pairs.len() * channels * GRID_CELLS);
        let mut y = vec![0.0; pairs.len() * GRID_CELLS];
        for (i, p) in pairs.iter().enumerate() {
            encode_input_into(&p.input, combo, &mut x);
            for (&off, &v) in valid_offsets().iter().zip(&p.target.values) {
                y[i * GRID_CELLS + off] = v;
            }
        }
        Encoded {
            x,
            y,
            channels,
            n: pairs.len(),
        }
    }

    fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let per = self.channels * GRID_CELLS;
        let mut x = Vec::with_capacity(idx.len() * per);
        let mut y = Vec::with_capacity(idx.len() * GRID_CELLS);
        for &i in idx {
            x.extend_from_slice(&self.x[i * per..(i + 1) * per]);
            y.extend_from_slice(&self.y[i * GRID_CELLS..(i + 1) * GRID_CELLS]);
        }
        (
            Tensor::new(vec![idx.len(), self.channels, GRID_ROWS, GRID_COLS], x).expect("batch shape"),
            Tensor::new(vec![idx.len(), 1, GRID_ROWS, GRID_COLS], y).expect("batch shape"),
        )
    }
}

/// Raw (unclamped) predictions on the 54 cells of each pair's input.
pub fn predict_pairs(model: &Model, pairs: &[&FieldPair], combo: FeatureCombo) -> Result<Vec<Vec<f64>>, ArchError> {
    let enc = Encoded::new(pairs, combo);
    let mut out = Vec::with_capacity(pairs.len());
    let idx: Vec<usize> = (0..enc.n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = enc.batch(chunk);
        let y = model.predict(&x)?;
        for s in 0..chunk.len() {
            let grid = &y.data()[s * GRID_CELLS..(s + 1) * GRID_CELLS];
            out.push(valid_offsets().iter().map(|&o| grid[o]).collect());
        }
    }
    Ok(out)
}

fn masked_mae_infer(model: &Model, enc: &Encoded) -> Result<f64, ArchError> {
    let mask = valid_offsets();
    let idx: Vec<usize> = (0..enc.n).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = enc.batch(chunk);
        let pred = model.predict(&x)?;
        for s in 0..chunk.len() {
            for &o in mask {
                total += (pred.data()[s * GRID_CELLS + o] - y.data()[s * GRID_CELLS + o]).abs();
            }
        }
    }
    Ok(total / (enc.n * N_POINTS) as f64)
}

/// Masked MAE of `model` in inference mode over `pairs`.
pub fn evaluate_mae(model: &Model, pairs: &[&FieldPair], combo: FeatureCombo) -> Result<f64, ArchError> {
    masked_mae_infer(model, &Encoded::new(pairs, combo))
}

/// Mini-batch Adam on masked MAE with per-epoch validation in inference
/// mode. Optimizer state always starts fresh.
pub fn train_model(
    mut model: Model,
    train: &[&FieldPair],
    val: &[&FieldPair],
    combo: FeatureCombo,
    cfg: &TrainConfig,
    shuffle_seed: u64,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::NoData(format!(
            "{} training and {} validation pairs",
            train.len(),
            val.len()
        )));
    }
    if combo.in_channels() != model.spec.in_channels {
        return Err(ArchError::Nn(NnError::Shape(format!(
            "combo {combo} encodes {} channels, model expects {}",
            combo.in_channels(),
            model.spec.in_channels
        )))
        .into());
    }
    let batch_size = cfg.batch_size.max(1);
    let tr = Encoded::new(train, combo);
    let va = Encoded::new(val, combo);
    let mask = valid_offsets();
    let mut rng = rng_for(shuffle_seed, "shuffle");
    let mut adam = Adam::with_lr(cfg.lr).init(&model.params);

    let initial_digest = model.weights_digest();
    let mut best = model.clone();
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_mae: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_val_mae: None,
        initial_digest: initial_digest.clone(),
        frozen_digest: initial_digest,
        shuffle_seed,
    };
    let mut order: Vec<usize> = (0..tr.n).collect();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for idx in order.chunks(batch_size) {
            let (x, y) = tr.batch(idx);
            let mut g = Graph::new();
            let xv = g.input(x);
            let f = model.forward_on(&mut g, xv, Mode::Train)?;
            let loss = g.masked_mae(f.output, &y, mask)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(TrainError::Divergence {
                    message: format!("non-finite loss at epoch {epoch}"),
                    last_good: Box::new(best),
                });
            }
            g.backward(loss)?.accumulate_into(&g, &mut model.params);
            if let Err(e) = adam_step(&mut model.params, &mut adam) {
                return Err(TrainError::Divergence {
                    message: format!("{e} at epoch {epoch}"),
                    last_good: Box::new(best),
                });
            }
            model.update_bn(&f.batch_stats);
            total += lv * idx.len() as f64;
        }
        let val_mae = masked_mae_infer(&model, &va)?;
        if !val_mae.is_finite() {
            return Err(TrainError::Divergence {
                message: format!("non-finite validation MAE at epoch {epoch}"),
                last_good: Box::new(best),
            });
        }
        history.train_loss.push(total / tr.n as f64);
        history.val_mae.push(val_mae);
        if history.best_val_mae.is_none_or(|b| val_mae < b) {
            history.best_val_mae = Some(val_mae);
            history.best_epoch = Some(epoch);
            best = model.clone();
        }
    }
    let frozen = match cfg.freeze {
        Freeze::Best => best,
        Freeze::Last => model,
    };
    history.frozen_digest = frozen.weights_digest();
    Ok(TrainOutcome { history, model: frozen })
}

/// Seed of one (candidate, combo, bin, fold) job.
pub fn job_seed(base: u64, candidate: &str, combo: FeatureCombo, bin: IntervalBin, fold: usize) -> u64 {
    derive_seed(base, &format!("{candidate}|{combo}|{}|fold{fold}", bin.label()))
}

/// `history.json` beside each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub phase: String,
    pub candidate: String,
    pub combo: String,
    pub bin: IntervalBin,
    pub fold: usize,
    pub job_seed: u64,
    pub init_source: String,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub config: TrainConfig,
    pub history: TrainHistory,
}

pub fn checkpoint_dir(root: &Path, phase: &str, candidate: &str, fold: usize) -> PathBuf {
    root.join(phase).join(candidate).join(format!("fold-{fold}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArchError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_file_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArchError> {
    let text = fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ArchError::Manifest(format!("{}: {e}", path.display())))
}

fn save_checkpoint(dir: &Path, model: &Model, record: &HistoryRecord) -> Result<(), ArchError> {
    let provenance = Provenance {
        phase: Some(record.phase.clone()),
        bin: Some(record.bin.center()),
        fold: Some(record.fold),
        epoch: record.history.best_epoch,
        combo: Some(record.combo.clone()),
    };
    model.save_weights(dir, provenance)?;
    write_json(&dir.join(HISTORY_FILE), record)
}

pub fn read_history(dir: &Path) -> Result<HistoryRecord, ArchError> {
    read_json(&dir.join(HISTORY_FILE))
}

/// A failed (candidate, fold) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub candidate: String,
    pub fold: usize,
    pub error: String,
    pub divergence: bool,
}

/// Per-(candidate, fold) best validation MAE and the selected winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: String,
    pub candidates: Vec<String>,
    /// `matrix[c][f]`; `None` marks a failed job.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub means: Vec<Option<f64>>,
    pub winner: Option<String>,
    pub failures: Vec<JobFailure>,
}

impl PhaseResult {
    pub fn from_matrix(phase: &str, candidates: Vec<String>, matrix: Vec<Vec<Option<f64>>>, failures: Vec<JobFailure>) -> Self {
        let means: Vec<Option<f64>> = matrix
            .iter()
            .map(|row| {
                let vals: Option<Vec<f64>> = row.iter().copied().collect();
                vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        let winner = select_winner(&candidates, &means);
        PhaseResult {
            phase: phase.into(),
            candidates,
            matrix,
            means,
            winner,
            failures,
        }
    }

    pub fn diverged(&self) -> bool {
        self.failures.iter().any(|f| f.divergence)
    }

    pub fn save(&self, root: &Path) -> Result<(), ArchError> {
        write_json(&root.join(&self.phase).join(RESULT_FILE), self)
    }

    pub fn load(root: &Path, phase: &str) -> Result<PhaseResult, ArchError> {
        read_json(&root.join(phase).join(RESULT_FILE))
    }
}

/// Lowest mean over complete rows; ties go to the lexicographically smallest name.
pub fn select_winner(candidates: &[String], means: &[Option<f64>]) -> Option<String> {
    candidates
        .iter()
        .zip(means)
        .filter_map(|(c, m)| m.map(|m| (c, m)))
        .min_by(|(ca, ma), (cb, mb)| ma.total_cmp(mb).then_with(|| ca.cmp(cb)))
        .map(|(c, _)| c.clone())
}

struct Job<'a> {
    candidate: String,
    spec: ModelSpec,
    combo: FeatureCombo,
    fold: usize,
    pairs: &'a [FieldPair],
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

fn run_grid(
    phase: &str,
    jobs: Vec<Job<'_>>,
    plan: &SplitPlan,
    cfg: &TrainConfig,
    workers: usize,
    out: Option<&Path>,
) -> Result<PhaseResult, TrainError> {
    let bin = IntervalBin::from_index(0).expect("first bin");
    let results: Vec<Result<Option<f64>, TrainError>> = pool(workers).install(|| {
        jobs.par_iter()
            .map(|job| -> Result<Option<f64>, TrainError> {
                let seed = job_seed(cfg.seed, &job.spec.name(), job.combo, bin, job.fold);
                let spec = ModelSpec { seed, ..job.spec.clone() };
                let (train, val) = plan.fold_pairs(job.pairs, job.fold);
                let model = build_model(&spec)?;
                let outcome = train_model(model, &train, &val, job.combo, cfg, seed)?;
                if let Some(root) = out {
                    let record = HistoryRecord {
                        phase: phase.into(),
                        candidate: job.candidate.clone(),
                        combo: job.combo.name(),
                        bin,
                        fold: job.fold,
                        job_seed: seed,
                        init_source: "fresh".into(),
                        train_pairs: train.len(),
                        val_pairs: val.len(),
                        config: cfg.clone(),
                        history: outcome.history.clone(),
                    };
                    save_checkpoint(&checkpoint_dir(root, phase, &job.candidate, job.fold), &outcome.model, &record)?;
                }
                Ok(outcome.history.best_val_mae.or(Some(f64::INFINITY)))
            })
            .collect()
    });

    let mut candidates: Vec<String> = Vec::new();
    for j in &jobs {
        if !candidates.contains(&j.candidate) {
            candidates.push(j.candidate.clone());
        }
    }
    let mut matrix = vec![vec![None; N_FOLDS]; candidates.len()];
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let c = candidates.iter().position(|x| x == &job.candidate).expect("listed");
        match r {
            Ok(v) => matrix[c][job.fold] = v,
            Err(TrainError::Arch(ArchError::Io { path, source })) => {
                return Err(TrainError::Arch(ArchError::Io { path, source }))
            }
            Err(e) => failures.push(JobFailure {
                candidate: job.candidate.clone(),
                fold: job.fold,
                error: e.to_string(),
                divergence: e.is_divergence(),
            }),
        }
    }
    let result = PhaseResult::from_matrix(phase, candidates, matrix, failures);
    if let Some(root) = out {
        result.save(root)?;
    }
    Ok(result)
}

/// Phase 1: every candidate network on HVF-only input, once per fold.
pub fn select_architecture(
    candidates: &[ModelSpec],
    bin1: &[FieldPair],
    plan: &SplitPlan,
    cfg: &TrainConfig,
    workers: usize,
    out: Option<&Path>,
) -> Result<PhaseResult, TrainError> {
    let combo = FeatureCombo::none();
    let jobs = candidates
        .iter()
        .flat_map(|spec| {
            (0..N_FOLDS).map(move |fold| Job {
                candidate: spec.name(),
                spec: ModelSpec {
                    in_channels: combo.in_channels(),
                    ..spec.clone()
                },
                combo,
                fold,
                pairs: bin1,
            })
        })
        .collect();
    run_grid(PHASE_ARCH, jobs, plan, cfg, workers, out)
}

/// Phase 2: the chosen network across feature combos.
pub fn select_features(
    spec: &ModelSpec,
    combos: &[FeatureCombo],
    bin1: &[FieldPair],
    plan: &SplitPlan,
    cfg: &TrainConfig,
    workers: usize,
    out: Option<&Path>,
) -> Result<PhaseResult, TrainError> {
    let jobs = combos
        .iter()
        .flat_map(|&combo| {
            (0..N_FOLDS).map(move |fold| Job {
                candidate: combo.name(),
                spec: ModelSpec {
                    in_channels: combo.in_channels(),
                    ..spec.clone()
                },
                combo,
                fold,
                pairs: bin1,
            })
        })
        .collect();
    run_grid(PHASE_FEATURES, jobs, plan, cfg, workers, out)
}

/// How bin 1.0 of the chain is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    Fresh,
    /// Per-fold phase-2 checkpoints of the chosen combo under this runs root.
    FromFeatures(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub bin: IntervalBin,
    pub fold: usize,
    pub init_source: String,
    pub initial_digest: String,
    pub frozen_digest: String,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainGap {
    pub bin: IntervalBin,
    pub fold: usize,
    pub reason: String,
    pub divergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub phase: String,
    pub architecture: String,
    pub combo: String,
    pub entries: Vec<ChainEntry>,
    pub gaps: Vec<ChainGap>,
}

impl ChainResult {
    pub fn diverged(&self) -> bool {
        self.gaps.iter().any(|g| g.divergence)
    }

    pub fn load(root: &Path) -> Result<ChainResult, ArchError> {
        read_json(&root.join(PHASE_INTERVALS).join(RESULT_FILE))
    }
}

fn run_fold_chain(
    spec: &ModelSpec,
    combo: FeatureCombo,
    binned: &BinnedPairs,
    plan: &SplitPlan,
    cfg: &TrainConfig,
    fold: usize,
    init: &ChainInit,
    out: Option<&Path>,
) -> Result<(Vec<ChainEntry>, Vec<ChainGap>), TrainError> {
    let mut entries = Vec::new();
    let mut gaps = Vec::new();
    let mut previous: Option<(Model, String)> = None;
    for bin in IntervalBin::all() {
        let seed = job_seed(cfg.seed, &spec.name(), combo, bin, fold);
        let fresh = build_model(&ModelSpec { seed, ..spec.clone() })?;
        let (model, source) = match (&previous, init) {
            (Some((prev, label)), _) => (transfer_weights(prev, &fresh)?, label.clone()),
            (None, ChainInit::Fresh) => (fresh, "fresh".to_string()),
            (None, ChainInit::FromFeatures(root)) => {
                let (src, _) = load_weights(&checkpoint_dir(root, PHASE_FEATURES, &combo.name(), fold))?;
                (transfer_weights(&src, &fresh)?, format!("{PHASE_FEATURES}/{}", combo.name()))
            }
        };
        let (train, val) = plan.fold_pairs(binned.get(bin), fold);
        match train_model(model, &train, &val, combo, cfg, seed) {
            Ok(outcome) => {
                if let Some(root) = out {
                    let record = HistoryRecord {
                        phase: PHASE_INTERVALS.into(),
                        candidate: spec.name(),
                        combo: combo.name(),
                        bin,
                        fold,
                        job_seed: seed,
                        init_source: source.clone(),
                        train_pairs: train.len(),
                        val_pairs: val.len(),
                        config: cfg.clone(),
                        history: outcome.history.clone(),
                    };
                    save_checkpoint(&checkpoint_dir(root, PHASE_INTERVALS, &bin.label(), fold), &outcome.model, &record)?;
                }
                entries.push(ChainEntry {
                    bin,
                    fold,
                    init_source: source,
                    initial_digest: outcome.history.initial_digest.clone(),
                    frozen_digest: outcome.history.frozen_digest.clone(),
                    best_epoch: outcome.history.best_epoch,
                    best_val_mae: outcome.history.best_val_mae,
                });
                previous = Some((outcome.model, bin.label()));
            }
            Err(TrainError::Arch(e)) => return Err(TrainError::Arch(e)),
            Err(e) => gaps.push(ChainGap {
                bin,
                fold,
                reason: e.to_string(),
                divergence: e.is_divergence(),
            }),
        }
    }
    Ok((entries, gaps))
}

/// Phase 3: per fold, bins in order, each initialized from the fold's
/// previous trained bin. Bins without data for a fold are recorded as gaps
/// and the next bin transfers from the last trained one.
pub fn train_interval_chain(
    spec: &ModelSpec,
    combo: FeatureCombo,
    binned: &BinnedPairs,
    plan: &SplitPlan,
    cfg: &TrainConfig,
    init: &ChainInit,
    workers: usize,
    out: Option<&Path>,
) -> Result<ChainResult, TrainError> {
    let spec = ModelSpec {
        in_channels: combo.in_channels(),
        ..spec.clone()
    };
    let per_fold: Vec<Result<(Vec<ChainEntry>, Vec<ChainGap>), TrainError>> = pool(workers).install(|| {
        (0..N_FOLDS)
            .into_par_iter()
            .map(|fold| run_fold_chain(&spec, combo, binned, plan, cfg, fold, init, out))
            .collect()
    });
    let mut entries = Vec::new();
    let mut gaps = Vec::new();
    for r in per_fold {
        let (e, g) = r?;
        entries.extend(e);
        gaps.extend(g);
    }
    entries.sort_by_key(|e| (e.bin, e.fold));
    gaps.sort_by_key(|g| (g.bin, g.fold));
    let result = ChainResult {
        phase: PHASE_INTERVALS.into(),
        architecture: spec.name(),
        combo: combo.name(),
        entries,
        gaps,
    };
    if let Some(root) = out {
        write_json(&root.join(PHASE_INTERVALS).join(RESULT_FILE), &result)?;
    }
    Ok(result)
}

/// Frozen fold models per bin, in fold order.
pub fn load_chain(root: &Path) -> Result<(ChainResult, BTreeMap<IntervalBin, Vec<Model>>), ArchError> {
    let result = ChainResult::load(root)?;
    let mut models: BTreeMap<IntervalBin, Vec<Model>> = BTreeMap::new();
    for e in &result.entries {
        let (m, _) = load_weights(&checkpoint_dir(root, PHASE_INTERVALS, &e.bin.label(), e.fold))?;
        models.entry(e.bin).or_default().push(m);
    }
    Ok((result, models))
}
