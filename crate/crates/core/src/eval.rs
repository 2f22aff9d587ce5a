//! Fold-ensemble forecasts, test-set metrics and classical baselines.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::arch::{ArchError, Model};
use crate::hvf::{mean_deviation_values, Eye, FieldRef, HvfError, NormativeSurface, VisualField, MAX_DB, MIN_DB};
use crate::pipeline::{delta_years, series_by_eye, BinnedPairs, FeatureCombo, FieldPair, IntervalBin};
use crate::seed::rng_for;
use crate::synth::normative_surface;
use crate::trainer::predict_pairs;

/// Published headline numbers, echoed in every report for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConstants {
    pub mae_db: f64,
    pub mae_db_alternate: f64,
    pub rmse_db: f64,
    pub md_pearson_r: f64,
    pub md_adjusted_r2: f64,
    pub bland_altman_mean_diff_db: f64,
}

impl Default for ReferenceConstants {
    fn default() -> Self {
        ReferenceConstants {
            mae_db: 2.47,
            mae_db_alternate: 2.57,
            rmse_db: 3.47,
            md_pearson_r: 0.92,
            md_adjusted_r2: 0.84,
            bland_altman_mean_diff_db: 0.41,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("insufficient history: {method} needs at least {needed} fields with distinct dates")]
    InsufficientHistory { method: &'static str, needed: usize },
    #[error("ensemble members disagree on {0}")]
    SpecMismatch(String),
    #[error("no models given")]
    NoModels,
    #[error("no test pairs to evaluate")]
    NoPairs,
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Hvf(#[from] HvfError),
}

/// Mean of the fold models' forecasts for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    pub bin: Option<IntervalBin>,
    pub input_ref: FieldRef,
    pub models: usize,
    /// Unclamped per-cell mean (scan order).
    pub raw: Vec<f64>,
}

impl EnsembleForecast {
    /// Values clamped to the storable range.
    pub fn exported(&self) -> Vec<f64> {
        self.raw.iter().map(|v| v.clamp(MIN_DB, MAX_DB)).collect()
    }
}

/// Sum of a cell's member predictions in sorted order, so the mean does not
/// depend on the order of the models.
fn ordered_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Forecasts for every pair's input, averaged across `models` in inference mode.
pub fn ensemble_predict(
    models: &[Model],
    pairs: &[&FieldPair],
    combo: FeatureCombo,
    bin: Option<IntervalBin>,
) -> Result<Vec<EnsembleForecast>, EvalError> {
    let first = models.first().ok_or(EvalError::NoModels)?;
    for m in &models[1..] {
        let diff = first.spec.structural_diff(&m.spec);
        if !diff.is_empty() {
            return Err(EvalError::SpecMismatch(diff.join(", ")));
        }
    }
    let per_model: Vec<Vec<Vec<f64>>> = models
        .iter()
        .map(|m| predict_pairs(m, pairs, combo))
        .collect::<Result<_, _>>()?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let cells = per_model[0][i].len();
            let raw = (0..cells)
                .map(|c| {
                    let mut v: Vec<f64> = per_model.iter().map(|pm| pm[i][c]).collect();
                    ordered_mean(&mut v)
                })
                .collect();
            EnsembleForecast {
                bin,
                input_ref: p.input.key(),
                models: models.len(),
                raw,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonResult {
    pub n: usize,
    pub r: f64,
    pub r2: f64,
    pub adjusted_r2: f64,
    /// Two-sided, Student t with n − 2 degrees of freedom.
    pub p_value: f64,
}

pub fn adjusted_r2(r: f64, n: usize) -> f64 {
    1.0 - (1.0 - r * r) * (n as f64 - 1.0) / (n as f64 - 2.0)
}

pub fn pearson_adj_r2(pairs: &[(f64, f64)]) -> Result<PearsonResult, EvalError> {
    let n = pairs.len();
    if n < 3 {
        return Err(EvalError::Degenerate(format!("{n} points, need at least 3")));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Degenerate("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(PearsonResult {
        n,
        r,
        r2: r * r,
        adjusted_r2: adjusted_r2(r, n),
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub lower_loa: f64,
    pub upper_loa: f64,
}

/// Differences are predicted − actual; limits are mean ± 1.96 sample SD.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman, EvalError> {
    let n = pairs.len();
    if n < 2 {
        return Err(EvalError::Degenerate(format!("{n} points, need at least 2")));
    }
    let d: Vec<f64> = pairs.iter().map(|(p, a)| p - a).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    Ok(BlandAltman {
        n,
        mean_diff: mean,
        sd_diff: sd,
        lower_loa: mean - 1.96 * sd,
        upper_loa: mean + 1.96 * sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Copy,
    PointwiseOls,
    PointwiseExp,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 3] = [BaselineMethod::Copy, BaselineMethod::PointwiseOls, BaselineMethod::PointwiseExp];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Copy => "copy",
            BaselineMethod::PointwiseOls => "pointwise_ols",
            BaselineMethod::PointwiseExp => "pointwise_exp",
        }
    }
}

fn least_squares_at(ts: &[f64], vs: &[f64], at: f64) -> f64 {
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let mv = vs.iter().sum::<f64>() / n;
    let (mut stv, mut stt) = (0.0, 0.0);
    for (t, v) in ts.iter().zip(vs) {
        stv += (t - mt) * (v - mv);
        stt += (t - mt) * (t - mt);
    }
    mv + stv / stt * (at - mt)
}

/// Forecast `horizon_years` after the last field of a chronological series.
/// Times are years since the first field; every output is clamped to [0, 50].
pub fn baseline_forecast(method: BaselineMethod, history: &[&VisualField], horizon_years: f64) -> Result<Vec<f64>, EvalError> {
    let last = history.last().ok_or(EvalError::InsufficientHistory {
        method: method.name(),
        needed: if method == BaselineMethod::Copy { 1 } else { 2 },
    })?;
    if method == BaselineMethod::Copy {
        return Ok(last.values.iter().map(|v| v.clamp(MIN_DB, MAX_DB)).collect());
    }
    let first = history[0];
    let ts: Vec<f64> = history.iter().map(|f| delta_years(first, f)).collect();
    if ts.iter().all(|&t| t == ts[0]) {
        return Err(EvalError::InsufficientHistory {
            method: method.name(),
            needed: 2,
        });
    }
    let at = ts[ts.len() - 1] + horizon_years;
    let cells = last.values.len();
    Ok((0..cells)
        .map(|c| {
            let vs: Vec<f64> = history.iter().map(|f| f.values[c]).collect();
            let v = match method {
                BaselineMethod::PointwiseOls => least_squares_at(&ts, &vs, at),
                _ => {
                    let logs: Vec<f64> = vs.iter().map(|v| (v + 1.0).ln()).collect();
                    least_squares_at(&ts, &logs, at).exp() - 1.0
                }
            };
            v.clamp(MIN_DB, MAX_DB)
        })
        .collect())
}

/// A point estimate with a bootstrap percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-pair error sums: (Σ|e|, Σe², cells).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairErrors {
    pub abs_sum: f64,
    pub sq_sum: f64,
    pub cells: usize,
}

impl PairErrors {
    pub fn new(pred: &[f64], actual: &[f64]) -> PairErrors {
        let mut e = PairErrors {
            abs_sum: 0.0,
            sq_sum: 0.0,
            cells: pred.len(),
        };
        for (p, a) in pred.iter().zip(actual) {
            e.abs_sum += (p - a).abs();
            e.sq_sum += (p - a) * (p - a);
        }
        e
    }
}

fn pooled(errs: &[PairErrors], idx: impl Iterator<Item = usize>) -> (f64, f64) {
    let (mut a, mut s, mut n) = (0.0, 0.0, 0usize);
    for i in idx {
        a += errs[i].abs_sum;
        s += errs[i].sq_sum;
        n += errs[i].cells;
    }
    (a / n as f64, (s / n as f64).sqrt())
}

/// Pooled MAE and RMSE with pair-level percentile bootstrap intervals.
pub fn bootstrap_mae_rmse(errs: &[PairErrors], resamples: usize, seed: u64, label: &str) -> (Estimate, Estimate) {
    let (mae, rmse) = pooled(errs, 0..errs.len());
    let mut rng = rng_for(seed, &format!("bootstrap/{label}"));
    let mut maes = Vec::with_capacity(resamples);
    let mut rmses = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..errs.len()).map(|_| rng.random_range(0..errs.len())).collect();
        let (m, r) = pooled(errs, idx.into_iter());
        maes.push(m);
        rmses.push(r);
    }
    let interval = |value: f64, mut xs: Vec<f64>| {
        if xs.is_empty() {
            return Estimate {
                value,
                ci_low: value,
                ci_high: value,
            };
        }
        xs.sort_by(f64::total_cmp);
        Estimate {
            value,
            ci_low: percentile(&xs, 0.025),
            ci_high: percentile(&xs, 0.975),
        }
    };
    (interval(mae, maes), interval(rmse, rmses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap_resamples: 1000,
            bootstrap_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdRow {
    pub bin: IntervalBin,
    pub patient_id: String,
    pub eye: Eye,
    pub input_md: f64,
    pub predicted_md: f64,
    pub actual_md: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: IntervalBin,
    pub pairs: usize,
    pub models: usize,
    pub skipped: usize,
    pub mae: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: BaselineMethod,
    pub pairs: usize,
    pub skipped: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    /// Model MAE on the same pairs, for side-by-side comparison.
    pub model_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reference: ReferenceConstants,
    pub config: EvalConfig,
    pub evaluated_pairs: usize,
    pub skipped_pairs: usize,
    pub mae: Estimate,
    pub rmse: Estimate,
    pub md_pearson: Option<PearsonResult>,
    pub bland_altman: Option<BlandAltman>,
    pub md_rows: Vec<MdRow>,
    pub per_bin: Vec<BinRow>,
    pub baselines: Vec<BaselineRow>,
}

/// Test-set evaluation. Each pair is forecast by its bin's fold ensemble and
/// scored on the exported (clamped) values; bins without models are skipped
/// and counted. `history` supplies the earlier fields the baselines extrapolate.
pub fn evaluate_testset(
    models: &BTreeMap<IntervalBin, Vec<Model>>,
    combo: FeatureCombo,
    test: &BinnedPairs,
    history: &[VisualField],
    cfg: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    if test.total() == 0 {
        return Err(EvalError::NoPairs);
    }
    let normative = |f: &VisualField| -> NormativeSurface { normative_surface(f.age_years, f.eye) };
    let series = series_by_eye(history);
    let series_index: HashMap<(String, Eye), &Vec<&VisualField>> = series.iter().map(|(k, v)| (k.clone(), v)).collect();

    let mut errs = Vec::new();
    let mut md_rows = Vec::new();
    let mut per_bin = Vec::new();
    let mut skipped_pairs = 0;
    let mut baseline_errs: BTreeMap<BaselineMethod, (Vec<PairErrors>, Vec<PairErrors>, usize)> = BTreeMap::new();

    for (&bin, pairs) in &test.bins {
        let Some(fold_models) = models.get(&bin).filter(|m| !m.is_empty()) else {
            skipped_pairs += pairs.len();
            per_bin.push(BinRow {
                bin,
                pairs: 0,
                models: 0,
                skipped: pairs.len(),
                mae: None,
            });
            continue;
        };
        let refs: Vec<&FieldPair> = pairs.iter().collect();
        let forecasts = ensemble_predict(fold_models, &refs, combo, Some(bin))?;
        let mut bin_errs = Vec::with_capacity(pairs.len());
        for (p, fc) in pairs.iter().zip(&forecasts) {
            let pred = fc.exported();
            let e = PairErrors::new(&pred, &p.target.values);
            bin_errs.push(e);
            let n_target = normative(&p.target);
            md_rows.push(MdRow {
                bin,
                patient_id: p.input.patient_id.clone(),
                eye: p.input.eye,
                input_md: mean_deviation_values(p.input.eye, &p.input.values, &normative(&p.input))?,
                predicted_md: mean_deviation_values(p.target.eye, &pred, &n_target)?,
                actual_md: mean_deviation_values(p.target.eye, &p.target.values, &n_target)?,
            });

            let prior: Vec<&VisualField> = series_index
                .get(&(p.input.patient_id.clone(), p.input.eye))
                .map(|s| s.iter().copied().filter(|f| f.test_date <= p.input.test_date).collect())
                .unwrap_or_default();
            let prior = if prior.is_empty() { vec![&p.input] } else { prior };
            for method in BaselineMethod::ALL {
                let slot = baseline_errs.entry(method).or_insert_with(|| (Vec::new(), Vec::new(), 0));
                match baseline_forecast(method, &prior, p.delta_years) {
                    Ok(b) => {
                        slot.0.push(PairErrors::new(&b, &p.target.values));
                        slot.1.push(e);
                    }
                    Err(_) => slot.2 += 1,
                }
            }
        }
        let (mae, _) = bootstrap_mae_rmse(&bin_errs, cfg.bootstrap_resamples, cfg.bootstrap_seed, &bin.label());
        per_bin.push(BinRow {
            bin,
            pairs: pairs.len(),
            models: fold_models.len(),
            skipped: 0,
            mae: Some(mae),
        });
        errs.extend(bin_errs);
    }
    if errs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let (mae, rmse) = bootstrap_mae_rmse(&errs, cfg.bootstrap_resamples, cfg.bootstrap_seed, "overall");
    let md: Vec<(f64, f64)> = md_rows.iter().map(|r| (r.predicted_md, r.actual_md)).collect();
    let baselines = baseline_errs
        .into_iter()
        .map(|(method, (b, m, skipped))| {
            let nonempty = !b.is_empty();
            let (bm, br) = if nonempty { pooled(&b, 0..b.len()) } else { (f64::NAN, f64::NAN) };
            BaselineRow {
                method,
                pairs: b.len(),
                skipped,
                mae: nonempty.then_some(bm),
                rmse: nonempty.then_some(br),
                model_mae: nonempty.then(|| pooled(&m, 0..m.len()).0),
            }
        })
        .collect();
    Ok(MetricsReport {
        reference: ReferenceConstants::default(),
        config: *cfg,
        evaluated_pairs: errs.len(),
        skipped_pairs,
        mae,
        rmse,
        md_pearson: pearson_adj_r2(&md).ok(),
        bland_altman: bland_altman(&md).ok(),
        md_rows,
        per_bin,
        baselines,
    })
}

/// Plot-ready tables derived from a report, keyed by file name.
pub fn report_csvs(r: &MetricsReport) -> Vec<(&'static str, String)> {
    let mut scatter = String::from("bin,patient_id,eye,input_md,predicted_md,actual_md\n");
    for row in &r.md_rows {
        let _ = writeln!(
            scatter,
            "{},{},{},{},{},{}",
            row.bin,
            row.patient_id,
            row.eye.code(),
            row.input_md,
            row.predicted_md,
            row.actual_md
        );
    }
    let mut ba = String::from("mean_md,difference\n");
    for row in &r.md_rows {
        let _ = writeln!(ba, "{},{}", (row.predicted_md + row.actual_md) / 2.0, row.predicted_md - row.actual_md);
    }
    let mut bins = String::from("bin,pairs,models,skipped,mae,ci_low,ci_high\n");
    for b in &r.per_bin {
        let (m, lo, hi) = b
            .mae
            .map(|e| (e.value.to_string(), e.ci_low.to_string(), e.ci_high.to_string()))
            .unwrap_or_default();
        let _ = writeln!(bins, "{},{},{},{},{m},{lo},{hi}", b.bin, b.pairs, b.models, b.skipped);
    }
    vec![
        ("md_scatter.csv", scatter),
        ("bland_altman.csv", ba),
        ("per_bin_mae.csv", bins),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hvf::Gender;
    use crate::synth::DAYS_PER_YEAR;
    use chrono::{Duration, NaiveDate};

    fn field(day: i64, values: Vec<f64>) -> VisualField {
        VisualField {
            patient_id: "A".into(),
            eye: Eye::Right,
            gender: Gender::M,
            age_years: 50.0,
            test_date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap() + Duration::days(day),
            test_index: 1,
            values,
        }
    }

    #[test]
    fn pearson_hand_example() {
        let r = pearson_adj_r2(&[(0.0, 0.0), (1.0, 2.0), (2.0, 1.0), (3.0, 3.0)]).unwrap();
        assert!((r.r - 0.8).abs() < 1e-12);
        assert!((r.adjusted_r2 - (1.0 - 0.36 * 3.0 / 2.0)).abs() < 1e-12);
        let line: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let p = pearson_adj_r2(&line).unwrap();
        assert_eq!(p.r, 1.0);
        assert_eq!(p.p_value, 0.0);
        assert!(pearson_adj_r2(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).unwrap_err().to_string().contains("degenerate"));
    }

    #[test]
    fn p_value_matches_table() {
        // r = 0.8, n = 4 → t = 0.8·sqrt(2/0.36) = 1.8856, df 2, two-sided p = 0.2
        let r = pearson_adj_r2(&[(0.0, 0.0), (1.0, 2.0), (2.0, 1.0), (3.0, 3.0)]).unwrap();
        assert!((r.p_value - 0.2).abs() < 1e-9, "{}", r.p_value);
    }

    #[test]
    fn bland_altman_examples() {
        let b = bland_altman(&[(1.0, 0.0), (3.0, 0.0)]).unwrap();
        assert!((b.mean_diff - 2.0).abs() < 1e-12);
        assert!((b.sd_diff - 2f64.sqrt()).abs() < 1e-12);
        assert!((b.lower_loa - (2.0 - 1.96 * 2f64.sqrt())).abs() < 1e-12);
        let same = bland_altman(&[(5.0, 5.0), (7.0, 7.0)]).unwrap();
        assert_eq!((same.mean_diff, same.lower_loa, same.upper_loa), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ols_two_point_example() {
        assert!((least_squares_at(&[0.0, 1.0], &[30.0, 28.0], 3.0) - 24.0).abs() < 1e-12);
        // 1461 days is exactly four 365.25-day years
        let a = field(0, vec![30.0; 54]);
        let b = field(1461, vec![22.0; 54]);
        let p = baseline_forecast(BaselineMethod::PointwiseOls, &[&a, &b], 2.0).unwrap();
        assert!(p.iter().all(|v| (v - 18.0).abs() < 1e-9));
        let c = baseline_forecast(BaselineMethod::Copy, &[&a, &b], 1.0).unwrap();
        assert_eq!(c, b.values);
        let err = baseline_forecast(BaselineMethod::PointwiseExp, &[&a], 1.0).unwrap_err();
        assert!(err.to_string().contains("pointwise_exp needs at least 2"));
    }

    #[test]
    fn exp_baseline_is_exact_on_exponential_decay() {
        let v = |t: f64| 30.0 * (-0.1 * t).exp() - 1.0;
        let fs: Vec<VisualField> = [0i64, 365, 730]
            .iter()
            .map(|&d| field(d, vec![v(d as f64 / DAYS_PER_YEAR); 54]))
            .collect();
        let refs: Vec<&VisualField> = fs.iter().collect();
        let p = baseline_forecast(BaselineMethod::PointwiseExp, &refs, 1.0).unwrap();
        assert!((p[0] - v(730.0 / DAYS_PER_YEAR + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn ordered_mean_is_order_free() {
        let mut a = vec![0.1, 1e16, -1e16, 0.3];
        let mut b = vec![-1e16, 0.3, 0.1, 1e16];
        assert_eq!(ordered_mean(&mut a).to_bits(), ordered_mean(&mut b).to_bits());
    }

    #[test]
    fn bootstrap_is_seeded_and_brackets() {
        let errs: Vec<PairErrors> = (0..30).map(|i| PairErrors::new(&[i as f64 % 7.0], &[0.0])).collect();
        let (m1, r1) = bootstrap_mae_rmse(&errs, 200, 3, "x");
        let (m2, _) = bootstrap_mae_rmse(&errs, 200, 3, "x");
        assert_eq!(m1, m2);
        assert!(m1.ci_low <= m1.value && m1.value <= m1.ci_high);
        assert!(r1.value >= m1.value);
    }

    #[test]
    fn pooled_mae_example() {
        let errs = [PairErrors::new(&[2.0; 54], &[0.0; 54]), PairErrors::new(&[4.0; 54], &[0.0; 54])];
        assert_eq!(pooled(&errs, 0..2).0, 3.0);
    }
}
