//! Seeded longitudinal cohort simulator.
//!
//! Every constant here (34 dB hill apex, 0.06 dB/year ageing, 0.15 dB/degree
//! eccentricity slope, the noise model) is an arbitrary but clinically
//! plausible fiction. Noiseless series are linear in time per cell until
//! they hit the clamp, so pointwise least squares recovers them exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hvf::{round2, valid_cells, Cell, Eye, Gender, NormativeSurface, VisualField, GRID_COLS};
use crate::seed::rng_for;

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Eccentricity in degrees under 6° spacing, centres at ±3° + 6°k.
/// Columns are mirrored for left eyes so the blind spot sits at 15° temporal.
pub fn eccentricity(eye: Eye, cell: Cell) -> f64 {
    let col = cell.col as f64;
    let x = match eye {
        Eye::Right => (col - 4.0) * 6.0 - 3.0,
        Eye::Left => (col - 4.0) * 6.0 + 3.0,
    };
    let y = (3.5 - cell.row as f64) * 6.0;
    x.hypot(y)
}

pub fn normative_sensitivity(age_years: f64, eye: Eye, cell: Cell) -> f64 {
    (34.0 - 0.06 * (age_years - 45.0) - 0.15 * eccentricity(eye, cell)).clamp(0.0, 40.0)
}

pub fn normative_surface(age_years: f64, eye: Eye) -> NormativeSurface {
    NormativeSurface {
        expected: valid_cells()
            .iter()
            .map(|&c| normative_sensitivity(age_years, eye, c))
            .collect(),
    }
}

/// Normative surface matching a field's age and eye.
pub fn normative_for(f: &VisualField) -> NormativeSurface {
    normative_surface(f.age_years, f.eye)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeKind {
    Normal,
    Diffuse,
    SuperiorArcuate,
    InferiorArcuate,
    NasalStep,
    Paracentral,
    StableHemianopia,
}

impl ArchetypeKind {
    pub const ALL: [ArchetypeKind; 7] = [
        ArchetypeKind::Normal,
        ArchetypeKind::Diffuse,
        ArchetypeKind::SuperiorArcuate,
        ArchetypeKind::InferiorArcuate,
        ArchetypeKind::NasalStep,
        ArchetypeKind::Paracentral,
        ArchetypeKind::StableHemianopia,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchetypeKind::Normal => "normal",
            ArchetypeKind::Diffuse => "diffuse",
            ArchetypeKind::SuperiorArcuate => "superior_arcuate",
            ArchetypeKind::InferiorArcuate => "inferior_arcuate",
            ArchetypeKind::NasalStep => "nasal_step",
            ArchetypeKind::Paracentral => "paracentral",
            ArchetypeKind::StableHemianopia => "stable_hemianopia",
        }
    }
}

impl fmt::Display for ArchetypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchetypeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchetypeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown archetype {s:?}"))
    }
}

/// Region template: per-cell indicator and rate multiplier (scan order).
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub kind: ArchetypeKind,
    pub affected: Vec<bool>,
    pub multiplier: Vec<f64>,
    /// Onset depth relative to the cohort's drawn depth.
    pub onset_scale: f64,
}

#[derive(Deserialize)]
struct TemplateFile {
    archetypes: BTreeMap<String, TemplateEntry>,
}

#[derive(Deserialize)]
struct TemplateEntry {
    onset_scale: f64,
    cells: TemplateCells,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TemplateCells {
    All(String),
    List(Vec<(usize, usize, f64)>),
}

static TEMPLATES: LazyLock<BTreeMap<ArchetypeKind, TemplateEntry>> = LazyLock::new(|| {
    let file: TemplateFile = serde_json::from_str(include_str!("../data/archetypes.json"))
        .expect("bundled archetype templates parse");
    file.archetypes
        .into_iter()
        .map(|(k, v)| (k.parse().expect("known archetype"), v))
        .collect()
});

impl Archetype {
    pub fn new(kind: ArchetypeKind, eye: Eye) -> Archetype {
        let entry = &TEMPLATES[&kind];
        let cells = valid_cells();
        let mut affected = vec![false; cells.len()];
        let mut multiplier = vec![0.0; cells.len()];
        match &entry.cells {
            TemplateCells::All(s) => {
                assert_eq!(s, "all", "template cell list");
                affected.fill(true);
                multiplier.fill(1.0);
            }
            TemplateCells::List(list) => {
                for &(row, col, m) in list {
                    let col = match eye {
                        Eye::Right => col,
                        Eye::Left => GRID_COLS - 1 - col,
                    };
                    if let Some(i) = cells.iter().position(|&c| c == Cell::new(row, col)) {
                        affected[i] = true;
                        multiplier[i] = m;
                    }
                }
            }
        }
        Archetype {
            kind,
            affected,
            multiplier,
            onset_scale: entry.onset_scale,
        }
    }
}

/// `clamp(baseline − rate·multiplier·t, 0, 40)` per cell.
pub fn progress_field(baseline: &[f64], archetype: &Archetype, rate: f64, t_years: f64) -> Vec<f64> {
    baseline
        .iter()
        .zip(&archetype.multiplier)
        .map(|(&b, &m)| (b - rate * m * t_years).clamp(0.0, 40.0))
        .collect()
}

/// Test-retest noise SD for a true sensitivity.
pub fn noise_sd(value: f64) -> f64 {
    (1.0 + 0.12 * (34.0 - value)).clamp(1.0, 6.0)
}

/// Adds heteroscedastic Gaussian noise, clamps to [0, 50] and rounds to the
/// two-decimal storage grid.
pub fn add_noise<R: Rng>(values: &[f64], rng: &mut R) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let n = Normal::new(0.0, noise_sd(v)).expect("positive sd");
            round2((v + n.sample(rng)).clamp(0.0, 50.0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub patients: usize,
    pub tests_per_eye: (usize, usize),
    pub span_years: (f64, f64),
    pub archetype_weights: BTreeMap<ArchetypeKind, f64>,
    /// dB/year for cells with multiplier 1.
    pub rate_range: (f64, f64),
    pub onset_depth: (f64, f64),
    pub baseline_age: (f64, f64),
    pub bilateral_probability: f64,
    pub noise: bool,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let weights = [
            (ArchetypeKind::Normal, 3.0),
            (ArchetypeKind::Diffuse, 1.0),
            (ArchetypeKind::SuperiorArcuate, 1.5),
            (ArchetypeKind::InferiorArcuate, 1.5),
            (ArchetypeKind::NasalStep, 1.0),
            (ArchetypeKind::Paracentral, 1.0),
            (ArchetypeKind::StableHemianopia, 0.5),
        ];
        CohortConfig {
            patients: 200,
            tests_per_eye: (3, 8),
            span_years: (2.0, 8.0),
            archetype_weights: weights.into_iter().collect(),
            rate_range: (0.2, 2.5),
            onset_depth: (3.0, 15.0),
            baseline_age: (40.0, 80.0),
            bilateral_probability: 0.8,
            noise: true,
            seed: 0,
        }
    }
}

impl CohortConfig {
    /// Noiseless, progressing-only cohort whose trajectories never reach the
    /// 0 dB floor, so every series is exactly linear before rounding.
    pub fn noiseless_progressive(patients: usize, seed: u64) -> Self {
        let weights = [
            (ArchetypeKind::Diffuse, 1.0),
            (ArchetypeKind::SuperiorArcuate, 1.0),
            (ArchetypeKind::InferiorArcuate, 1.0),
            (ArchetypeKind::NasalStep, 1.0),
            (ArchetypeKind::Paracentral, 1.0),
        ];
        CohortConfig {
            patients,
            tests_per_eye: (4, 8),
            span_years: (6.0, 6.0),
            archetype_weights: weights.into_iter().collect(),
            rate_range: (0.5, 2.0),
            onset_depth: (2.0, 8.0),
            baseline_age: (40.0, 75.0),
            bilateral_probability: 0.8,
            noise: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.patients == 0 {
            return bad("patients must be positive");
        }
        if self.tests_per_eye.0 < 1 || self.tests_per_eye.0 > self.tests_per_eye.1 {
            return bad("tests_per_eye must be a nonempty range starting at >= 1");
        }
        if !(self.span_years.0 > 0.0 && self.span_years.0 <= self.span_years.1) {
            return bad("span_years must be a positive range");
        }
        if self.archetype_weights.values().any(|&w| !(w >= 0.0))
            || self.archetype_weights.values().sum::<f64>() <= 0.0
        {
            return bad("archetype weights must be nonnegative with a positive sum");
        }
        if !(self.rate_range.0 >= 0.0 && self.rate_range.0 <= self.rate_range.1) {
            return bad("rate_range must be a nonnegative range");
        }
        if !(self.onset_depth.0 >= 0.0 && self.onset_depth.0 <= self.onset_depth.1) {
            return bad("onset_depth must be a nonnegative range");
        }
        if !(self.baseline_age.0 >= 0.0 && self.baseline_age.0 <= self.baseline_age.1) {
            return bad("baseline_age must be a nonnegative range");
        }
        if !(0.0..=1.0).contains(&self.bilateral_probability) {
            return bad("bilateral_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid cohort config: {0}")]
    Config(String),
}

/// Ground truth of one simulated eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeTruth {
    pub eye: Eye,
    pub archetype: ArchetypeKind,
    pub onset_depth: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub gender: Gender,
    pub baseline_age: f64,
    pub first_visit: NaiveDate,
    /// Visit offsets from the first visit, in days.
    pub visit_days: Vec<i64>,
    pub eyes: Vec<EyeTruth>,
}

impl PatientTruth {
    /// Noiseless, unrounded sensitivities of `eye` at `days` after the first visit.
    pub fn true_values(&self, eye: &EyeTruth, days: f64) -> Vec<f64> {
        let t = days / DAYS_PER_YEAR;
        let age = self.baseline_age + t;
        let archetype = Archetype::new(eye.archetype, eye.eye);
        let depth = eye.onset_depth * archetype.onset_scale;
        let baseline: Vec<f64> = valid_cells()
            .iter()
            .zip(&archetype.affected)
            .map(|(&c, &hit)| normative_sensitivity(age, eye.eye, c) - if hit { depth } else { 0.0 })
            .collect();
        progress_field(&baseline, &archetype, eye.rate, t)
    }
}

/// `cohort_meta.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub config: CohortConfig,
    pub patients: Vec<PatientTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub fields: Vec<VisualField>,
    pub meta: CohortMeta,
}

fn pick_archetype<R: Rng>(weights: &BTreeMap<ArchetypeKind, f64>, rng: &mut R) -> ArchetypeKind {
    let total: f64 = weights.values().sum();
    let mut u = rng.random::<f64>() * total;
    for (&k, &w) in weights {
        if u < w {
            return k;
        }
        u -= w;
    }
    *weights
        .iter()
        .rev()
        .find(|(_, &w)| w > 0.0)
        .map(|(k, _)| k)
        .expect("positive weight")
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn simulate_patient(cfg: &CohortConfig, index: usize) -> (PatientTruth, Vec<VisualField>) {
    let mut rng = rng_for(cfg.seed, &format!("patient/{index}"));
    let patient_id = format!("P{:05}", index + 1);
    let gender = if rng.random_bool(0.5) { Gender::M } else { Gender::F };
    let baseline_age = uniform(&mut rng, cfg.baseline_age);
    let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let first_visit = epoch + Duration::days(rng.random_range(0..3650));

    let n_visits = rng.random_range(cfg.tests_per_eye.0..=cfg.tests_per_eye.1);
    let span_days = (uniform(&mut rng, cfg.span_years) * DAYS_PER_YEAR).round() as i64;
    let mut visit_days = vec![0i64];
    if n_visits > 1 {
        let last = span_days.max(n_visits as i64 - 1);
        let mut inner = std::collections::BTreeSet::new();
        while inner.len() < n_visits - 2 {
            inner.insert(rng.random_range(1..last));
        }
        visit_days.extend(inner);
        visit_days.push(last);
    }

    let eyes: Vec<Eye> = if rng.random_bool(cfg.bilateral_probability) {
        vec![Eye::Right, Eye::Left]
    } else if rng.random_bool(0.5) {
        vec![Eye::Right]
    } else {
        vec![Eye::Left]
    };
    let eye_truths: Vec<EyeTruth> = eyes
        .into_iter()
        .map(|eye| EyeTruth {
            eye,
            archetype: pick_archetype(&cfg.archetype_weights, &mut rng),
            onset_depth: uniform(&mut rng, cfg.onset_depth),
            rate: uniform(&mut rng, cfg.rate_range),
        })
        .collect();

    let truth = PatientTruth {
        patient_id: patient_id.clone(),
        gender,
        baseline_age,
        first_visit,
        visit_days: visit_days.clone(),
        eyes: eye_truths,
    };

    let mut fields = Vec::new();
    for (k, &days) in visit_days.iter().enumerate() {
        for eye in &truth.eyes {
            let clean = truth.true_values(eye, days as f64);
            let values = if cfg.noise {
                add_noise(&clean, &mut rng)
            } else {
                clean.iter().map(|&v| round2(v)).collect()
            };
            fields.push(VisualField {
                patient_id: patient_id.clone(),
                eye: eye.eye,
                gender,
                age_years: baseline_age + days as f64 / DAYS_PER_YEAR,
                test_date: first_visit + Duration::days(days),
                test_index: k as u32 + 1,
                values,
            });
        }
    }
    (truth, fields)
}

/// Simulates a cohort. Each patient draws from its own stream derived from
/// `(seed, patient index)`, so output does not depend on generation order.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Cohort, SynthError> {
    cfg.validate()?;
    let mut fields = Vec::new();
    let mut patients = Vec::with_capacity(cfg.patients);
    for i in 0..cfg.patients {
        let (truth, fs) = simulate_patient(cfg, i);
        patients.push(truth);
        fields.extend(fs);
    }
    Ok(Cohort {
        fields,
        meta: CohortMeta {
            config: cfg.clone(),
            patients,
        },
    })
}
