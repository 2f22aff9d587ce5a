//! Temporal pairing, horizon bins, patient-level splits and input encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use hvfcast_nn::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hvf::{valid_offsets, Eye, FieldRef, Gender, VisualField, GRID_CELLS, GRID_COLS, GRID_ROWS};
use crate::seed::rng_for;
use crate::synth::DAYS_PER_YEAR;

pub const N_FOLDS: usize = 10;
pub const N_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("too few patients: {train} on the training side cannot fill {N_FOLDS} folds")]
    TooFewPatients { train: usize },
    #[error("invalid split ratio {0}")]
    Ratio(f64),
    #[error("pair file line {line}: {message}")]
    PairFile { line: usize, message: String },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("interval outside [1.0, 5.5]: {0}")]
    IntervalOutOfRange(f64),
    #[error("{0} is not a bin center (1.0, 1.5, .., 5.5)")]
    NotABinCenter(f64),
}

/// An (earlier, later) pair of fields from one eye.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub input: VisualField,
    pub target: VisualField,
    pub delta_years: f64,
}

pub fn delta_years(from: &VisualField, to: &VisualField) -> f64 {
    (to.test_date - from.test_date).num_days() as f64 / DAYS_PER_YEAR
}

/// Fields grouped per `(patient, eye)` and sorted chronologically.
pub fn series_by_eye(fields: &[VisualField]) -> BTreeMap<(String, Eye), Vec<&VisualField>> {
    let mut groups: BTreeMap<(String, Eye), Vec<&VisualField>> = BTreeMap::new();
    for f in fields {
        groups.entry((f.patient_id.clone(), f.eye)).or_default().push(f);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|f| (f.test_date, f.test_index));
    }
    groups
}

/// Every forward pair within each eye's series. Same-day tests do not pair.
pub fn make_pairs(fields: &[VisualField]) -> Vec<FieldPair> {
    let mut pairs = Vec::new();
    for series in series_by_eye(fields).values() {
        for (i, a) in series.iter().enumerate() {
            for b in &series[i + 1..] {
                if b.test_date > a.test_date {
                    pairs.push(FieldPair {
                        input: (*a).clone(),
                        target: (*b).clone(),
                        delta_years: delta_years(a, b),
                    });
                }
            }
        }
    }
    pairs
}

/// A half-year forecast horizon bin, centre 1.0 through 5.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntervalBin(u8);

impl IntervalBin {
    pub fn all() -> impl Iterator<Item = IntervalBin> {
        (0..N_BINS as u8).map(IntervalBin)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(i: usize) -> Option<IntervalBin> {
        (i < N_BINS).then_some(IntervalBin(i as u8))
    }

    pub fn center(self) -> f64 {
        1.0 + 0.5 * self.0 as f64
    }

    pub fn lower(self) -> f64 {
        self.center() - 0.25
    }

    pub fn upper(self) -> f64 {
        self.center() + 0.25
    }

    /// The bin whose centre is `years`.
    pub fn from_center(years: f64) -> Result<IntervalBin, PipelineError> {
        let i = (years - 1.0) / 0.5;
        if (0.0..=9.0).contains(&i) && i.fract() == 0.0 {
            Ok(IntervalBin(i as u8))
        } else {
            Err(PipelineError::NotABinCenter(years))
        }
    }

    /// The bin holding a forecast horizon between 1.0 and 5.5 years.
    pub fn for_horizon(years: f64) -> Result<IntervalBin, PipelineError> {
        if (1.0..=5.5).contains(&years) {
            Ok(assign_bin(years).expect("horizon inside the binned range"))
        } else {
            Err(PipelineError::IntervalOutOfRange(years))
        }
    }

    pub fn contains(self, delta: f64) -> bool {
        let last = self.index() == N_BINS - 1;
        delta >= self.lower() && if last { delta <= 5.5 } else { delta < self.upper() }
    }

    /// Directory-friendly label, e.g. `bin-1.5`.
    pub fn label(self) -> String {
        format!("bin-{:.1}", self.center())
    }
}

impl fmt::Display for IntervalBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.center())
    }
}

impl Serialize for IntervalBin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.center())
    }
}

impl<'de> Deserialize<'de> for IntervalBin {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = f64::deserialize(d)?;
        IntervalBin::from_center(c).map_err(serde::de::Error::custom)
    }
}

/// Bin for a horizon in years; `None` below 0.75 or above 5.5.
pub fn assign_bin(delta: f64) -> Option<IntervalBin> {
    if !(0.75..=5.5).contains(&delta) {
        return None;
    }
    let i = (((delta - 0.75) / 0.5).floor() as usize).min(N_BINS - 1);
    let bin = IntervalBin(i as u8);
    debug_assert!(bin.contains(delta));
    Some(bin)
}

/// Pairs grouped per bin, plus the number that fell outside every bin.
#[derive(Debug, Clone, Default)]
pub struct BinnedPairs {
    pub bins: BTreeMap<IntervalBin, Vec<FieldPair>>,
    pub excluded: usize,
}

impl BinnedPairs {
    pub fn from_pairs(pairs: Vec<FieldPair>) -> BinnedPairs {
        let mut out = BinnedPairs::default();
        for p in pairs {
            match assign_bin(p.delta_years) {
                Some(b) => out.bins.entry(b).or_default().push(p),
                None => out.excluded += 1,
            }
        }
        out
    }

    pub fn get(&self, bin: IntervalBin) -> &[FieldPair] {
        self.bins.get(&bin).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self) -> usize {
        self.bins.values().map(Vec::len).sum()
    }
}

/// Patient-level partition: held-out test set plus ten folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub ratio: f64,
    pub test_patients: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    pub fn is_test(&self, patient: &str) -> bool {
        self.test_patients.iter().any(|p| p == patient)
    }

    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|p| p == patient))
    }

    /// Splits pairs of the training side into (train, validation) for `fold`.
    pub fn fold_pairs<'a>(&self, pairs: &'a [FieldPair], fold: usize) -> (Vec<&'a FieldPair>, Vec<&'a FieldPair>) {
        let lookup = self.lookup();
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for p in pairs {
            match lookup.get(p.input.patient_id.as_str()) {
                Some(Side::Fold(f)) if *f == fold => val.push(p),
                Some(Side::Fold(_)) => train.push(p),
                _ => {}
            }
        }
        (train, val)
    }

    pub fn test_pairs<'a>(&self, pairs: &'a [FieldPair]) -> Vec<&'a FieldPair> {
        let lookup = self.lookup();
        pairs
            .iter()
            .filter(|p| matches!(lookup.get(p.input.patient_id.as_str()), Some(Side::Test)))
            .collect()
    }

    fn lookup(&self) -> HashMap<&str, Side> {
        let mut m = HashMap::new();
        for p in &self.test_patients {
            m.insert(p.as_str(), Side::Test);
        }
        for (i, f) in self.folds.iter().enumerate() {
            for p in f {
                m.insert(p.as_str(), Side::Fold(i));
            }
        }
        m
    }
}

#[derive(Clone, Copy)]
enum Side {
    Test,
    Fold(usize),
}

/// Seeded patient-level split: the first `ceil(ratio·P)` shuffled ids train,
/// the rest are held out; training ids are dealt round-robin into folds.
pub fn split_patients(fields: &[VisualField], ratio: f64, seed: u64) -> Result<SplitPlan, PipelineError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(PipelineError::Ratio(ratio));
    }
    let ids: BTreeSet<&str> = fields.iter().map(|f| f.patient_id.as_str()).collect();
    split_ids(ids.into_iter().map(str::to_string).collect(), ratio, seed)
}

/// [`split_patients`] over an explicit id list (sorted before shuffling).
pub fn split_ids(mut ids: Vec<String>, ratio: f64, seed: u64) -> Result<SplitPlan, PipelineError> {
    ids.sort();
    ids.dedup();
    let n_train = (ratio * ids.len() as f64).ceil() as usize;
    if n_train < N_FOLDS {
        return Err(PipelineError::TooFewPatients { train: n_train });
    }
    ids.shuffle(&mut rng_for(seed, "split"));
    let test_patients = ids.split_off(n_train);
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % N_FOLDS].push(id);
    }
    Ok(SplitPlan {
        seed,
        ratio,
        test_patients,
        folds,
    })
}

/// Which clinical covariates join the field as extra input faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FeatureCombo(u8);

impl FeatureCombo {
    pub const AGE: u8 = 1;
    pub const GENDER: u8 = 2;
    pub const EYE: u8 = 4;
    pub const TEST_INDEX: u8 = 8;
    const NAMES: [(u8, &'static str); 4] = [
        (Self::AGE, "age"),
        (Self::GENDER, "gender"),
        (Self::EYE, "eye"),
        (Self::TEST_INDEX, "test_index"),
    ];

    pub fn from_bits(bits: u8) -> FeatureCombo {
        FeatureCombo(bits & 0x0f)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn none() -> FeatureCombo {
        FeatureCombo(0)
    }

    /// All sixteen combos, by bitmask.
    pub fn all() -> impl Iterator<Item = FeatureCombo> {
        (0..16).map(FeatureCombo)
    }

    pub fn has(self, flag: u8) -> bool {
        self.0 & flag != 0
    }

    pub fn in_channels(self) -> usize {
        1 + self.has(Self::AGE) as usize
            + 2 * self.has(Self::GENDER) as usize
            + 2 * self.has(Self::EYE) as usize
            + self.has(Self::TEST_INDEX) as usize
    }

    /// `hvf` for the empty combo, otherwise e.g. `age+eye`.
    pub fn name(self) -> String {
        if self.0 == 0 {
            return "hvf".into();
        }
        Self::NAMES
            .iter()
            .filter(|(b, _)| self.has(*b))
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Display for FeatureCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FeatureCombo {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bits = 0;
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty() && *p != "hvf") {
            let (b, _) = Self::NAMES
                .iter()
                .find(|(_, n)| *n == part)
                .ok_or_else(|| PipelineError::UnknownFeature(part.to_string()))?;
            bits |= b;
        }
        Ok(FeatureCombo(bits))
    }
}

/// Channels, in order: raw dB (0 off-mask), age/100, gender one-hot (M, F),
/// eye one-hot (right, left), min(test_index, 20)/20.
pub fn encode_input_into(f: &VisualField, combo: FeatureCombo, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + GRID_CELLS, 0.0);
    for (&off, &v) in valid_offsets().iter().zip(&f.values) {
        out[start + off] = v;
    }
    let mut face = |v: f64| out.extend(std::iter::repeat_n(v, GRID_CELLS));
    if combo.has(FeatureCombo::AGE) {
        face(f.age_years / 100.0);
    }
    if combo.has(FeatureCombo::GENDER) {
        face((f.gender == Gender::M) as u8 as f64);
        face((f.gender == Gender::F) as u8 as f64);
    }
    if combo.has(FeatureCombo::EYE) {
        face((f.eye == Eye::Right) as u8 as f64);
        face((f.eye == Eye::Left) as u8 as f64);
    }
    if combo.has(FeatureCombo::TEST_INDEX) {
        face(f.test_index.min(20) as f64 / 20.0);
    }
}

/// One sample of shape `(channels, 8, 9)`.
pub fn encode_input(f: &VisualField, combo: FeatureCombo) -> Tensor {
    let mut data = Vec::with_capacity(combo.in_channels() * GRID_CELLS);
    encode_input_into(f, combo, &mut data);
    Tensor::new(vec![combo.in_channels(), GRID_ROWS, GRID_COLS], data).expect("channel count")
}

/// Target grid `(1, 8, 9)` with zeros off-mask, and the 54 mask offsets.
pub fn encode_target(f: &VisualField) -> (Tensor, Vec<usize>) {
    let mut data = vec![0.0; GRID_CELLS];
    for (&off, &v) in valid_offsets().iter().zip(&f.values) {
        data[off] = v;
    }
    (
        Tensor::new(vec![1, GRID_ROWS, GRID_COLS], data).expect("grid"),
        valid_offsets().to_vec(),
    )
}

/// Stacks inputs and targets for a batch of pairs.
pub fn encode_batch(pairs: &[&FieldPair], combo: FeatureCombo) -> (Tensor, Tensor) {
    let n = pairs.len();
    let mut x = Vec::with_capacity(n * combo.in_channels() * GRID_CELLS);
    let mut y = vec![0.0; n * GRID_CELLS];
    for (i, p) in pairs.iter().enumerate() {
        encode_input_into(&p.input, combo, &mut x);
        for (&off, &v) in valid_offsets().iter().zip(&p.target.values) {
            y[i * GRID_CELLS + off] = v;
        }
    }
    (
        Tensor::new(vec![n, combo.in_channels(), GRID_ROWS, GRID_COLS], x).expect("batch"),
        Tensor::new(vec![n, 1, GRID_ROWS, GRID_COLS], y).expect("batch"),
    )
}

/// One line of a pair file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub bin: IntervalBin,
    pub input_ref: FieldRef,
    pub target_ref: FieldRef,
    pub delta: f64,
}

pub fn pair_records(binned: &BinnedPairs) -> Vec<PairRecord> {
    binned
        .bins
        .iter()
        .flat_map(|(&bin, ps)| {
            ps.iter().map(move |p| PairRecord {
                bin,
                input_ref: p.input.key(),
                target_ref: p.target.key(),
                delta: p.delta_years,
            })
        })
        .collect()
}

pub fn serialize_pairs(records: &[PairRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("pair record serializes") + "\n")
        .collect()
}

pub fn parse_pairs(text: &str) -> Result<Vec<PairRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::PairFile {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Resolves pair records against the dataset they reference.
pub fn resolve_pairs(records: &[PairRecord], fields: &[VisualField]) -> Result<BinnedPairs, PipelineError> {
    let index: HashMap<FieldRef, &VisualField> = fields.iter().map(|f| (f.key(), f)).collect();
    let mut out = BinnedPairs::default();
    for (i, r) in records.iter().enumerate() {
        let get = |k: &FieldRef| {
            index.get(k).copied().ok_or_else(|| PipelineError::PairFile {
                line: i + 1,
                message: format!("no field {} {} #{}", k.patient_id, k.eye.code(), k.test_index),
            })
        };
        let (a, b) = (get(&r.input_ref)?, get(&r.target_ref)?);
        out.bins.entry(r.bin).or_default().push(FieldPair {
            input: a.clone(),
            target: b.clone(),
            delta_years: delta_years(a, b),
        });
    }
    Ok(out)
}
