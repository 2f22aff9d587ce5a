//! 24-2 visual fields on an 8×9 grid: layout mask, validation, mean
//! deviation and the JSON Lines record codec.
//!
//! The 54 test locations occupy rows of 4, 6, 8, 9, 9, 8, 6 and 4 cells.
//! Both eyes share the same valid cell set; only the two blind-spot cells
//! differ. Field values are stored in row-major scan order of the valid
//! cells, which is also the order of the `values` array on disk.

use std::fmt;
use std::sync::LazyLock;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const GRID_ROWS: usize = 8;
pub const GRID_COLS: usize = 9;
pub const GRID_CELLS: usize = GRID_ROWS * GRID_COLS;
pub const N_POINTS: usize = 54;
pub const MIN_DB: f64 = 0.0;
pub const MAX_DB: f64 = 50.0;

/// Inclusive column span of each grid row.
const ROW_SPANS: [(usize, usize); GRID_ROWS] = [
    (2, 5),
    (1, 6),
    (0, 7),
    (0, 8),
    (0, 8),
    (0, 7),
    (1, 6),
    (2, 5),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Eye {
    #[serde(rename = "OD")]
    Right,
    #[serde(rename = "OS")]
    Left,
}

impl Eye {
    pub fn code(self) -> &'static str {
        match self {
            Eye::Right => "OD",
            Eye::Left => "OS",
        }
    }

    pub fn from_code(code: &str) -> Option<Eye> {
        match code {
            "OD" => Some(Eye::Right),
            "OS" => Some(Eye::Left),
            _ => None,
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Offset of the cell in a row-major 8×9 plane.
    pub fn offset(self) -> usize {
        self.row * GRID_COLS + self.col
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

static VALID: LazyLock<Vec<Cell>> = LazyLock::new(|| {
    ROW_SPANS
        .iter()
        .enumerate()
        .flat_map(|(row, &(lo, hi))| (lo..=hi).map(move |col| Cell::new(row, col)))
        .collect()
});

static VALID_OFFSETS: LazyLock<Vec<usize>> =
    LazyLock::new(|| VALID.iter().map(|c| c.offset()).collect());

/// The 54 valid cells in scan order.
pub fn valid_cells() -> &'static [Cell] {
    &VALID
}

/// Plane offsets of the valid cells; the training loss mask.
pub fn valid_offsets() -> &'static [usize] {
    &VALID_OFFSETS
}

/// Scan index of `cell`, if it is a valid location.
pub fn scan_index(cell: Cell) -> Option<usize> {
    VALID.iter().position(|&c| c == cell)
}

pub fn blind_spot(eye: Eye) -> [Cell; 2] {
    match eye {
        Eye::Right => [Cell::new(3, 7), Cell::new(4, 7)],
        Eye::Left => [Cell::new(3, 1), Cell::new(4, 1)],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask24x2 {
    pub eye: Eye,
    pub valid: Vec<Cell>,
    pub blind_spot: [Cell; 2],
}

impl Mask24x2 {
    pub fn contains(&self, cell: Cell) -> bool {
        self.valid.contains(&cell)
    }

    pub fn is_blind_spot(&self, cell: Cell) -> bool {
        self.blind_spot.contains(&cell)
    }
}

pub fn build_mask(eye: Eye) -> Mask24x2 {
    Mask24x2 {
        eye,
        valid: VALID.clone(),
        blind_spot: blind_spot(eye),
    }
}

/// One 24-2 test.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualField {
    pub patient_id: String,
    pub eye: Eye,
    pub gender: Gender,
    pub age_years: f64,
    pub test_date: NaiveDate,
    pub test_index: u32,
    /// Sensitivities in dB, scan order of [`valid_cells`].
    pub values: Vec<f64>,
}

impl VisualField {
    pub fn value_at(&self, cell: Cell) -> Option<f64> {
        scan_index(cell).and_then(|i| self.values.get(i).copied())
    }

    /// `(patient, eye, test_index)` identity used by pair files.
    pub fn key(&self) -> FieldRef {
        FieldRef {
            patient_id: self.patient_id.clone(),
            eye: self.eye,
            test_index: self.test_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldRef {
    pub patient_id: String,
    pub eye: Eye,
    pub test_index: u32,
}

/// Rounds to the two-decimal grid used for storage.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn is_two_decimal(v: f64) -> bool {
    round2(v) == v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl Violation {
    fn new(subject: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            subject: subject.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

/// Checks the single-field invariants. An empty list means the field is valid.
pub fn validate_field(f: &VisualField) -> Vec<Violation> {
    let mut out = Vec::new();
    if f.patient_id.is_empty() {
        out.push(Violation::new("patient_id", "empty"));
    }
    if !(f.age_years.is_finite() && f.age_years >= 0.0) {
        out.push(Violation::new("age", "must be a nonnegative number"));
    }
    if f.test_index < 1 {
        out.push(Violation::new("test_index", "must be >= 1"));
    }
    for (i, cell) in VALID.iter().enumerate() {
        match f.values.get(i) {
            None => out.push(Violation::new(format!("cell {cell}"), "missing cell")),
            Some(&v) => {
                if !(v.is_finite() && (MIN_DB..=MAX_DB).contains(&v)) {
                    out.push(Violation::new(format!("cell {cell}"), "out of range [0,50]"));
                } else if !is_two_decimal(v) {
                    out.push(Violation::new(format!("cell {cell}"), "not two-decimal"));
                }
            }
        }
    }
    if f.values.len() > N_POINTS {
        out.push(Violation::new(
            "values",
            format!("{} values for {} cells", f.values.len(), N_POINTS),
        ));
    }
    out
}

/// Cross-field check: within a patient, `test_index` must strictly increase
/// with `test_date` (tests on the same date share an index).
pub fn validate_series(fields: &[VisualField]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_patient: std::collections::BTreeMap<&str, Vec<&VisualField>> = Default::default();
    for f in fields {
        by_patient.entry(&f.patient_id).or_default().push(f);
    }
    for (pid, mut fs) in by_patient {
        fs.sort_by_key(|f| (f.test_date, f.test_index));
        for w in fs.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ok = if a.test_date == b.test_date {
                a.test_index == b.test_index
            } else {
                a.test_index < b.test_index
            };
            if !ok {
                out.push(Violation::new(
                    format!("patient {pid}"),
                    format!(
                        "test_index {} on {} vs {} on {}",
                        a.test_index, a.test_date, b.test_index, b.test_date
                    ),
                ));
            }
        }
    }
    out
}

/// Age-matched expected sensitivity on the 54 cells (scan order).
#[derive(Debug, Clone, PartialEq)]
pub struct NormativeSurface {
    pub expected: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HvfError {
    #[error("normative incomplete: {0}")]
    NormativeIncomplete(String),
    #[error("invalid field: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Unweighted mean total deviation over the 52 cells outside the blind spot.
pub fn mean_deviation(f: &VisualField, n: &NormativeSurface) -> Result<f64, HvfError> {
    mean_deviation_values(f.eye, &f.values, n)
}

pub fn mean_deviation_values(eye: Eye, values: &[f64], n: &NormativeSurface) -> Result<f64, HvfError> {
    if n.expected.len() != N_POINTS {
        return Err(HvfError::NormativeIncomplete(format!(
            "{} of {} cells",
            n.expected.len(),
            N_POINTS
        )));
    }
    if let Some(i) = n.expected.iter().position(|v| !v.is_finite()) {
        return Err(HvfError::NormativeIncomplete(format!(
            "cell {} is not finite",
            VALID[i]
        )));
    }
    if values.len() != N_POINTS {
        return Err(HvfError::Invalid(vec![Violation::new(
            "values",
            format!("{} values for {} cells", values.len(), N_POINTS),
        )]));
    }
    let blind = blind_spot(eye);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, cell) in VALID.iter().enumerate() {
        if blind.contains(cell) {
            continue;
        }
        sum += values[i] - n.expected[i];
        count += 1;
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("`{key}`: {message}")]
    Key { key: String, message: String },
    #[error("invalid field: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn key_err(key: &str, message: impl Into<String>) -> RecordError {
    RecordError::Key {
        key: key.to_string(),
        message: message.into(),
    }
}

fn take<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, RecordError> {
    obj.get(key).ok_or_else(|| key_err(key, "missing"))
}

/// Parses one dataset line into a validated field.
pub fn parse_record(line: &str) -> Result<VisualField, RecordError> {
    let v: Value = serde_json::from_str(line).map_err(|e| RecordError::Json(e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| RecordError::Json("record is not an object".into()))?;

    let patient_id = take(obj, "patient_id")?
        .as_str()
        .ok_or_else(|| key_err("patient_id", "expected a string"))?
        .to_string();
    let eye_s = take(obj, "eye")?
        .as_str()
        .ok_or_else(|| key_err("eye", "expected a string"))?;
    let eye = Eye::from_code(eye_s).ok_or_else(|| key_err("eye", format!("unknown eye {eye_s:?}")))?;
    let gender = match take(obj, "gender")?.as_str() {
        Some("M") => Gender::M,
        Some("F") => Gender::F,
        other => return Err(key_err("gender", format!("expected \"M\" or \"F\", got {other:?}"))),
    };
    let age_years = take(obj, "age")?
        .as_f64()
        .ok_or_else(|| key_err("age", "expected a number"))?;
    let date_s = take(obj, "test_date")?
        .as_str()
        .ok_or_else(|| key_err("test_date", "expected a string"))?;
    let test_date = NaiveDate::parse_from_str(date_s, "%Y-%m-%d")
        .map_err(|e| key_err("test_date", format!("{date_s:?}: {e}")))?;
    let test_index = take(obj, "test_index")?
        .as_u64()
        .and_then(|i| u32::try_from(i).ok())
        .ok_or_else(|| key_err("test_index", "expected a positive integer"))?;
    let arr = take(obj, "values")?
        .as_array()
        .ok_or_else(|| key_err("values", "expected an array"))?;
    if arr.len() != N_POINTS {
        return Err(key_err("values", format!("values length {} ≠ {}", arr.len(), N_POINTS)));
    }
    let values = arr
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| key_err("values", format!("element {i} is not a number")))
        })
        .collect::<Result<Vec<f64>, _>>()?;

    let field = VisualField {
        patient_id,
        eye,
        gender,
        age_years,
        test_date,
        test_index,
        values,
    };
    let violations = validate_field(&field);
    if violations.is_empty() {
        Ok(field)
    } else {
        Err(RecordError::Invalid(violations))
    }
}

/// Writes one dataset line; sensitivities always carry two decimals.
pub fn serialize_record(f: &VisualField) -> Result<String, Vec<Violation>> {
    let violations = validate_field(f);
    if !violations.is_empty() {
        return Err(violations);
    }
    let values: Vec<String> = f.values.iter().map(|v| format!("{v:.2}")).collect();
    Ok(format!(
        "{{\"patient_id\":{},\"eye\":\"{}\",\"gender\":\"{}\",\"age\":{},\"test_date\":\"{}\",\"test_index\":{},\"values\":[{}]}}",
        Value::String(f.patient_id.clone()),
        f.eye.code(),
        f.gender.code(),
        serde_json::to_string(&f.age_years).expect("finite age"),
        f.test_date.format("%Y-%m-%d"),
        f.test_index,
        values.join(",")
    ))
}

/// Parses a whole JSON Lines dataset, skipping blank lines. Errors carry the
/// 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<VisualField>, (usize, RecordError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn serialize_dataset(fields: &[VisualField]) -> Result<String, Vec<Violation>> {
    let mut out = String::new();
    for f in fields {
        out.push_str(&serialize_record(f)?);
        out.push('\n');
    }
    Ok(out)
}
