//! Reference implementations written without the production code paths,
//! used by the acceptance suite as oracles.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use hvfcast_core::hvf::VisualField;

/// One forward pair found by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OraclePair {
    pub patient_id: String,
    pub eye: String,
    pub input_index: u32,
    pub target_index: u32,
    pub days: i64,
    /// Zero-based bin, `None` when excluded.
    pub bin: Option<usize>,
}

/// Bin index of a gap of `days`, from first principles: 0.5-year bins
/// starting at 0.75 years, closed at 5.5 years.
pub fn oracle_bin(days: i64) -> Option<usize> {
    let years = days as f64 / 365.25;
    if !(0.75..=5.5).contains(&years) {
        return None;
    }
    Some((((years - 0.75) / 0.5).floor() as usize).min(9))
}

/// Every (earlier, later) combination of tests of the same eye.
pub fn brute_force_pairs(fields: &[VisualField]) -> Vec<OraclePair> {
    let mut out = Vec::new();
    for a in fields {
        for b in fields {
            if a.patient_id != b.patient_id || a.eye != b.eye {
                continue;
            }
            let days = (b.test_date - a.test_date).num_days();
            if days <= 0 {
                continue;
            }
            out.push(OraclePair {
                patient_id: a.patient_id.clone(),
                eye: a.eye.code().to_string(),
                input_index: a.test_index,
                target_index: b.test_index,
                days,
                bin: oracle_bin(days),
            });
        }
    }
    out.sort();
    out
}

/// Scalar Adam recurrence with the standard constants.
pub struct ScalarAdam {
    pub lr: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        ScalarAdam { lr, m: 0.0, v: 0.0, t: 0 }
    }

    pub fn step(&mut self, theta: f64, grad: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * grad;
        self.v = b2 * self.v + (1.0 - b2) * grad * grad;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        theta - self.lr * m_hat / (v_hat.sqrt() + eps)
    }
}

/// Line through (t0, y0) and (t1, y1) evaluated at `t`.
pub fn two_point_line(t0: f64, y0: f64, t1: f64, y1: f64, t: f64) -> f64 {
    y0 + (y1 - y0) / (t1 - t0) * (t - t0)
}

/// Sample Pearson correlation from raw moments.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Files under `root` keyed by relative path, skipping names for which
/// `skip` returns true.
pub fn read_tree(root: &Path, skip: &dyn Fn(&str) -> bool) -> io::Result<BTreeMap<String, Vec<u8>>> {
    fn walk(
        root: &Path,
        dir: &Path,
        skip: &dyn Fn(&str) -> bool,
        out: &mut BTreeMap<String, Vec<u8>>,
    ) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, skip, out)?;
                continue;
            }
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if skip(&name) {
                continue;
            }
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().into_owned();
            out.insert(rel, fs::read(&path)?);
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, skip, &mut out)?;
    Ok(out)
}
