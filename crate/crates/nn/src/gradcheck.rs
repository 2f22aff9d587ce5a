//! Finite-difference verification of reverse-mode gradients.

/// One evaluation of the function under test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    /// Fingerprint of the smooth piece the point lies on; see
    /// [`crate::Graph::with_kink_tracking`]. Use `0` for smooth functions.
    pub kink_signature: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because a kink lies within `kink_radius`.
    pub excluded: usize,
}

/// Compares `gradient` at `point` with central differences of `value` for a
/// smooth function and returns the worst relative error.
pub fn grad_check<V, G>(mut value: V, mut gradient: G, point: &[f64], eps: f64) -> f64
where
    V: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    grad_check_with_kinks(
        |x| Probe {
            value: value(x),
            kink_signature: 0,
        },
        |x| gradient(x),
        point,
        eps,
        0.0,
        None,
    )
    .max_rel_error
}

/// Central-difference check for piecewise-smooth functions.
///
/// A coordinate is excluded when moving it by `±kink_radius` changes the
/// kink signature, i.e. a relu or absolute-value kink lies that close.
/// `coordinates` restricts the check to a subset; `None` checks all.
pub fn grad_check_with_kinks<V, G>(
    mut probe: V,
    mut gradient: G,
    point: &[f64],
    eps: f64,
    kink_radius: f64,
    coordinates: Option<&[usize]>,
) -> GradCheckReport
where
    V: FnMut(&[f64]) -> Probe,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let analytic = gradient(point);
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let base_sig = probe(point).kink_signature;
    let all: Vec<usize>;
    let coords = match coordinates {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: None,
        checked: 0,
        excluded: 0,
    };
    for &i in coords {
        let orig = x[i];
        if kink_radius > 0.0 {
            x[i] = orig + kink_radius;
            let up = probe(&x).kink_signature;
            x[i] = orig - kink_radius;
            let down = probe(&x).kink_signature;
            x[i] = orig;
            if up != base_sig || down != base_sig {
                report.excluded += 1;
                continue;
            }
        }
        x[i] = orig + eps;
        let fp = probe(&x);
        x[i] = orig - eps;
        let fm = probe(&x);
        x[i] = orig;
        if fp.kink_signature != base_sig || fm.kink_signature != base_sig {
            report.excluded += 1;
            continue;
        }
        let numeric = (fp.value - fm.value) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        report.checked += 1;
        if report.worst_coordinate.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(|x| x[0] * x[0], |x| vec![2.0 * x[0]], &[3.0], 1e-6);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(|_| 4.0, |x| vec![0.0; x.len()], &[1.0, -2.0], 1e-6);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = grad_check(|x| x[0] * x[0], |x| vec![3.0 * x[0]], &[3.0], 1e-6);
        assert!(err > 0.1);
    }

    #[test]
    fn kink_adjacent_coordinates_are_excluded() {
        let probe = |x: &[f64]| Probe {
            value: x[0].abs() + x[1] * x[1],
            kink_signature: (x[0] > 0.0) as u64,
        };
        let grad = |x: &[f64]| vec![x[0].signum(), 2.0 * x[1]];
        let r = grad_check_with_kinks(probe, grad, &[5e-5, 1.0], 1e-6, 1e-4, None);
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-8);
    }
}
