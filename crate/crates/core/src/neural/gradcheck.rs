//! Central finite-difference comparison of analytic gradients.
//!
//! Only forward evaluations of the loss are used here, so the check is
//! independent of the backward pass it validates.

use super::params::{Gradients, ParamSet};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, floor)`. Below `floor` the comparison becomes
/// absolute, which keeps finite-difference roundoff on near-zero gradients
/// from dominating.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Perturbs every scalar of every parameter by `±h` and compares
/// `(L(p+h) − L(p−h)) / 2h` against `analytic`.
pub fn check_gradients(
    params: &ParamSet,
    analytic: &Gradients,
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamSet) -> Result<f64>,
) -> Result<GradCheckReport> {
    analytic.check_matches(params)?;
    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.len();
        let grad = analytic.get(&name).expect("checked").data().to_vec();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            work.values_mut(&name).expect("present")[i] = orig + h;
            let up = loss(&work)?;
            work.values_mut(&name).expect("present")[i] = orig - h;
            let down = loss(&work)?;
            work.values_mut(&name).expect("present")[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad[i], numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i, grad[i], numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Init, Tape};

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut p = ParamSet::new(1);
        p.init("w", &[2, 2], Init::Xavier).unwrap();
        let loss = |p: &ParamSet| -> Result<f64> {
            let mut t = Tape::new();
            let w = t.param(p, "w")?;
            let s = t.mul(w, w)?;
            let s = t.sum(s);
            t.value(s).item()
        };
        let mut g = Gradients::zeros_like(&p);
        {
            let mut t = Tape::new();
            let w = t.param(&p, "w").unwrap();
            let s = t.mul(w, w).unwrap();
            let s = t.sum(s);
            t.accumulate_gradients(s, &mut g).unwrap();
        }
        assert!(check_gradients(&p, &g, 1e-5, 1e-6, loss).unwrap().passes(1e-6));
        g.scale(1.01);
        assert!(!check_gradients(&p, &g, 1e-5, 1e-6, loss).unwrap().passes(1e-4));
    }
}
