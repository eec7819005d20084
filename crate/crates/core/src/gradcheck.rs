//! Central finite-difference checks against analytic gradients.

use crate::autodiff::{ParamSet, Tensor};

/// Outcome of comparing analytic and numerical gradients entry by entry.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max_i |analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tolerance
    }

    /// Worst error over several reports.
    pub fn merge(reports: &[GradCheckReport]) -> GradCheckReport {
        let mut out = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            entries: 0,
        };
        for r in reports {
            out.entries += r.entries;
            if r.max_rel_error > out.max_rel_error || r.max_rel_error.is_nan() {
                out.max_rel_error = r.max_rel_error;
                out.worst = r.worst.clone();
            }
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Numerical gradient of `f` at `params` by central differences.
pub fn numerical_gradient(params: &ParamSet, step: f64, f: impl Fn(&ParamSet) -> f64) -> ParamSet {
    let mut grads = Vec::new();
    for (name, t) in params.iter() {
        let mut g = vec![0.0; t.len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let bumped = params.map(|k, v| {
                    if k != name {
                        return v.clone();
                    }
                    let mut data = v.data().to_vec();
                    data[i] += delta;
                    Tensor::new(v.shape(), data)
                });
                f(&bumped)
            };
            *gi = (eval(step) - eval(-step)) / (2.0 * step);
        }
        grads.push((name.to_string(), Tensor::new(t.shape(), g)));
    }
    grads.into_iter().collect()
}

/// Compare `analytic` with central differences of `f`.
pub fn check_gradient(
    params: &ParamSet,
    analytic: &ParamSet,
    step: f64,
    f: impl Fn(&ParamSet) -> f64,
) -> GradCheckReport {
    let numeric = numerical_gradient(params, step, f);
    compare(analytic, &numeric)
}

pub fn compare(analytic: &ParamSet, numeric: &ParamSet) -> GradCheckReport {
    assert!(analytic.same_layout(numeric), "gradient layouts differ");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            report.entries += 1;
            let e = relative_error(x, y);
            if e > report.max_rel_error || e.is_nan() {
                report.max_rel_error = e;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    report
}
