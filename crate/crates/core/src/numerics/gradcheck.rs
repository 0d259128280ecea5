use super::{Grads, Parameters};

const PERTURBATION: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub pass: bool,
}

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares `analytic` against central finite differences of `loss` over
/// every parameter element of `model`.
pub fn grad_check<M, F>(model: &M, analytic: &Grads, loss: F, tolerance: f64) -> GradCheckReport
where
    M: Parameters + Clone,
    F: Fn(&M) -> f64,
{
    assert!(tolerance > 0.0, "tolerance must be positive");
    let mut probe = model.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let tensor_count = model.params().len();
    assert_eq!(
        tensor_count,
        analytic.tensors.len(),
        "gradient layout mismatch"
    );
    for t in 0..tensor_count {
        for i in 0..analytic.tensors[t].len() {
            let original = probe.params()[t].data()[i];
            probe.params_mut()[t].data_mut()[i] = original + PERTURBATION;
            let plus = loss(&probe);
            probe.params_mut()[t].data_mut()[i] = original - PERTURBATION;
            let minus = loss(&probe);
            probe.params_mut()[t].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * PERTURBATION);
            let err = relative_error(analytic.tensors[t].data()[i], numeric);
            max_rel_error = max_rel_error.max(err);
            checked += 1;
        }
    }
    GradCheckReport {
        max_rel_error,
        checked,
        pass: max_rel_error <= tolerance,
    }
}
