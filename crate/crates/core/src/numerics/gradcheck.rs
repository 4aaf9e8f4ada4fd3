//! Central finite differences against tape gradients.

use super::{Gradients, ParamStore, Tape, Var};
use crate::error::Result;

/// Default perturbation. Sweeping 1e-4..1e-7 on smooth losses of the model
/// puts the minimum combined truncation/round-off error near 1e-5.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is ~0 are judged on absolute error instead of noise.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.worst {
            Some((name, i)) => write!(
                f,
                "max rel err {:.3e} at {name}[{i}] (tape {:.6e}, fd {:.6e}, {} coords)",
                self.max_rel_error, self.analytic, self.numeric, self.coords_checked
            ),
            None => write!(f, "no coordinates checked"),
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Which coordinates of each parameter to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// At most this many evenly spaced coordinates per parameter.
    Strided(usize),
    /// Every coordinate of parameters whose name starts with the prefix.
    Prefix(&'static str),
}

/// Compares tape gradients of `loss` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate.
///
/// `loss` must be deterministic; it is re-run on perturbed copies of `store`.
pub fn finite_difference_check<F>(
    store: &ParamStore,
    loss: F,
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let root = loss(&mut tape)?;
        tape.backward(root)?.into_gradients(store)
    };
    check_against(store, &analytic, |s| {
        let mut tape = Tape::new(s);
        let root = loss(&mut tape)?;
        Ok(tape.scalar(root))
    }, eps, coverage)
}

/// Like [`finite_difference_check`] for an arbitrary scalar function of the
/// parameters with separately supplied analytic gradients.
pub fn check_against<F>(
    store: &ParamStore,
    analytic: &Gradients,
    f: F,
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for id in store.ids() {
        let n = store.value(id).len();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Prefix(p) if store.name(id).starts_with(p) => (0..n).collect(),
            Coverage::Prefix(_) => Vec::new(),
            Coverage::Strided(k) if n <= k => (0..n).collect(),
            Coverage::Strided(k) => (0..k).map(|i| i * n / k).collect(),
        };
        for i in coords {
            let orig = probe.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + eps;
            let plus = f(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - eps;
            let minus = f(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .insert("theta", Tensor::row(vec![0.5, -1.5, 2.0, 0.25]))
            .unwrap();
        let report = finite_difference_check(
            &store,
            |t| {
                let p = t.param(id);
                let sq = t.mul(p, p)?;
                Ok(t.sum(sq))
            },
            DEFAULT_EPS,
            Coverage::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report}");
        assert_eq!(report.coords_checked, 4);
    }

    #[test]
    fn eps_sweep_favours_default() {
        // ‖θ‖² with a cubic term so truncation error is visible.
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::row(vec![0.7, -1.1, 1.9])).unwrap();
        let loss = |t: &mut Tape<'_>| {
            let p = t.param(id);
            let sq = t.mul(p, p)?;
            let cube = t.mul(sq, p)?;
            let s = t.add(sq, cube)?;
            Ok(t.sum(s))
        };
        let errs: Vec<f64> = [1e-4, 1e-5, 1e-6, 1e-7]
            .iter()
            .map(|&eps| finite_difference_check(&store, loss, eps, Coverage::All).unwrap().max_rel_error)
            .collect();
        let best = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(errs[1] <= 10.0 * best, "{errs:?}");
    }

    #[test]
    fn mismatch_reports_parameter_name() {
        let mut store = ParamStore::new();
        let id = store.insert("layer.w", Tensor::row(vec![1.0, 2.0])).unwrap();
        let mut wrong = Gradients::zeros_like(&store);
        wrong.set(id, Tensor::row(vec![0.0, 0.0]));
        let report = check_against(
            &store,
            &wrong,
            |s| Ok(s.value(id).data().iter().map(|x| x * x).sum()),
            DEFAULT_EPS,
            Coverage::All,
        )
        .unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst.as_ref().unwrap().0, "layer.w");
    }
}
