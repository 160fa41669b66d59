//! Central finite-difference check of tape gradients.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter holding the worst entry, with the flat index inside it.
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn eval<F>(store: &ParamStore, loss: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let l = loss(&mut tape)?;
    let v = tape.value(l);
    if v.len() != 1 {
        return Err(Error::Shape(format!("loss must be scalar, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Analytic gradients of `loss` for every parameter in `store`.
pub fn analytic_gradients<F>(store: &ParamStore, loss: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let l = loss(&mut tape)?;
    Ok(tape.backward(l)?.into_dense(store))
}

/// Compares the tape gradient of `loss` with central differences of step `h`.
pub fn grad_check<F>(store: &ParamStore, loss: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let grads = analytic_gradients(store, &loss)?;
    compare_gradients(store, &grads, loss, h, tol)
}

/// Compares caller-supplied gradients (one tensor per parameter) with central
/// differences of `loss`.
pub fn compare_gradients<F>(
    store: &ParamStore,
    grads: &[Tensor],
    loss: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if grads.len() != store.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        passed: true,
    };
    for (id, param) in store.iter() {
        let g = &grads[id.index()];
        if g.shape() != param.value.shape() {
            return Err(Error::Shape(format!("gradient for {} has wrong shape", param.name)));
        }
        for i in 0..param.value.len() {
            let orig = param.value.data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&work, &loss)?;
            work.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&work, &loss)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = g.data()[i];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
                report.worst_param = param.name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Partition;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", Partition::Main, Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]).unwrap())
            .unwrap();
        s.insert("b", Partition::Gate, Tensor::row_vector(vec![0.5, -0.25])).unwrap();
        s
    }

    fn quadratic(t: &mut Tape<'_>) -> Result<Var> {
        let ids: Vec<_> = t.params().ids().collect();
        let a = t.param(ids[0]);
        let b = t.param(ids[1]);
        let qa = t.half_sum_squares(a);
        let qb = t.half_sum_squares(b);
        t.add(qa, qb)
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let s = store();
        let g = analytic_gradients(&s, &quadratic).unwrap();
        for (id, p) in s.iter() {
            assert_eq!(&g[id.index()], &p.value);
        }
    }

    #[test]
    fn quadratic_passes_tightly() {
        let r = grad_check(&store(), quadratic, 1e-5, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let s = store();
        let g = analytic_gradients(&s, &|t: &mut Tape<'_>| Ok(t.input(Tensor::scalar(4.0)))).unwrap();
        assert!(g.iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn corrupted_gradient_fails() {
        let s = store();
        let mut g = analytic_gradients(&s, &quadratic).unwrap();
        g[1].data_mut()[0] += 0.1;
        let r = compare_gradients(&s, &g, quadratic, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_param, "b");
        assert_eq!(r.worst_index, 0);
    }
}
