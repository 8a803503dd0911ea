use indexmap::IndexMap;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter name.
    pub per_param: IndexMap<String, f64>,
    pub max_error: f64,
    pub worst_param: Option<String>,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_error <= tol
    }
}

/// `|a - f| / max(1, |a|, |f|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks every scalar of every parameter in `store` against central differences.
///
/// `loss_fn` records a scalar loss on the given tape; it must be deterministic.
pub fn grad_check<F>(loss_fn: F, store: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let tape = Tape::new();
    let loss = loss_fn(&tape, store)?;
    let base = loss.scalar();
    let analytic = tape.backward(loss, store)?;
    drop(tape);

    let again = eval(&loss_fn, store)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut probe = store.clone();
    let mut per_param = IndexMap::new();
    let mut max_error = 0.0f64;
    let mut worst_param = None;
    for idx in 0..store.len() {
        let (name, value) = store.get_index(idx);
        let grad = analytic.get(name).expect("gradient for every parameter");
        let mut worst = 0.0f64;
        for k in 0..value.len() {
            let orig = value.data()[k];
            probe.get_index_mut(idx).data_mut()[k] = orig + eps;
            let up = eval(&loss_fn, &probe)?;
            probe.get_index_mut(idx).data_mut()[k] = orig - eps;
            let down = eval(&loss_fn, &probe)?;
            probe.get_index_mut(idx).data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[k], fd));
        }
        if worst > max_error || worst_param.is_none() {
            max_error = worst;
            worst_param = Some(name.to_string());
        }
        per_param.insert(name.to_string(), worst);
    }
    Ok(GradCheckReport {
        per_param,
        max_error,
        worst_param,
        loss: base,
    })
}

fn eval<F>(loss_fn: &F, store: &ParamStore) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let v = loss_fn(&tape, store)?;
    Ok(v.scalar())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::vector(vec![3.0])).unwrap();
        let r = grad_check(
            |t, s| {
                let p = t.param(s, "p")?;
                Ok(p.mul(p)?.sum())
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(r.max_error <= 1e-8, "{}", r.max_error);
    }

    #[test]
    fn constant_has_zero_error() {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let r = grad_check(|t, _| Ok(t.vector(vec![4.0]).sum()), &s, 1e-5).unwrap();
        assert_eq!(r.max_error, 0.0);
        assert_eq!(r.per_param.len(), 1);
    }

    #[test]
    fn nondeterminism_detected() {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::vector(vec![1.0])).unwrap();
        let calls = Cell::new(0.0);
        let r = grad_check(
            |t, s| {
                calls.set(calls.get() + 1.0);
                let p = t.param(s, "p")?;
                Ok(p.scale(calls.get()).sum())
            },
            &s,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonDeterministic { .. })));
    }
}
