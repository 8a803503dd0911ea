use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: IndexMap<String, Tensor>,
    pub second_moment: IndexMap<String, Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: IndexMap<String, Tensor> = store
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
            .collect();
        OptimizerState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    // validate before touching anything
    for (name, p) in store.iter() {
        let g = grads.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !opt.first_moment.contains_key(name) {
            opt.first_moment.insert(name.to_string(), Tensor::zeros(p.shape()));
            opt.second_moment.insert(name.to_string(), Tensor::zeros(p.shape()));
        }
    }
    opt.step += 1;
    let t = opt.step as f64;
    let bc1 = 1.0 - opt.beta1.powf(t);
    let bc2 = 1.0 - opt.beta2.powf(t);
    let (b1, b2, eps, lr) = (opt.beta1, opt.beta2, opt.epsilon, opt.learning_rate);
    for idx in 0..store.len() {
        let name = store.get_index(idx).0.to_string();
        let g = grads.get(&name).unwrap().data();
        let m = opt.first_moment.get_mut(&name).unwrap().data_mut();
        let v = opt.second_moment.get_mut(&name).unwrap().data_mut();
        let p = store.get_index_mut(idx).data_mut();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Learning-rate decay on a plateau of the development score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub decay_factor: f64,
    pub patience: usize,
    pub best_score: f64,
    pub stale_count: usize,
}

impl LrSchedule {
    pub fn new(decay_factor: f64, patience: usize) -> Self {
        LrSchedule {
            decay_factor,
            patience,
            best_score: f64::NEG_INFINITY,
            stale_count: 0,
        }
    }

    /// Registers a development score (higher is better) and returns the new learning rate.
    pub fn plateau_update(&mut self, dev_score: f64, learning_rate: f64) -> f64 {
        if dev_score > self.best_score {
            self.best_score = dev_score;
            self.stale_count = 0;
            return learning_rate;
        }
        self.stale_count += 1;
        if self.stale_count >= self.patience {
            self.stale_count = 0;
            return learning_rate * self.decay_factor;
        }
        learning_rate
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::new(0.9, 6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::vector(vec![v])).unwrap();
        s
    }

    fn grad(v: f64) -> Gradients {
        let mut g = Gradients::zeros_like(&one_param(0.0));
        g.get_mut("p").unwrap().data_mut()[0] = v;
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(1.5);
        let mut opt = OptimizerState::new(&s, 0.01);
        adam_step(&mut s, &grad(0.0), &mut opt).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[1.5]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_and_second_step_move_by_lr() {
        let lr = 0.001;
        let mut s = one_param(0.0);
        let mut opt = OptimizerState::new(&s, lr);
        adam_step(&mut s, &grad(1.0), &mut opt).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        let expected = lr / (1.0 + 1e-8);
        assert!((s.get("p").unwrap().data()[0] + expected).abs() < 1e-15);
        adam_step(&mut s, &grad(1.0), &mut opt).unwrap();
        assert_eq!(opt.step, 2);
        assert!((s.get("p").unwrap().data()[0] + 2.0 * expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = one_param(0.0);
        let mut opt = OptimizerState::new(&s, 0.1);
        let mut g = Gradients::zeros_like(&s);
        g.insert("p", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(adam_step(&mut s, &g, &mut opt), Err(Error::Shape(_))));
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn plateau_rules() {
        let mut sched = LrSchedule::new(0.9, 6);
        let mut lr = 1.0;
        for s in 0..10 {
            lr = sched.plateau_update(s as f64, lr);
        }
        assert_eq!(lr, 1.0);

        let mut sched = LrSchedule::new(0.9, 6);
        let mut lr = sched.plateau_update(5.0, 1.0);
        for _ in 0..5 {
            lr = sched.plateau_update(1.0, lr);
            assert_eq!(lr, 1.0);
        }
        lr = sched.plateau_update(1.0, lr);
        assert!((lr - 0.9).abs() < 1e-15);
        assert_eq!(sched.stale_count, 0);

        let mut sched = LrSchedule::new(0.9, 6);
        let mut lr = sched.plateau_update(5.0, 1.0);
        for _ in 0..5 {
            lr = sched.plateau_update(1.0, lr);
        }
        lr = sched.plateau_update(6.0, lr);
        assert_eq!(lr, 1.0);
        assert!(sched.stale_count <= sched.patience);
    }
}
