use super::ParamSpec;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Single-head additive attention with cumulative alignment feedback:
/// `e_t = vᵀ tanh(W s + V h_t + u·fb_t + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub prefix: String,
    pub query_dim: usize,
    pub key_dim: usize,
    pub att_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars<'t> {
    w_query: Var<'t>,
    w_key: Var<'t>,
    v: Var<'t>,
    u: Var<'t>,
    b: Var<'t>,
}

/// States attended over, with their key projections computed once.
#[derive(Debug, Clone, Copy)]
pub struct Memory<'t> {
    pub states: Var<'t>,
    keys: Var<'t>,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionState<'t> {
    pub weights: Var<'t>,
    pub context: Var<'t>,
    /// Sum of all attention weights produced so far, this step included.
    pub feedback: Var<'t>,
}

impl Attention {
    pub fn new(prefix: impl Into<String>, query_dim: usize, key_dim: usize, att_dim: usize) -> Self {
        Attention {
            prefix: prefix.into(),
            query_dim,
            key_dim,
            att_dim,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let p = &self.prefix;
        vec![
            ParamSpec::weight(format!("{p}.w_query"), vec![self.att_dim, self.query_dim]),
            ParamSpec::weight(format!("{p}.w_key"), vec![self.att_dim, self.key_dim]),
            ParamSpec::weight(format!("{p}.v"), vec![self.att_dim]),
            ParamSpec::weight(format!("{p}.u"), vec![self.att_dim]),
            ParamSpec::bias(format!("{p}.b"), self.att_dim),
        ]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<AttentionVars<'t>> {
        let p = &self.prefix;
        Ok(AttentionVars {
            w_query: tape.param(store, &format!("{p}.w_query"))?,
            w_key: tape.param(store, &format!("{p}.w_key"))?,
            v: tape.param(store, &format!("{p}.v"))?,
            u: tape.param(store, &format!("{p}.u"))?,
            b: tape.param(store, &format!("{p}.b"))?,
        })
    }
}

impl<'t> AttentionVars<'t> {
    /// Stacks `states` and projects them into key space.
    pub fn memory(&self, states: &[Var<'t>]) -> Result<Memory<'t>> {
        if states.is_empty() {
            return Err(Error::Empty("attention memory".into()));
        }
        let tape = states[0].tape();
        let stacked = tape.stack(states)?;
        let keys = tape.matmul_nt(stacked, self.w_key)?;
        Ok(Memory {
            states: stacked,
            keys,
            len: states.len(),
        })
    }
}

impl<'t> Memory<'t> {
    pub fn zero_feedback(&self) -> Var<'t> {
        self.states.tape().zeros(self.len)
    }
}

/// One attention step given the previous decoder state `query`.
pub fn additive_attention<'t>(
    p: &AttentionVars<'t>,
    query: Var<'t>,
    memory: &Memory<'t>,
    feedback: Var<'t>,
) -> Result<AttentionState<'t>> {
    let tape = query.tape();
    if feedback.len() != memory.len {
        return Err(Error::Shape(format!(
            "feedback has {} entries for {} states",
            feedback.len(),
            memory.len
        )));
    }
    let q = tape.linear(p.w_query, query, Some(p.b))?;
    let pre = memory.keys.add(tape.outer(feedback, p.u)?)?.add_row(q)?.tanh();
    let energies = tape.linear(pre, p.v, None)?;
    let weights = energies.softmax();
    let context = memory.states.matvec_t(weights)?;
    Ok(AttentionState {
        weights,
        context,
        feedback: feedback.add(weights)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_params;
    use crate::numerics::{grad_check, Tensor};

    fn setup(seed: u64, zero: bool) -> (Attention, ParamStore) {
        let a = Attention::new("att", 3, 4, 5);
        let mut s = ParamStore::new(seed);
        if zero {
            for spec in a.param_specs() {
                s.insert(spec.name, Tensor::zeros(&spec.shape)).unwrap();
            }
        } else {
            init_params(&mut s, &a.param_specs()).unwrap();
        }
        (a, s)
    }

    fn states(tape: &Tape) -> Vec<Var<'_>> {
        [[0.1, 0.2, 0.3, 0.4], [-0.5, 0.1, 0.0, 0.9], [0.7, -0.7, 0.2, 0.2]]
            .iter()
            .map(|r| tape.vector(r.to_vec()))
            .collect()
    }

    #[test]
    fn zero_params_uniform() {
        let (a, s) = setup(0, true);
        let tape = Tape::new();
        let p = a.bind(&tape, &s).unwrap();
        let mem = p.memory(&states(&tape)).unwrap();
        let st = additive_attention(&p, tape.vector(vec![1.0, 2.0, 3.0]), &mem, mem.zero_feedback()).unwrap();
        for w in st.weights.to_vec() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_state_context_is_state() {
        let (a, s) = setup(4, false);
        let tape = Tape::new();
        let p = a.bind(&tape, &s).unwrap();
        let h = tape.vector(vec![0.3, -0.2, 0.8, 0.1]);
        let mem = p.memory(&[h]).unwrap();
        let st = additive_attention(&p, tape.vector(vec![1.0, 0.0, -1.0]), &mem, mem.zero_feedback()).unwrap();
        assert_eq!(st.weights.to_vec(), vec![1.0]);
        assert_eq!(st.context.to_vec(), h.to_vec());
    }

    #[test]
    fn weights_normalized_and_feedback_accumulates() {
        let (a, s) = setup(7, false);
        let tape = Tape::new();
        let p = a.bind(&tape, &s).unwrap();
        let mem = p.memory(&states(&tape)).unwrap();
        let mut fb = mem.zero_feedback();
        let mut manual = [0.0; 3];
        for step in 0..4 {
            let q = tape.vector(vec![0.1 * step as f64, -0.3, 0.5]);
            let st = additive_attention(&p, q, &mem, fb).unwrap();
            let w = st.weights.to_vec();
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
            for (m, x) in manual.iter_mut().zip(&w) {
                *m += x;
            }
            for (m, f) in manual.iter().zip(st.feedback.to_vec()) {
                assert!((m - f).abs() <= 1e-12);
            }
            fb = st.feedback;
        }
    }

    #[test]
    fn attention_gradient() {
        let (a, s) = setup(9, false);
        let r = grad_check(
            |t, s| {
                let p = a.bind(t, s)?;
                let mem = p.memory(&states(t))?;
                let s1 = additive_attention(&p, t.vector(vec![0.2, -0.4, 0.6]), &mem, mem.zero_feedback())?;
                let s2 = additive_attention(&p, s1.context.slice(0, 3)?, &mem, s1.feedback)?;
                s2.context.dot(t.vector(vec![1.0, -1.0, 2.0, 0.5]))
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(r.max_error <= 1e-4, "{r:?}");
    }
}
