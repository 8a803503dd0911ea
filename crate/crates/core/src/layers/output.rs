use super::ParamSpec;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Token embedding table of shape `vocab x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(prefix: &str, vocab: usize, dim: usize) -> Self {
        Embedding {
            name: format!("{prefix}.embed"),
            vocab,
            dim,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::weight(self.name.clone(), vec![self.vocab, self.dim])]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<Var<'t>> {
        tape.param(store, &self.name)
    }
}

/// Looks up row `token_id` of `table`.
pub fn embed<'t>(table: Var<'t>, token_id: usize) -> Result<Var<'t>> {
    let size = table.shape()[0];
    if token_id >= size {
        return Err(Error::TokenOutOfRange { id: token_id, size });
    }
    table.row(token_id)
}

/// `log softmax(W [inputs] + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub prefix: String,
    pub in_dim: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct OutputVars<'t> {
    w: Var<'t>,
    b: Var<'t>,
}

impl OutputLayer {
    pub fn new(prefix: impl Into<String>, in_dim: usize, vocab: usize) -> Self {
        OutputLayer {
            prefix: prefix.into(),
            in_dim,
            vocab,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight(format!("{}.w", self.prefix), vec![self.vocab, self.in_dim]),
            ParamSpec::bias(format!("{}.b", self.prefix), self.vocab),
        ]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<OutputVars<'t>> {
        Ok(OutputVars {
            w: tape.param(store, &format!("{}.w", self.prefix))?,
            b: tape.param(store, &format!("{}.b", self.prefix))?,
        })
    }
}

impl<'t> OutputVars<'t> {
    /// The weight matrix and bias.
    pub fn weights(&self) -> (Var<'t>, Var<'t>) {
        (self.w, self.b)
    }

    /// Log-probabilities over the vocabulary from the concatenation of `inputs`.
    pub fn log_probs(&self, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = self.w.tape();
        let x = tape.concat(inputs)?;
        Ok(tape.linear(self.w, x, Some(self.b))?.log_softmax())
    }
}

/// `(1 - eps) · onehot(target) + eps / V`.
pub fn smoothed_target(vocab: usize, target: usize, eps: f64) -> Result<Vec<f64>> {
    if target >= vocab {
        return Err(Error::TokenOutOfRange { id: target, size: vocab });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("label smoothing {eps} outside [0, 1)")));
    }
    let mut q = vec![eps / vocab as f64; vocab];
    q[target] += 1.0 - eps;
    Ok(q)
}

/// Label-smoothed cross-entropy of a probability vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedCe {
    pub loss: f64,
    /// Some support point of the target distribution had zero probability;
    /// its log was clamped to the smallest positive double.
    pub clamped: bool,
}

pub fn label_smoothed_ce(pred: &[f64], target: usize, eps: f64) -> Result<SmoothedCe> {
    let q = smoothed_target(pred.len(), target, eps)?;
    let mut clamped = false;
    let mut loss = 0.0;
    for (p, qv) in pred.iter().zip(&q) {
        if *qv == 0.0 {
            continue;
        }
        let lp = if *p > 0.0 {
            p.ln()
        } else {
            clamped = true;
            f64::MIN_POSITIVE.ln()
        };
        loss -= qv * lp;
    }
    Ok(SmoothedCe { loss, clamped })
}
