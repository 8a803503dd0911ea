use super::ParamSpec;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Unidirectional LSTM cell parameters; gate order is input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars<'t> {
    w_ih: Var<'t>,
    w_hh: Var<'t>,
    b: Var<'t>,
    hidden: usize,
}

impl Lstm {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Lstm {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let g = 4 * self.hidden;
        vec![
            ParamSpec::weight(format!("{}.w_ih", self.prefix), vec![g, self.input]),
            ParamSpec::weight(format!("{}.w_hh", self.prefix), vec![g, self.hidden]),
            ParamSpec::bias(format!("{}.b", self.prefix), g),
        ]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<LstmVars<'t>> {
        Ok(LstmVars {
            w_ih: tape.param(store, &format!("{}.w_ih", self.prefix))?,
            w_hh: tape.param(store, &format!("{}.w_hh", self.prefix))?,
            b: tape.param(store, &format!("{}.b", self.prefix))?,
            hidden: self.hidden,
        })
    }
}

impl<'t> LstmVars<'t> {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self) -> (Var<'t>, Var<'t>) {
        let tape = self.b.tape();
        (tape.zeros(self.hidden), tape.zeros(self.hidden))
    }
}

/// One LSTM step: returns the new hidden and cell state.
pub fn lstm_step<'t>(p: &LstmVars<'t>, x: Var<'t>, state: (Var<'t>, Var<'t>)) -> Result<(Var<'t>, Var<'t>)> {
    let tape = x.tape();
    let (h, c) = state;
    let hd = p.hidden;
    if h.len() != hd || c.len() != hd {
        return Err(Error::Shape(format!("LSTM state must have {hd} entries")));
    }
    let pre = tape.linear(p.w_ih, x, Some(p.b))?.add(tape.linear(p.w_hh, h, None)?)?;
    let i = pre.slice(0, hd)?.sigmoid();
    let f = pre.slice(hd, hd)?.sigmoid();
    let g = pre.slice(2 * hd, hd)?.tanh();
    let o = pre.slice(3 * hd, hd)?.sigmoid();
    let c_new = f.mul(c)?.add(i.mul(g)?)?;
    let h_new = o.mul(c_new.tanh())?;
    Ok((h_new, c_new))
}

/// Bidirectional LSTM layer; outputs are `[forward; backward]` of size `2 * hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone, Copy)]
pub struct BlstmVars<'t> {
    pub forward: LstmVars<'t>,
    pub backward: LstmVars<'t>,
}

impl Blstm {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Blstm {
            forward: Lstm::new(format!("{prefix}.fw"), input, hidden),
            backward: Lstm::new(format!("{prefix}.bw"), input, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.forward.param_specs();
        v.extend(self.backward.param_specs());
        v
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BlstmVars<'t>> {
        Ok(BlstmVars {
            forward: self.forward.bind(tape, store)?,
            backward: self.backward.bind(tape, store)?,
        })
    }
}

/// Runs both directions over `xs` and concatenates per time step.
pub fn blstm<'t>(p: &BlstmVars<'t>, xs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    if xs.is_empty() {
        return Err(Error::Empty("BLSTM input sequence".into()));
    }
    let tape = xs[0].tape();
    let mut fw = Vec::with_capacity(xs.len());
    let mut state = p.forward.zero_state();
    for &x in xs {
        state = lstm_step(&p.forward, x, state)?;
        fw.push(state.0);
    }
    let mut bw = vec![None; xs.len()];
    let mut state = p.backward.zero_state();
    for (t, &x) in xs.iter().enumerate().rev() {
        state = lstm_step(&p.backward, x, state)?;
        bw[t] = Some(state.0);
    }
    fw.into_iter()
        .zip(bw)
        .map(|(f, b)| tape.concat(&[f, b.expect("filled")]))
        .collect()
}
