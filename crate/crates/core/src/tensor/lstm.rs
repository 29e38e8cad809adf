//! Multi-layer LSTMs built from graph ops: a plain sequential LSTM, a
//! bidirectional wrapper, and a stack-LSTM with push/pop.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Layer {
    w: ParamId,
    b: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    layers: Vec<Layer>,
    input_dim: usize,
    dropout: f64,
}

/// Hidden and cell vectors for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl LstmState {
    /// Top-layer hidden vector.
    pub fn output(&self) -> Var {
        *self.h.last().expect("lstm has at least one layer")
    }
}

impl Lstm {
    /// Registers `layers` layers of weights under `name`. Forget-gate biases
    /// start at 1.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
    ) -> Self {
        assert!(layers >= 1);
        let layers = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden };
                let w = store.add_init(
                    &format!("{name}.l{l}.w"),
                    4 * hidden,
                    in_dim + hidden,
                    Init::Xavier,
                    rng,
                );
                let mut bias = vec![0.0; 4 * hidden];
                bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
                let b = store.add(&format!("{name}.l{l}.b"), 4 * hidden, 1, bias, true);
                Layer { w, b, hidden }
            })
            .collect();
        Lstm {
            layers,
            input_dim,
            dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.dropout = rate;
    }

    pub fn initial(&self, g: &mut Graph<'_>) -> LstmState {
        let (h, c) = self
            .layers
            .iter()
            .map(|l| {
                (
                    g.constant(vec![0.0; l.hidden]),
                    g.constant(vec![0.0; l.hidden]),
                )
            })
            .unzip();
        LstmState { h, c }
    }

    /// One time step. Dropout is applied to the input and between layers.
    pub fn step(&self, g: &mut Graph<'_>, prev: &LstmState, x: Var) -> LstmState {
        let mut input = g.dropout(x, self.dropout);
        let mut h_out = Vec::with_capacity(self.layers.len());
        let mut c_out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                input = g.dropout(input, self.dropout);
            }
            let xh = g.concat(&[input, prev.h[l]]);
            let gates = g.affine(layer.w, Some(layer.b), xh);
            let hc = g.lstm_cell(gates, prev.c[l]);
            let h = g.slice(hc, 0, layer.hidden);
            let c = g.slice(hc, layer.hidden, layer.hidden);
            h_out.push(h);
            c_out.push(c);
            input = h;
        }
        LstmState { h: h_out, c: c_out }
    }

    /// Runs over `xs` from the zero state, returning every top-layer output.
    pub fn run(&self, g: &mut Graph<'_>, xs: &[Var]) -> Vec<Var> {
        let mut st = self.initial(g);
        xs.iter()
            .map(|&x| {
                st = self.step(g, &st, x);
                st.output()
            })
            .collect()
    }
}

/// Stacked bidirectional LSTM; each position is represented by the
/// concatenation of the forward and backward top-layer states.
#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: Vec<Lstm>,
    bwd: Vec<Lstm>,
    dropout: f64,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
    ) -> Self {
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for l in 0..layers {
            let in_dim = if l == 0 { input_dim } else { 2 * hidden };
            fwd.push(Lstm::new(
                store,
                rng,
                &format!("{name}.fwd{l}"),
                in_dim,
                hidden,
                1,
                0.0,
            ));
            bwd.push(Lstm::new(
                store,
                rng,
                &format!("{name}.bwd{l}"),
                in_dim,
                hidden,
                1,
                0.0,
            ));
        }
        BiLstm { fwd, bwd, dropout }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd[0].hidden()
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.dropout = rate;
    }

    pub fn run(&self, g: &mut Graph<'_>, xs: &[Var]) -> Vec<Var> {
        let mut layer_in: Vec<Var> = xs.to_vec();
        for (f, b) in self.fwd.iter().zip(&self.bwd) {
            let dropped: Vec<Var> = layer_in
                .iter()
                .map(|&x| g.dropout(x, self.dropout))
                .collect();
            let fo = f.run(g, &dropped);
            let rev: Vec<Var> = dropped.iter().rev().copied().collect();
            let mut bo = b.run(g, &rev);
            bo.reverse();
            layer_in = fo
                .iter()
                .zip(&bo)
                .map(|(&a, &b)| g.concat(&[a, b]))
                .collect();
        }
        layer_in
    }
}

/// LSTM whose state tracks a stack: `push` advances from the current top,
/// `pop` restores the previous state exactly.
#[derive(Debug, Clone)]
pub struct StackLstm {
    lstm: Lstm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackLstmState {
    history: Vec<LstmState>,
}

impl StackLstm {
    pub fn new(lstm: Lstm) -> Self {
        StackLstm { lstm }
    }

    pub fn lstm(&self) -> &Lstm {
        &self.lstm
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.lstm.set_dropout(rate);
    }

    pub fn initial(&self, g: &mut Graph<'_>) -> StackLstmState {
        StackLstmState {
            history: vec![self.lstm.initial(g)],
        }
    }

    pub fn push(&self, g: &mut Graph<'_>, state: &mut StackLstmState, x: Var) {
        let next = self.lstm.step(g, state.history.last().unwrap(), x);
        state.history.push(next);
    }

    pub fn pop(&self, state: &mut StackLstmState) -> Result<()> {
        if state.history.len() <= 1 {
            return Err(Error::contract("pop on an empty stack-LSTM"));
        }
        state.history.pop();
        Ok(())
    }
}

impl StackLstmState {
    /// Summary of the current stack contents.
    pub fn summary(&self) -> Var {
        self.history.last().unwrap().output()
    }

    pub fn depth(&self) -> usize {
        self.history.len() - 1
    }

    pub fn top(&self) -> &LstmState {
        self.history.last().unwrap()
    }
}
