//! Tape-based reverse-mode differentiation over dense `f64` vectors.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Parameters
//! are read from a shared [`ParamStore`] and never mutated by the graph;
//! their gradients are accumulated into the graph's own [`Gradients`], so
//! many graphs can run over one frozen parameter snapshot.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Lookup(ParamId, usize),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddN(Vec<usize>),
    Tanh(usize),
    Sigmoid(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Mean(Vec<usize>),
    Sum(usize),
    Dot(usize, usize),
    LogSoftmax(usize),
    Softmax(usize),
    Pick(usize, usize),
    Dropout(usize, Vec<f64>),
    LstmCell {
        gates: usize,
        c: usize,
    },
    AttnScores {
        query: usize,
        keys: Vec<usize>,
        v: usize,
    },
    WeightedSum {
        weights: usize,
        items: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
    grads: Gradients,
    input_grads: HashMap<usize, Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl<'p> Graph<'p> {
    /// `train` enables dropout; `seed` drives dropout masks.
    pub fn new(params: &'p ParamStore, train: bool, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            grads: Gradients::new(),
            input_grads: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    fn val(&self, v: usize) -> &[f64] {
        &self.nodes[v].value
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf whose gradient is kept and readable via [`Graph::input_grad`].
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Whole parameter, flattened row-major.
    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params.get(id);
        self.push(p.data.clone(), Op::Param(id), p.trainable)
    }

    /// One row of an embedding table; its gradient touches only that row.
    pub fn lookup(&mut self, table: ParamId, row: usize) -> Var {
        let p = self.params.get(table);
        assert!(row < p.rows, "row {row} out of range for {}", p.name);
        self.push(p.row(row).to_vec(), Op::Lookup(table, row), p.trainable)
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wp = self.params.get(w);
        let xv = self.val(x.0);
        assert_eq!(
            wp.cols,
            xv.len(),
            "affine {}: input has {} dims",
            wp.name,
            xv.len()
        );
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; wp.rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = wp.row(r);
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        let needs = wp.trainable || b.is_some_and(|b| self.params.get(b).trainable) || self.ng(x.0);
        self.push(out, Op::Affine { w, b, x: x.0 }, needs)
    }

    pub fn matvec(&mut self, w: ParamId, x: Var) -> Var {
        self.affine(w, None, x)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        assert_eq!(av.len(), bv.len(), "elementwise op on mismatched lengths");
        let out = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        let needs = self.ng(a.0) || self.ng(b.0);
        self.push(out, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.val(a.0).iter().map(|x| x * factor).collect();
        let needs = self.ng(a.0);
        self.push(out, Op::Scale(a.0, factor), needs)
    }

    /// Sum of equally sized vectors (or scalars).
    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let mut out = self.val(xs[0].0).to_vec();
        for x in &xs[1..] {
            add_into(&mut out, self.val(x.0));
        }
        let needs = xs.iter().any(|x| self.ng(x.0));
        self.push(out, Op::AddN(xs.iter().map(|x| x.0).collect()), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a.0).iter().map(|x| x.tanh()).collect();
        let needs = self.ng(a.0);
        self.push(out, Op::Tanh(a.0), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a.0).iter().map(|&x| sigmoid(x)).collect();
        let needs = self.ng(a.0);
        self.push(out, Op::Sigmoid(a.0), needs)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut out = Vec::new();
        for x in xs {
            out.extend_from_slice(self.val(x.0));
        }
        let needs = xs.iter().any(|x| self.ng(x.0));
        self.push(out, Op::Concat(xs.iter().map(|x| x.0).collect()), needs)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.val(a.0)[start..start + len].to_vec();
        let needs = self.ng(a.0);
        self.push(out, Op::Slice(a.0, start), needs)
    }

    pub fn mean(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "mean of nothing");
        let mut out = self.val(xs[0].0).to_vec();
        for x in &xs[1..] {
            add_into(&mut out, self.val(x.0));
        }
        let n = xs.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let needs = xs.iter().any(|x| self.ng(x.0));
        self.push(out, Op::Mean(xs.iter().map(|x| x.0).collect()), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a.0).iter().sum();
        let needs = self.ng(a.0);
        self.push(vec![s], Op::Sum(a.0), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        assert_eq!(av.len(), bv.len());
        let s = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        let needs = self.ng(a.0) || self.ng(b.0);
        self.push(vec![s], Op::Dot(a.0, b.0), needs)
    }

    /// Log-softmax with max subtraction. Entries set to `-inf` (masked
    /// actions) stay `-inf` and receive no gradient.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.val(a.0);
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x
            .iter()
            .map(|v| if v.is_finite() { (v - m).exp() } else { 0.0 })
            .sum::<f64>()
            .ln();
        let out = x
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    v - lse
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let needs = self.ng(a.0);
        self.push(out, Op::LogSoftmax(a.0), needs)
    }

    /// Adds `-inf` to every position where `mask` is false.
    pub fn mask(&mut self, a: Var, mask: &[bool]) -> Var {
        let penalty = mask
            .iter()
            .map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let c = self.constant(penalty);
        self.add(a, c)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.val(a.0);
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let out = e.iter().map(|v| v / z).collect();
        let needs = self.ng(a.0);
        self.push(out, Op::Softmax(a.0), needs)
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let x = self.val(a.0);
        if index >= x.len() {
            return Err(Error::contract(format!(
                "pick index {index} out of range {}",
                x.len()
            )));
        }
        let v = x[index];
        let needs = self.ng(a.0);
        Ok(self.push(vec![v], Op::Pick(a.0, index), needs))
    }

    /// `log softmax(logits)[index]`.
    pub fn log_softmax_pick(&mut self, logits: Var, index: usize) -> Result<Var> {
        let ls = self.log_softmax(logits);
        self.pick(ls, index)
    }

    /// Inverted dropout. Identity when the graph is in evaluation mode or
    /// `rate` is zero.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.train || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.val(a.0).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let out = self
            .val(a.0)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let needs = self.ng(a.0);
        self.push(out, Op::Dropout(a.0, mask), needs)
    }

    /// Fused LSTM cell. `gates` holds the pre-activations `[i, f, o, g]`;
    /// the result is `[h', c']`.
    pub fn lstm_cell(&mut self, gates: Var, c: Var) -> Var {
        let z = self.val(gates.0);
        let cv = self.val(c.0);
        let h = cv.len();
        assert_eq!(z.len(), 4 * h, "lstm gates must be 4x the cell size");
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let o = sigmoid(z[2 * h + k]);
            let g = z[3 * h + k].tanh();
            let c2 = f * cv[k] + i * g;
            out[k] = o * c2.tanh();
            out[h + k] = c2;
        }
        let needs = self.ng(gates.0) || self.ng(c.0);
        self.push(
            out,
            Op::LstmCell {
                gates: gates.0,
                c: c.0,
            },
            needs,
        )
    }

    /// Additive attention scores `s_i = v . tanh(query + keys_i)`, where
    /// `query` and `keys` are already projected.
    pub fn attn_scores(&mut self, query: Var, keys: &[Var], v: Var) -> Var {
        let q = self.val(query.0);
        let vv = self.val(v.0);
        let out = keys
            .iter()
            .map(|k| {
                let kv = self.val(k.0);
                (0..q.len()).map(|j| vv[j] * (q[j] + kv[j]).tanh()).sum()
            })
            .collect();
        let needs = self.ng(query.0) || self.ng(v.0) || keys.iter().any(|k| self.ng(k.0));
        self.push(
            out,
            Op::AttnScores {
                query: query.0,
                keys: keys.iter().map(|k| k.0).collect(),
                v: v.0,
            },
            needs,
        )
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.val(weights.0);
        assert_eq!(w.len(), items.len());
        let mut out = vec![0.0; self.val(items[0].0).len()];
        for (wi, it) in w.iter().zip(items) {
            out.iter_mut()
                .zip(self.val(it.0))
                .for_each(|(o, x)| *o += wi * x);
        }
        let needs = self.ng(weights.0) || items.iter().any(|x| self.ng(x.0));
        self.push(
            out,
            Op::WeightedSum {
                weights: weights.0,
                items: items.iter().map(|x| x.0).collect(),
            },
            needs,
        )
    }

    /// Accumulates d`loss`/d(everything) into parameter and input gradients.
    /// Calling it twice without [`Graph::zero_grad`] adds the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract("backward needs a scalar loss"));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let params = self.params;
        fn slot<'a>(
            nodes: &[Node],
            adj: &'a mut [Option<Vec<f64>>],
            j: usize,
        ) -> Option<&'a mut [f64]> {
            if !nodes[j].needs_grad {
                return None;
            }
            let n = nodes[j].value.len();
            Some(adj[j].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
        }
        let y = &nodes[i].value;
        match &nodes[i].op {
            Op::Constant => {}
            Op::Input => add_into(
                self.input_grads
                    .entry(i)
                    .or_insert_with(|| vec![0.0; g.len()]),
                g,
            ),
            Op::Param(id) => add_into(self.grads.dense_mut(*id, g.len()), g),
            Op::Lookup(id, row) => add_into(self.grads.row_mut(*id, *row, g.len()), g),
            Op::Affine { w, b, x } => {
                let wp = params.get(*w);
                let xv = &nodes[*x].value;
                if wp.trainable {
                    let gw = self.grads.dense_mut(*w, wp.data.len());
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            let row = &mut gw[r * wp.cols..(r + 1) * wp.cols];
                            row.iter_mut().zip(xv).for_each(|(d, xc)| *d += gr * xc);
                        }
                    }
                }
                if let Some(b) = b {
                    if params.get(*b).trainable {
                        add_into(self.grads.dense_mut(*b, g.len()), g);
                    }
                }
                if let Some(gx) = slot(nodes, adj, *x) {
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            gx.iter_mut()
                                .zip(wp.row(r))
                                .for_each(|(d, wv)| *d += gr * wv);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if let Some(ga) = slot(nodes, adj, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += f * s);
                }
            }
            Op::AddN(xs) => {
                for x in xs {
                    if let Some(gx) = slot(nodes, adj, *x) {
                        add_into(gx, g);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for x in xs {
                    let n = nodes[*x].value.len();
                    if let Some(gx) = slot(nodes, adj, *x) {
                        add_into(gx, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    add_into(&mut ga[*start..*start + g.len()], g);
                }
            }
            Op::Mean(xs) => {
                let inv = 1.0 / xs.len() as f64;
                for x in xs {
                    if let Some(gx) = slot(nodes, adj, *x) {
                        gx.iter_mut().zip(g).for_each(|(d, s)| *d += inv * s);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga.iter_mut().zip(bv).for_each(|(d, x)| *d += g[0] * x);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    gb.iter_mut().zip(av).for_each(|(d, x)| *d += g[0] * x);
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    let total: f64 = g
                        .iter()
                        .zip(y)
                        .filter(|(_, v)| v.is_finite())
                        .map(|(s, _)| s)
                        .sum();
                    for k in 0..g.len() {
                        if y[k].is_finite() {
                            ga[k] += g[k] - y[k].exp() * total;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    let gy: f64 = g.iter().zip(y).map(|(s, p)| s * p).sum();
                    for k in 0..g.len() {
                        ga[k] += y[k] * (g[k] - gy);
                    }
                }
            }
            Op::Pick(a, index) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga[*index] += g[0];
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * mask[k];
                    }
                }
            }
            Op::LstmCell { gates, c } => {
                let z = &nodes[*gates].value;
                let cv = &nodes[*c].value;
                let h = cv.len();
                let mut dz = vec![0.0; 4 * h];
                let mut dc = vec![0.0; h];
                for k in 0..h {
                    let i_g = sigmoid(z[k]);
                    let f_g = sigmoid(z[h + k]);
                    let o_g = sigmoid(z[2 * h + k]);
                    let g_g = z[3 * h + k].tanh();
                    let tc = y[h + k].tanh();
                    let gh = g[k];
                    let dc2 = g[h + k] + gh * o_g * (1.0 - tc * tc);
                    dz[k] = dc2 * g_g * i_g * (1.0 - i_g);
                    dz[h + k] = dc2 * cv[k] * f_g * (1.0 - f_g);
                    dz[2 * h + k] = gh * tc * o_g * (1.0 - o_g);
                    dz[3 * h + k] = dc2 * i_g * (1.0 - g_g * g_g);
                    dc[k] = dc2 * f_g;
                }
                if let Some(gz) = slot(nodes, adj, *gates) {
                    add_into(gz, &dz);
                }
                if let Some(gc) = slot(nodes, adj, *c) {
                    add_into(gc, &dc);
                }
            }
            Op::AttnScores { query, keys, v } => {
                let q = &nodes[*query].value;
                let vv = &nodes[*v].value;
                let d = q.len();
                let mut dq = vec![0.0; d];
                let mut dv = vec![0.0; d];
                for (i_key, k) in keys.iter().enumerate() {
                    let kv = &nodes[*k].value;
                    let mut dk = vec![0.0; d];
                    for j in 0..d {
                        let t = (q[j] + kv[j]).tanh();
                        dv[j] += g[i_key] * t;
                        let dpre = g[i_key] * vv[j] * (1.0 - t * t);
                        dq[j] += dpre;
                        dk[j] = dpre;
                    }
                    if let Some(gk) = slot(nodes, adj, *k) {
                        add_into(gk, &dk);
                    }
                }
                if let Some(gq) = slot(nodes, adj, *query) {
                    add_into(gq, &dq);
                }
                if let Some(gv) = slot(nodes, adj, *v) {
                    add_into(gv, &dv);
                }
            }
            Op::WeightedSum { weights, items } => {
                let w = &nodes[*weights].value;
                if let Some(gw) = slot(nodes, adj, *weights) {
                    for (k, it) in items.iter().enumerate() {
                        gw[k] += g
                            .iter()
                            .zip(&nodes[*it].value)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                for (k, it) in items.iter().enumerate() {
                    if let Some(gi) = slot(nodes, adj, *it) {
                        gi.iter_mut().zip(g).for_each(|(d, s)| *d += w[k] * s);
                    }
                }
            }
        }
    }

    pub fn gradients(&self) -> &Gradients {
        &self.grads
    }

    pub fn into_gradients(self) -> Gradients {
        self.grads
    }

    pub fn input_grad(&self, v: Var) -> Option<&[f64]> {
        self.input_grads.get(&v.0).map(Vec::as_slice)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.input_grads.clear();
    }

    /// Discards every node created after the graph had `len` nodes. Vars
    /// from the discarded suffix must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero_has_unit_slope() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(vec![0.0]);
        let y = g.tanh(x);
        g.backward(y).unwrap();
        assert_eq!(g.input_grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(vec![0.3, -1.2, 2.0, 0.0]);
        let p = g.softmax(x);
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.input_grad(x).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(vec![2.0]);
        let y = g.mul(x, x);
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.input_grad(x).unwrap(), &[8.0]);
        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.input_grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(vec![1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_softmax_stability_and_symmetry() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.constant(vec![1000.0, 0.0]);
        let ls = g.log_softmax(x);
        let v = g.value(ls);
        assert!(v[0].abs() < 1e-12);
        assert!((v[1] + 1000.0).abs() < 1e-9);
        let x = g.constant(vec![0.7; 4]);
        let ls = g.log_softmax(x);
        assert!(g
            .value(ls)
            .iter()
            .all(|v| (v - (0.25f64).ln()).abs() < 1e-12));
        assert!(g.pick(ls, 4).is_err());
    }

    #[test]
    fn masked_entries_stay_excluded() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(vec![0.5, 3.0, -1.0]);
        let m = g.mask(x, &[true, false, true]);
        let ls = g.log_softmax(m);
        let total: f64 = g.value(ls).iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(g.value(ls)[1], f64::NEG_INFINITY);
        let p = g.pick(ls, 0).unwrap();
        g.backward(p).unwrap();
        let gx = g.input_grad(x).unwrap();
        assert_eq!(gx[1], 0.0);
        assert!(gx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dropout_identity_in_eval_and_zero_rate() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(vec![1.0, 2.0]);
        assert_eq!(g.dropout(x, 0.5), x);
        let mut g = Graph::new(&store, true, 0);
        let x = g.input(vec![1.0, 2.0]);
        assert_eq!(g.dropout(x, 0.0), x);
        let y = g.dropout(x, 0.5);
        assert!(g.value(y).iter().all(|v| [0.0, 2.0, 4.0].contains(v)));
    }
}
