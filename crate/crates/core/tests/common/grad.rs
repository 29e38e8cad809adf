//! Central finite differences (h = 1e-4) against reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use rnng::inference::sample_q;
use rnng::tensor::{Attention, BiLstm, Graph, Init, Lstm, ParamId, ParamStore, StackLstm, Var};
use rnng::training::{elbo_surrogate, supervised_objective};
use rnng::transitions::{oracle_from_tree, Constraints, Mode};
use rnng::tree::{IdTree, Token};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
/// Denominator floor so coordinates with near-zero gradient are judged on
/// absolute error.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compares `coords` random coordinates of the parameters in `ids` that
/// received a gradient. Returns the worst relative error.
fn check(
    store: &mut ParamStore,
    ids: &[ParamId],
    coords: usize,
    seed: u64,
    train: bool,
    f: &dyn Fn(&mut Graph<'_>) -> Var,
) -> f64 {
    let grads = {
        let mut g = Graph::new(store, train, 99);
        let out = f(&mut g);
        g.backward(out).unwrap();
        g.into_gradients()
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store, train, 99);
        let out = f(&mut g);
        g.scalar(out)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| {
            let p = store.get(id);
            let n = p.data.len();
            let touched = grads.touched(id);
            (0..n).filter(move |_| touched).map(move |k| (id, k))
        })
        .collect();
    assert!(
        !candidates.is_empty(),
        "function has no parameter dependence"
    );
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let (id, k) = candidates[rng.gen_range(0..candidates.len())];
        let orig = store.get(id).data[k];
        store.get_mut(id).data[k] = orig + H;
        let plus = eval(store);
        store.get_mut(id).data[k] = orig - H;
        let minus = eval(store);
        store.get_mut(id).data[k] = orig;
        let numeric = (plus - minus) / (2.0 * H);
        let analytic = grads.get(id, k);
        let e = rel_err(analytic, numeric);
        worst = if e.is_nan() {
            f64::INFINITY
        } else {
            worst.max(e)
        };
    }
    worst
}

struct Fixture {
    store: ParamStore,
    a: ParamId,
    b: ParamId,
    w: ParamId,
    bias: ParamId,
    table: ParamId,
    probe: Vec<f64>,
}

fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let a = store.add_init("a", 6, 1, Init::Uniform(1.0), &mut rng);
    let b = store.add_init("b", 6, 1, Init::Uniform(1.0), &mut rng);
    let w = store.add_init("w", 6, 6, Init::Uniform(0.8), &mut rng);
    let bias = store.add_init("bias", 6, 1, Init::Uniform(0.5), &mut rng);
    let table = store.add_init("table", 5, 6, Init::Uniform(0.5), &mut rng);
    let probe = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Fixture {
        store,
        a,
        b,
        w,
        bias,
        table,
        probe,
    }
}

/// Reduces a vector to a scalar with fixed random weights.
fn project(g: &mut Graph<'_>, v: Var, probe: &[f64]) -> Var {
    let n = g.value(v).len();
    let c = g.constant(probe[..n].to_vec());
    g.dot(v, c)
}

macro_rules! op_check {
    ($name:ident, |$g:ident, $fx:ident| $body:expr) => {
        pub fn $name() -> f64 {
            let mut fx = fixture();
            let ids = [fx.a, fx.b, fx.w, fx.bias, fx.table];
            let probe = fx.probe.clone();
            let (a, b, w, bias, table) = (fx.a, fx.b, fx.w, fx.bias, fx.table);
            let f = move |$g: &mut Graph<'_>| {
                let $fx = (a, b, w, bias, table);
                let out: Var = $body;
                if $g.value(out).len() == 1 {
                    out
                } else {
                    project($g, out, &probe)
                }
            };
            check(&mut fx.store, &ids, 20, 1, false, &f)
        }
    };
}

op_check!(grad_param, |g, p| g.param(p.0));
op_check!(grad_lookup, |g, p| g.lookup(p.4, 3));
op_check!(grad_affine, |g, p| {
    let x = g.param(p.0);
    g.affine(p.2, Some(p.3), x)
});
op_check!(grad_matvec, |g, p| {
    let x = g.param(p.1);
    g.matvec(p.2, x)
});
op_check!(grad_add_sub_mul, |g, p| {
    let x = g.param(p.0);
    let y = g.param(p.1);
    let s = g.add(x, y);
    let d = g.sub(x, y);
    g.mul(s, d)
});
op_check!(grad_scale_add_n, |g, p| {
    let x = g.param(p.0);
    let y = g.param(p.1);
    let z = g.scale(x, -2.5);
    g.add_n(&[x, y, z, y])
});
op_check!(grad_tanh_sigmoid, |g, p| {
    let x = g.param(p.0);
    let t = g.tanh(x);
    let s = g.sigmoid(t);
    g.mul(s, x)
});
op_check!(grad_concat_slice, |g, p| {
    let x = g.param(p.0);
    let y = g.param(p.1);
    let c = g.concat(&[x, y]);
    let s = g.slice(c, 3, 6);
    g.tanh(s)
});
op_check!(grad_mean_sum_dot, |g, p| {
    let x = g.param(p.0);
    let y = g.param(p.1);
    let r = g.lookup(p.4, 1);
    let m = g.mean(&[x, y, r]);
    let d = g.dot(m, x);
    let s = g.sum(y);
    g.mul(d, s)
});
op_check!(grad_log_softmax_masked, |g, p| {
    let x = g.param(p.0);
    let m = g.mask(x, &[true, false, true, true, false, true]);
    let ls = g.log_softmax(m);
    let a = g.pick(ls, 0).unwrap();
    let b = g.pick(ls, 3).unwrap();
    let c = g.scale(b, 0.4);
    g.add(a, c)
});
op_check!(grad_log_softmax_pick, |g, p| {
    let x = g.param(p.0);
    let y = g.affine(p.2, Some(p.3), x);
    g.log_softmax_pick(y, 2).unwrap()
});
op_check!(grad_softmax, |g, p| {
    let x = g.param(p.1);
    g.softmax(x)
});
op_check!(grad_lstm_cell, |g, p| {
    let x = g.param(p.0);
    let y = g.param(p.1);
    let gates = g.concat(&[x, y]);
    let row = g.lookup(p.4, 0);
    let c = g.slice(row, 0, 3);
    g.lstm_cell(gates, c)
});
op_check!(grad_attention_primitives, |g, p| {
    let q = g.param(p.0);
    let k1 = g.param(p.1);
    let k2 = g.lookup(p.4, 2);
    let v = g.param(p.3);
    let scores = g.attn_scores(q, &[k1, k2], v);
    let wts = g.softmax(scores);
    g.weighted_sum(wts, &[k1, k2])
});

pub fn grad_dropout_with_fixed_mask() -> f64 {
    let mut fx = fixture();
    let probe = fx.probe.clone();
    let (a, w) = (fx.a, fx.w);
    let f = move |g: &mut Graph<'_>| {
        let x = g.param(a);
        let y = g.affine(w, None, x);
        let d = g.dropout(y, 0.4);
        let t = g.tanh(d);
        project(g, t, &probe)
    };
    check(&mut fx.store, &[fx.a, fx.w], 20, 2, true, &f)
}

pub fn grad_lstm_stack_lstm_bilstm_attention() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let xs = store.add_init("xs", 4, 3, Init::Uniform(1.0), &mut rng);
    let lstm = Lstm::new(&mut store, &mut rng, "lstm", 3, 4, 2, 0.0);
    let stack = StackLstm::new(Lstm::new(&mut store, &mut rng, "stack", 3, 4, 1, 0.0));
    let bi = BiLstm::new(&mut store, &mut rng, "bi", 3, 3, 2, 0.0);
    let att = Attention::new(&mut store, &mut rng, "att", 4, 6, 5);
    let probe: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let f = move |g: &mut Graph<'_>| {
        let inputs: Vec<Var> = (0..4).map(|r| g.lookup(xs, r)).collect();
        let seq = lstm.run(g, &inputs);
        let mut st = stack.initial(g);
        stack.push(g, &mut st, inputs[0]);
        stack.push(g, &mut st, inputs[1]);
        stack.pop(&mut st).unwrap();
        stack.push(g, &mut st, inputs[2]);
        let keys = bi.run(g, &inputs);
        let q = g.add(seq[3], st.summary());
        let ctx = att.apply(g, q, &keys).unwrap();
        project(g, ctx, &probe)
    };
    check(&mut store, &ids, 40, 3, false, &f)
}

fn training_tree() -> IdTree {
    let leaf = |w: usize| IdTree::Leaf(Token::new(w, Some(1)));
    IdTree::node(
        0,
        vec![
            IdTree::node(1, vec![leaf(1), leaf(2)]),
            IdTree::node(0, vec![leaf(3), IdTree::node(1, vec![leaf(1)])]),
        ],
    )
}

pub fn grad_supervised_objective() -> f64 {
    let mut model = micro_model(2, 4, Constraints::default(), 31);
    let mut inst = sentence(&model, &[1, 2, 3, 1]);
    let tree = training_tree();
    inst.gold_disc = Some(oracle_from_tree(&tree, Mode::Discriminative).unwrap());
    inst.gold_gen = Some(oracle_from_tree(&tree, Mode::Generative).unwrap());
    let ids: Vec<ParamId> = model
        .params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let m = model.clone();
    let f = move |g: &mut Graph<'_>| supervised_objective(g, &m, &inst).unwrap();
    let mut store = std::mem::take(&mut model.params);
    check(&mut store, &ids, 60, 5, false, &f)
}

pub fn grad_elbo_surrogate() -> f64 {
    let mut model = micro_model(2, 4, Constraints::default(), 41);
    let inst = sentence(&model, &[3, 1, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (actions, _) = sample_q(&model, &inst, 1, &mut rng).unwrap().remove(0);
    let ids: Vec<ParamId> = model
        .params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let m = model.clone();
    let f = move |g: &mut Graph<'_>| elbo_surrogate(g, &m, &inst, &actions, -1.7).unwrap();
    let mut store = std::mem::take(&mut model.params);
    check(&mut store, &ids, 60, 6, false, &f)
}

/// Every check with its worst relative error.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("param", grad_param()),
        ("lookup", grad_lookup()),
        ("affine", grad_affine()),
        ("matvec", grad_matvec()),
        ("add_sub_mul", grad_add_sub_mul()),
        ("scale_add_n", grad_scale_add_n()),
        ("tanh_sigmoid", grad_tanh_sigmoid()),
        ("concat_slice", grad_concat_slice()),
        ("mean_sum_dot", grad_mean_sum_dot()),
        ("log_softmax_masked", grad_log_softmax_masked()),
        ("log_softmax_pick", grad_log_softmax_pick()),
        ("softmax", grad_softmax()),
        ("lstm_cell", grad_lstm_cell()),
        ("attention_primitives", grad_attention_primitives()),
        ("dropout_with_fixed_mask", grad_dropout_with_fixed_mask()),
        (
            "lstm_stack_lstm_bilstm_attention",
            grad_lstm_stack_lstm_bilstm_attention(),
        ),
        ("supervised_objective", grad_supervised_objective()),
        ("elbo_surrogate", grad_elbo_surrogate()),
    ]
}
