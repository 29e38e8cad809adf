//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use std::collections::BTreeMap;

use rnng::config::ModelDims;
use rnng::decoder::DecoderState;
use rnng::encoder::EncoderState;
use rnng::model::Model;
use rnng::tensor::Graph;
use rnng::transitions::{Action, ActionType, Constraints};
use rnng::tree::Token;
use rnng::treebank::{Indexer, Instance, Vocab};

/// Vocabulary with nonterminals `X0..`, words `w0..` (plus `<unk>` at 0)
/// and one POS tag `T`.
pub fn micro_vocab(num_nt: usize, num_words: usize) -> Vocab {
    let mut words = vec!["<unk>".to_string()];
    words.extend((1..num_words).map(|i| format!("w{i}")));
    Vocab {
        words: Indexer::from_items(words),
        nonterminals: Indexer::from_items((0..num_nt).map(|i| format!("X{i}")).collect()),
        pos_tags: Indexer::from_items(vec!["<unkpos>".to_string(), "T".to_string()]),
        counts: BTreeMap::new(),
    }
}

pub fn tiny_dims(limits: Constraints) -> ModelDims {
    ModelDims {
        word_dim: 3,
        pretrained_dim: 2,
        pos_dim: 2,
        nt_dim: 3,
        enc_lstm_dim: 4,
        dec_lstm_dim: 5,
        lstm_layers: 2,
        enc_dropout: 0.0,
        dec_dropout: 0.0,
        max_open_nt: limits.max_open_nt,
        max_gen_len: limits.max_gen_len,
    }
}

/// Random nonzero pretrained vectors so every parameter path is live.
pub fn micro_model(num_nt: usize, num_words: usize, limits: Constraints, seed: u64) -> Model {
    let vocab = micro_vocab(num_nt, num_words);
    let mut table = rnng::treebank::PretrainedTable::empty(2);
    for (i, w) in vocab.words.items().iter().enumerate() {
        table
            .vectors
            .insert(w.clone(), vec![0.3 * i as f64 - 0.2, 0.1 + 0.05 * i as f64]);
    }
    Model::new(tiny_dims(limits), vocab, Some(&table), seed).unwrap()
}

/// Sentence `words` (ids) with POS tag `T` everywhere.
pub fn sentence(model: &Model, words: &[usize]) -> Instance {
    let tokens: Vec<Token<String>> = words
        .iter()
        .map(|&w| Token::new(model.vocab.words.name(w).to_string(), Some("T".to_string())))
        .collect();
    Instance::from_tokens(&tokens, &model.vocab)
}

/// Every complete discriminative derivation of the sentence with its
/// `log q(a|x)`, by depth-first expansion of all legal actions.
pub fn enumerate_q(model: &Model, inst: &Instance) -> Vec<(Vec<Action>, f64)> {
    fn rec(
        model: &Model,
        g: &mut Graph<'_>,
        st: &EncoderState,
        prefix: &mut Vec<Action>,
        logp: f64,
        out: &mut Vec<(Vec<Action>, f64)>,
    ) {
        if st.parser.is_terminal() {
            out.push((prefix.clone(), logp));
            return;
        }
        let lp = model.encoder.action_logprobs(g, st).unwrap();
        let vals = g.value(lp).to_vec();
        let space = model.encoder.space();
        for (i, &v) in vals.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            let action = match space.kind(i) {
                ActionType::Nt(x) => Action::Nt(x),
                ActionType::Terminal => Action::Shift,
                ActionType::Reduce => Action::Reduce,
            };
            let mark = g.len();
            let mut next = st.clone();
            model.encoder.advance(g, &mut next, action).unwrap();
            prefix.push(action);
            rec(model, g, &next, prefix, logp + v, out);
            prefix.pop();
            g.truncate(mark);
        }
    }
    let mut g = Graph::new(&model.params, false, 0);
    let st = model
        .encoder
        .start(&mut g, &inst.words, &inst.pos_tags)
        .unwrap();
    let mut out = Vec::new();
    rec(model, &mut g, &st, &mut Vec::new(), 0.0, &mut out);
    out
}

/// Every complete generative derivation (all sentences the limits allow)
/// with its `log p(x, a)`.
pub fn enumerate_joint(model: &Model) -> Vec<(Vec<Action>, f64)> {
    fn rec(
        model: &Model,
        g: &mut Graph<'_>,
        st: &DecoderState,
        prefix: &mut Vec<Action>,
        logp: f64,
        out: &mut Vec<(Vec<Action>, f64)>,
    ) {
        if st.parser.is_terminal() {
            out.push((prefix.clone(), logp));
            return;
        }
        let lp = model.decoder.action_logprobs(g, st).unwrap();
        let vals = g.value(lp).to_vec();
        let space = model.decoder.space();
        for (i, &v) in vals.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            let mut choices = Vec::new();
            match space.kind(i) {
                ActionType::Nt(x) => choices.push((Action::Nt(x), v)),
                ActionType::Reduce => choices.push((Action::Reduce, v)),
                ActionType::Terminal => {
                    let wl = model.decoder.word_logprobs(g, st).unwrap();
                    for (w, &wv) in g.value(wl).to_vec().iter().enumerate() {
                        choices.push((Action::Gen(w), v + wv));
                    }
                }
            }
            for (action, lpa) in choices {
                let mark = g.len();
                let mut next = st.clone();
                model.decoder.advance(g, &mut next, action).unwrap();
                prefix.push(action);
                rec(model, g, &next, prefix, logp + lpa, out);
                prefix.pop();
                g.truncate(mark);
            }
        }
    }
    let mut g = Graph::new(&model.params, false, 0);
    let st = model.decoder.start(&mut g).unwrap();
    let mut out = Vec::new();
    rec(model, &mut g, &st, &mut Vec::new(), 0.0, &mut out);
    out
}

pub fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    rnng::inference::logsumexp(&v)
}

/// Exact `log p(x)` by summing the joint over every derivation of `x`.
pub fn exact_log_px(model: &Model, inst: &Instance) -> f64 {
    let derivs = enumerate_q(model, inst);
    logsumexp(derivs.iter().map(|(a, _)| {
        rnng::inference::score_joint(model, &inst.words, a)
            .unwrap()
            .2
    }))
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Gold/predicted tree files with hand-computed corpus precision, recall
/// and F1 (percent).
pub struct ScorerCase {
    pub name: &'static str,
    pub gold: &'static str,
    pub pred: &'static str,
    pub expected: (f64, f64, f64),
}

pub fn scorer_cases() -> Vec<ScorerCase> {
    let third = 100.0 / 3.0;
    let case = |name, gold, pred, expected| ScorerCase {
        name,
        gold,
        pred,
        expected,
    };
    vec![
        case(
            "identical",
            "(S (NP (D the) (N dog)) (VP (V ran)))",
            "(S (NP (D the) (N dog)) (VP (V ran)))",
            (100.0, 100.0, 100.0),
        ),
        case(
            "flat prediction",
            "(S (NP (D the) (N dog)) (VP (V ran)))",
            "(S (D the) (N dog) (V ran))",
            (100.0, third, 50.0),
        ),
        case(
            "one wrong label",
            "(S (NP (D the) (N dog)) (VP (V ran)))",
            "(S (X (D the) (N dog)) (VP (V ran)))",
            (2.0 * third, 2.0 * third, 2.0 * third),
        ),
        case(
            "two of two with one match",
            "(S (NP (D a) (N b)) (V c))",
            "(S (D a) (VP (N b) (V c)))",
            (50.0, 50.0, 50.0),
        ),
        case(
            "no match",
            "(S (D a) (N b))",
            "(T (D a) (N b))",
            (0.0, 0.0, 0.0),
        ),
        case(
            "unary chain",
            "(S (NP (D a) (N b)))",
            "(S (D a) (N b))",
            (100.0, 50.0, 2.0 * third),
        ),
        case(
            "right versus left branching",
            "(S (D a) (X (N b) (X (V c) (N d))))",
            "(S (X (X (D a) (N b)) (V c)) (N d))",
            (third, third, third),
        ),
        case(
            "extra predicted brackets",
            "(S (D a) (N b) (V c))",
            "(S (NP (D a) (N b)) (VP (V c)))",
            (third, 100.0, 50.0),
        ),
        case(
            "swapped labels",
            "(S (NP (D a)) (VP (V b)))",
            "(S (VP (D a)) (NP (V b)))",
            (third, third, third),
        ),
        case(
            "corpus level counts",
            "(S (NP (D the) (N dog)) (VP (V ran)))\n(S (D a) (N b) (V c))",
            "(S (D the) (N dog) (V ran))\n(S (NP (D a) (N b)) (VP (V c)))",
            (50.0, 50.0, 50.0),
        ),
    ]
}

/// Bootstrap standard error of `log mean exp(log_w)`.
pub fn bootstrap_se_log_mean_exp(log_w: &[f64], resamples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = log_w.len();
    let estimates: Vec<f64> = (0..resamples)
        .map(|_| {
            let draw: Vec<f64> = (0..k).map(|_| log_w[rng.gen_range(0..k)]).collect();
            logsumexp(draw) - (k as f64).ln()
        })
        .collect();
    let (_, se) = mean_and_se(&estimates);
    // mean_and_se divides by sqrt(n); the bootstrap SE is the spread itself.
    se * (resamples as f64).sqrt()
}

/// Enumeration fixture: two labels, three words, at most three open
/// constituents.
pub fn enumeration_model(seed: u64) -> Model {
    micro_model(
        2,
        3,
        Constraints {
            max_open_nt: 3,
            max_gen_len: 3,
        },
        seed,
    )
}

/// One label, one open constituent: every sentence has exactly one
/// derivation.
pub fn single_derivation_model(seed: u64) -> Model {
    micro_model(
        1,
        3,
        Constraints {
            max_open_nt: 1,
            max_gen_len: 4,
        },
        seed,
    )
}

/// Writes `trees` one per line.
pub fn write_trees(path: &std::path::Path, trees: &[rnng::tree::StrTree]) {
    let text: String = trees.iter().map(|t| format!("{t}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Compact configuration for command-line runs.
pub const SMALL_CONFIG: &str = "\
word_dim = 8
pretrained_dim = 2
pos_dim = 4
nt_dim = 6
enc_lstm_dim = 12
dec_lstm_dim = 12
lstm_layers = 1
eval_samples = 3
min_count = 1
epochs = 2
learning_rate = 0.005
";

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_rnng"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}
