//! Parsing (greedy under q, or sampling from q and reranking under p) and
//! language-model estimates of log p(x) (ELBO and importance sampling).

use std::collections::HashSet;
use std::fmt;

use rand::RngCore;
use rayon::prelude::*;

use crate::decoder::generative_actions;
use crate::error::{Error, Result};
use crate::model::{Model, Policy};
use crate::rng;
use crate::tensor::Graph;
use crate::transitions::{tree_from_actions, Action};
use crate::tree::{StrTree, Token};
use crate::treebank::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMethod {
    Greedy,
    Rerank,
}

impl ParseMethod {
    pub fn name(self) -> &'static str {
        match self {
            ParseMethod::Greedy => "greedy-q",
            ParseMethod::Rerank => "rerank-joint",
        }
    }
}

impl std::str::FromStr for ParseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" | "greedy-q" => Ok(ParseMethod::Greedy),
            "rerank" | "rerank-joint" => Ok(ParseMethod::Rerank),
            other => Err(Error::Config(format!("unknown parse method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmMethod {
    Elbo,
    Importance,
}

impl LmMethod {
    pub fn name(self) -> &'static str {
        match self {
            LmMethod::Elbo => "elbo",
            LmMethod::Importance => "importance",
        }
    }
}

impl std::str::FromStr for LmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elbo" => Ok(LmMethod::Elbo),
            "importance" | "is" => Ok(LmMethod::Importance),
            other => Err(Error::Config(format!("unknown LM method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseResult {
    pub actions: Vec<Action>,
    pub log_q: f64,
    /// `log p(x, a)`; only computed by reranking.
    pub log_joint: Option<f64>,
    pub method: ParseMethod,
}

impl ParseResult {
    /// The parse as a labeled tree over the sentence's surface tokens.
    pub fn tree(&self, model: &Model, inst: &Instance) -> Result<StrTree> {
        let t = tree_from_actions(&self.actions, &inst.surface)?;
        Ok(t.map(
            &mut |&x: &usize| model.vocab.nonterminals.name(x).to_string(),
            &mut |tok: &Token<String>| tok.clone(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmEstimate {
    pub method: LmMethod,
    pub log_px: f64,
    pub samples: usize,
    /// Effective sample size of the importance weights.
    pub ess: Option<f64>,
    /// Per-sample `log p(x, a) - log q(a|x)`.
    pub log_weights: Vec<f64>,
}

impl fmt::Display for LmEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.6}\t{}\t{}\t",
            self.log_px,
            self.method.name(),
            self.samples
        )?;
        match self.ess {
            Some(e) => write!(f, "{e:.4}"),
            None => write!(f, "-"),
        }
    }
}

fn check_sentence(inst: &Instance) -> Result<()> {
    if inst.is_empty() {
        return Err(Error::contract("empty sentence"));
    }
    Ok(())
}

/// Most probable action at every step under q. Deterministic.
pub fn parse_greedy(model: &Model, inst: &Instance) -> Result<ParseResult> {
    check_sentence(inst)?;
    let mut g = Graph::new(&model.params, false, 0);
    let run = model
        .encoder
        .run(&mut g, &inst.words, &inst.pos_tags, Policy::Greedy)?;
    Ok(ParseResult {
        log_q: g.scalar(run.log_prob),
        actions: run.actions,
        log_joint: None,
        method: ParseMethod::Greedy,
    })
}

/// `log q(a|x)` for a discriminative derivation.
pub fn score_q(model: &Model, inst: &Instance, actions: &[Action]) -> Result<f64> {
    let mut g = Graph::new(&model.params, false, 0);
    let run = model
        .encoder
        .run(&mut g, &inst.words, &inst.pos_tags, Policy::Forced(actions))?;
    Ok(g.scalar(run.log_prob))
}

/// `(log p(a), log p(x|a), log p(x, a))` for a discriminative derivation
/// of the sentence.
pub fn score_joint(model: &Model, words: &[usize], actions: &[Action]) -> Result<(f64, f64, f64)> {
    let gen = generative_actions(actions, words)?;
    let mut g = Graph::new(&model.params, false, 0);
    let run = model.decoder.run(&mut g, Policy::Forced(&gen))?;
    Ok((
        g.scalar(run.log_actions),
        g.scalar(run.log_words),
        g.scalar(run.log_joint),
    ))
}

/// Draws `k` derivations from q with their `log q` values.
pub fn sample_q(
    model: &Model,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<(Vec<Action>, f64)>> {
    check_sentence(inst)?;
    let mut g = Graph::new(&model.params, false, 0);
    let start = model.encoder.start(&mut g, &inst.words, &inst.pos_tags)?;
    let mark = g.len();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let run = model
            .encoder
            .unroll(&mut g, start.clone(), Policy::Sample(&mut *rng))?;
        out.push((run.actions, g.scalar(run.log_prob)));
        g.truncate(mark);
    }
    Ok(out)
}

/// Samples `k` derivations from q, adds the greedy derivation, and returns
/// the distinct candidate with the highest `log p(x, a)`. Ties keep the
/// earlier candidate (greedy first).
pub fn parse_rerank(
    model: &Model,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<ParseResult> {
    if k == 0 {
        return Err(Error::contract("rerank needs at least one sample"));
    }
    let greedy = parse_greedy(model, inst)?;
    let mut pool = vec![(greedy.actions, greedy.log_q)];
    pool.extend(sample_q(model, inst, k, rng)?);
    let mut seen = HashSet::new();
    let mut best: Option<ParseResult> = None;
    for (actions, log_q) in pool {
        if !seen.insert(actions.clone()) {
            continue;
        }
        let (_, _, joint) = score_joint(model, &inst.words, &actions)?;
        if best
            .as_ref()
            .is_none_or(|b| joint > b.log_joint.unwrap_or(f64::NEG_INFINITY))
        {
            best = Some(ParseResult {
                actions,
                log_q,
                log_joint: Some(joint),
                method: ParseMethod::Rerank,
            });
        }
    }
    Ok(best.expect("pool is nonempty"))
}

fn log_weights(
    model: &Model,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::contract("at least one sample is required"));
    }
    sample_q(model, inst, k, rng)?
        .into_iter()
        .map(|(actions, log_q)| Ok(score_joint(model, &inst.words, &actions)?.2 - log_q))
        .collect()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log (1/n) sum exp(x_i)`. Exact when all entries are equal.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// `(sum w)^2 / sum w^2`, computed from log weights rescaled by their
/// maximum.
pub fn effective_sample_size(log_w: &[f64]) -> f64 {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    s * s / w.iter().map(|v| v * v).sum::<f64>()
}

/// Mean of `log p(x, a) - log q(a|x)` over `k` samples from q; a lower
/// bound on `log p(x)` in expectation.
pub fn lm_elbo(
    model: &Model,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<LmEstimate> {
    let log_w = log_weights(model, inst, k, rng)?;
    Ok(LmEstimate {
        method: LmMethod::Elbo,
        log_px: log_w.iter().sum::<f64>() / k as f64,
        samples: k,
        ess: None,
        log_weights: log_w,
    })
}

/// `log (1/k) sum_i p(x, a_i) / q(a_i|x)`, computed in log space.
pub fn lm_importance(
    model: &Model,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<LmEstimate> {
    let log_w = log_weights(model, inst, k, rng)?;
    Ok(LmEstimate {
        method: LmMethod::Importance,
        log_px: log_mean_exp(&log_w),
        samples: k,
        ess: Some(effective_sample_size(&log_w)),
        log_weights: log_w,
    })
}

pub fn lm_estimate(
    model: &Model,
    inst: &Instance,
    method: LmMethod,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<LmEstimate> {
    match method {
        LmMethod::Elbo => lm_elbo(model, inst, k, rng),
        LmMethod::Importance => lm_importance(model, inst, k, rng),
    }
}

/// Runs `f` over the corpus on `threads` workers. Sentence `i` gets the
/// random stream `(seed, "sampling", i)`, so results do not depend on the
/// thread count.
fn over_corpus<T: Send>(
    instances: &[Instance],
    seed: u64,
    threads: usize,
    f: impl Fn(&Instance, &mut dyn RngCore) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let work = || {
        instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| f(inst, &mut rng::stream(seed, "sampling", i as u64)))
            .collect::<Result<Vec<T>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(work)
}

pub fn parse_corpus(
    model: &Model,
    instances: &[Instance],
    method: ParseMethod,
    k: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<ParseResult>> {
    over_corpus(instances, seed, threads, |inst, rng| match method {
        ParseMethod::Greedy => parse_greedy(model, inst),
        ParseMethod::Rerank => parse_rerank(model, inst, k, rng),
    })
}

/// Per-sentence estimates and `exp(NLL / T)` with T the total word count.
pub fn corpus_perplexity(
    model: &Model,
    instances: &[Instance],
    method: LmMethod,
    k: usize,
    seed: u64,
    threads: usize,
) -> Result<(Vec<LmEstimate>, f64)> {
    if instances.is_empty() {
        return Err(Error::contract("empty corpus"));
    }
    let estimates = over_corpus(instances, seed, threads, |inst, rng| {
        lm_estimate(model, inst, method, k, rng)
    })?;
    let nll: f64 = -estimates.iter().map(|e| e.log_px).sum::<f64>();
    let tokens: usize = instances.iter().map(Instance::len).sum();
    Ok((estimates, perplexity(nll, tokens)))
}

pub fn perplexity(nll: f64, tokens: usize) -> f64 {
    (nll / tokens as f64).exp()
}
