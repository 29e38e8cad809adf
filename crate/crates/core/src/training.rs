//! Training objectives and the optimization loop.
//!
//! The unsupervised term is the ELBO `E_q[log p(x, a) - log q(a|x)]`.
//! Decoder gradients come from differentiating `log p(x, a)` at sampled
//! derivations; encoder gradients use the score-function estimator
//! `(signal - baseline) * grad log q(a|x)`. The supervised term is
//! `log q(a|x) + log p(a)` at the gold derivation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::config::TrainConfig;
use crate::decoder::generative_actions;
use crate::error::{Error, Result};
use crate::inference::{lm_elbo, parse_greedy};
use crate::model::{Model, Policy};
use crate::rng;
use crate::tensor::{Adam, Gradients, Graph, ParamStore, Var};
use crate::transitions::Action;
use crate::treebank::Instance;

/// Exponential moving average of the learning signal. The first observed
/// signal initializes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub decay: f64,
    value: Option<f64>,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { decay, value: None }
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn update(&mut self, signal: f64) {
        self.value = Some(match self.value {
            None => signal,
            Some(b) => self.decay * b + (1.0 - self.decay) * signal,
        });
    }
}

/// Objective values for one instance (nats per sentence).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveReport {
    pub elbo: Option<f64>,
    pub la: Option<f64>,
    /// The minimized loss `-(lambda_x * ELBO + lambda_a * La)`.
    pub loss: f64,
    pub baseline: Option<f64>,
    pub grad_norm: f64,
}

fn gold(inst: &Instance) -> Result<(&[Action], &[Action])> {
    match (&inst.gold_disc, &inst.gold_gen) {
        (Some(d), Some(g)) => Ok((d, g)),
        _ => Err(Error::contract("instance has no gold derivation")),
    }
}

/// `La = log q(a|x) + log p(a)` at the gold derivation.
pub fn supervised_objective(g: &mut Graph<'_>, model: &Model, inst: &Instance) -> Result<Var> {
    let (disc, gen) = gold(inst)?;
    let enc = model
        .encoder
        .run(g, &inst.words, &inst.pos_tags, Policy::Forced(disc))?;
    let dec = model.decoder.run(g, Policy::Forced(gen))?;
    Ok(g.add(enc.log_prob, dec.log_actions))
}

/// Value and parameter gradients of `La` (gradients of the maximized
/// quantity).
pub fn supervised_loss(model: &Model, inst: &Instance) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(&model.params, false, 0);
    let la = supervised_objective(&mut g, model, inst)?;
    g.backward(la)?;
    Ok((g.scalar(la), g.into_gradients()))
}

/// `log p(x, a) + coef * log q(a|x)` for a fixed derivation. With `coef`
/// set to the centred learning signal this is the per-sample surrogate
/// whose gradient is the ELBO gradient estimate.
pub fn elbo_surrogate(
    g: &mut Graph<'_>,
    model: &Model,
    inst: &Instance,
    actions: &[Action],
    coef: f64,
) -> Result<Var> {
    let gen = generative_actions(actions, &inst.words)?;
    let enc = model
        .encoder
        .run(g, &inst.words, &inst.pos_tags, Policy::Forced(actions))?;
    let dec = model.decoder.run(g, Policy::Forced(&gen))?;
    let scaled = g.scale(enc.log_prob, coef);
    Ok(g.add(dec.log_joint, scaled))
}

/// Builds the weighted objective for one instance on `g`. Returns the
/// objective node (to be maximized) and its report.
pub fn build_objective(
    g: &mut Graph<'_>,
    model: &Model,
    inst: &Instance,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
    baseline: &mut Baseline,
) -> Result<(Var, ObjectiveReport)> {
    if inst.is_empty() {
        return Err(Error::contract("empty sentence"));
    }
    let mut report = ObjectiveReport::default();
    let mut terms = Vec::new();
    if cfg.lambda_a > 0.0 {
        let la = supervised_objective(g, model, inst)?;
        report.la = Some(g.scalar(la));
        terms.push(g.scale(la, cfg.lambda_a));
    }
    if cfg.lambda_x > 0.0 {
        let k = cfg.samples;
        let start = model.encoder.start(g, &inst.words, &inst.pos_tags)?;
        let mut samples = Vec::with_capacity(k);
        for _ in 0..k {
            let enc = model
                .encoder
                .unroll(g, start.clone(), Policy::Sample(&mut *rng))?;
            let gen = generative_actions(&enc.actions, &inst.words)?;
            let dec = model.decoder.run(g, Policy::Forced(&gen))?;
            let signal = g.scalar(dec.log_joint) - g.scalar(enc.log_prob);
            samples.push((enc.log_prob, dec.log_joint, signal));
        }
        let mean_signal = samples.iter().map(|s| s.2).sum::<f64>() / k as f64;
        let b = baseline.value().unwrap_or(mean_signal);
        let mut per_sample = Vec::with_capacity(k);
        for &(log_q, log_joint, signal) in &samples {
            let sf = g.scale(log_q, signal - b);
            per_sample.push(g.add(log_joint, sf));
        }
        let sum = g.add_n(&per_sample);
        terms.push(g.scale(sum, cfg.lambda_x / k as f64));
        report.elbo = Some(mean_signal);
        report.baseline = Some(b);
        baseline.update(mean_signal);
    }
    let objective = g.add_n(&terms);
    report.loss =
        -(cfg.lambda_x * report.elbo.unwrap_or(0.0) + cfg.lambda_a * report.la.unwrap_or(0.0));
    Ok((objective, report))
}

/// One instance's ELBO estimate and gradients of the surrogate, with the
/// weights of `cfg` ignored except for the sample count.
pub fn elbo_and_gradients(
    model: &Model,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
    baseline: &mut Baseline,
) -> Result<(ObjectiveReport, Gradients)> {
    let cfg = TrainConfig {
        lambda_x: 1.0,
        lambda_a: 0.0,
        samples: k,
        ..TrainConfig::default()
    };
    let mut g = Graph::new(&model.params, false, 0);
    let (obj, mut report) = build_objective(&mut g, model, inst, &cfg, rng, baseline)?;
    g.backward(obj)?;
    let grads = g.into_gradients();
    report.grad_norm = grads.norm();
    Ok((report, grads))
}

/// Validation line written after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_la: Option<f64>,
    pub dev_elbo: Option<f64>,
    pub best: bool,
    pub learning_rate: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "epoch={}\ttrain_loss={:.6}\tla_dev={}\telbo_dev={}\tbest={}\tlr={}",
            self.epoch,
            self.train_loss,
            opt(self.dev_la),
            opt(self.dev_elbo),
            if self.best { "yes" } else { "no" },
            self.learning_rate
        )
    }
}

/// Mean dev `La` (over instances with gold trees) and mean dev ELBO with
/// `eval_samples` samples per sentence. Sentence `i` always uses the
/// stream `(seed, "dev", i)`.
pub fn evaluate(
    model: &Model,
    dev: &[Instance],
    cfg: &TrainConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    if dev.is_empty() {
        return Ok((None, None));
    }
    let mut la_sum = 0.0;
    let mut la_n = 0usize;
    let mut elbo_sum = 0.0;
    for (i, inst) in dev.iter().enumerate() {
        if inst.gold_disc.is_some() && inst.gold_gen.is_some() {
            let mut g = Graph::new(&model.params, false, 0);
            let la = supervised_objective(&mut g, model, inst)?;
            la_sum += g.scalar(la);
            la_n += 1;
        }
        let mut r = rng::stream(cfg.seed, "dev", i as u64);
        elbo_sum += lm_elbo(model, inst, cfg.eval_samples, &mut r)?.log_px;
    }
    let la = (la_n > 0).then(|| la_sum / la_n as f64);
    Ok((la, Some(elbo_sum / dev.len() as f64)))
}

/// Fraction of instances whose greedy parse equals the gold derivation.
pub fn exact_match(model: &Model, instances: &[Instance]) -> Result<f64> {
    let mut hits = 0;
    for inst in instances {
        let parse = parse_greedy(model, inst)?;
        if inst.gold_disc.as_deref() == Some(parse.actions.as_slice()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len().max(1) as f64)
}

fn norms_summary(store: &ParamStore) -> String {
    store
        .norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Whether training should continue after an epoch callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// Parameters of the best validated epoch.
    pub best: ParamStore,
}

/// Optimizer state carried across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub baseline: Baseline,
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            adam: Adam::new(cfg.learning_rate, Some(cfg.clip)),
            baseline: Baseline::new(cfg.baseline_decay),
            step: 0,
            cfg,
        })
    }

    /// One pass over `corpus` in a seeded shuffled order. Returns the mean
    /// training loss.
    pub fn epoch(&mut self, model: &mut Model, corpus: &[Instance], epoch: usize) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::contract("empty training corpus"));
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng::stream(self.cfg.seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let mut grads = Gradients::new();
            for &i in batch {
                let mut sampler = rng::stream(self.cfg.seed, "sampling", self.step as u64);
                let dropout_seed = rng::stream_seed(self.cfg.seed, "dropout", self.step as u64);
                let mut g = Graph::new(&model.params, true, dropout_seed);
                let (obj, report) = build_objective(
                    &mut g,
                    model,
                    &corpus[i],
                    &self.cfg,
                    &mut sampler,
                    &mut self.baseline,
                )?;
                let loss = g.scale(obj, -1.0);
                g.backward(loss)?;
                let gi = g.into_gradients();
                if !report.loss.is_finite() || !gi.is_finite() {
                    return Err(Error::NonFinite {
                        step: self.step,
                        instance: i,
                        norms: norms_summary(&model.params),
                    });
                }
                total += report.loss;
                grads.merge(&gi);
                self.step += 1;
            }
            grads.scale(1.0 / batch.len() as f64);
            self.adam.step(&mut model.params, &grads);
        }
        Ok(total / corpus.len() as f64)
    }

    /// Dev objective used for model selection (higher is better).
    fn selection_score(&self, rec: &EpochRecord) -> f64 {
        match (rec.dev_la, rec.dev_elbo) {
            (None, None) => -rec.train_loss,
            (None, Some(elbo)) => elbo,
            (Some(la), elbo) => self.cfg.lambda_a * la + self.cfg.lambda_x * elbo.unwrap_or(0.0),
        }
    }

    /// Runs `cfg.epochs` epochs, validating after each. `on_epoch` sees the
    /// record and the current model and may stop training early.
    pub fn train(
        &mut self,
        model: &mut Model,
        corpus: &[Instance],
        dev: &[Instance],
        mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Control,
    ) -> Result<TrainOutcome> {
        if self.cfg.lambda_a > 0.0 {
            if let Some(i) = corpus
                .iter()
                .position(|x| x.gold_disc.is_none() || x.gold_gen.is_none())
            {
                return Err(Error::contract(format!(
                    "training instance {i} has no gold tree but lambda_a > 0"
                )));
            }
        }
        let mut best_score = f64::NEG_INFINITY;
        let mut best = model.params.clone();
        let mut records = Vec::new();
        for epoch in 1..=self.cfg.epochs {
            let train_loss = self.epoch(model, corpus, epoch)?;
            let (dev_la, dev_elbo) = evaluate(model, dev, &self.cfg)?;
            let mut rec = EpochRecord {
                epoch,
                train_loss,
                dev_la,
                dev_elbo,
                best: false,
                learning_rate: self.adam.lr,
            };
            let score = self.selection_score(&rec);
            if score > best_score {
                best_score = score;
                best = model.params.clone();
                rec.best = true;
            } else if self.cfg.lr_decay < 1.0 {
                self.adam.lr *= self.cfg.lr_decay;
            }
            let control = on_epoch(&rec, model);
            records.push(rec);
            if control == Control::Stop {
                break;
            }
        }
        Ok(TrainOutcome { records, best })
    }
}
