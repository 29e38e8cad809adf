//! Generative model p(x, a): a stack-LSTM over the partial tree and an LSTM
//! over the words generated so far feed one softmax over action types and
//! one over the vocabulary.

use rand::Rng;

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::model::{
    action_of, argmax, check_distribution, sample_index, Composer, Policy, EMBED_INIT,
};
use crate::tensor::{
    Graph, Init, Lstm, LstmState, ParamId, ParamStore, StackLstm, StackLstmState, Var,
};
use crate::transitions::{Action, ActionSpace, ActionType, Constraints, ParserState};
use crate::treebank::Vocab;

#[derive(Debug, Clone)]
pub struct Decoder {
    space: ActionSpace,
    limits: Constraints,
    num_words: usize,
    word_emb: ParamId,
    pretrained: ParamId,
    stack: StackLstm,
    output: Lstm,
    open_emb: ParamId,
    nt_emb: ParamId,
    compose: Composer,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    act_w: ParamId,
    act_b: ParamId,
    word_w: ParamId,
    word_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub parser: ParserState,
    stack: StackLstmState,
    items: Vec<Var>,
    output: LstmState,
    features: Option<Var>,
}

impl DecoderState {
    /// The state vector `u_t` for the next decision, if any.
    pub fn features(&self) -> Option<Var> {
        self.features
    }

    /// Words generated so far.
    pub fn words(&self) -> Vec<usize> {
        self.parser.buffer().iter().copied().collect()
    }
}

/// A completed generative derivation and its log-probabilities.
#[derive(Debug, Clone)]
pub struct DecoderRun {
    /// Generative actions; every terminal is `Gen(word)`.
    pub actions: Vec<Action>,
    pub words: Vec<usize>,
    /// Sum of the action-type terms, `log p(a)`.
    pub log_actions: Var,
    /// Sum of the word terms, `log p(x|a)`.
    pub log_words: Var,
    /// `log p(x, a)`.
    pub log_joint: Var,
}

/// Rewrites discriminative actions as generative ones by attaching the
/// words in order.
pub fn generative_actions(actions: &[Action], words: &[usize]) -> Result<Vec<Action>> {
    let mut next = words.iter();
    let out: Vec<Action> = actions
        .iter()
        .enumerate()
        .map(|(step, &a)| match a {
            Action::Shift => {
                next.next()
                    .map(|&w| Action::Gen(w))
                    .ok_or_else(|| Error::MalformedDerivation {
                        step,
                        reason: "more shifts than words".into(),
                    })
            }
            other => Ok(other),
        })
        .collect::<Result<_>>()?;
    if next.next().is_some() {
        return Err(Error::MalformedDerivation {
            step: actions.len(),
            reason: "fewer shifts than words".into(),
        });
    }
    Ok(out)
}

/// The inverse of [`generative_actions`]: the word sequence and the
/// discriminative actions.
pub fn discriminative_actions(actions: &[Action]) -> (Vec<usize>, Vec<Action>) {
    let mut words = Vec::new();
    let disc = actions
        .iter()
        .map(|&a| match a {
            Action::Gen(w) => {
                words.push(w);
                Action::Shift
            }
            other => other,
        })
        .collect();
    (words, disc)
}

impl Decoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        dims: &ModelDims,
        vocab: &Vocab,
        pretrained: ParamId,
    ) -> Self {
        let num_nt = vocab.nonterminals.len();
        let space = ActionSpace::new(num_nt);
        let item = dims.dec_word_dim();
        let h = dims.dec_lstm_dim;
        let num_words = vocab.words.len();
        Decoder {
            space,
            limits: dims.constraints(),
            num_words,
            word_emb: store.add_init("dec.word", num_words, dims.word_dim, EMBED_INIT, rng),
            pretrained,
            stack: StackLstm::new(Lstm::new(
                store,
                rng,
                "dec.stack",
                item,
                h,
                dims.lstm_layers,
                dims.dec_dropout,
            )),
            output: Lstm::new(
                store,
                rng,
                "dec.output",
                item,
                h,
                dims.lstm_layers,
                dims.dec_dropout,
            ),
            open_emb: store.add_init("dec.open", num_nt, item, EMBED_INIT, rng),
            nt_emb: store.add_init("dec.nt", num_nt + 1, dims.nt_dim, EMBED_INIT, rng),
            compose: Composer::new(store, rng, "dec.compose", item, dims.nt_dim),
            w1: store.add_init("dec.w1", h, 2 * h + dims.nt_dim, Init::Xavier, rng),
            b1: store.add_init("dec.b1", h, 1, Init::Zeros, rng),
            w2: store.add_init("dec.w2", h, h, Init::Xavier, rng),
            act_w: store.add_init("dec.act.w", space.size(), h, Init::Xavier, rng),
            act_b: store.add_init("dec.act.b", space.size(), 1, Init::Zeros, rng),
            word_w: store.add_init("dec.word_out.w", num_words, h, Init::Xavier, rng),
            word_b: store.add_init("dec.word_out.b", num_words, 1, Init::Zeros, rng),
        }
    }

    pub fn space(&self) -> ActionSpace {
        self.space
    }

    pub fn limits(&self) -> Constraints {
        self.limits
    }

    pub fn set_limits(&mut self, limits: Constraints) {
        self.limits = limits;
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    /// Parameter ids of the word softmax layer `(weights, bias)`.
    pub fn word_output(&self) -> (ParamId, ParamId) {
        (self.word_w, self.word_b)
    }

    /// Parameter ids of the action softmax layer `(weights, bias)`.
    pub fn action_output(&self) -> (ParamId, ParamId) {
        (self.act_w, self.act_b)
    }

    pub(crate) fn set_dropout(&mut self, rate: f64) {
        self.stack.set_dropout(rate);
        self.output.set_dropout(rate);
    }

    /// Representation pushed for a closed constituent labeled `nt`.
    pub fn compose_subtree(&self, g: &mut Graph<'_>, children: &[Var], nt: usize) -> Var {
        let e = g.lookup(self.nt_emb, nt);
        self.compose.compose(g, children, e)
    }

    pub fn start(&self, g: &mut Graph<'_>) -> Result<DecoderState> {
        let mut st = DecoderState {
            parser: ParserState::generative(self.limits),
            stack: self.stack.initial(g),
            items: Vec::new(),
            output: self.output.initial(g),
            features: None,
        };
        st.features = Some(self.features(g, &st));
        Ok(st)
    }

    fn features(&self, g: &mut Graph<'_>, st: &DecoderState) -> Var {
        let d = st.stack.summary();
        let o = st.output.output();
        let parent = st.parser.parent_nt().unwrap_or(self.space.num_nt);
        let nt = g.lookup(self.nt_emb, parent);
        let x = g.concat(&[d, o, nt]);
        let a = g.affine(self.w1, Some(self.b1), x);
        let hid = g.tanh(a);
        g.matvec(self.w2, hid)
    }

    pub fn action_logprobs(&self, g: &mut Graph<'_>, st: &DecoderState) -> Result<Var> {
        let mask = st.parser.legal_mask(self.space)?;
        let u = st.features.ok_or(Error::AlreadyFinal)?;
        let logits = g.affine(self.act_w, Some(self.act_b), u);
        let masked = g.mask(logits, &mask);
        Ok(g.log_softmax(masked))
    }

    /// Log-probabilities over the vocabulary for the next generated word.
    pub fn word_logprobs(&self, g: &mut Graph<'_>, st: &DecoderState) -> Result<Var> {
        if st.parser.is_terminal() || !st.parser.is_legal(ActionType::Terminal) {
            return Err(Error::contract(
                "word distribution queried where GEN is not allowed",
            ));
        }
        let u = st.features.ok_or(Error::AlreadyFinal)?;
        let logits = g.affine(self.word_w, Some(self.word_b), u);
        Ok(g.log_softmax(logits))
    }

    pub fn advance(&self, g: &mut Graph<'_>, st: &mut DecoderState, action: Action) -> Result<()> {
        if let Action::Gen(w) = action {
            if w >= self.num_words {
                return Err(Error::contract(format!(
                    "word id {w} outside the vocabulary"
                )));
            }
        }
        let children = st.parser.open_children();
        let label = st.parser.parent_nt();
        st.parser.apply_mut(action)?;
        match action {
            Action::Nt(x) => {
                let e = g.lookup(self.open_emb, x);
                self.stack.push(g, &mut st.stack, e);
                st.items.push(e);
            }
            Action::Gen(w) => {
                let a = g.lookup(self.word_emb, w);
                let b = g.lookup(self.pretrained, w);
                let e = g.concat(&[a, b]);
                self.stack.push(g, &mut st.stack, e);
                st.items.push(e);
                st.output = self.output.step(g, &st.output, e);
            }
            Action::Reduce => {
                let (c, x) = children
                    .zip(label)
                    .expect("legal reduce has an open constituent");
                let kids = st.items.split_off(st.items.len() - c);
                st.items.pop();
                for _ in 0..=c {
                    self.stack.pop(&mut st.stack)?;
                }
                let composed = self.compose_subtree(g, &kids, x);
                self.stack.push(g, &mut st.stack, composed);
                st.items.push(composed);
            }
            Action::Shift => unreachable!("rejected by the generative transition system"),
        }
        st.features = if st.parser.is_terminal() {
            None
        } else {
            Some(self.features(g, st))
        };
        Ok(())
    }

    /// Unrolls one derivation. Forced derivations must use `Gen` terminals
    /// (see [`generative_actions`]).
    pub fn run(&self, g: &mut Graph<'_>, policy: Policy<'_>) -> Result<DecoderRun> {
        self.run_limited(g, policy, None)
    }

    /// Samples `(x, a)`; fails with [`Error::Truncated`] if more than
    /// `max_len` words would be generated.
    pub fn sample(
        &self,
        g: &mut Graph<'_>,
        rng: &mut dyn rand::RngCore,
        max_len: usize,
    ) -> Result<DecoderRun> {
        self.run_limited(g, Policy::Sample(rng), Some(max_len))
    }

    fn run_limited(
        &self,
        g: &mut Graph<'_>,
        mut policy: Policy<'_>,
        max_len: Option<usize>,
    ) -> Result<DecoderRun> {
        let mut st = self.start(g)?;
        let mut actions = Vec::new();
        let mut action_picks = Vec::new();
        let mut word_picks = Vec::new();
        while !st.parser.is_terminal() {
            let lp = self.action_logprobs(g, &st)?;
            let t = actions.len();
            let chosen = match &mut policy {
                Policy::Forced(gold) => *gold.get(t).ok_or_else(|| Error::MalformedDerivation {
                    step: t,
                    reason: "derivation ends before the tree is complete".into(),
                })?,
                Policy::Sample(rng) => {
                    check_distribution(g.value(lp), t)?;
                    action_of(self.space, sample_index(g.value(lp), *rng), Action::Gen(0))
                }
                Policy::Greedy => {
                    check_distribution(g.value(lp), t)?;
                    action_of(self.space, argmax(g.value(lp)), Action::Gen(0))
                }
            };
            if !st.parser.is_legal(chosen.kind()) || chosen == Action::Shift {
                return Err(Error::IllegalTransition {
                    step: t,
                    action: format!("{chosen:?}"),
                    state: st.parser.to_string(),
                });
            }
            action_picks.push(g.pick(lp, self.space.index(chosen.kind()))?);
            let action = if let Action::Gen(w) = chosen {
                let wl = self.word_logprobs(g, &st)?;
                let w = match &mut policy {
                    Policy::Forced(_) => w,
                    Policy::Sample(rng) => {
                        check_distribution(g.value(wl), t)?;
                        sample_index(g.value(wl), *rng)
                    }
                    Policy::Greedy => {
                        check_distribution(g.value(wl), t)?;
                        argmax(g.value(wl))
                    }
                };
                if w >= self.num_words {
                    return Err(Error::contract(format!(
                        "word id {w} outside the vocabulary"
                    )));
                }
                word_picks.push(g.pick(wl, w)?);
                if max_len.is_some_and(|m| st.parser.generated() + 1 > m) {
                    return Err(Error::Truncated {
                        max_len: max_len.unwrap_or_default(),
                    });
                }
                Action::Gen(w)
            } else {
                chosen
            };
            self.advance(g, &mut st, action)?;
            actions.push(action);
        }
        if let Policy::Forced(gold) = policy {
            if gold.len() > actions.len() {
                return Err(Error::MalformedDerivation {
                    step: actions.len(),
                    reason: "actions remain after the tree is complete".into(),
                });
            }
        }
        let log_actions = g.add_n(&action_picks);
        let log_words = g.add_n(&word_picks);
        let log_joint = g.add(log_actions, log_words);
        Ok(DecoderRun {
            words: st.words(),
            actions,
            log_actions,
            log_words,
            log_joint,
        })
    }
}
