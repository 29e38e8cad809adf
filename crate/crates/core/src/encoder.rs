//! Discriminative parser q(a|x): a stack-LSTM over the partial tree, a
//! BiLSTM over the input, attention over the unread words, and the parent
//! nonterminal, combined into one action softmax per step.

use rand::Rng;

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::model::{
    action_of, argmax, check_distribution, sample_index, Composer, Policy, EMBED_INIT,
};
use crate::tensor::{
    Attention, BiLstm, Graph, Init, Lstm, ParamId, ParamStore, StackLstm, StackLstmState, Var,
};
use crate::transitions::{Action, ActionSpace, Constraints, ParserState};
use crate::treebank::Vocab;

#[derive(Debug, Clone)]
pub struct Encoder {
    space: ActionSpace,
    limits: Constraints,
    word_emb: ParamId,
    pos_emb: ParamId,
    pretrained: ParamId,
    bilstm: BiLstm,
    stack: StackLstm,
    open_emb: ParamId,
    /// One row per nonterminal plus a final "no parent" row.
    nt_emb: ParamId,
    compose: Composer,
    null_buffer: ParamId,
    attention: Attention,
    w3: ParamId,
    b3: ParamId,
    w4: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Per-sentence encoder state: the transition state plus the graph values
/// that summarize it.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub parser: ParserState,
    stack: StackLstmState,
    /// Stack-LSTM input for each parser stack item.
    items: Vec<Var>,
    word_inputs: Vec<Var>,
    buffer: Vec<Var>,
    keys: Vec<Var>,
    null: Var,
    features: Option<Var>,
}

impl EncoderState {
    /// The state vector `v_t` for the next decision, if any.
    pub fn features(&self) -> Option<Var> {
        self.features
    }
}

/// A completed derivation with its log-probability under the encoder.
#[derive(Debug, Clone)]
pub struct EncoderRun {
    pub actions: Vec<Action>,
    /// `log q(a|x)`, a scalar node.
    pub log_prob: Var,
}

impl Encoder {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        dims: &ModelDims,
        vocab: &Vocab,
        pretrained: ParamId,
    ) -> Self {
        let num_nt = vocab.nonterminals.len();
        let space = ActionSpace::new(num_nt);
        let item = dims.enc_word_dim();
        let h = dims.enc_lstm_dim;
        let buf = 2 * h;
        let bilstm = BiLstm::new(
            store,
            rng,
            "enc.bilstm",
            item,
            h,
            dims.lstm_layers,
            dims.enc_dropout,
        );
        let stack = StackLstm::new(Lstm::new(
            store,
            rng,
            "enc.stack",
            item,
            h,
            dims.lstm_layers,
            dims.enc_dropout,
        ));
        Encoder {
            space,
            limits: dims.constraints(),
            word_emb: store.add_init(
                "enc.word",
                vocab.words.len(),
                dims.word_dim,
                EMBED_INIT,
                rng,
            ),
            pos_emb: store.add_init(
                "enc.pos",
                vocab.pos_tags.len(),
                dims.pos_dim,
                EMBED_INIT,
                rng,
            ),
            pretrained,
            bilstm,
            stack,
            open_emb: store.add_init("enc.open", num_nt, item, EMBED_INIT, rng),
            nt_emb: store.add_init("enc.nt", num_nt + 1, dims.nt_dim, EMBED_INIT, rng),
            compose: Composer::new(store, rng, "enc.compose", item, dims.nt_dim),
            null_buffer: store.add_init("enc.null", buf, 1, EMBED_INIT, rng),
            attention: Attention::new(store, rng, "enc.attn", h, buf, h),
            w3: store.add_init("enc.w3", h, h + 2 * buf + dims.nt_dim, Init::Xavier, rng),
            b3: store.add_init("enc.b3", h, 1, Init::Zeros, rng),
            w4: store.add_init("enc.w4", h, h, Init::Xavier, rng),
            out_w: store.add_init("enc.out.w", space.size(), h, Init::Xavier, rng),
            out_b: store.add_init("enc.out.b", space.size(), 1, Init::Zeros, rng),
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

    pub(crate) fn set_dropout(&mut self, rate: f64) {
        self.bilstm.set_dropout(rate);
        self.stack.set_dropout(rate);
    }

    /// Representation pushed for a closed constituent labeled `nt`.
    pub fn compose_subtree(&self, g: &mut Graph<'_>, children: &[Var], nt: usize) -> Var {
        let e = g.lookup(self.nt_emb, nt);
        self.compose.compose(g, children, e)
    }

    /// Encodes the sentence and returns the initial state.
    pub fn start(&self, g: &mut Graph<'_>, words: &[usize], pos: &[usize]) -> Result<EncoderState> {
        if words.is_empty() {
            return Err(Error::contract("cannot parse an empty sentence"));
        }
        if words.len() != pos.len() {
            return Err(Error::contract(format!(
                "{} words but {} POS tags",
                words.len(),
                pos.len()
            )));
        }
        let word_inputs: Vec<Var> = words
            .iter()
            .zip(pos)
            .map(|(&w, &p)| {
                let a = g.lookup(self.word_emb, w);
                let b = g.lookup(self.pretrained, w);
                let c = g.lookup(self.pos_emb, p);
                g.concat(&[a, b, c])
            })
            .collect();
        let buffer = self.bilstm.run(g, &word_inputs);
        let keys = self.attention.project_keys(g, &buffer);
        let null = g.param(self.null_buffer);
        let stack = self.stack.initial(g);
        let mut st = EncoderState {
            parser: ParserState::discriminative(words, self.limits),
            stack,
            items: Vec::new(),
            word_inputs,
            buffer,
            keys,
            null,
            features: None,
        };
        st.features = Some(self.features(g, &st)?);
        Ok(st)
    }

    fn features(&self, g: &mut Graph<'_>, st: &EncoderState) -> Result<Var> {
        let e = st.stack.summary();
        let n = st.buffer.len();
        let next = n - st.parser.buffer().len();
        let (first, attended) = if next < n {
            let (ctx, _) = self
                .attention
                .attend(g, e, &st.buffer[next..], &st.keys[next..])?;
            (st.buffer[next], ctx)
        } else {
            (st.null, st.null)
        };
        let parent = st.parser.parent_nt().unwrap_or(self.space.num_nt);
        let nt = g.lookup(self.nt_emb, parent);
        let x = g.concat(&[e, first, attended, nt]);
        let a = g.affine(self.w3, Some(self.b3), x);
        let hid = g.tanh(a);
        Ok(g.matvec(self.w4, hid))
    }

    /// Log-probabilities over the dense action space, with illegal actions
    /// at `-inf`.
    pub fn action_logprobs(&self, g: &mut Graph<'_>, st: &EncoderState) -> Result<Var> {
        let mask = st.parser.legal_mask(self.space)?;
        let v = st.features.ok_or(Error::AlreadyFinal)?;
        let logits = g.affine(self.out_w, Some(self.out_b), v);
        let masked = g.mask(logits, &mask);
        Ok(g.log_softmax(masked))
    }

    /// Applies `action` and updates the stack summary and features.
    pub fn advance(&self, g: &mut Graph<'_>, st: &mut EncoderState, action: Action) -> Result<()> {
        let children = st.parser.open_children();
        let label = st.parser.parent_nt();
        st.parser.apply_mut(action)?;
        match action {
            Action::Nt(x) => {
                let e = g.lookup(self.open_emb, x);
                self.stack.push(g, &mut st.stack, e);
                st.items.push(e);
            }
            Action::Shift => {
                let idx = st.buffer.len() - st.parser.buffer().len() - 1;
                let e = st.word_inputs[idx];
                self.stack.push(g, &mut st.stack, e);
                st.items.push(e);
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
            Action::Gen(_) => unreachable!("rejected by the discriminative transition system"),
        }
        st.features = if st.parser.is_terminal() {
            None
        } else {
            Some(self.features(g, st)?)
        };
        Ok(())
    }

    /// Unrolls one derivation of the sentence under `policy`.
    pub fn run(
        &self,
        g: &mut Graph<'_>,
        words: &[usize],
        pos: &[usize],
        policy: Policy<'_>,
    ) -> Result<EncoderRun> {
        let st = self.start(g, words, pos)?;
        self.unroll(g, st, policy)
    }

    /// Continues from `st` until the derivation is complete. Step scores
    /// only cover the actions taken here.
    pub fn unroll(
        &self,
        g: &mut Graph<'_>,
        mut st: EncoderState,
        mut policy: Policy<'_>,
    ) -> Result<EncoderRun> {
        let mut actions = Vec::new();
        let mut picks = Vec::new();
        while !st.parser.is_terminal() {
            let lp = self.action_logprobs(g, &st)?;
            let t = actions.len();
            let action = match &mut policy {
                Policy::Forced(gold) => *gold.get(t).ok_or_else(|| Error::MalformedDerivation {
                    step: t,
                    reason: "derivation ends before the tree is complete".into(),
                })?,
                Policy::Sample(rng) => {
                    check_distribution(g.value(lp), t)?;
                    action_of(self.space, sample_index(g.value(lp), *rng), Action::Shift)
                }
                Policy::Greedy => {
                    check_distribution(g.value(lp), t)?;
                    action_of(self.space, argmax(g.value(lp)), Action::Shift)
                }
            };
            if !st.parser.is_legal(action.kind()) {
                return Err(Error::IllegalTransition {
                    step: t,
                    action: format!("{action:?}"),
                    state: st.parser.to_string(),
                });
            }
            picks.push(g.pick(lp, self.space.index(action.kind()))?);
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
        if picks.is_empty() {
            return Err(Error::AlreadyFinal);
        }
        let log_prob = g.add_n(&picks);
        Ok(EncoderRun { actions, log_prob })
    }
}
