//! Parameter registry for the joint model: the discriminative encoder
//! q(a|x), the generative decoder p(x, a), and their checkpoint form.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, RngCore};

use crate::config::ModelDims;
use crate::decoder::Decoder;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Checkpoint, Graph, Init, ParamId, ParamStore, Var};
use crate::transitions::{Action, ActionSpace, ActionType};
use crate::treebank::{PretrainedTable, Vocab};

/// How a model chooses the next action while unrolling a derivation.
pub enum Policy<'a> {
    /// Follow the given actions, scoring each one.
    Forced(&'a [Action]),
    /// Draw each choice from the model distribution.
    Sample(&'a mut dyn RngCore),
    /// Take the most probable legal choice; ties go to the lowest index.
    Greedy,
}

/// Fails when the distribution has a NaN entry or no finite entry.
pub(crate) fn check_distribution(logp: &[f64], step: usize) -> Result<()> {
    if logp.iter().any(|v| v.is_nan()) || logp.iter().all(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDistribution { step });
    }
    Ok(())
}

/// Index drawn from a (masked) log-probability vector. Entries at `-inf`
/// are never chosen.
pub(crate) fn sample_index(logp: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = None;
    for (i, &lp) in logp.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        cum += lp.exp();
        last = Some(i);
        if u < cum {
            return i;
        }
    }
    last.expect("distribution has at least one finite entry")
}

pub(crate) fn argmax(logp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &lp) in logp.iter().enumerate() {
        if lp > logp[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn action_of(space: ActionSpace, index: usize, terminal: Action) -> Action {
    match space.kind(index) {
        ActionType::Nt(x) => Action::Nt(x),
        ActionType::Terminal => terminal,
        ActionType::Reduce => Action::Reduce,
    }
}

/// Reduce composition: `tanh(W [mean(children); nt] + b)`.
#[derive(Debug, Clone)]
pub(crate) struct Composer {
    w: ParamId,
    b: ParamId,
}

impl Composer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        item_dim: usize,
        nt_dim: usize,
    ) -> Self {
        Composer {
            w: store.add_init(
                &format!("{name}.w"),
                item_dim,
                item_dim + nt_dim,
                Init::Xavier,
                rng,
            ),
            b: store.add_init(&format!("{name}.b"), item_dim, 1, Init::Zeros, rng),
        }
    }

    pub fn compose(&self, g: &mut Graph<'_>, children: &[Var], nt: Var) -> Var {
        let m = g.mean(children);
        let x = g.concat(&[m, nt]);
        let a = g.affine(self.w, Some(self.b), x);
        g.tanh(a)
    }
}

pub(crate) const EMBED_INIT: Init = Init::Uniform(0.1);

/// Both networks and their shared parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    /// Fresh model; weights are drawn from the `init` stream of `seed`.
    /// Pretrained vectors are frozen; without a table they are zero.
    pub fn new(
        dims: ModelDims,
        vocab: Vocab,
        pretrained: Option<&PretrainedTable>,
        seed: u64,
    ) -> Result<Self> {
        dims.validate()?;
        if vocab.nonterminals.is_empty() {
            return Err(Error::Config("vocabulary has no nonterminals".into()));
        }
        let table = match pretrained {
            Some(t) if t.dim != dims.pretrained_dim => {
                return Err(Error::Config(format!(
                    "pretrained vectors have {} dims, config says {}",
                    t.dim, dims.pretrained_dim
                )))
            }
            Some(t) => t.matrix(&vocab),
            None => vec![0.0; vocab.words.len() * dims.pretrained_dim],
        };
        let mut rng = rng::stream(seed, "init", 0);
        let mut params = ParamStore::new();
        let pre = params.add(
            "pretrained",
            vocab.words.len(),
            dims.pretrained_dim,
            table,
            false,
        );
        let encoder = Encoder::new(&mut params, &mut rng, &dims, &vocab, pre);
        let decoder = Decoder::new(&mut params, &mut rng, &dims, &vocab, pre);
        Ok(Model {
            dims,
            vocab,
            params,
            encoder,
            decoder,
        })
    }

    pub fn space(&self) -> ActionSpace {
        ActionSpace::new(self.vocab.nonterminals.len())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(self.dims.table(), &self.params, self.vocab.to_text())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let dims = ModelDims::from_table(&ck.dims)?;
        let vocab = Vocab::from_text(&ck.vocab)?;
        let mut model = Model::new(dims, vocab, None, 0)?;
        ck.restore_into(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.checkpoint().write_to(&mut w)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::from_checkpoint(&Checkpoint::read_from(&mut r)?)
    }

    /// Overrides the dropout rates used in training mode.
    pub fn set_dropout(&mut self, enc: f64, dec: f64) {
        self.dims.enc_dropout = enc;
        self.dims.dec_dropout = dec;
        self.encoder.set_dropout(enc);
        self.decoder.set_dropout(dec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampling_respects_mask_and_distribution() {
        let lp = [f64::NEG_INFINITY, (0.25f64).ln(), (0.75f64).ln()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..4000 {
            counts[sample_index(&lp, &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        let frac = counts[1] as f64 / 4000.0;
        assert!((frac - 0.25).abs() < 0.03, "{frac}");
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[f64::NEG_INFINITY, -1.0, -1.0]), 1);
    }
}
