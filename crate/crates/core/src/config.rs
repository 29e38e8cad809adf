//! Flat `key = value` configuration covering model dimensions and training.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::transitions::Constraints;

/// Architecture sizes. Defaults follow the published hyperparameter table
/// where it gives a value.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub word_dim: usize,
    pub pretrained_dim: usize,
    pub pos_dim: usize,
    /// Nonterminal embedding size (parent feature and composition input).
    pub nt_dim: usize,
    pub enc_lstm_dim: usize,
    pub dec_lstm_dim: usize,
    pub lstm_layers: usize,
    pub enc_dropout: f64,
    pub dec_dropout: f64,
    pub max_open_nt: usize,
    pub max_gen_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            word_dim: 40,
            pretrained_dim: 50,
            pos_dim: 20,
            nt_dim: 40,
            enc_lstm_dim: 128,
            dec_lstm_dim: 256,
            lstm_layers: 2,
            enc_dropout: 0.2,
            dec_dropout: 0.3,
            max_open_nt: 100,
            max_gen_len: 120,
        }
    }
}

impl ModelDims {
    pub fn constraints(&self) -> Constraints {
        Constraints {
            max_open_nt: self.max_open_nt,
            max_gen_len: self.max_gen_len,
        }
    }

    /// Encoder word input: learned, pretrained and POS vectors.
    pub fn enc_word_dim(&self) -> usize {
        self.word_dim + self.pretrained_dim + self.pos_dim
    }

    /// Decoder word input: learned and pretrained vectors only.
    pub fn dec_word_dim(&self) -> usize {
        self.word_dim + self.pretrained_dim
    }

    /// Integer table stored in checkpoint headers. Dropout rates are kept in
    /// parts per million.
    pub fn table(&self) -> Vec<(String, u64)> {
        let ppm = |r: f64| (r * 1e6).round() as u64;
        vec![
            ("word_dim".into(), self.word_dim as u64),
            ("pretrained_dim".into(), self.pretrained_dim as u64),
            ("pos_dim".into(), self.pos_dim as u64),
            ("nt_dim".into(), self.nt_dim as u64),
            ("enc_lstm_dim".into(), self.enc_lstm_dim as u64),
            ("dec_lstm_dim".into(), self.dec_lstm_dim as u64),
            ("lstm_layers".into(), self.lstm_layers as u64),
            ("enc_dropout_ppm".into(), ppm(self.enc_dropout)),
            ("dec_dropout_ppm".into(), ppm(self.dec_dropout)),
            ("max_open_nt".into(), self.max_open_nt as u64),
            ("max_gen_len".into(), self.max_gen_len as u64),
        ]
    }

    pub fn from_table(table: &[(String, u64)]) -> Result<Self> {
        let get = |k: &str| {
            table
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Checkpoint(format!("dimension table lacks `{k}`")))
        };
        Ok(ModelDims {
            word_dim: get("word_dim")? as usize,
            pretrained_dim: get("pretrained_dim")? as usize,
            pos_dim: get("pos_dim")? as usize,
            nt_dim: get("nt_dim")? as usize,
            enc_lstm_dim: get("enc_lstm_dim")? as usize,
            dec_lstm_dim: get("dec_lstm_dim")? as usize,
            lstm_layers: get("lstm_layers")? as usize,
            enc_dropout: get("enc_dropout_ppm")? as f64 / 1e6,
            dec_dropout: get("dec_dropout_ppm")? as f64 / 1e6,
            max_open_nt: get("max_open_nt")? as usize,
            max_gen_len: get("max_gen_len")? as usize,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("pretrained_dim", self.pretrained_dim),
            ("pos_dim", self.pos_dim),
            ("nt_dim", self.nt_dim),
            ("enc_lstm_dim", self.enc_lstm_dim),
            ("dec_lstm_dim", self.dec_lstm_dim),
            ("lstm_layers", self.lstm_layers),
            ("max_open_nt", self.max_open_nt),
            ("max_gen_len", self.max_gen_len),
        ];
        for (k, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, r) in [
            ("enc_dropout", self.enc_dropout),
            ("dec_dropout", self.dec_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{k} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dims: ModelDims,
    /// Weight of the unsupervised ELBO term.
    pub lambda_x: f64,
    /// Weight of the supervised term `log q(a|x) + log p(a)`.
    pub lambda_a: f64,
    /// Posterior samples per sentence per update.
    pub samples: usize,
    /// Samples per sentence for dev-set ELBO.
    pub eval_samples: usize,
    pub baseline_decay: f64,
    pub learning_rate: f64,
    pub clip: f64,
    pub batch_size: usize,
    /// Multiplies the learning rate when the dev objective fails to improve;
    /// 1 disables the schedule.
    pub lr_decay: f64,
    pub seed: u64,
    pub epochs: usize,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: ModelDims::default(),
            lambda_x: 1.0,
            lambda_a: 1.0,
            samples: 1,
            eval_samples: 10,
            baseline_decay: 0.95,
            learning_rate: 1e-3,
            clip: 5.0,
            batch_size: 1,
            lr_decay: 1.0,
            seed: 1,
            epochs: 10,
            min_count: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.lambda_x < 0.0 || self.lambda_a < 0.0 {
            return Err(Error::Config(
                "objective weights must be non-negative".into(),
            ));
        }
        if self.lambda_x == 0.0 && self.lambda_a == 0.0 {
            return Err(Error::Config(
                "lambda_x and lambda_a cannot both be 0".into(),
            ));
        }
        if self.samples == 0
            || self.eval_samples == 0
            || self.batch_size == 0
            || self.min_count == 0
        {
            return Err(Error::Config(
                "samples, eval_samples, batch_size and min_count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline_decay must be in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0
            && self.clip > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0)
        {
            return Err(Error::Config(
                "learning_rate and clip must be positive, lr_decay in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        let d = &mut self.dims;
        match key {
            "word_dim" => d.word_dim = p(key, value)?,
            "pretrained_dim" => d.pretrained_dim = p(key, value)?,
            "pos_dim" => d.pos_dim = p(key, value)?,
            "nt_dim" => d.nt_dim = p(key, value)?,
            "enc_lstm_dim" => d.enc_lstm_dim = p(key, value)?,
            "dec_lstm_dim" => d.dec_lstm_dim = p(key, value)?,
            "lstm_layers" => d.lstm_layers = p(key, value)?,
            "enc_dropout" => d.enc_dropout = p(key, value)?,
            "dec_dropout" => d.dec_dropout = p(key, value)?,
            "max_open_nt" => d.max_open_nt = p(key, value)?,
            "max_gen_len" => d.max_gen_len = p(key, value)?,
            "lambda_x" => self.lambda_x = p(key, value)?,
            "lambda_a" => self.lambda_a = p(key, value)?,
            "samples" => self.samples = p(key, value)?,
            "eval_samples" => self.eval_samples = p(key, value)?,
            "baseline_decay" => self.baseline_decay = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "clip" => self.clip = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "lr_decay" => self.lr_decay = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "min_count" => self.min_count = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let mut out = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("word_dim", d.word_dim.to_string()),
            ("pretrained_dim", d.pretrained_dim.to_string()),
            ("pos_dim", d.pos_dim.to_string()),
            ("nt_dim", d.nt_dim.to_string()),
            ("enc_lstm_dim", d.enc_lstm_dim.to_string()),
            ("dec_lstm_dim", d.dec_lstm_dim.to_string()),
            ("lstm_layers", d.lstm_layers.to_string()),
            ("enc_dropout", d.enc_dropout.to_string()),
            ("dec_dropout", d.dec_dropout.to_string()),
            ("max_open_nt", d.max_open_nt.to_string()),
            ("max_gen_len", d.max_gen_len.to_string()),
            ("lambda_x", self.lambda_x.to_string()),
            ("lambda_a", self.lambda_a.to_string()),
            ("samples", self.samples.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("baseline_decay", self.baseline_decay.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("clip", self.clip.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("min_count", self.min_count.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_table() {
        let d = ModelDims::default();
        assert_eq!((d.word_dim, d.pretrained_dim, d.pos_dim), (40, 50, 20));
        assert_eq!(
            (d.enc_lstm_dim, d.dec_lstm_dim, d.lstm_layers),
            (128, 256, 2)
        );
        assert_eq!((d.enc_dropout, d.dec_dropout), (0.2, 0.3));
        assert_eq!(d.enc_word_dim(), 110);
        assert_eq!(d.dec_word_dim(), 90);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig {
            lambda_a: 0.0,
            seed: 7,
            ..TrainConfig::default()
        };
        cfg.dims.enc_lstm_dim = 16;
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("lambda_x = 0\nlambda_a = 0").is_err());
        assert!(TrainConfig::parse("nope = 1").is_err());
        assert!(TrainConfig::parse("word_dim = 0").is_err());
        assert!(TrainConfig::parse("word_dim 3").is_err());
        let cfg = TrainConfig::parse("# comment\nepochs = 3 # trailing\n").unwrap();
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn dims_table_round_trip() {
        let d = ModelDims::default();
        assert_eq!(ModelDims::from_table(&d.table()).unwrap(), d);
    }
}
