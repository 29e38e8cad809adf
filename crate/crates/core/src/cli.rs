//! Command-line front end: `oracle`, `train`, `parse`, `lm-eval`, `score`
//! and `sample`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::evalscore;
use crate::inference::{self, LmMethod, ParseMethod};
use crate::model::Model;
use crate::rng;
use crate::tensor::Graph;
use crate::training::{Control, Trainer};
use crate::transitions::{
    format_actions, oracle_from_tree, parse_action_line, tree_from_actions, Action, Mode, RawAction,
};
use crate::tree::{StrTree, Token, Tree};
use crate::treebank::{instances, load_pretrained, read_treebank, Instance, Vocab};
use crate::{Error, Result};

const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "rnng",
    version,
    about = "Recurrent neural network grammar parser and language model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputFormat {
    /// Bracketed trees; leaves and POS tags are read from the trees.
    Trees,
    /// One whitespace-tokenized sentence per line, untagged.
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert trees to oracle action sequences, or back with --inverse.
    Oracle {
        /// Transition system: disc or gen.
        #[arg(long, default_value = "disc")]
        mode: Mode,
        /// Read actions and tokens and write trees instead.
        #[arg(long)]
        inverse: bool,
        /// Token file (one `word<TAB>POS` per line, blank line between
        /// sentences). Defaults to the action file path plus `.tokens`.
        #[arg(long)]
        tokens: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Train a model on a treebank.
    Train {
        #[arg(long = "train")]
        train_file: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Flat `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoints, log and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Pretrained word vectors, one word and its values per line.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Parse sentences with a trained model.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "trees")]
        format: InputFormat,
        /// greedy or rerank.
        #[arg(long, default_value = "greedy")]
        method: ParseMethod,
        /// Number of samples drawn for reranking.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Output file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate sentence log-likelihoods and corpus perplexity.
    LmEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "trees")]
        format: InputFormat,
        /// importance or elbo.
        #[arg(long, default_value = "importance")]
        method: LmMethod,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Labeled bracketing precision, recall and F1.
    Score {
        gold: PathBuf,
        pred: PathBuf,
        /// Also print per-sentence scores.
        #[arg(long)]
        verbose: bool,
    },
    /// Draw sentences and trees from the generative model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Samples longer than this are discarded.
        #[arg(long, default_value_t = 120)]
        max_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 on success, 1 on usage or input errors, 2 on numeric failure.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter()) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(command: Command, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new(argv);
    match command {
        Command::Oracle {
            mode,
            inverse,
            tokens,
            input,
            output,
        } => {
            let tokens = tokens.unwrap_or_else(|| {
                let base = if inverse { &input } else { &output };
                with_suffix(base, ".tokens")
            });
            if inverse {
                manifest.input(&input)?;
                if tokens.exists() {
                    manifest.input(&tokens)?;
                }
                let text = actions_to_trees(
                    &fs::read_to_string(&input)?,
                    read_tokens_if_exists(&tokens)?,
                )?;
                emit(Some(&output), &text, &mut manifest)
            } else {
                manifest.input(&input)?;
                manifest.setting("mode", mode.name());
                let trees = read_treebank(&input)?.trees;
                let (actions, token_text) = trees_to_actions(&trees, mode)?;
                write_artifact(&tokens, &token_text, &mut manifest)?;
                emit(Some(&output), &actions, &mut manifest)
            }
        }
        Command::Train {
            train_file,
            dev,
            config,
            out,
            seed,
            epochs,
            pretrained,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    manifest.input(p)?;
                    TrainConfig::load(p)?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            manifest.input(&train_file)?;
            let train_trees = read_treebank(&train_file)?.trees;
            let vocab = Vocab::build(&train_trees, cfg.min_count);
            let table = match &pretrained {
                Some(p) => {
                    manifest.input(p)?;
                    Some(load_pretrained(p, &vocab)?)
                }
                None => None,
            };
            let dev_instances = match &dev {
                Some(p) => {
                    manifest.input(p)?;
                    instances(&read_treebank(p)?.trees, &vocab)
                }
                None => Vec::new(),
            };
            let train_instances = instances(&train_trees, &vocab);
            fs::create_dir_all(&out)?;
            let mut model = Model::new(cfg.dims.clone(), vocab, table.as_ref(), cfg.seed)?;
            manifest.config(&cfg);
            let mut trainer = Trainer::new(cfg)?;
            let mut log = String::new();
            let outcome =
                trainer.train(&mut model, &train_instances, &dev_instances, |rec, _| {
                    eprintln!("{rec}");
                    let _ = writeln!(log, "{rec}");
                    Control::Continue
                })?;
            write_artifact(&out.join("train.log"), &log, &mut manifest)?;
            model.save(out.join("last.ckpt"))?;
            manifest.output(&out.join("last.ckpt"));
            model.params = outcome.best;
            model.save(out.join("model.ckpt"))?;
            manifest.output(&out.join("model.ckpt"));
            manifest.write(&out.join("manifest.txt"))
        }
        Command::Parse {
            model,
            input,
            format,
            method,
            samples,
            seed,
            threads,
            output,
        } => {
            manifest.input(&model)?;
            manifest.input(&input)?;
            manifest.setting("seed", seed);
            manifest.setting("method", method.name());
            manifest.setting("samples", samples);
            manifest.setting("threads", threads);
            let model = Model::load(&model)?;
            let sentences = read_sentences(&input, format, &model.vocab)?;
            let parses =
                inference::parse_corpus(&model, &sentences, method, samples, seed, threads)?;
            let mut text = String::new();
            for (p, inst) in parses.iter().zip(&sentences) {
                let _ = writeln!(text, "{}", p.tree(&model, inst)?);
            }
            emit(output.as_deref(), &text, &mut manifest)
        }
        Command::LmEval {
            model,
            input,
            format,
            method,
            samples,
            seed,
            threads,
            output,
        } => {
            manifest.input(&model)?;
            manifest.input(&input)?;
            manifest.setting("seed", seed);
            manifest.setting("method", method.name());
            manifest.setting("samples", samples);
            manifest.setting("threads", threads);
            let model = Model::load(&model)?;
            let sentences = read_sentences(&input, format, &model.vocab)?;
            let (estimates, ppl) =
                inference::corpus_perplexity(&model, &sentences, method, samples, seed, threads)?;
            let mut text = String::from("#id\ttokens\tlogpx\tmethod\tk\tess\n");
            for (i, (e, inst)) in estimates.iter().zip(&sentences).enumerate() {
                let _ = writeln!(text, "{i}\t{}\t{e}", inst.len());
            }
            let tokens: usize = sentences.iter().map(Instance::len).sum();
            let nll: f64 = -estimates.iter().map(|e| e.log_px).sum::<f64>();
            let _ = writeln!(
                text,
                "#corpus\tsentences={}\ttokens={tokens}\tnll={nll:.6}\tperplexity={ppl:.6}",
                sentences.len()
            );
            emit(output.as_deref(), &text, &mut manifest)
        }
        Command::Score {
            gold,
            pred,
            verbose,
        } => {
            let g = read_treebank(&gold)?.trees;
            let p = read_treebank(&pred)?.trees;
            let per = evalscore::sentence_scores(&g, &p)?;
            let mut total = evalscore::Score::default();
            let mut text = String::new();
            if verbose {
                text.push_str("#id\tmatched\tgold\tpredicted\tprecision\trecall\tf1\n");
            }
            for (i, s) in per.iter().enumerate() {
                total.add(s);
                if verbose {
                    let _ = writeln!(
                        text,
                        "{i}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}",
                        s.matched,
                        s.gold,
                        s.predicted,
                        s.precision(),
                        s.recall(),
                        s.f1()
                    );
                }
            }
            let _ = writeln!(text, "{total}");
            print!("{text}");
            Ok(())
        }
        Command::Sample {
            model,
            count,
            max_len,
            seed,
            output,
        } => {
            manifest.input(&model)?;
            manifest.setting("seed", seed);
            manifest.setting("count", count);
            manifest.setting("max_len", max_len);
            let model = Model::load(&model)?;
            let mut text = String::new();
            for i in 0..count {
                let mut r = rng::stream(seed, "sampling", i as u64);
                let mut g = Graph::new(&model.params, false, 0);
                match model.decoder.sample(&mut g, &mut r, max_len) {
                    Ok(run) => {
                        let tokens: Vec<Token<String>> = run
                            .words
                            .iter()
                            .map(|&w| Token::new(model.vocab.words.name(w).to_string(), None))
                            .collect();
                        let tree = tree_from_actions(&run.actions, &tokens)?;
                        let tree = tree.map(
                            &mut |&x: &usize| model.vocab.nonterminals.name(x).to_string(),
                            &mut Clone::clone,
                        );
                        let _ = writeln!(text, "{}\t{:.6}", tree, g.scalar(run.log_joint));
                    }
                    Err(e @ Error::Truncated { .. }) => eprintln!("sample {i}: {e}"),
                    Err(e) => return Err(e),
                }
            }
            emit(output.as_deref(), &text, &mut manifest)
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `text` to `path` or standard output. A file output gets a
/// manifest at `<path>.manifest`.
fn emit(path: Option<&Path>, text: &str, manifest: &mut RunManifest) -> Result<()> {
    match path {
        Some(p) => {
            write_artifact(p, text, manifest)?;
            manifest.write(&with_suffix(p, ".manifest"))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_artifact(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    fs::write(path, text)?;
    manifest.output(path);
    Ok(())
}

/// Sentences from a tree file (gold analyses attached when available) or
/// from plain text with unknown POS tags.
fn read_sentences(path: &Path, format: InputFormat, vocab: &Vocab) -> Result<Vec<Instance>> {
    let sentences: Vec<Instance> = match format {
        InputFormat::Trees => instances(&read_treebank(path)?.trees, vocab),
        InputFormat::Text => fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let tokens: Vec<Token<String>> = l
                    .split_whitespace()
                    .map(|w| Token::new(w.to_string(), None))
                    .collect();
                Instance::from_tokens(&tokens, vocab)
            })
            .collect(),
    };
    if sentences.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no sentences".into(),
        });
    }
    Ok(sentences)
}

const NO_TAG: &str = "_";

/// Oracle action lines and the matching token file for `trees`.
fn trees_to_actions(trees: &[StrTree], mode: Mode) -> Result<(String, String)> {
    let mut actions_text = String::new();
    let mut tokens_text = String::new();
    for tree in trees {
        let mut labels = Vec::new();
        let mut position = 0;
        let id_tree = tree.map(
            &mut |l: &String| {
                labels.push(l.clone());
                labels.len() - 1
            },
            &mut |_: &Token<String>| {
                position += 1;
                Token::new(position - 1, None)
            },
        );
        let tokens = tree.tokens();
        let actions = oracle_from_tree(&id_tree, mode)?;
        let mut next_word = 0;
        let raw: Vec<RawAction> = actions
            .iter()
            .map(|a| match *a {
                Action::Nt(x) => RawAction::Nt(labels[x].clone()),
                Action::Shift => RawAction::Shift,
                Action::Gen(_) => {
                    next_word += 1;
                    RawAction::Gen(tokens[next_word - 1].word.clone())
                }
                Action::Reduce => RawAction::Reduce,
            })
            .collect();
        let _ = writeln!(actions_text, "{}", format_actions(&raw));
        for t in &tokens {
            let _ = writeln!(
                tokens_text,
                "{}\t{}",
                t.word,
                t.pos.as_deref().unwrap_or(NO_TAG)
            );
        }
        tokens_text.push('\n');
    }
    Ok((actions_text, tokens_text))
}

fn read_tokens_if_exists(path: &Path) -> Result<Option<Vec<Vec<Token<String>>>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)?;
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            sentences.push(std::mem::take(&mut current));
            continue;
        }
        let (word, pos) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected `word<TAB>POS`".into(),
        })?;
        let pos = (pos != NO_TAG).then(|| pos.to_string());
        current.push(Token::new(word.to_string(), pos));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(Some(sentences))
}

/// Rebuilds trees from action lines. Discriminative derivations need the
/// token file; generative ones carry their words and take tags from it
/// when present.
fn actions_to_trees(text: &str, tokens: Option<Vec<Vec<Token<String>>>>) -> Result<String> {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let raw = parse_action_line(line, i + 1)?;
        let mut labels: HashMap<&str, usize> = HashMap::new();
        let mut label_names = Vec::new();
        let mut words = Vec::new();
        let actions: Vec<Action> = raw
            .iter()
            .map(|a| match a {
                RawAction::Nt(l) => Action::Nt(*labels.entry(l).or_insert_with(|| {
                    label_names.push(l.clone());
                    label_names.len() - 1
                })),
                RawAction::Shift => Action::Shift,
                RawAction::Gen(w) => {
                    words.push(w.clone());
                    Action::Gen(words.len() - 1)
                }
                RawAction::Reduce => Action::Reduce,
            })
            .collect();
        let given = tokens.as_ref().and_then(|t| t.get(i)).cloned();
        let sentence: Vec<Token<String>> = match (given, words.is_empty()) {
            (Some(t), true) => t,
            (Some(t), false) => {
                if t.len() != words.len() || t.iter().zip(&words).any(|(t, w)| &t.word != w) {
                    return Err(Error::Alignment { sentence: i });
                }
                t
            }
            (None, false) => words.iter().map(|w| Token::new(w.clone(), None)).collect(),
            (None, true) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "discriminative actions need a token file".into(),
                })
            }
        };
        let tree: Tree<usize, Token<String>> = tree_from_actions(&actions, &sentence)?;
        let tree = tree.map(&mut |&x: &usize| label_names[x].clone(), &mut Clone::clone);
        let _ = writeln!(out, "{tree}");
    }
    Ok(out)
}

/// Provenance record written next to every artifact.
#[derive(Debug)]
pub struct RunManifest {
    command: String,
    argv: Vec<String>,
    started: SystemTime,
    clock: Instant,
    settings: Vec<(String, String)>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(argv: &[String]) -> Self {
        RunManifest {
            command: argv.get(1).cloned().unwrap_or_default(),
            argv: argv.to_vec(),
            started: SystemTime::now(),
            clock: Instant::now(),
            settings: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.to_string(), value.to_string()));
    }

    fn config(&mut self, cfg: &TrainConfig) {
        for line in cfg.to_text().lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.setting(&format!("config.{}", k.trim()), v.trim());
            }
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = Sha256::digest(fs::read(path)?);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push((path.to_path_buf(), hex));
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "argv = {}", self.argv.join(" "));
        let _ = writeln!(s, "build = {BUILD_ID}");
        let started = self
            .started
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let _ = writeln!(s, "started_unix = {started}");
        let _ = writeln!(
            s,
            "wall_clock_secs = {:.3}",
            self.clock.elapsed().as_secs_f64()
        );
        for (k, v) in &self.settings {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "input = {} sha256:{h}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output = {}", p.display());
        }
        fs::write(path, s)?;
        Ok(())
    }
}
