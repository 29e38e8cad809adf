//! A small probabilistic context-free grammar for generating synthetic
//! treebanks with tagged leaves.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::rng;
use crate::tree::{StrTree, Token};

#[derive(Debug, Clone)]
struct Rule {
    lhs: &'static str,
    weight: f64,
    rhs: &'static [&'static str],
}

/// Grammar over nonterminals with a lexicon for preterminal tags.
#[derive(Debug, Clone)]
pub struct Pcfg {
    rules: Vec<Rule>,
    lexicon: Vec<(&'static str, &'static [&'static str])>,
    start: &'static str,
    /// Beyond this depth the first (non-recursive) rule of each
    /// nonterminal is used.
    pub max_depth: usize,
}

impl Pcfg {
    /// English-like toy grammar with S, NP, VP, PP and ADVP constituents.
    pub fn toy() -> Self {
        let r = |lhs, weight, rhs| Rule { lhs, weight, rhs };
        Pcfg {
            rules: vec![
                r("S", 0.75, &["NP", "VP"]),
                r("S", 0.15, &["NP", "VP", "PP"]),
                r("S", 0.10, &["ADVP", "NP", "VP"]),
                r("NP", 0.45, &["D", "N"]),
                r("NP", 0.20, &["D", "A", "N"]),
                r("NP", 0.15, &["N"]),
                r("NP", 0.10, &["PRP"]),
                r("NP", 0.10, &["NP", "PP"]),
                r("VP", 0.45, &["V", "NP"]),
                r("VP", 0.20, &["V"]),
                r("VP", 0.20, &["V", "NP", "PP"]),
                r("VP", 0.15, &["V", "ADVP"]),
                r("PP", 1.0, &["P", "NP"]),
                r("ADVP", 1.0, &["ADV"]),
            ],
            lexicon: vec![
                ("D", &["the", "a", "every", "this"]),
                (
                    "N",
                    &[
                        "dog",
                        "cat",
                        "man",
                        "woman",
                        "park",
                        "telescope",
                        "house",
                        "garden",
                        "bird",
                        "child",
                        "book",
                        "car",
                    ],
                ),
                ("A", &["big", "small", "old", "red", "happy"]),
                ("PRP", &["she", "he", "they"]),
                (
                    "V",
                    &[
                        "saw", "chased", "liked", "found", "walked", "slept", "heard", "kept",
                    ],
                ),
                ("P", &["in", "with", "near", "under"]),
                ("ADV", &["quickly", "often", "today"]),
            ],
            start: "S",
            max_depth: 6,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> StrTree {
        self.expand(self.start, 0, rng)
    }

    fn expand(&self, symbol: &'static str, depth: usize, rng: &mut impl Rng) -> StrTree {
        if let Some((tag, words)) = self.lexicon.iter().find(|(t, _)| *t == symbol) {
            let w = words[rng.gen_range(0..words.len())];
            return StrTree::Leaf(Token::new(w.to_string(), Some(tag.to_string())));
        }
        let options: Vec<&Rule> = self.rules.iter().filter(|r| r.lhs == symbol).collect();
        assert!(!options.is_empty(), "no rules for {symbol}");
        let rule = if depth >= self.max_depth {
            options[0]
        } else {
            let dist =
                WeightedIndex::new(options.iter().map(|r| r.weight)).expect("positive weights");
            options[dist.sample(rng)]
        };
        let children = rule
            .rhs
            .iter()
            .map(|s| self.expand(s, depth + 1, rng))
            .collect();
        StrTree::node(symbol.to_string(), children)
    }

    /// `n` trees from the `synth` stream of `seed`.
    pub fn treebank(&self, n: usize, seed: u64) -> Vec<StrTree> {
        let mut r = rng::stream(seed, "synth", 0);
        (0..n).map(|_| self.sample(&mut r)).collect()
    }
}
