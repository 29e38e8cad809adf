//! Labeled bracketing precision, recall and F1 over (label, start, end)
//! spans, counted as multisets. Preterminals are leaves and never count;
//! the root span does.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tree::StrTree;

/// Bracket counts with derived percentages.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Score {
    pub matched: usize,
    pub gold: usize,
    pub predicted: usize,
}

impl Score {
    pub fn precision(&self) -> f64 {
        percent(self.matched, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        percent(self.matched, self.gold)
    }

    /// Zero when precision and recall are both zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: &Score) {
        self.matched += other.matched;
        self.gold += other.gold;
        self.predicted += other.predicted;
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Precision: {:.2}", self.precision())?;
        writeln!(f, "Recall:    {:.2}", self.recall())?;
        write!(f, "F1:        {:.2}", self.f1())
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn brackets(tree: &StrTree) -> BTreeMap<(&str, usize, usize), usize> {
    let mut out = BTreeMap::new();
    for (label, start, end) in tree.spans() {
        *out.entry((label.as_str(), start, end)).or_insert(0) += 1;
    }
    out
}

pub fn sentence_score(gold: &StrTree, pred: &StrTree) -> Score {
    let g = brackets(gold);
    let p = brackets(pred);
    let matched = g
        .iter()
        .map(|(k, &n)| n.min(p.get(k).copied().unwrap_or(0)))
        .sum();
    Score {
        matched,
        gold: g.values().sum(),
        predicted: p.values().sum(),
    }
}

/// Per-sentence scores; both sides must cover the same words in order.
pub fn sentence_scores(gold: &[StrTree], pred: &[StrTree]) -> Result<Vec<Score>> {
    if gold.len() != pred.len() {
        return Err(Error::contract(format!(
            "{} gold trees but {} predicted trees",
            gold.len(),
            pred.len()
        )));
    }
    gold.iter()
        .zip(pred)
        .enumerate()
        .map(|(i, (g, p))| {
            if g.words() != p.words() {
                return Err(Error::Alignment { sentence: i });
            }
            Ok(sentence_score(g, p))
        })
        .collect()
}

/// Corpus-level score from summed counts.
pub fn f1(gold: &[StrTree], pred: &[StrTree]) -> Result<Score> {
    let mut total = Score::default();
    for s in sentence_scores(gold, pred)? {
        total.add(&s);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_treebank;

    fn trees(s: &str) -> Vec<StrTree> {
        parse_treebank(s).unwrap().trees
    }

    #[test]
    fn identical_trees_score_100() {
        let t = trees("(S (NP (D the) (N dog)) (VP (V ran)))");
        let s = f1(&t, &t).unwrap();
        assert_eq!((s.precision(), s.recall(), s.f1()), (100.0, 100.0, 100.0));
    }

    #[test]
    fn preterminals_do_not_count() {
        let t = trees("(S (NP (D the) (N dog)) (VP (V ran)))");
        assert_eq!(brackets(&t[0]).len(), 3);
    }

    #[test]
    fn half_matched() {
        let g = trees("(S (X (A x) (B y) (C z)))");
        let p = trees("(S (Y (A x) (B y) (C z)))");
        let s = f1(&g, &p).unwrap();
        assert_eq!((s.matched, s.gold, s.predicted), (1, 2, 2));
        assert_eq!(s.f1(), 50.0);
    }

    #[test]
    fn misaligned_words() {
        let g = trees("(S (A x))");
        let p = trees("(S (A y))");
        assert!(matches!(f1(&g, &p), Err(Error::Alignment { sentence: 0 })));
    }
}
