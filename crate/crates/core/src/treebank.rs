//! Bracketed treebank reading, vocabularies and training instances.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::transitions::{oracle_from_tree, Action, Mode};
use crate::tree::{IdTree, StrTree, Token, Tree};

pub const UNK: &str = "<unk>";
pub const UNK_POS: &str = "<unkpos>";

#[derive(Debug)]
enum Sexp {
    Atom(String),
    List {
        label: Option<String>,
        items: Vec<Sexp>,
    },
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

#[derive(Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

impl Lexer<'_> {
    fn next(&mut self) -> Option<(Tok, usize)> {
        loop {
            let c = *self.chars.peek()?;
            if c == '\n' {
                self.line += 1;
                self.chars.next();
            } else if c.is_whitespace() {
                self.chars.next();
            } else {
                break;
            }
        }
        let line = self.line;
        match self.chars.next()? {
            '(' => Some((Tok::Open, line)),
            ')' => Some((Tok::Close, line)),
            first => {
                let mut atom = String::from(first);
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' {
                        break;
                    }
                    atom.push(c);
                    self.chars.next();
                }
                Some((Tok::Atom(atom), line))
            }
        }
    }
}

/// Result of reading a treebank: the usable trees and how many records
/// were dropped because they were empty after preprocessing.
#[derive(Debug, Default)]
pub struct Treebank {
    pub trees: Vec<StrTree>,
    pub skipped: usize,
}

pub fn read_treebank(path: impl AsRef<Path>) -> Result<Treebank> {
    parse_treebank(&fs::read_to_string(path)?)
}

/// Parses PTB-style bracketed trees. Records may span lines; several may
/// share a line.
pub fn parse_treebank(text: &str) -> Result<Treebank> {
    let mut lexer = Lexer {
        chars: text.chars().peekable(),
        line: 1,
    };
    let mut out = Treebank::default();
    while let Some((tok, line)) = lexer.next() {
        match tok {
            Tok::Open => {
                let sexp = parse_list(&mut lexer, line)?;
                match normalize_record(sexp) {
                    Some(t) => out.trees.push(t),
                    None => out.skipped += 1,
                }
            }
            Tok::Close => {
                return Err(Error::Parse {
                    line,
                    message: "unexpected `)`".into(),
                })
            }
            Tok::Atom(a) => {
                return Err(Error::Parse {
                    line,
                    message: format!("text `{a}` outside brackets"),
                })
            }
        }
    }
    Ok(out)
}

fn parse_list(lexer: &mut Lexer<'_>, open_line: usize) -> Result<Sexp> {
    let mut label = None;
    let mut items = Vec::new();
    let mut first = true;
    loop {
        let Some((tok, line)) = lexer.next() else {
            return Err(Error::Parse {
                line: open_line,
                message: "unbalanced brackets: `(` never closed".into(),
            });
        };
        match tok {
            Tok::Close => return Ok(Sexp::List { label, items }),
            Tok::Open => items.push(parse_list(lexer, line)?),
            Tok::Atom(a) if first => label = Some(a),
            Tok::Atom(a) => items.push(Sexp::Atom(a)),
        }
        first = false;
    }
}

/// Strips function tags and coindexation: `NP-SBJ-1` -> `NP`, `NP=2` -> `NP`.
/// Labels starting with `-` (`-NONE-`, `-LRB-`) are kept as is.
pub fn strip_function_tags(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    let end = label.find(['-', '=']).unwrap_or(label.len());
    &label[..end]
}

fn normalize_record(sexp: Sexp) -> Option<StrTree> {
    // A label-less outer bracket around a single tree is a wrapper.
    let sexp = match sexp {
        Sexp::List {
            label: None,
            mut items,
        } if items.len() == 1 => items.pop().unwrap(),
        other => other,
    };
    match normalize(sexp)? {
        t @ Tree::Node { .. } => Some(t),
        Tree::Leaf(_) => None,
    }
}

fn normalize(sexp: Sexp) -> Option<StrTree> {
    match sexp {
        Sexp::Atom(w) => Some(Tree::Leaf(Token::new(w, None))),
        Sexp::List { label, mut items } => {
            let label = label.unwrap_or_default();
            if label == "-NONE-" {
                return None;
            }
            if items.len() == 1 {
                if let Sexp::Atom(_) = items[0] {
                    let Some(Sexp::Atom(w)) = items.pop() else {
                        unreachable!()
                    };
                    return Some(Tree::Leaf(Token::new(w, Some(label))));
                }
            }
            let label = strip_function_tags(&label).to_string();
            let mut children: Vec<StrTree> = items.into_iter().filter_map(normalize).collect();
            if children.is_empty() {
                return None;
            }
            if children.len() == 1 {
                if let Tree::Node { label: inner, .. } = &children[0] {
                    if *inner == label {
                        return children.pop();
                    }
                }
            }
            Some(Tree::Node { label, children })
        }
    }
}

/// Dense string interner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Indexer {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Indexer {
    pub fn from_items(items: Vec<String>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Indexer { items, index }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pub words: Indexer,
    pub nonterminals: Indexer,
    pub pos_tags: Indexer,
    pub counts: BTreeMap<String, usize>,
}

const VOCAB_HEADER: &str = "#rnng-vocab 1";

impl Vocab {
    /// Words below `min_count` occurrences fall back to `<unk>`, which is
    /// always id 0. Labels and tags are never replaced.
    pub fn build(trees: &[StrTree], min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut nts = std::collections::BTreeSet::new();
        let mut tags = std::collections::BTreeSet::new();
        for t in trees {
            collect(t, &mut counts, &mut nts, &mut tags);
        }
        let mut words = vec![UNK.to_string()];
        words.extend(
            counts
                .iter()
                .filter(|(w, &c)| c >= min_count && w.as_str() != UNK)
                .map(|(w, _)| w.clone()),
        );
        let mut pos = vec![UNK_POS.to_string()];
        pos.extend(tags.into_iter().filter(|t| t != UNK_POS));
        Vocab {
            words: Indexer::from_items(words),
            nonterminals: Indexer::from_items(nts.into_iter().collect()),
            pos_tags: Indexer::from_items(pos),
            counts,
        }
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.words.get(w).unwrap_or(0)
    }

    pub fn pos_id(&self, p: Option<&str>) -> usize {
        p.and_then(|p| self.pos_tags.get(p)).unwrap_or(0)
    }

    pub fn num_actions(&self) -> usize {
        self.nonterminals.len() + 2
    }

    /// Sorted, versioned text form embedded in checkpoints.
    pub fn to_text(&self) -> String {
        let mut out = String::from(VOCAB_HEADER);
        out.push('\n');
        out.push_str(&format!("[words] {}\n", self.words.len()));
        for w in self.words.items() {
            out.push_str(&format!(
                "{w}\t{}\n",
                self.counts.get(w).copied().unwrap_or(0)
            ));
        }
        out.push_str(&format!("[nonterminals] {}\n", self.nonterminals.len()));
        for x in self.nonterminals.items() {
            out.push_str(x);
            out.push('\n');
        }
        out.push_str(&format!("[pos] {}\n", self.pos_tags.len()));
        for p in self.pos_tags.items() {
            out.push_str(p);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Parse {
            line,
            message: format!("vocab: {m}"),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, VOCAB_HEADER)) => {}
            _ => return Err(bad(1, "missing or unsupported header")),
        }
        let mut section = |name: &str| -> Result<Vec<(usize, String)>> {
            let (no, head) = lines.next().ok_or_else(|| bad(0, "truncated"))?;
            let n: usize = head
                .strip_prefix(&format!("[{name}] "))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(no, &format!("expected [{name}] section")))?;
            (0..n)
                .map(|_| {
                    lines
                        .next()
                        .map(|(no, l)| (no, l.to_string()))
                        .ok_or_else(|| bad(no, "truncated section"))
                })
                .collect()
        };
        let word_lines = section("words")?;
        let nts = section("nonterminals")?;
        let pos = section("pos")?;
        let mut words = Vec::new();
        let mut counts = BTreeMap::new();
        for (no, l) in word_lines {
            let (w, c) = l
                .split_once('\t')
                .ok_or_else(|| bad(no, "word line needs a count"))?;
            let c: usize = c.parse().map_err(|_| bad(no, "bad count"))?;
            if c > 0 {
                counts.insert(w.to_string(), c);
            }
            words.push(w.to_string());
        }
        Ok(Vocab {
            words: Indexer::from_items(words),
            nonterminals: Indexer::from_items(nts.into_iter().map(|(_, s)| s).collect()),
            pos_tags: Indexer::from_items(pos.into_iter().map(|(_, s)| s).collect()),
            counts,
        })
    }
}

fn collect(
    t: &StrTree,
    counts: &mut BTreeMap<String, usize>,
    nts: &mut std::collections::BTreeSet<String>,
    tags: &mut std::collections::BTreeSet<String>,
) {
    match t {
        Tree::Leaf(tok) => {
            *counts.entry(tok.word.clone()).or_default() += 1;
            if let Some(p) = &tok.pos {
                tags.insert(p.clone());
            }
        }
        Tree::Node { label, children } => {
            nts.insert(label.clone());
            for c in children {
                collect(c, counts, nts, tags);
            }
        }
    }
}

/// One sentence with its optional gold analysis, ready for the models.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub words: Vec<usize>,
    pub pos_tags: Vec<usize>,
    /// Original tokens, used when writing trees back out.
    pub surface: Vec<Token<String>>,
    pub gold_tree: Option<IdTree>,
    pub gold_disc: Option<Vec<Action>>,
    pub gold_gen: Option<Vec<Action>>,
}

impl Instance {
    pub fn from_tokens(tokens: &[Token<String>], vocab: &Vocab) -> Self {
        Instance {
            words: tokens.iter().map(|t| vocab.word_id(&t.word)).collect(),
            pos_tags: tokens
                .iter()
                .map(|t| vocab.pos_id(t.pos.as_deref()))
                .collect(),
            surface: tokens.to_vec(),
            gold_tree: None,
            gold_disc: None,
            gold_gen: None,
        }
    }

    /// Gold fields stay empty when the tree uses a label outside the vocab.
    pub fn from_tree(tree: &StrTree, vocab: &Vocab) -> Self {
        let mut inst = Instance::from_tokens(&tree.tokens(), vocab);
        let mut unknown = false;
        let id_tree = tree.map(
            &mut |l: &String| {
                vocab.nonterminals.get(l).unwrap_or_else(|| {
                    unknown = true;
                    0
                })
            },
            &mut |t: &Token<String>| {
                Token::new(vocab.word_id(&t.word), Some(vocab.pos_id(t.pos.as_deref())))
            },
        );
        if !unknown {
            inst.gold_disc = oracle_from_tree(&id_tree, Mode::Discriminative).ok();
            inst.gold_gen = oracle_from_tree(&id_tree, Mode::Generative).ok();
            inst.gold_tree = Some(id_tree);
        }
        inst
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn instances(trees: &[StrTree], vocab: &Vocab) -> Vec<Instance> {
    trees
        .iter()
        .map(|t| Instance::from_tree(t, vocab))
        .collect()
}

/// Frozen pretrained word vectors, restricted to the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedTable {
    pub fn empty(dim: usize) -> Self {
        PretrainedTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Missing words map to the zero vector.
    pub fn vector(&self, word: &str) -> Vec<f64> {
        self.vectors
            .get(word)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// Row-major `|words| x dim` matrix aligned with the vocab ids.
    pub fn matrix(&self, vocab: &Vocab) -> Vec<f64> {
        vocab
            .words
            .items()
            .iter()
            .flat_map(|w| self.vector(w))
            .collect()
    }
}

pub fn load_pretrained(path: impl AsRef<Path>, vocab: &Vocab) -> Result<PretrainedTable> {
    let path = path.as_ref();
    parse_pretrained(&fs::read_to_string(path)?, vocab).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

/// One word per line followed by its components. A leading `count dim`
/// header line is tolerated.
pub fn parse_pretrained(text: &str, vocab: &Vocab) -> std::result::Result<PretrainedTable, String> {
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0
            && values.len() == 1
            && word.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok()
        {
            continue;
        }
        let parsed: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        match dim {
            None => dim = Some(parsed.len()),
            Some(d) if d != parsed.len() => {
                return Err(format!(
                    "line {}: expected {d} components, found {}",
                    i + 1,
                    parsed.len()
                ))
            }
            _ => {}
        }
        if vocab.words.get(word).is_some() {
            vectors.insert(word.to_string(), parsed);
        }
    }
    let dim = dim.ok_or("no vectors found")?;
    Ok(PretrainedTable { dim, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transitions::tree_from_actions;

    #[test]
    fn reads_preterminals_as_tagged_leaves() {
        let tb = parse_treebank("(S (NP (DT the) (NN cat)) (VP (VBZ sleeps)))").unwrap();
        assert_eq!(tb.trees.len(), 1);
        let t = &tb.trees[0];
        assert_eq!(
            t.to_string(),
            "(S (NP (DT the) (NN cat)) (VP (VBZ sleeps)))"
        );
        let leaves = t.leaves();
        assert_eq!(leaves[1].pos.as_deref(), Some("NN"));
        assert_eq!(t.num_internal(), 3);
    }

    #[test]
    fn strips_outer_wrapper() {
        let a = parse_treebank("((S (NP (DT the) (NN cat)) (VP (VBZ sleeps))))").unwrap();
        let b = parse_treebank("(S (NP (DT the) (NN cat)) (VP (VBZ sleeps)))").unwrap();
        assert_eq!(a.trees, b.trees);
    }

    #[test]
    fn unbalanced_reports_line() {
        match parse_treebank("(S (NP") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match parse_treebank("(S (NP (DT a)))\n(S (NP (NN b))))") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multiline_records_and_function_tags() {
        let text = "( (S (NP-SBJ-1 (-NONE- *T*))\n   (NP-SBJ (PRP He))\n   (VP (VBD ran)) (. .)) )\n(S (NP=2 (NN x)))";
        let tb = parse_treebank(text).unwrap();
        assert_eq!(tb.trees.len(), 2);
        assert_eq!(
            tb.trees[0].to_string(),
            "(S (NP (PRP He)) (VP (VBD ran)) (. .))"
        );
        assert_eq!(tb.trees[1].to_string(), "(S (NP (NN x)))");
    }

    #[test]
    fn collapses_unary_self_chains() {
        let tb = parse_treebank("(S (NP (NP-SBJ (NN x))) (VP (VB y)))").unwrap();
        assert_eq!(tb.trees[0].to_string(), "(S (NP (NN x)) (VP (VB y)))");
    }

    #[test]
    fn empty_records_are_counted() {
        let tb = parse_treebank("(S (-NONE- *))\n(S (NN a))\n()").unwrap();
        assert_eq!(tb.trees.len(), 1);
        assert_eq!(tb.skipped, 2);
    }

    #[test]
    fn function_tag_stripping() {
        assert_eq!(strip_function_tags("NP-SBJ-1"), "NP");
        assert_eq!(strip_function_tags("PP-LOC=3"), "PP");
        assert_eq!(strip_function_tags("-LRB-"), "-LRB-");
        assert_eq!(strip_function_tags("PRP$"), "PRP$");
    }

    fn corpus() -> Vec<StrTree> {
        let mut text = String::new();
        for _ in 0..5 {
            text.push_str("(S (NP (DT the)))\n");
        }
        text.push_str("(S (NP (NN cat)))\n");
        parse_treebank(&text).unwrap().trees
    }

    #[test]
    fn unk_threshold() {
        let v = Vocab::build(&corpus(), 2);
        assert_eq!(v.words.items(), &["<unk>", "the"]);
        assert_eq!(v.word_id("cat"), 0);
        let v = Vocab::build(&corpus(), 1);
        assert_eq!(v.words.len(), 3);
        assert_eq!(v.nonterminals.items(), &["NP", "S"]);
        assert_eq!(v.num_actions(), v.nonterminals.len() + 2);
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = Vocab::build(&corpus(), 1);
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_text("nonsense").is_err());
    }

    #[test]
    fn instance_gold_round_trips() {
        let trees = parse_treebank("(S (NP (DT the) (NN cat)) (VP (VBZ sleeps)))")
            .unwrap()
            .trees;
        let v = Vocab::build(&trees, 1);
        let inst = Instance::from_tree(&trees[0], &v);
        assert_eq!(inst.words.len(), inst.pos_tags.len());
        let gold = inst.gold_tree.as_ref().unwrap();
        let rebuilt = tree_from_actions(inst.gold_disc.as_ref().unwrap(), &gold.tokens()).unwrap();
        assert_eq!(&rebuilt, gold);
        let rebuilt = tree_from_actions(inst.gold_gen.as_ref().unwrap(), &gold.tokens()).unwrap();
        assert_eq!(&rebuilt, gold);
    }

    #[test]
    fn pretrained_loading() {
        let trees = parse_treebank("(S (NP (DT the) (NN cat)))").unwrap().trees;
        let v = Vocab::build(&trees, 1);
        let fifty: Vec<String> = (0..50).map(|i| format!("{}", i as f64 / 100.0)).collect();
        let text = format!("cat {}\ndog {}\n", fifty.join(" "), fifty.join(" "));
        let table = parse_pretrained(&text, &v).unwrap();
        assert_eq!(table.dim, 50);
        assert_eq!(table.vector("cat").len(), 50);
        assert!(!table.vectors.contains_key("dog"));
        assert_eq!(table.vector("the"), vec![0.0; 50]);
        let bad = format!("cat {}\nthe {}\n", fifty.join(" "), fifty[..49].join(" "));
        assert!(parse_pretrained(&bad, &v)
            .unwrap_err()
            .contains("expected 50"));
        let with_header = format!("2 50\ncat {}\n", fifty.join(" "));
        assert_eq!(parse_pretrained(&with_header, &v).unwrap().dim, 50);
    }
}
