//! Labeled constituency trees.
//!
//! A tree is generic over its label type `L` and leaf payload `T`. Trees
//! read from disk use `String` labels and [`Token<String>`] leaves; the
//! models work on integer ids.

use std::fmt;

/// A terminal word with an optional part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token<S> {
    pub word: S,
    pub pos: Option<S>,
}

impl<S> Token<S> {
    pub fn new(word: S, pos: Option<S>) -> Self {
        Token { word, pos }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tree<L, T> {
    Node { label: L, children: Vec<Tree<L, T>> },
    Leaf(T),
}

pub type StrTree = Tree<String, Token<String>>;
pub type IdTree = Tree<usize, Token<usize>>;

impl<L, T> Tree<L, T> {
    pub fn node(label: L, children: Vec<Tree<L, T>>) -> Self {
        Tree::Node { label, children }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf(_))
    }

    pub fn label(&self) -> Option<&L> {
        match self {
            Tree::Node { label, .. } => Some(label),
            Tree::Leaf(_) => None,
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        match self {
            Tree::Leaf(t) => out.push(t),
            Tree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::num_leaves).sum(),
        }
    }

    pub fn num_internal(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node { children, .. } => {
                1 + children.iter().map(Tree::num_internal).sum::<usize>()
            }
        }
    }

    /// Maps labels and leaves into a new tree of the same shape.
    pub fn map<L2, T2>(
        &self,
        fl: &mut impl FnMut(&L) -> L2,
        ft: &mut impl FnMut(&T) -> T2,
    ) -> Tree<L2, T2> {
        match self {
            Tree::Leaf(t) => Tree::Leaf(ft(t)),
            Tree::Node { label, children } => Tree::Node {
                label: fl(label),
                children: children.iter().map(|c| c.map(fl, ft)).collect(),
            },
        }
    }

    /// Labeled spans `(label, start, end)` of every internal node, root
    /// included, in pre-order.
    pub fn spans(&self) -> Vec<(&L, usize, usize)> {
        let mut out = Vec::new();
        self.collect_spans(0, &mut out);
        out
    }

    fn collect_spans<'a>(&'a self, start: usize, out: &mut Vec<(&'a L, usize, usize)>) -> usize {
        match self {
            Tree::Leaf(_) => start + 1,
            Tree::Node { label, children } => {
                let slot = out.len();
                out.push((label, start, start));
                let mut end = start;
                for c in children {
                    end = c.collect_spans(end, out);
                }
                out[slot].2 = end;
                end
            }
        }
    }
}

impl<S: Clone> Tree<S, Token<S>> {
    pub fn tokens(&self) -> Vec<Token<S>> {
        self.leaves().into_iter().cloned().collect()
    }

    pub fn words(&self) -> Vec<S> {
        self.leaves().into_iter().map(|t| t.word.clone()).collect()
    }
}

impl<L: fmt::Display, S: fmt::Display> fmt::Display for Tree<L, Token<S>> {
    /// PTB bracketing on one line; tagged leaves render as preterminals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf(Token { word, pos: Some(p) }) => write!(f, "({p} {word})"),
            Tree::Leaf(Token { word, pos: None }) => write!(f, "{word}"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}
