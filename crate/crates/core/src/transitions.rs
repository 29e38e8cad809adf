//! Top-down transition systems for the discriminative (NT/SHIFT/REDUCE)
//! and generative (NT/GEN/REDUCE) parsers, plus the oracle mapping
//! between trees and action sequences.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::tree::{IdTree, Token, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Discriminative,
    Generative,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Discriminative => "disc",
            Mode::Generative => "gen",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" | "discriminative" => Ok(Mode::Discriminative),
            "gen" | "generative" => Ok(Mode::Generative),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// One concrete transition. `Gen` carries the generated word id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Nt(usize),
    Shift,
    Gen(usize),
    Reduce,
}

/// The |X|+2 action types scored by the action softmax. SHIFT and GEN are
/// the same type; the generated word is scored separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionType {
    Nt(usize),
    Terminal,
    Reduce,
}

impl Action {
    pub fn kind(self) -> ActionType {
        match self {
            Action::Nt(x) => ActionType::Nt(x),
            Action::Shift | Action::Gen(_) => ActionType::Terminal,
            Action::Reduce => ActionType::Reduce,
        }
    }

    fn mode(self) -> Option<Mode> {
        match self {
            Action::Shift => Some(Mode::Discriminative),
            Action::Gen(_) => Some(Mode::Generative),
            _ => None,
        }
    }
}

/// Dense indexing of action types: `NT(0..|X|)`, then the terminal action,
/// then REDUCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub num_nt: usize,
}

impl ActionSpace {
    pub fn new(num_nt: usize) -> Self {
        ActionSpace { num_nt }
    }

    pub fn size(self) -> usize {
        self.num_nt + 2
    }

    pub fn terminal(self) -> usize {
        self.num_nt
    }

    pub fn reduce(self) -> usize {
        self.num_nt + 1
    }

    pub fn index(self, kind: ActionType) -> usize {
        match kind {
            ActionType::Nt(x) => x,
            ActionType::Terminal => self.terminal(),
            ActionType::Reduce => self.reduce(),
        }
    }

    pub fn kind(self, index: usize) -> ActionType {
        if index < self.num_nt {
            ActionType::Nt(index)
        } else if index == self.terminal() {
            ActionType::Terminal
        } else {
            debug_assert_eq!(index, self.reduce());
            ActionType::Reduce
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constraints {
    /// NT is illegal once this many constituents are open.
    pub max_open_nt: usize,
    /// Generative derivations may emit at most this many words.
    pub max_gen_len: usize,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            max_open_nt: 100,
            max_gen_len: 120,
        }
    }
}

impl Constraints {
    pub fn unlimited() -> Self {
        Constraints {
            max_open_nt: usize::MAX,
            max_gen_len: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackItem {
    Open(usize),
    Terminal(usize),
    Subtree(usize),
}

/// Stack/buffer configuration shared by both transition systems.
///
/// In discriminative mode `buffer` holds the unread input; in generative
/// mode it holds the words generated so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    mode: Mode,
    limits: Constraints,
    stack: Vec<StackItem>,
    buffer: VecDeque<usize>,
    open: Vec<usize>,
    step: usize,
}

impl ParserState {
    pub fn discriminative(words: &[usize], limits: Constraints) -> Self {
        ParserState {
            mode: Mode::Discriminative,
            limits,
            stack: Vec::new(),
            buffer: words.iter().copied().collect(),
            open: Vec::new(),
            step: 0,
        }
    }

    pub fn generative(limits: Constraints) -> Self {
        ParserState {
            mode: Mode::Generative,
            limits,
            stack: Vec::new(),
            buffer: VecDeque::new(),
            open: Vec::new(),
            step: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn limits(&self) -> Constraints {
        self.limits
    }

    pub fn stack(&self) -> &[StackItem] {
        &self.stack
    }

    pub fn buffer(&self) -> &VecDeque<usize> {
        &self.buffer
    }

    pub fn open_nt(&self) -> usize {
        self.open.len()
    }

    /// Nonterminal of the innermost open constituent.
    pub fn parent_nt(&self) -> Option<usize> {
        self.open.last().map(|&i| match self.stack[i] {
            StackItem::Open(x) => x,
            _ => unreachable!("open index points at a closed item"),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Number of children of the innermost open constituent.
    pub fn open_children(&self) -> Option<usize> {
        self.open.last().map(|&i| self.stack.len() - i - 1)
    }

    /// Words generated so far (generative) or shifted so far is not
    /// tracked here; for generative states this is the output length.
    pub fn generated(&self) -> usize {
        match self.mode {
            Mode::Generative => self.buffer.len(),
            Mode::Discriminative => 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.open.is_empty()
            && self.stack.len() == 1
            && matches!(self.stack[0], StackItem::Subtree(_))
            && (self.mode == Mode::Generative || self.buffer.is_empty())
    }

    fn terminal_available(&self) -> bool {
        match self.mode {
            Mode::Discriminative => !self.buffer.is_empty(),
            Mode::Generative => self.buffer.len() < self.limits.max_gen_len,
        }
    }

    fn nt_legal(&self) -> bool {
        let placed = self.stack.is_empty() || !self.open.is_empty();
        placed && self.open.len() < self.limits.max_open_nt && self.terminal_available()
    }

    fn terminal_legal(&self) -> bool {
        !self.open.is_empty() && self.terminal_available()
    }

    fn reduce_legal(&self) -> bool {
        let Some(&top_open) = self.open.last() else {
            return false;
        };
        if top_open + 1 == self.stack.len() {
            return false;
        }
        // Closing the root must leave nothing unread.
        !(self.mode == Mode::Discriminative && self.open.len() == 1 && !self.buffer.is_empty())
    }

    pub fn is_legal(&self, kind: ActionType) -> bool {
        match kind {
            ActionType::Nt(_) => self.nt_legal(),
            ActionType::Terminal => self.terminal_legal(),
            ActionType::Reduce => self.reduce_legal(),
        }
    }

    /// Legality mask over the dense action space.
    pub fn legal_mask(&self, space: ActionSpace) -> Result<Vec<bool>> {
        if self.is_terminal() {
            return Err(Error::AlreadyFinal);
        }
        let nt = self.nt_legal();
        let mut mask = vec![nt; space.size()];
        mask[space.terminal()] = self.terminal_legal();
        mask[space.reduce()] = self.reduce_legal();
        if !mask.iter().any(|&m| m) {
            return Err(Error::contract(format!(
                "no legal action from state {self}"
            )));
        }
        Ok(mask)
    }

    pub fn apply_mut(&mut self, action: Action) -> Result<()> {
        let mode_ok = action.mode().is_none_or(|m| m == self.mode);
        if self.is_terminal() || !mode_ok || !self.is_legal(action.kind()) {
            return Err(Error::IllegalTransition {
                step: self.step,
                action: format!("{action:?}"),
                state: self.to_string(),
            });
        }
        match action {
            Action::Nt(x) => {
                self.open.push(self.stack.len());
                self.stack.push(StackItem::Open(x));
            }
            Action::Shift => {
                let w = self.buffer.pop_front().expect("legal shift has input");
                self.stack.push(StackItem::Terminal(w));
            }
            Action::Gen(w) => {
                self.buffer.push_back(w);
                self.stack.push(StackItem::Terminal(w));
            }
            Action::Reduce => {
                let at = self
                    .open
                    .pop()
                    .expect("legal reduce has an open constituent");
                let StackItem::Open(x) = self.stack[at] else {
                    unreachable!()
                };
                self.stack.truncate(at);
                self.stack.push(StackItem::Subtree(x));
            }
        }
        self.step += 1;
        Ok(())
    }
}

impl fmt::Display for ParserState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{} step={} open={} stack=",
            self.mode.name(),
            self.step,
            self.open.len()
        )?;
        for item in &self.stack {
            match item {
                StackItem::Open(x) => write!(f, " ({x}")?,
                StackItem::Terminal(w) => write!(f, " w{w}")?,
                StackItem::Subtree(x) => write!(f, " ({x} ..)")?,
            }
        }
        write!(f, " buffer={:?}]", self.buffer)
    }
}

/// Legal action types from `state`, in dense-index order.
pub fn legal_actions(state: &ParserState, space: ActionSpace) -> Result<Vec<ActionType>> {
    let mask = state.legal_mask(space)?;
    Ok(mask
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| space.kind(i))
        .collect())
}

/// Returns the successor state; `state` is left untouched.
pub fn apply_action(state: &ParserState, action: Action) -> Result<ParserState> {
    let mut next = state.clone();
    next.apply_mut(action)?;
    Ok(next)
}

/// Top-down, depth-first derivation of `tree`.
pub fn oracle_from_tree(tree: &IdTree, mode: Mode) -> Result<Vec<Action>> {
    if tree.is_leaf() {
        return Err(Error::contract("tree root must be a constituent"));
    }
    let mut out = Vec::new();
    push_oracle(tree, mode, &mut out)?;
    Ok(out)
}

fn push_oracle(tree: &IdTree, mode: Mode, out: &mut Vec<Action>) -> Result<()> {
    match tree {
        Tree::Leaf(Token { word, .. }) => out.push(match mode {
            Mode::Discriminative => Action::Shift,
            Mode::Generative => Action::Gen(*word),
        }),
        Tree::Node { label, children } => {
            if children.is_empty() {
                return Err(Error::contract("constituent without children"));
            }
            out.push(Action::Nt(*label));
            for c in children {
                push_oracle(c, mode, out)?;
            }
            out.push(Action::Reduce);
        }
    }
    Ok(())
}

/// Rebuilds the tree derived by `actions`, attaching `tokens` as leaves in
/// order. Inverse of [`oracle_from_tree`].
pub fn tree_from_actions<T: Clone>(actions: &[Action], tokens: &[T]) -> Result<Tree<usize, T>> {
    let mode = actions
        .iter()
        .find_map(|a| a.mode())
        .unwrap_or(Mode::Discriminative);
    let malformed = |step: usize, reason: &str| Error::MalformedDerivation {
        step,
        reason: reason.to_string(),
    };
    let mut state = match mode {
        // Buffer contents are irrelevant for reconstruction, only its length.
        Mode::Discriminative => {
            ParserState::discriminative(&vec![0; tokens.len()], Constraints::unlimited())
        }
        Mode::Generative => ParserState::generative(Constraints::unlimited()),
    };
    enum Frame<T> {
        Open(usize),
        Done(Tree<usize, T>),
    }
    let mut frames: Vec<Frame<T>> = Vec::new();
    let mut next_token = 0;
    for (step, &action) in actions.iter().enumerate() {
        if action.mode().is_some_and(|m| m != mode) {
            return Err(malformed(step, "SHIFT and GEN mixed in one derivation"));
        }
        if let Action::Gen(_) = action {
            if next_token >= tokens.len() {
                return Err(malformed(step, "more GEN actions than words"));
            }
        }
        state.apply_mut(action).map_err(|e| match e {
            Error::AlreadyFinal => malformed(step, "action after completed derivation"),
            _ => malformed(step, &format!("illegal {action:?}")),
        })?;
        match action {
            Action::Nt(x) => frames.push(Frame::Open(x)),
            Action::Shift | Action::Gen(_) => {
                frames.push(Frame::Done(Tree::Leaf(tokens[next_token].clone())));
                next_token += 1;
            }
            Action::Reduce => {
                let mut children = Vec::new();
                let label = loop {
                    match frames.pop() {
                        Some(Frame::Done(t)) => children.push(t),
                        Some(Frame::Open(x)) => break x,
                        None => unreachable!("legal reduce has an open frame"),
                    }
                };
                children.reverse();
                frames.push(Frame::Done(Tree::Node { label, children }));
            }
        }
    }
    if !state.is_terminal() {
        return Err(malformed(actions.len(), "derivation is incomplete"));
    }
    if next_token != tokens.len() {
        return Err(malformed(
            actions.len(),
            "word count does not match terminal actions",
        ));
    }
    match frames.pop() {
        Some(Frame::Done(t)) => Ok(t),
        _ => unreachable!("terminal state holds one subtree"),
    }
}

/// Text form of an action with string labels and words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawAction {
    Nt(String),
    Shift,
    Gen(String),
    Reduce,
}

impl fmt::Display for RawAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawAction::Nt(x) => write!(f, "NT({x})"),
            RawAction::Shift => write!(f, "SHIFT"),
            RawAction::Gen(w) => write!(f, "GEN({w})"),
            RawAction::Reduce => write!(f, "REDUCE"),
        }
    }
}

impl std::str::FromStr for RawAction {
    type Err = String;

    fn from_str(tok: &str) -> std::result::Result<Self, String> {
        let inner = |prefix: &str| {
            tok.strip_prefix(prefix)
                .and_then(|s| s.strip_suffix(')'))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        match tok {
            "SHIFT" => Ok(RawAction::Shift),
            "REDUCE" => Ok(RawAction::Reduce),
            _ => inner("NT(")
                .map(RawAction::Nt)
                .or_else(|| inner("GEN(").map(RawAction::Gen))
                .ok_or_else(|| format!("bad action token `{tok}`")),
        }
    }
}

pub fn format_actions(actions: &[RawAction]) -> String {
    actions
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_action_line(line: &str, line_no: usize) -> Result<Vec<RawAction>> {
    line.split_whitespace()
        .map(|t| {
            t.parse().map_err(|message| Error::Parse {
                line: line_no,
                message,
            })
        })
        .collect()
}
