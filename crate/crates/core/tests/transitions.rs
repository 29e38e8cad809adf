//! Properties of the transition systems over randomly generated trees and
//! random legal walks.

use proptest::prelude::*;

use rnng::transitions::{
    apply_action, legal_actions, oracle_from_tree, tree_from_actions, Action, ActionSpace,
    ActionType, Constraints, Mode, ParserState,
};
use rnng::tree::{IdTree, Token, Tree};

const NUM_NT: usize = 4;

fn arb_tree() -> impl Strategy<Value = IdTree> {
    let leaf = (0usize..6, 0usize..3).prop_map(|(w, p)| Tree::Leaf(Token::new(w, Some(p))));
    let inner = leaf.prop_recursive(6, 40, 4, |inner| {
        (0..NUM_NT, prop::collection::vec(inner, 1..4)).prop_map(|(x, cs)| Tree::node(x, cs))
    });
    (0..NUM_NT, prop::collection::vec(inner, 1..4)).prop_map(|(x, cs)| Tree::node(x, cs))
}

fn terminal_action(mode: Mode, word: usize) -> Action {
    match mode {
        Mode::Discriminative => Action::Shift,
        Mode::Generative => Action::Gen(word),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn oracle_round_trip(tree in arb_tree()) {
        let leaves: Vec<Token<usize>> = tree.tokens();
        for mode in [Mode::Discriminative, Mode::Generative] {
            let actions = oracle_from_tree(&tree, mode).unwrap();
            let back = tree_from_actions(&actions, &leaves).unwrap();
            prop_assert_eq!(&back, &tree);
        }
    }

    #[test]
    fn action_count_identity(tree in arb_tree()) {
        let expected = 2 * tree.num_internal() + tree.num_leaves();
        for mode in [Mode::Discriminative, Mode::Generative] {
            let actions = oracle_from_tree(&tree, mode).unwrap();
            prop_assert_eq!(actions.len(), expected);
            let nts = actions.iter().filter(|a| matches!(a, Action::Nt(_))).count();
            let reduces = actions.iter().filter(|a| matches!(a, Action::Reduce)).count();
            prop_assert_eq!(nts, tree.num_internal());
            prop_assert_eq!(reduces, tree.num_internal());
        }
    }

    #[test]
    fn oracle_replays_legally(tree in arb_tree()) {
        let words: Vec<usize> = tree.words();
        let space = ActionSpace::new(NUM_NT);
        for mode in [Mode::Discriminative, Mode::Generative] {
            let mut state = match mode {
                Mode::Discriminative => ParserState::discriminative(&words, Constraints::unlimited()),
                Mode::Generative => ParserState::generative(Constraints::unlimited()),
            };
            for a in oracle_from_tree(&tree, mode).unwrap() {
                prop_assert!(legal_actions(&state, space).unwrap().contains(&a.kind()));
                state = apply_action(&state, a).unwrap();
            }
            prop_assert!(state.is_terminal());
        }
    }

    /// Any walk that only takes legal actions reaches a final state and
    /// never gets stuck, and every action off the legal set is rejected.
    #[test]
    fn legal_walks_terminate(
        n in 1usize..6,
        max_open in 1usize..4,
        choices in prop::collection::vec(0usize..1000, 200),
        gen in any::<bool>(),
    ) {
        let limits = Constraints { max_open_nt: max_open, max_gen_len: n };
        let space = ActionSpace::new(NUM_NT);
        let mode = if gen { Mode::Generative } else { Mode::Discriminative };
        let words: Vec<usize> = (0..n).collect();
        let mut state = match mode {
            Mode::Discriminative => ParserState::discriminative(&words, limits),
            Mode::Generative => ParserState::generative(limits),
        };
        let mut steps = 0;
        while !state.is_terminal() {
            let legal = legal_actions(&state, space).unwrap();
            prop_assert!(!legal.is_empty());
            for i in 0..space.size() {
                let kind = space.kind(i);
                if !legal.contains(&kind) {
                    let a = match kind {
                        ActionType::Nt(x) => Action::Nt(x),
                        ActionType::Terminal => terminal_action(mode, 0),
                        ActionType::Reduce => Action::Reduce,
                    };
                    prop_assert!(apply_action(&state, a).is_err());
                }
            }
            let pick = legal[choices[steps % choices.len()] % legal.len()];
            let a = match pick {
                ActionType::Nt(x) => Action::Nt(x),
                ActionType::Terminal => terminal_action(mode, steps),
                ActionType::Reduce => Action::Reduce,
            };
            state = apply_action(&state, a).unwrap();
            prop_assert!(state.open_nt() <= max_open);
            steps += 1;
            prop_assert!(steps <= 2 * n * (max_open + 1) + n);
        }
        prop_assert!(legal_actions(&state, space).is_err());
    }
}

#[test]
fn shift_rejected_in_generative_mode() {
    let state = ParserState::generative(Constraints::default());
    let state = apply_action(&state, Action::Nt(0)).unwrap();
    assert!(apply_action(&state, Action::Shift).is_err());
    assert!(apply_action(&state, Action::Gen(3)).is_ok());
}
