use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Additive attention: `score_i = v . tanh(Wq q + Wk k_i)`, output is the
/// softmax-weighted sum of the keys.
#[derive(Debug, Clone)]
pub struct Attention {
    wq: ParamId,
    wk: ParamId,
    v: ParamId,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        att_dim: usize,
    ) -> Self {
        Attention {
            wq: store.add_init(&format!("{name}.wq"), att_dim, query_dim, Init::Xavier, rng),
            wk: store.add_init(&format!("{name}.wk"), att_dim, key_dim, Init::Xavier, rng),
            v: store.add_init(&format!("{name}.v"), att_dim, 1, Init::Xavier, rng),
        }
    }

    /// `Wk k_i` for each key; computed once when the keys are fixed.
    pub fn project_keys(&self, g: &mut Graph<'_>, keys: &[Var]) -> Vec<Var> {
        keys.iter().map(|&k| g.matvec(self.wk, k)).collect()
    }

    /// Returns `(context, weights)`.
    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        query: Var,
        keys: &[Var],
        projected: &[Var],
    ) -> Result<(Var, Var)> {
        if keys.is_empty() {
            return Err(Error::contract("attention over zero keys"));
        }
        debug_assert_eq!(keys.len(), projected.len());
        let q = g.matvec(self.wq, query);
        let v = g.param(self.v);
        let scores = g.attn_scores(q, projected, v);
        let weights = g.softmax(scores);
        Ok((g.weighted_sum(weights, keys), weights))
    }

    pub fn apply(&self, g: &mut Graph<'_>, query: Var, keys: &[Var]) -> Result<Var> {
        let projected = self.project_keys(g, keys);
        Ok(self.attend(g, query, keys, &projected)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn setup() -> (ParamStore, Attention) {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let att = Attention::new(&mut store, &mut rng, "att", 3, 4, 5);
        (store, att)
    }

    #[test]
    fn single_key_is_returned() {
        let (store, att) = setup();
        let mut g = Graph::new(&store, false, 0);
        let q = g.constant(vec![0.2, -0.4, 0.9]);
        let k = g.constant(vec![1.0, 2.0, 3.0, 4.0]);
        let out = att.apply(&mut g, q, &[k]).unwrap();
        assert_eq!(g.value(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn identical_keys_are_returned() {
        let (store, att) = setup();
        let mut g = Graph::new(&store, false, 0);
        let q = g.constant(vec![0.2, -0.4, 0.9]);
        let keys: Vec<Var> = (0..3)
            .map(|_| g.constant(vec![0.5, -1.0, 0.25, 2.0]))
            .collect();
        let out = att.apply(&mut g, q, &keys).unwrap();
        for (a, b) in g.value(out).iter().zip([0.5, -1.0, 0.25, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let (store, att) = setup();
        let mut g = Graph::new(&store, false, 0);
        let q = g.constant(vec![0.7, 0.1, -0.3]);
        let keys: Vec<Var> = (0..4)
            .map(|i| g.constant(vec![i as f64, -(i as f64), 0.5, 1.0 / (1.0 + i as f64)]))
            .collect();
        let proj = att.project_keys(&mut g, &keys);
        let (_, w) = att.attend(&mut g, q, &keys, &proj).unwrap();
        let total: f64 = g.value(w).iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_keys_rejected() {
        let (store, att) = setup();
        let mut g = Graph::new(&store, false, 0);
        let q = g.constant(vec![0.0; 3]);
        assert!(att.apply(&mut g, q, &[]).is_err());
    }
}
