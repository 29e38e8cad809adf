use super::params::{Gradients, ParamStore};

/// Adam with global-norm gradient clipping. Frozen parameters are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, clip: Option<f64>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> f64 {
        let norm = grads.norm();
        let factor = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * bc2.sqrt() / bc1;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if m.is_empty() {
                *m = vec![0.0; p.data.len()];
                *v = vec![0.0; p.data.len()];
            }
            let g = grads.dense(id, p.data.len());
            for k in 0..p.data.len() {
                let gk = g.as_ref().map_or(0.0, |g| g[k] * factor);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                p.data[k] -= step * m[k] / (v[k].sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", 2, 1, vec![3.0, -2.0], true);
        let frozen = store.add("f", 1, 1, vec![5.0], false);
        let mut adam = Adam::new(0.1, Some(5.0));
        for _ in 0..500 {
            let mut g = Gradients::new();
            let x = store.get(id).data.clone();
            let d = g.dense_mut(id, 2);
            d[0] = 2.0 * x[0];
            d[1] = 2.0 * x[1];
            g.dense_mut(frozen, 1)[0] = 1.0;
            adam.step(&mut store, &g);
        }
        assert!(store.get(id).data.iter().all(|v| v.abs() < 1e-2));
        assert_eq!(store.get(frozen).data, vec![5.0]);
    }
}
