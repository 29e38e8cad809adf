use std::collections::{BTreeMap, HashMap};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named row-major parameter matrix. Vectors are `n x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform(f64),
    /// Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    Xavier,
}

impl Init {
    pub fn fill(self, rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
        let n = rows * cols;
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v; n],
            Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..a)).collect(),
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        trainable: bool,
    ) -> ParamId {
        assert_eq!(data.len(), rows * cols, "parameter {name} has wrong size");
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add_init(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let data = init.fill(rows, cols, rng);
        self.add(name, rows, cols, data, true)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    p.data.iter().map(|x| x * x).sum::<f64>().sqrt(),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GradBuf {
    Dense(Vec<f64>),
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

/// Per-parameter gradient accumulators. Embedding lookups only touch the
/// rows they read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    bufs: Vec<Option<GradBuf>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, id: ParamId) -> &mut Option<GradBuf> {
        if self.bufs.len() <= id.0 {
            self.bufs.resize(id.0 + 1, None);
        }
        &mut self.bufs[id.0]
    }

    pub(crate) fn dense_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        let slot = self.slot(id);
        match slot {
            Some(GradBuf::Dense(_)) => {}
            Some(GradBuf::Rows { cols, rows }) => {
                let mut dense = vec![0.0; len];
                for (r, g) in rows.iter() {
                    dense[r * *cols..(r + 1) * *cols].copy_from_slice(g);
                }
                *slot = Some(GradBuf::Dense(dense));
            }
            None => *slot = Some(GradBuf::Dense(vec![0.0; len])),
        }
        match slot {
            Some(GradBuf::Dense(d)) => d,
            _ => unreachable!(),
        }
    }

    pub(crate) fn row_mut(&mut self, id: ParamId, row: usize, cols: usize) -> &mut [f64] {
        let slot = self.slot(id);
        if slot.is_none() {
            *slot = Some(GradBuf::Rows {
                cols,
                rows: BTreeMap::new(),
            });
        }
        match slot {
            Some(GradBuf::Dense(d)) => &mut d[row * cols..(row + 1) * cols],
            Some(GradBuf::Rows { rows, .. }) => rows.entry(row).or_insert_with(|| vec![0.0; cols]),
            None => unreachable!(),
        }
    }

    /// Value of one gradient coordinate (zero when untouched).
    pub fn get(&self, id: ParamId, index: usize) -> f64 {
        match self.bufs.get(id.0) {
            Some(Some(GradBuf::Dense(d))) => d[index],
            Some(Some(GradBuf::Rows { cols, rows })) => rows
                .get(&(index / cols))
                .map(|r| r[index % cols])
                .unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Dense copy of the gradient for `id`, if it was touched.
    pub fn dense(&self, id: ParamId, len: usize) -> Option<Vec<f64>> {
        match self.bufs.get(id.0)? {
            Some(GradBuf::Dense(d)) => Some(d.clone()),
            Some(GradBuf::Rows { cols, rows }) => {
                let mut out = vec![0.0; len];
                for (r, g) in rows {
                    out[r * cols..(r + 1) * cols].copy_from_slice(g);
                }
                Some(out)
            }
            None => None,
        }
    }

    /// Calls `f(id, row_offset, values)` for each touched block.
    pub fn for_each(&self, mut f: impl FnMut(ParamId, usize, &[f64])) {
        for (i, buf) in self.bufs.iter().enumerate() {
            match buf {
                Some(GradBuf::Dense(d)) => f(ParamId(i), 0, d),
                Some(GradBuf::Rows { cols, rows }) => {
                    for (r, g) in rows {
                        f(ParamId(i), r * cols, g);
                    }
                }
                None => {}
            }
        }
    }

    pub fn touched(&self, id: ParamId) -> bool {
        matches!(self.bufs.get(id.0), Some(Some(_)))
    }

    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        self.for_each(|_, _, g| sq += g.iter().map(|x| x * x).sum::<f64>());
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.bufs.iter_mut().flatten() {
            match buf {
                GradBuf::Dense(d) => d.iter_mut().for_each(|x| *x *= factor),
                GradBuf::Rows { rows, .. } => {
                    rows.values_mut().flatten().for_each(|x| *x *= factor)
                }
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, buf) in other.bufs.iter().enumerate() {
            let id = ParamId(i);
            match buf {
                Some(GradBuf::Dense(d)) => {
                    let dst = self.dense_mut(id, d.len());
                    dst.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                }
                Some(GradBuf::Rows { cols, rows }) => {
                    for (r, g) in rows {
                        let dst = self.row_mut(id, *r, *cols);
                        dst.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
                None => {}
            }
        }
    }

    pub fn clear(&mut self) {
        self.bufs.clear();
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, _, g| ok &= g.iter().all(|x| x.is_finite()));
        ok
    }
}
