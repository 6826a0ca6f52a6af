use std::collections::HashMap;

use rand::Rng;

use super::scalar::Scalar;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

/// Initial values for a new parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Uniform in `±limit`.
    Uniform(f64),
}

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a `rows×cols` tensor. Values are drawn in `f64` and then cast,
    /// so one seed yields the same initialization for any element type.
    pub fn add<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Xavier => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| F::of(rng.random_range(-limit..=limit))).collect()
            }
            Init::Uniform(limit) => (0..n).map(|_| F::of(rng.random_range(-limit..=limit))).collect(),
        };
        self.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data,
        })
    }

    pub(crate) fn push(&mut self, param: Param<F>) -> ParamId {
        let id = self.params.len();
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for p in &self.params {
            out.push(Param {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                data: vec![F::zero(); p.data.len()],
            });
        }
        out
    }

    /// Casts every value to another element type.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.push(Param {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                data: p.data.iter().map(|v| G::of(v.as_f64())).collect(),
            });
        }
        out
    }
}
