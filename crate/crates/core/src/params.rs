//! Flat store of named parameter tensors plus a matching gradient buffer.
//!
//! Layers hold [`ParamId`] handles into the store. Forward passes read values
//! through `&ParameterStore`; backward passes accumulate into a separate
//! [`Gradients`] so that reading weights and writing their gradients never
//! conflict.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// Frozen tensors (lookup cold vectors) are skipped by optimizers.
    pub trainable: bool,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Param) -> Result<ParamId> {
        let expected: usize = param.shape.iter().product();
        if expected != param.value.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}: shape {:?} needs {} values, got {}",
                param.name,
                param.shape,
                expected,
                param.value.len()
            )));
        }
        if self.find(&param.name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter `{}`", param.name)));
        }
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            bufs: self.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn into_params(self) -> Vec<Param> {
        self.params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    /// Two distinct buffers at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a, b, "pair_mut needs distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.bufs.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.bufs.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.bufs.iter().enumerate().map(|(i, b)| (ParamId(i), b.as_slice()))
    }

    pub fn clear(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

pub fn uniform<R: Rng>(rng: &mut R, n: usize, range: f64) -> Vec<f64> {
    if range == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.random_range(-range..range)).collect()
}

/// y = Wᵀx + b with W stored row-major as (inputs × outputs).
pub(crate) fn linear_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let out = b.len();
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out..(i + 1) * out];
        for (yo, &wio) in y.iter_mut().zip(row) {
            *yo += xi * wio;
        }
    }
    y
}

/// Accumulates dW and db and returns dx.
pub(crate) fn linear_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let out = dy.len();
    for (d, &g) in db.iter_mut().zip(dy) {
        *d += g;
    }
    let mut dx = vec![0.0; x.len()];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out..(i + 1) * out];
        let drow = &mut dw[i * out..(i + 1) * out];
        let mut acc = 0.0;
        for o in 0..out {
            drow[o] += xi * dy[o];
            acc += row[o] * dy[o];
        }
        dx[i] = acc;
    }
    dx
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
