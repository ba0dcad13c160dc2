//! Text encoders mapping word-id sequences to fixed-size vectors, and the
//! lookup-table encoder used by plain KGE baselines.
//!
//! Every encoder has a forward pass that returns a cache and a backward pass
//! that consumes it, accumulating parameter gradients into [`Gradients`].

use crate::data::WordId;
use crate::error::{Error, Result};
use crate::params::{linear_backward, linear_forward, sigmoid, Gradients, ParamId, ParameterStore};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Gathers table rows for the tokens, in order.
pub fn embed_sequence(tokens: &[WordId], table: &Matrix) -> Result<Matrix> {
    gather_rows(tokens, &table.data, table.rows, table.cols)
}

pub(crate) fn gather_rows(tokens: &[WordId], table: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut out = Matrix::zeros(tokens.len(), cols);
    for (i, t) in tokens.iter().enumerate() {
        if t.idx() >= rows {
            return Err(Error::IdOutOfRange { kind: "word", id: t.idx(), size: rows });
        }
        out.row_mut(i).copy_from_slice(&table[t.idx() * cols..(t.idx() + 1) * cols]);
    }
    Ok(out)
}

/// Affine map stored as an (inputs × outputs) weight and an output bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn forward(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        linear_forward(store.value(self.weight), store.value(self.bias), x)
    }

    pub fn backward(&self, store: &ParameterStore, x: &[f64], dy: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let (dw, db) = grads.pair_mut(self.weight, self.bias);
        linear_backward(store.value(self.weight), x, dy, dw, db)
    }
}

/// One convolution filter bank; weight laid out as (width × word_dim × channels).
#[derive(Debug, Clone)]
pub struct ConvFilter {
    pub width: usize,
    pub channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct CnnEncoder {
    pub word_dim: usize,
    pub filters: Vec<ConvFilter>,
}

/// For each pooled channel, the winning time step if its pre-activation was
/// positive (a dead channel pools to zero and passes no gradient).
#[derive(Debug, Clone)]
pub struct CnnCache {
    winners: Vec<Option<usize>>,
}

impl CnnEncoder {
    pub fn feature_dim(&self) -> usize {
        self.filters.iter().map(|f| f.channels).sum()
    }

    /// Convolution over time with end zero-padding, ReLU, and max-over-time
    /// pooling per channel; pooled channels of all filters are concatenated.
    pub fn features(&self, store: &ParameterStore, seq: &Matrix) -> (Vec<f64>, CnnCache) {
        let d = self.word_dim;
        let mut feat = Vec::with_capacity(self.feature_dim());
        let mut winners = Vec::with_capacity(self.feature_dim());
        for f in &self.filters {
            let w = store.value(f.weight);
            let b = store.value(f.bias);
            let positions = seq.rows.max(f.width) - f.width + 1;
            let mut best = vec![0.0f64; f.channels];
            let mut arg = vec![None; f.channels];
            let mut z = vec![0.0; f.channels];
            for p in 0..positions {
                z.copy_from_slice(b);
                for o in 0..f.width {
                    let t = p + o;
                    if t >= seq.rows {
                        break;
                    }
                    let x = seq.row(t);
                    for (di, &xv) in x.iter().enumerate() {
                        let base = (o * d + di) * f.channels;
                        for (c, zc) in z.iter_mut().enumerate() {
                            *zc += w[base + c] * xv;
                        }
                    }
                }
                for c in 0..f.channels {
                    if z[c] > best[c] {
                        best[c] = z[c];
                        arg[c] = Some(p);
                    }
                }
            }
            feat.extend_from_slice(&best);
            winners.extend(arg);
        }
        (feat, CnnCache { winners })
    }

    pub fn features_backward(
        &self,
        store: &ParameterStore,
        seq: &Matrix,
        cache: &CnnCache,
        dfeat: &[f64],
        grads: &mut Gradients,
    ) -> Matrix {
        let d = self.word_dim;
        let mut dseq = Matrix::zeros(seq.rows, seq.cols);
        let mut offset = 0;
        for f in &self.filters {
            let w = store.value(f.weight);
            for c in 0..f.channels {
                let g = dfeat[offset + c];
                let Some(p) = cache.winners[offset + c] else { continue };
                if g == 0.0 {
                    continue;
                }
                grads.get_mut(f.bias)[c] += g;
                let dw = grads.get_mut(f.weight);
                for o in 0..f.width {
                    let t = p + o;
                    if t >= seq.rows {
                        break;
                    }
                    for (di, &x) in seq.row(t).iter().enumerate().take(d) {
                        dw[(o * d + di) * f.channels + c] += g * x;
                    }
                }
                for o in 0..f.width {
                    let t = p + o;
                    if t >= seq.rows {
                        break;
                    }
                    let dx = dseq.row_mut(t);
                    for di in 0..d {
                        dx[di] += g * w[(o * d + di) * f.channels + c];
                    }
                }
            }
            offset += f.channels;
        }
        dseq
    }
}

/// LSTM cell with gate order (input, forget, candidate, output).
/// `w_x` is (4h × input), `w_h` is (4h × h), both row-major.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
struct LstmStep {
    t: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<LstmStep>,
}

impl LstmCell {
    /// Runs the recurrence from zero state over `order` (row indices of
    /// `seq`) and returns the final hidden state.
    fn run(&self, store: &ParameterStore, seq: &Matrix, order: impl Iterator<Item = usize>) -> (Vec<f64>, LstmCache) {
        let h = self.hidden;
        let wx = store.value(self.w_x);
        let wh = store.value(self.w_h);
        let b = store.value(self.bias);
        let mut h_t = vec![0.0; h];
        let mut c_t = vec![0.0; h];
        let mut steps = Vec::with_capacity(seq.rows);
        for t in order {
            let x = seq.row(t);
            let mut a = b.to_vec();
            for (r, ar) in a.iter_mut().enumerate() {
                let rx = &wx[r * self.input..(r + 1) * self.input];
                let rh = &wh[r * h..(r + 1) * h];
                let mut acc = 0.0;
                for (wv, xv) in rx.iter().zip(x) {
                    acc += wv * xv;
                }
                for (wv, hv) in rh.iter().zip(&h_t) {
                    acc += wv * hv;
                }
                *ar += acc;
            }
            let i: Vec<f64> = a[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = a[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = a[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = a[3 * h..].iter().map(|&v| sigmoid(v)).collect();
            let c_new: Vec<f64> = (0..h).map(|k| f[k] * c_t[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
            steps.push(LstmStep {
                t,
                h_prev: std::mem::replace(&mut h_t, h_new),
                c_prev: std::mem::replace(&mut c_t, c_new),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        (h_t, LstmCache { steps })
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state; adds input gradients into `dseq`.
    fn backward(&self, store: &ParameterStore, seq: &Matrix, cache: &LstmCache, dh_final: &[f64], grads: &mut Gradients, dseq: &mut Matrix) {
        let h = self.hidden;
        let n_in = self.input;
        let wx = store.value(self.w_x);
        let wh = store.value(self.w_h);
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for step in cache.steps.iter().rev() {
            for k in 0..h {
                let d_o = dh[k] * step.tanh_c[k];
                dc[k] += dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
                let d_i = dc[k] * step.g[k];
                let d_g = dc[k] * step.i[k];
                let d_f = dc[k] * step.c_prev[k];
                da[k] = d_i * step.i[k] * (1.0 - step.i[k]);
                da[h + k] = d_f * step.f[k] * (1.0 - step.f[k]);
                da[2 * h + k] = d_g * (1.0 - step.g[k] * step.g[k]);
                da[3 * h + k] = d_o * step.o[k] * (1.0 - step.o[k]);
                dc[k] *= step.f[k];
            }
            let x = seq.row(step.t);
            {
                let dwx = grads.get_mut(self.w_x);
                for (r, &g) in da.iter().enumerate() {
                    for (d, &xv) in x.iter().enumerate() {
                        dwx[r * n_in + d] += g * xv;
                    }
                }
            }
            {
                let dwh = grads.get_mut(self.w_h);
                for (r, &g) in da.iter().enumerate() {
                    for (k, &hv) in step.h_prev.iter().enumerate() {
                        dwh[r * h + k] += g * hv;
                    }
                }
            }
            for (db, &g) in grads.get_mut(self.bias).iter_mut().zip(&da) {
                *db += g;
            }
            let dx = dseq.row_mut(step.t);
            for (r, &g) in da.iter().enumerate() {
                for d in 0..n_in {
                    dx[d] += wx[r * n_in + d] * g;
                }
            }
            let mut dh_prev = vec![0.0; h];
            for (r, &g) in da.iter().enumerate() {
                for k in 0..h {
                    dh_prev[k] += wh[r * h + k] * g;
                }
            }
            dh = dh_prev;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmEncoder {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstmEncoder {
    pub fn feature_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// Final forward state followed by final backward state.
    pub fn features(&self, store: &ParameterStore, seq: &Matrix) -> (Vec<f64>, BiLstmCache) {
        let (hf, fwd) = self.forward.run(store, seq, 0..seq.rows);
        let (hb, bwd) = self.backward.run(store, seq, (0..seq.rows).rev());
        let mut feat = hf;
        feat.extend(hb);
        (feat, BiLstmCache { fwd, bwd })
    }

    pub fn features_backward(
        &self,
        store: &ParameterStore,
        seq: &Matrix,
        cache: &BiLstmCache,
        dfeat: &[f64],
        grads: &mut Gradients,
    ) -> Matrix {
        let h = self.forward.hidden;
        let mut dseq = Matrix::zeros(seq.rows, seq.cols);
        self.forward.backward(store, seq, &cache.fwd, &dfeat[..h], grads, &mut dseq);
        self.backward.backward(store, seq, &cache.bwd, &dfeat[h..], grads, &mut dseq);
        dseq
    }
}

/// Baseline tables. Ids past the trained rows fall to frozen cold rows; the
/// last cold row serves text that is unknown to the vocabulary entirely.
#[derive(Debug, Clone)]
pub struct LookupTable {
    pub trained: ParamId,
    pub trained_rows: usize,
    pub cold: ParamId,
    pub cold_rows: usize,
    pub dim: usize,
}

impl LookupTable {
    /// (parameter, row) backing an id; `None` selects the fallback cold row.
    pub fn locate(&self, id: Option<usize>) -> (ParamId, usize) {
        match id {
            Some(i) if i < self.trained_rows => (self.trained, i),
            Some(i) if i - self.trained_rows < self.cold_rows - 1 => (self.cold, i - self.trained_rows),
            _ => (self.cold, self.cold_rows - 1),
        }
    }

    pub fn row<'a>(&self, store: &'a ParameterStore, id: Option<usize>) -> &'a [f64] {
        let (p, r) = self.locate(id);
        &store.value(p)[r * self.dim..(r + 1) * self.dim]
    }
}
