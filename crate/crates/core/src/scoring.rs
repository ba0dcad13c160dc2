//! TransE and TuckER confidence scores.
//!
//! All scorers follow "higher = more plausible". TransE returns a negated
//! distance; TuckER returns `sigmoid(raw)` where `raw` is the trilinear form.
//! Both expose a *logit* (TransE: the score itself, TuckER: `raw`) which the
//! training objectives and the ranking code consume.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EntityId;
use crate::error::{Error, Result};
use crate::params::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::Config(format!("unknown norm `{other}` (l1, l2)"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// `-‖e_s + e_r − e_t‖`.
pub fn score_transe(e_s: &[f64], e_r: &[f64], e_t: &[f64], norm: Norm) -> Result<f64> {
    check_len("transe source/relation", e_s.len(), e_r.len())?;
    check_len("transe source/target", e_s.len(), e_t.len())?;
    Ok(transe_from_query(&transe_query(e_s, e_r), e_t, norm))
}

pub(crate) fn transe_query(e_s: &[f64], e_r: &[f64]) -> Vec<f64> {
    e_s.iter().zip(e_r).map(|(s, r)| s + r).collect()
}

pub(crate) fn transe_from_query(q: &[f64], e_t: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => -q.iter().zip(e_t).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        Norm::L2 => -q.iter().zip(e_t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
    }
}

/// Gradient of the TransE score w.r.t. the residual `x = e_s + e_r − e_t`,
/// scaled by `g`. At `x = 0` the L2 subgradient 0 is used.
pub(crate) fn transe_residual_grad(q: &[f64], e_t: &[f64], norm: Norm, g: f64) -> Vec<f64> {
    let x: Vec<f64> = q.iter().zip(e_t).map(|(a, b)| a - b).collect();
    match norm {
        Norm::L1 => x.iter().map(|v| -g * v.signum() * (*v != 0.0) as u8 as f64).collect(),
        Norm::L2 => {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; x.len()]
            } else {
                x.iter().map(|v| -g * v / n).collect()
            }
        }
    }
}

/// Core tensor of shape (d_e × d_r × d_e), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerCore<'a> {
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub values: &'a [f64],
}

impl<'a> TuckerCore<'a> {
    pub fn new(entity_dim: usize, relation_dim: usize, values: &'a [f64]) -> Result<Self> {
        check_len("tucker core size", values.len(), entity_dim * relation_dim * entity_dim)?;
        Ok(Self { entity_dim, relation_dim, values })
    }

    /// `q[k] = Σ_i Σ_j W[i,j,k]·e_s[i]·w_r[j]`; the raw score is then `q · e_t`.
    pub fn query(&self, e_s: &[f64], w_r: &[f64]) -> Vec<f64> {
        let (de, dr) = (self.entity_dim, self.relation_dim);
        let mut q = vec![0.0; de];
        for (i, &s) in e_s.iter().enumerate() {
            for (j, &r) in w_r.iter().enumerate() {
                let sr = s * r;
                let slab = &self.values[(i * dr + j) * de..(i * dr + j + 1) * de];
                for (qk, &w) in q.iter_mut().zip(slab) {
                    *qk += w * sr;
                }
            }
        }
        q
    }

    fn check(&self, e_s: &[f64], w_r: &[f64], e_t: &[f64]) -> Result<()> {
        check_len("tucker source", e_s.len(), self.entity_dim)?;
        check_len("tucker relation", w_r.len(), self.relation_dim)?;
        check_len("tucker target", e_t.len(), self.entity_dim)
    }

    pub fn raw(&self, e_s: &[f64], w_r: &[f64], e_t: &[f64]) -> Result<f64> {
        self.check(e_s, w_r, e_t)?;
        Ok(dot(&self.query(e_s, w_r), e_t))
    }

    /// Backward pass of `raw` scaled by `g`, accumulating into the given slots.
    pub(crate) fn raw_backward(
        &self,
        e_s: &[f64],
        w_r: &[f64],
        dq: &[f64],
        dcore: &mut [f64],
        de_s: &mut [f64],
        dw_r: &mut [f64],
    ) {
        let (de, dr) = (self.entity_dim, self.relation_dim);
        for i in 0..de {
            for j in 0..dr {
                let base = (i * dr + j) * de;
                let slab = &self.values[base..base + de];
                let mut acc = 0.0;
                for k in 0..de {
                    acc += slab[k] * dq[k];
                }
                de_s[i] += acc * w_r[j];
                dw_r[j] += acc * e_s[i];
                let sr = e_s[i] * w_r[j];
                for k in 0..de {
                    dcore[base + k] += dq[k] * sr;
                }
            }
        }
    }
}

/// `sigmoid(Σ W[i,j,k]·e_s[i]·w_r[j]·e_t[k])`.
pub fn score_tucker(e_s: &[f64], w_r: &[f64], e_t: &[f64], core: &TuckerCore<'_>) -> Result<f64> {
    Ok(sigmoid(core.raw(e_s, w_r, e_t)?))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Scores aligned with candidate ids. `scores` are confidences (TuckER in
/// (0,1)); `logits` are the pre-sigmoid values ranking is computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub candidates: Vec<EntityId>,
    pub scores: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Literal triple sum, independent of the factored query path.
    fn tucker_triple_sum(w: &[f64], de: usize, dr: usize, s: &[f64], r: &[f64], t: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..de {
            for j in 0..dr {
                for k in 0..de {
                    acc += w[(i * dr + j) * de + k] * s[i] * r[j] * t[k];
                }
            }
        }
        acc
    }

    #[test]
    fn transe_examples() {
        assert_eq!(score_transe(&[1.0, 2.0], &[0.5, -1.0], &[1.5, 1.0], Norm::L2).unwrap(), 0.0);
        assert_eq!(score_transe(&[0.0, 0.0], &[0.0, 0.0], &[3.0, 4.0], Norm::L2).unwrap(), -5.0);
        assert_eq!(score_transe(&[0.0, 0.0], &[0.0, 0.0], &[3.0, 4.0], Norm::L1).unwrap(), -7.0);
        assert!(matches!(
            score_transe(&[0.0], &[0.0, 1.0], &[0.0], Norm::L2),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn tucker_examples() {
        let zero = vec![0.0; 8];
        let core = TuckerCore::new(2, 2, &zero).unwrap();
        assert_eq!(score_tucker(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &core).unwrap(), 0.5);

        let w = [2.0];
        let core = TuckerCore::new(1, 1, &w).unwrap();
        assert_eq!(core.raw(&[3.0], &[0.5], &[1.0]).unwrap(), 3.0);
        let p = score_tucker(&[3.0], &[0.5], &[1.0], &core).unwrap();
        assert!((p - 0.9526).abs() < 1e-4);

        let mut diag = vec![0.0; 27];
        for i in 0..3 {
            diag[(i * 3 + i) * 3 + i] = 1.0;
        }
        let core = TuckerCore::new(3, 3, &diag).unwrap();
        let u1 = [1.0, 0.0, 0.0];
        assert_eq!(core.raw(&u1, &u1, &u1).unwrap(), 1.0);

        assert!(TuckerCore::new(2, 2, &[0.0; 7]).is_err());
        let core = TuckerCore::new(1, 1, &w).unwrap();
        assert!(core.raw(&[1.0, 2.0], &[1.0], &[1.0]).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #[test]
        fn transe_is_nonpositive(s in vec_strategy(4), r in vec_strategy(4), t in vec_strategy(4)) {
            for norm in [Norm::L1, Norm::L2] {
                let v = score_transe(&s, &r, &t, norm).unwrap();
                prop_assert!(v <= 0.0);
                let exact: Vec<f64> = s.iter().zip(&r).map(|(a, b)| a + b).collect();
                prop_assert_eq!(score_transe(&s, &r, &exact, norm).unwrap(), 0.0);
            }
        }

        #[test]
        fn tucker_matches_triple_sum_and_is_linear_in_source(
            w in vec_strategy(3 * 2 * 3),
            s in vec_strategy(3),
            r in vec_strategy(2),
            t in vec_strategy(3),
            alpha in -3.0f64..3.0,
        ) {
            let core = TuckerCore::new(3, 2, &w).unwrap();
            let raw = core.raw(&s, &r, &t).unwrap();
            let oracle = tucker_triple_sum(&w, 3, 2, &s, &r, &t);
            prop_assert!((raw - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
            let scaled: Vec<f64> = s.iter().map(|v| v * alpha).collect();
            let raw_scaled = core.raw(&scaled, &r, &t).unwrap();
            prop_assert!((raw_scaled - alpha * raw).abs() <= 1e-10 * (1.0 + raw.abs()));
            let p = score_tucker(&s, &r, &t, &core).unwrap();
            // sigmoid rounds to exactly 0 or 1 in f64 once |raw| passes ~37.
            if raw.abs() < 30.0 {
                prop_assert!(p > 0.0 && p < 1.0);
            } else {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
