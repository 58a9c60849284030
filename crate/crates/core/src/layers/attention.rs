//! Modality attention over per-position modality vectors.
//!
//! For modality vectors `h_m` (all `d`-dimensional) at a position:
//!
//! ```text
//! u_m = tanh(W h_m + b)
//! α_m = softmax_m(h_mᵀ u_m)
//! β   = Σ_m α_m h_m
//! ```
//!
//! Every position is handled independently; the batched form below stacks
//! positions as rows.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ModalityAttention {
    /// `[d × d]`
    pub w: ParamId,
    /// `[1 × d]`
    pub b: ParamId,
    pub dim: usize,
}

pub struct AttentionOutput {
    /// Fused vectors `[n × d]`.
    pub fused: Var,
    /// Modality weights `[n × M]`.
    pub weights: Var,
}

impl ModalityAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(ModalityAttention {
            w: store.add(format!("{prefix}/w"), Tensor::glorot(dim, dim, rng))?,
            b: store.add(format!("{prefix}/b"), Tensor::zeros(vec![1, dim]))?,
            dim,
        })
    }

    /// `modalities[m]` is `[n × d]`: modality `m` at each of `n` positions.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, modalities: &[Var]) -> Result<AttentionOutput> {
        let Some(&first) = modalities.first() else {
            return Err(Error::invalid("modality_attention", "no modalities"));
        };
        let shape = g.shape(first).to_vec();
        for &m in modalities {
            if g.shape(m) != shape.as_slice() || shape[1] != self.dim {
                return Err(Error::shape("modality_attention", &shape, g.shape(m)));
            }
        }
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let mut scores = Vec::with_capacity(modalities.len());
        for &h in modalities {
            let proj = g.matmul(h, w)?;
            let proj = g.add_row(proj, b)?;
            let u = g.tanh(proj);
            let hu = g.mul(h, u)?;
            scores.push(g.sum_cols(hu)?);
        }
        let scores = g.concat(&scores, 1)?;
        let alpha = g.softmax_rows(scores)?;
        let mut fused = None;
        for (m, &h) in modalities.iter().enumerate() {
            let a = g.slice_cols(alpha, m, m + 1)?;
            let term = g.mul_col(h, a)?;
            fused = Some(match fused {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok(AttentionOutput {
            fused: fused.expect("at least one modality"),
            weights: alpha,
        })
    }
}
