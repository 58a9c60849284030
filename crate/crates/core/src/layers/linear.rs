use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `x · W + b` with `W[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.add(format!("{prefix}/w"), Tensor::glorot(input_dim, output_dim, rng))?,
            bias: store.add(format!("{prefix}/b"), Tensor::zeros(vec![1, output_dim]))?,
            input_dim,
            output_dim,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Lookup table `[vocab × dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    /// Uniform initialisation in `[-range, range]`.
    pub fn uniform<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add(name, Tensor::uniform(vec![vocab, dim], -range, range, rng))?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, ids: &[usize]) -> Result<Var> {
        let t = g.param(store, self.table);
        g.gather_rows(t, ids)
    }
}
