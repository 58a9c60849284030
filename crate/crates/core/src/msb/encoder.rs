use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::{Embedding, Linear};
use crate::tensor::Tensor;

use super::tokenizer::MsbInput;

/// Pre-softmax score given to masked key positions.
pub const ATTENTION_MASK_VALUE: f64 = -1e9;
pub const LAYER_NORM_EPS: f64 = 1e-12;
/// Half-width of the uniform embedding initialisation.
pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

pub struct Attended {
    pub output: Var,
    /// `[queries × keys]`, rows summing to one.
    pub weights: Var,
}

/// `softmax(Q Kᵀ / √d_k) V` where `key_mask[j] == false` hides key `j`.
pub fn scaled_dot_product_attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var, key_mask: &[bool]) -> Result<Attended> {
    let (m, d) = g.value(q).dims2()?;
    let (n, dk) = g.value(k).dims2()?;
    if dk != d {
        return Err(Error::shape("attention keys", &[m, d], &[n, dk]));
    }
    if g.value(v).rows() != n {
        return Err(Error::shape("attention values", &[n], g.shape(v)));
    }
    if key_mask.len() != n {
        return Err(Error::shape("attention mask", &[n], &[key_mask.len()]));
    }
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let scores = g.scale(raw, 1.0 / (d as f64).sqrt());
    let scores = if key_mask.iter().all(|&keep| keep) {
        scores
    } else {
        let row: Vec<f64> = key_mask
            .iter()
            .map(|&keep| if keep { 0.0 } else { ATTENTION_MASK_VALUE })
            .collect();
        let bias = Tensor::from_parts(vec![m, n], row.repeat(m));
        g.add_const(scores, &bias)?
    };
    let weights = g.softmax_rows(scores)?;
    let output = g.matmul(weights, v)?;
    Ok(Attended { output, weights })
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{prefix}/gamma"), Tensor::ones(vec![1, dim]))?,
            beta: store.add(format!("{prefix}/beta"), Tensor::zeros(vec![1, dim]))?,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "hidden size {hidden} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{prefix}/query"), hidden, hidden, rng)?,
            key: Linear::new(store, &format!("{prefix}/key"), hidden, hidden, rng)?,
            value: Linear::new(store, &format!("{prefix}/value"), hidden, hidden, rng)?,
            output: Linear::new(store, &format!("{prefix}/output"), hidden, hidden, rng)?,
            heads,
        })
    }

    /// Self-attention over the rows of `x`; returns the projected output
    /// and each head's weights.
    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let width = self.query.output_dim / self.heads;
        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = (h * width, (h + 1) * width);
            let qh = g.slice_cols(q, cols.0, cols.1)?;
            let kh = g.slice_cols(k, cols.0, cols.1)?;
            let vh = g.slice_cols(v, cols.0, cols.1)?;
            let a = scaled_dot_product_attention(g, qh, kh, vh, mask)?;
            outputs.push(a.output);
            weights.push(a.weights);
        }
        let joined = if outputs.len() == 1 {
            outputs[0]
        } else {
            g.concat(&outputs, 1)?
        };
        Ok((self.output.forward(g, store, joined)?, weights))
    }
}

/// Attention, add & norm, feed-forward with GELU, add & norm.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub inner: Linear,
    pub outer: Linear,
    pub output_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        heads: usize,
        intermediate: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(store, &format!("{prefix}/attention"), hidden, heads, rng)?,
            attention_norm: LayerNorm::new(store, &format!("{prefix}/attention/norm"), hidden)?,
            inner: Linear::new(store, &format!("{prefix}/ffn/inner"), hidden, intermediate, rng)?,
            outer: Linear::new(store, &format!("{prefix}/ffn/outer"), intermediate, hidden, rng)?,
            output_norm: LayerNorm::new(store, &format!("{prefix}/ffn/norm"), hidden)?,
        })
    }

    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>)> {
        let (attended, weights) = self.attention.forward(g, store, x, mask)?;
        let res = g.add(x, attended)?;
        let h = self.attention_norm.forward(g, store, res)?;
        let inner = self.inner.forward(g, store, h)?;
        let act = g.gelu(inner);
        let outer = self.outer.forward(g, store, act)?;
        let res = g.add(h, outer)?;
        Ok((self.output_norm.forward(g, store, res)?, weights))
    }
}

pub struct EncoderOutput {
    /// `[positions × hidden]`.
    pub hidden: Var,
    /// Per layer, per head, `[positions × positions]`.
    pub attention: Vec<Vec<Var>>,
}

/// Token, position and segment embeddings followed by the layer stack.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub token: Embedding,
    pub position: Embedding,
    pub segment: Embedding,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: usize,
        max_positions: usize,
        hidden: usize,
        heads: usize,
        layers: usize,
        intermediate: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let r = EMBEDDING_INIT_RANGE;
        Ok(Encoder {
            token: Embedding::uniform(store, "embeddings/token", vocab, hidden, r, rng)?,
            position: Embedding::uniform(store, "embeddings/position", max_positions, hidden, r, rng)?,
            segment: Embedding::uniform(store, "embeddings/segment", 2, hidden, r, rng)?,
            embedding_norm: LayerNorm::new(store, "embeddings/norm", hidden)?,
            layers: (0..layers)
                .map(|l| EncoderLayer::new(store, &format!("layer{l}"), hidden, heads, intermediate, rng))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, input: &MsbInput) -> Result<EncoderOutput> {
        let n = input.len();
        if n > self.position.vocab {
            return Err(Error::contract(format!(
                "{n} positions exceed the maximum of {}",
                self.position.vocab
            )));
        }
        if input.segments.len() != n || input.mask.len() != n {
            return Err(Error::shape(
                "encoder input",
                &[n],
                &[input.segments.len(), input.mask.len()],
            ));
        }
        if let Some(&bad) = input.ids.iter().find(|&&id| id >= self.token.vocab) {
            return Err(Error::contract(format!(
                "token id {bad} outside the vocabulary of {}",
                self.token.vocab
            )));
        }
        if let Some(&bad) = input.segments.iter().find(|&&s| s > 1) {
            return Err(Error::contract(format!("segment id {bad} is not 0 or 1")));
        }
        let tok = self.token.forward(g, store, &input.ids)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = self.position.forward(g, store, &positions)?;
        let seg = self.segment.forward(g, store, &input.segments)?;
        let sum = g.add(tok, pos)?;
        let sum = g.add(sum, seg)?;
        let mut x = self.embedding_norm.forward(g, store, sum)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(g, store, x, &input.mask)?;
            x = y;
            attention.push(w);
        }
        Ok(EncoderOutput { hidden: x, attention })
    }
}
