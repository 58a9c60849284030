//! LSTM and bidirectional LSTM.
//!
//! Gate weights are packed column-wise as `[f | i | o | c]`:
//!
//! ```text
//! f_t = σ(W_f x_t + U_f h_{t-1} + b_f)
//! i_t = σ(W_i x_t + U_i h_{t-1} + b_i)
//! o_t = σ(W_o x_t + U_o h_{t-1} + b_o)
//! c_t = f_t ∘ c_{t-1} + i_t ∘ tanh(W_c x_t + U_c h_{t-1} + b_c)
//! h_t = o_t ∘ tanh(c_t)
//! ```

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Lstm {
    /// `[input × 4H]`
    pub w: ParamId,
    /// `[H × 4H]`
    pub u: ParamId,
    /// `[1 × 4H]`
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut glorot_blocks = |rows: usize| -> Tensor {
            // each gate block gets its own Glorot range
            let blocks: Vec<Tensor> = (0..4).map(|_| Tensor::glorot(rows, hidden, rng)).collect();
            let mut data = Vec::with_capacity(rows * 4 * hidden);
            for r in 0..rows {
                for b in &blocks {
                    data.extend_from_slice(b.row_slice(r));
                }
            }
            Tensor::new(vec![rows, 4 * hidden], data).expect("sized above")
        };
        let w = glorot_blocks(input_dim);
        let u = glorot_blocks(hidden);
        Ok(Lstm {
            w: store.add(format!("{prefix}/w"), w)?,
            u: store.add(format!("{prefix}/u"), u)?,
            b: store.add(format!("{prefix}/b"), Tensor::zeros(vec![1, 4 * hidden]))?,
            input_dim,
            hidden,
        })
    }

    /// Applies one step given the pre-computed input projection
    /// `x_t · W + b` (`1 × 4H`).
    fn step_projected<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        xw: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let u = g.param(store, self.u);
        let hu = g.matmul(h, u)?;
        let z = g.add(xw, hu)?;
        let zf = g.slice_cols(z, 0, hd)?;
        let zi = g.slice_cols(z, hd, 2 * hd)?;
        let zo = g.slice_cols(z, 2 * hd, 3 * hd)?;
        let zc = g.slice_cols(z, 3 * hd, 4 * hd)?;
        let f = g.sigmoid(zf);
        let i = g.sigmoid(zi);
        let o = g.sigmoid(zo);
        let cand = g.tanh(zc);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_t = g.add(keep, write)?;
        let tc = g.tanh(c_t);
        let h_t = g.mul(o, tc)?;
        Ok((h_t, c_t))
    }

    /// One LSTM step on `x_t[1 × input]`.
    pub fn step<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        let xw = g.add_row(xw, b)?;
        self.step_projected(g, store, xw, h, c)
    }

    /// Runs over the rows of `xs[n × input]` from zero state; returns all
    /// hidden states `[n × H]`.
    pub fn run<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, xs: Var) -> Result<Var> {
        let states = self.run_states(g, store, xs, None)?;
        g.concat(&states, 0)
    }

    /// Like [`Lstm::run`], but `xs` only feeds the input-weight rows in
    /// `rows`, as if every other input feature were absent.
    pub fn run_input_rows<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        xs: Var,
        rows: Range<usize>,
    ) -> Result<Var> {
        let states = self.run_states(g, store, xs, Some(rows))?;
        g.concat(&states, 0)
    }

    /// Final hidden state `[1 × H]` after consuming every row of `xs`.
    pub fn last_state<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, xs: Var) -> Result<Var> {
        let states = self.run_states(g, store, xs, None)?;
        Ok(*states.last().expect("non-empty"))
    }

    fn run_states<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        xs: Var,
        rows: Option<Range<usize>>,
    ) -> Result<Vec<Var>> {
        let (n, d) = g.value(xs).dims2()?;
        if n == 0 {
            return Err(Error::contract("LSTM over an empty sequence"));
        }
        let rows = rows.unwrap_or(0..self.input_dim);
        if d != rows.len() || rows.end > self.input_dim {
            return Err(Error::shape("lstm", &[n, d], &[self.input_dim, 4 * self.hidden]));
        }
        let mut w = g.param(store, self.w);
        if rows.len() != self.input_dim {
            w = g.slice_rows(w, rows.start, rows.end)?;
        }
        let b = g.param(store, self.b);
        let proj = g.matmul(xs, w)?;
        let proj = g.add_row(proj, b)?;
        let mut h = g.constant(Tensor::zeros(vec![1, self.hidden]));
        let mut c = g.constant(Tensor::zeros(vec![1, self.hidden]));
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let xw = g.slice_rows(proj, t, t + 1)?;
            (h, c) = self.step_projected(g, store, xw, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Forward and backward LSTMs whose per-position outputs are concatenated
/// `[h_fwd | h_bwd]`, giving `2H` features.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BiLstm {
            fwd: Lstm::new(store, &format!("{prefix}/fwd"), input_dim, hidden, rng)?,
            bwd: Lstm::new(store, &format!("{prefix}/bwd"), input_dim, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn run<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, xs: Var) -> Result<Var> {
        self.run_input_rows(g, store, xs, 0..self.fwd.input_dim)
    }

    /// See [`Lstm::run_input_rows`].
    pub fn run_input_rows<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        xs: Var,
        rows: Range<usize>,
    ) -> Result<Var> {
        let (n, _) = g.value(xs).dims2()?;
        if n == 0 {
            return Err(Error::contract("BiLSTM over an empty sequence"));
        }
        let rev: Vec<usize> = (0..n).rev().collect();
        let hf = self.fwd.run_input_rows(g, store, xs, rows.clone())?;
        let xr = g.gather_rows(xs, &rev)?;
        let hb = self.bwd.run_input_rows(g, store, xr, rows)?;
        let hb = g.gather_rows(hb, &rev)?;
        g.concat(&[hf, hb], 1)
    }
}
