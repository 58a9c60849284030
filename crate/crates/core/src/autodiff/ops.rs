//! Differentiable operations recorded on a [`Graph`].
//!
//! Matrix-shaped operations work on rank-2 tensors; vectors are `1 × n`
//! rows. Binary element-wise operations accept equal shapes or a one-element
//! operand on either side.

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Padding mode for [`Graph::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output length is `len - ks + 1`.
    Valid,
    /// Zero padding keeping the output length equal to the input length.
    /// For even kernels the extra zero goes on the right.
    Same,
}

impl Padding {
    fn amounts(self, ks: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let left = (ks - 1) / 2;
                (left, ks - 1 - left)
            }
        }
    }
}

impl<'a> Graph<'a> {
    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'a) -> Var {
        let out = self.value(x).map(f);
        self.custom(&[x], out, move |ctx: &BackwardCtx<'_>| {
            let x = ctx.inputs[0].data();
            let y = ctx.output.data();
            let data = ctx
                .grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| g * df(x[i], y[i]))
                .collect();
            vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), data))]
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        Ok(self.unary(x, f64::ln, |x, _| 1.0 / x))
    }

    /// `x` for `x > 0`, `eps·(sin x − cos x)` otherwise.
    pub fn sine_relu(&mut self, x: Var, eps: f64) -> Var {
        self.unary(
            x,
            move |v| sine_relu(v, eps),
            move |x, _| {
                if x > 0.0 {
                    1.0
                } else {
                    eps * (x.cos() + x.sin())
                }
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        self.unary(
            x,
            |v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()),
            |x, _| {
                let t = (C * (x + A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, move |v| v * k, move |_, _| k)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        da: impl Fn(f64, f64) -> f64 + 'a,
        db: impl Fn(f64, f64) -> f64 + 'a,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.is_scalar() {
            ta.shape().to_vec()
        } else if ta.is_scalar() {
            tb.shape().to_vec()
        } else {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        };
        let n: usize = shape.iter().product();
        let at = |t: &Tensor, i: usize| if t.is_scalar() { t.data()[0] } else { t.data()[i] };
        let data: Vec<f64> = (0..n).map(|i| f(at(ta, i), at(tb, i))).collect();
        let out = Tensor::from_parts(shape, data);
        Ok(self.custom(&[a, b], out, move |ctx: &BackwardCtx<'_>| {
            let (ta, tb) = (ctx.inputs[0], ctx.inputs[1]);
            let mut ga = vec![0.0; ta.len()];
            let mut gb = vec![0.0; tb.len()];
            for (i, &g) in ctx.grad.data().iter().enumerate() {
                let (ia, ib) = (if ta.is_scalar() { 0 } else { i }, if tb.is_scalar() { 0 } else { i });
                let (x, y) = (ta.data()[ia], tb.data()[ib]);
                ga[ia] += g * da(x, y);
                gb[ib] += g * db(x, y);
            }
            vec![
                Some(Tensor::from_parts(ta.shape().to_vec(), ga)),
                Some(Tensor::from_parts(tb.shape().to_vec(), gb)),
            ]
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// `a[m×n] + bias[1×n]` with the bias repeated over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let tb = self.value(bias);
        if tb.shape() != [1, n] {
            return Err(Error::shape("add_row", &[m, n], tb.shape()));
        }
        let mut out = self.value(a).clone();
        for r in 0..m {
            for (o, b) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.custom(&[a, bias], out, move |ctx: &BackwardCtx<'_>| {
            let g = ctx.grad;
            let mut gb = vec![0.0; n];
            for r in 0..m {
                for (acc, v) in gb.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                    *acc += v;
                }
            }
            vec![Some(g.clone()), Some(Tensor::from_parts(vec![1, n], gb))]
        }))
    }

    /// `a[m×n] ⊙ w[m×1]`, scaling each row by its weight.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let tw = self.value(w);
        if tw.shape() != [m, 1] {
            return Err(Error::shape("mul_col", &[m, n], tw.shape()));
        }
        let mut out = self.value(a).clone();
        for r in 0..m {
            let k = tw.data()[r];
            out.data_mut()[r * n..(r + 1) * n].iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.custom(&[a, w], out, move |ctx: &BackwardCtx<'_>| {
            let (ta, tw, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let mut ga = g.clone();
            let mut gw = vec![0.0; m];
            for r in 0..m {
                let k = tw.data()[r];
                let row = r * n..(r + 1) * n;
                gw[r] = g.data()[row.clone()]
                    .iter()
                    .zip(&ta.data()[row.clone()])
                    .map(|(p, q)| p * q)
                    .sum();
                ga.data_mut()[row].iter_mut().for_each(|v| *v *= k);
            }
            vec![Some(ga), Some(Tensor::from_parts(vec![m, 1], gw))]
        }))
    }

    /// Adds a constant (non-differentiable) tensor of identical shape.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(c, |x, y| x + y)?;
        Ok(self.custom(&[a], out, |ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.clone())]))
    }

    /// Multiplies by a constant (non-differentiable) tensor of identical shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(c, |x, y| x * y)?;
        let c = c.clone();
        Ok(self.custom(&[a], out, move |ctx: &BackwardCtx<'_>| {
            vec![Some(ctx.grad.zip_map(&c, |g, k| g * k).expect("same shape"))]
        }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (ta.dims2()?, tb.dims2()?);
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let out = Tensor::from_parts(vec![m, n], tensor::matmul(ta.data(), tb.data(), m, k, n));
        Ok(self.custom(&[a, b], out, move |ctx: &BackwardCtx<'_>| {
            let (ta, tb, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
            let ga = tensor::matmul_nt(g, tb.data(), m, n, k);
            let gb = tensor::matmul_tn(ta.data(), g, k, m, n);
            vec![
                Some(Tensor::from_parts(vec![m, k], ga)),
                Some(Tensor::from_parts(vec![k, n], gb)),
            ]
        }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.custom(&[a], out, |ctx: &BackwardCtx<'_>| {
            vec![Some(ctx.grad.transpose().expect("matrix"))]
        }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        let orig = self.shape(a).to_vec();
        Ok(self.custom(&[a], out, move |ctx: &BackwardCtx<'_>| {
            vec![Some(Tensor::from_parts(orig.clone(), ctx.grad.data().to_vec()))]
        }))
    }

    /// Sum of all entries as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.custom(&[a], out, |ctx: &BackwardCtx<'_>| {
            let g = ctx.grad.item();
            vec![Some(Tensor::filled(ctx.inputs[0].shape().to_vec(), g))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums: `[m×n] → [1×n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let ta = self.value(a);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(ta.row_slice(r)) {
                *o += v;
            }
        }
        Ok(self.custom(
            &[a],
            Tensor::from_parts(vec![1, n], out),
            move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let data = (0..m).flat_map(|_| g.iter().copied()).collect();
                vec![Some(Tensor::from_parts(vec![m, n], data))]
            },
        ))
    }

    /// Row sums: `[m×n] → [m×1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let ta = self.value(a);
        let out = (0..m).map(|r| ta.row_slice(r).iter().sum()).collect();
        Ok(self.custom(
            &[a],
            Tensor::from_parts(vec![m, 1], out),
            move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad.data();
                let data = (0..m).flat_map(|r| std::iter::repeat_n(g[r], n)).collect();
                vec![Some(Tensor::from_parts(vec![m, n], data))]
            },
        ))
    }

    /// Softmax along `axis` (0 = down columns, 1 = across rows) of a matrix.
    ///
    /// The maximum of each slice is subtracted before exponentiation.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.softmax_rows(x),
            0 => {
                let t = self.transpose(x)?;
                let s = self.softmax_rows(t)?;
                self.transpose(s)
            }
            _ => Err(Error::invalid("softmax", format!("axis {axis} of a matrix"))),
        }
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if !tx.all_finite() {
            return Err(Error::domain("softmax", "non-finite input"));
        }
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_into(tx.row_slice(r), &mut out[r * n..(r + 1) * n]);
        }
        Ok(self.custom(
            &[x],
            Tensor::from_parts(vec![m, n], out),
            move |ctx: &BackwardCtx<'_>| {
                let (y, g) = (ctx.output.data(), ctx.grad.data());
                let mut gx = vec![0.0; m * n];
                for r in 0..m {
                    let row = r * n..(r + 1) * n;
                    let dot: f64 = y[row.clone()].iter().zip(&g[row.clone()]).map(|(a, b)| a * b).sum();
                    for i in row {
                        gx[i] = y[i] * (g[i] - dot);
                    }
                }
                vec![Some(Tensor::from_parts(vec![m, n], gx))]
            },
        ))
    }

    /// Mean over rows of `−log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (m, n) = tl.dims2()?;
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", &[m, n], &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::contract(format!("target class {t} out of range 0..{n}")));
        }
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for r in 0..m {
            let p = &mut probs[r * n..(r + 1) * n];
            softmax_into(tl.row_slice(r), p);
            loss -= p[targets[r]].ln();
        }
        let targets = targets.to_vec();
        let out = Tensor::scalar(loss / m as f64);
        Ok(self.custom(&[logits], out, move |ctx: &BackwardCtx<'_>| {
            let k = ctx.grad.item() / m as f64;
            let mut g = probs.clone();
            for (r, &t) in targets.iter().enumerate() {
                g[r * n + t] -= 1.0;
            }
            g.iter_mut().for_each(|v| *v *= k);
            vec![Some(Tensor::from_parts(vec![m, n], g))]
        }))
    }

    /// Concatenates matrices along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.value(p).dims2()).collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        let out = match axis {
            0 => {
                if let Some(&(r, c)) = dims.iter().find(|d| d.1 != c0) {
                    return Err(Error::shape("concat", &[r0, c0], &[r, c]));
                }
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::from_parts(vec![rows, c0], data)
            }
            1 => {
                if let Some(&(r, c)) = dims.iter().find(|d| d.0 != r0) {
                    return Err(Error::shape("concat", &[r0, c0], &[r, c]));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::from_parts(vec![r0, cols], data)
            }
            _ => return Err(Error::invalid("concat", format!("axis {axis} of a matrix"))),
        };
        Ok(self.custom(parts, out, move |ctx: &BackwardCtx<'_>| {
            let g = ctx.grad;
            let cols = g.cols();
            let mut grads = Vec::with_capacity(dims.len());
            let mut offset = 0;
            for &(r, c) in &dims {
                let t = if axis == 0 {
                    let t = Tensor::from_parts(vec![r, c], g.data()[offset * c..(offset + r) * c].to_vec());
                    offset += r;
                    t
                } else {
                    let data = (0..r)
                        .flat_map(|i| g.data()[i * cols + offset..i * cols + offset + c].iter().copied())
                        .collect();
                    offset += c;
                    Tensor::from_parts(vec![r, c], data)
                };
                grads.push(Some(t));
            }
            grads
        }))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > m {
            return Err(Error::invalid("slice_rows", format!("rows {start}..{end} of {m}")));
        }
        let out = Tensor::from_parts(vec![end - start, n], self.value(a).data()[start * n..end * n].to_vec());
        Ok(self.custom(&[a], out, move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; m * n];
            g[start * n..end * n].copy_from_slice(ctx.grad.data());
            vec![Some(Tensor::from_parts(vec![m, n], g))]
        }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > n {
            return Err(Error::invalid("slice_cols", format!("cols {start}..{end} of {n}")));
        }
        let w = end - start;
        let ta = self.value(a);
        let data = (0..m)
            .flat_map(|r| ta.row_slice(r)[start..end].iter().copied())
            .collect();
        Ok(self.custom(
            &[a],
            Tensor::from_parts(vec![m, w], data),
            move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; m * n];
                for r in 0..m {
                    g[r * n + start..r * n + end].copy_from_slice(&ctx.grad.data()[r * w..(r + 1) * w]);
                }
                vec![Some(Tensor::from_parts(vec![m, n], g))]
            },
        ))
    }

    /// Selects rows by index (embedding lookup, reversal, repetition).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.value(table).dims2()?;
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows", "no indices"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::contract(format!("row index {i} out of range 0..{m}")));
        }
        let tt = self.value(table);
        let data = indices.iter().flat_map(|&i| tt.row_slice(i).iter().copied()).collect();
        let indices = indices.to_vec();
        let out = Tensor::from_parts(vec![indices.len(), n], data);
        Ok(self.custom(&[table], out, move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0; m * n];
            for (k, &i) in indices.iter().enumerate() {
                for (acc, v) in g[i * n..(i + 1) * n]
                    .iter_mut()
                    .zip(&ctx.grad.data()[k * n..(k + 1) * n])
                {
                    *acc += v;
                }
            }
            vec![Some(Tensor::from_parts(vec![m, n], g))]
        }))
    }

    /// Repeats a `1 × n` row `m` times.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[0] != 1 {
            return Err(Error::invalid(
                "broadcast_rows",
                format!("expected a 1×n row, got {shape:?}"),
            ));
        }
        self.gather_rows(a, &vec![0; m])
    }

    /// One-dimensional convolution of `x[len × c_in]` with
    /// `kernels[ks × c_in × c_out]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, padding: Padding) -> Result<Var> {
        let (len, c_in) = self.value(x).dims2()?;
        let kshape = self.shape(kernels).to_vec();
        let [ks, kc_in, c_out] = kshape[..] else {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel shape {kshape:?} is not ks×c_in×c_out"),
            ));
        };
        if kc_in != c_in {
            return Err(Error::shape("conv1d", &[len, c_in], &kshape));
        }
        if padding == Padding::Valid && ks > len {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel size {ks} exceeds length {len}"),
            ));
        }
        let (pad_left, pad_right) = padding.amounts(ks);
        let out_len = len + pad_left + pad_right + 1 - ks;
        let width = ks * c_in;
        let cols = im2col(self.value(x).data(), len, c_in, ks, pad_left, out_len);
        let y = tensor::matmul(&cols, self.value(kernels).data(), out_len, width, c_out);
        let out = Tensor::from_parts(vec![out_len, c_out], y);
        Ok(self.custom(&[x, kernels], out, move |ctx: &BackwardCtx<'_>| {
            let (tx, tk, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
            let cols = im2col(tx.data(), len, c_in, ks, pad_left, out_len);
            let gk = tensor::matmul_tn(&cols, g, width, out_len, c_out);
            let gcols = tensor::matmul_nt(g, tk.data(), out_len, c_out, width);
            let mut gx = vec![0.0; len * c_in];
            for t in 0..out_len {
                for j in 0..ks {
                    let Some(src) = (t + j).checked_sub(pad_left).filter(|&s| s < len) else {
                        continue;
                    };
                    let from = &gcols[t * width + j * c_in..t * width + (j + 1) * c_in];
                    for (acc, v) in gx[src * c_in..(src + 1) * c_in].iter_mut().zip(from) {
                        *acc += v;
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![len, c_in], gx)),
                Some(Tensor::from_parts(vec![ks, c_in, c_out], gk)),
            ]
        }))
    }

    /// Max over non-overlapping windows of `pool` rows; the last window may
    /// be shorter. Ties resolve to the first row.
    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        if pool == 0 {
            return Err(Error::invalid("maxpool1d", "pool size must be at least 1"));
        }
        let (len, ch) = self.value(x).dims2()?;
        let out_len = len.div_ceil(pool);
        let tx = self.value(x);
        let mut out = vec![0.0; out_len * ch];
        let mut argmax = vec![0usize; out_len * ch];
        for w in 0..out_len {
            for c in 0..ch {
                let mut best = w * pool;
                for r in w * pool + 1..((w + 1) * pool).min(len) {
                    if tx.data()[r * ch + c] > tx.data()[best * ch + c] {
                        best = r;
                    }
                }
                out[w * ch + c] = tx.data()[best * ch + c];
                argmax[w * ch + c] = best * ch + c;
            }
        }
        Ok(self.custom(
            &[x],
            Tensor::from_parts(vec![out_len, ch], out),
            move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; len * ch];
                for (&src, v) in argmax.iter().zip(ctx.grad.data()) {
                    g[src] += v;
                }
                vec![Some(Tensor::from_parts(vec![len, ch], g))]
            },
        ))
    }

    /// Group normalisation of `x[len × C]` over `groups` channel groups,
    /// followed by the per-channel affine `gamma`, `beta` (`1 × C` each).
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let (len, c) = self.value(x).dims2()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::invalid(
                "group_norm",
                format!("{c} channels not divisible into {groups} groups"),
            ));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [1, c] {
                return Err(Error::shape("group_norm", &[len, c], self.shape(p)));
            }
        }
        let cg = c / groups;
        let count = (len * cg) as f64;
        let tx = self.value(x);
        let mut xhat = vec![0.0; len * c];
        let mut inv_std = vec![0.0; groups];
        for gi in 0..groups {
            let idx = || (0..len).flat_map(move |t| (gi * cg..(gi + 1) * cg).map(move |ch| t * c + ch));
            let mean = idx().map(|i| tx.data()[i]).sum::<f64>() / count;
            let var = idx().map(|i| (tx.data()[i] - mean).powi(2)).sum::<f64>() / count;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[gi] = is;
            for i in idx() {
                xhat[i] = (tx.data()[i] - mean) * is;
            }
        }
        let (tg, tb) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<f64> = (0..len * c).map(|i| tg[i % c] * xhat[i] + tb[i % c]).collect();
        Ok(self.custom(
            &[x, gamma, beta],
            Tensor::from_parts(vec![len, c], out),
            move |ctx: &BackwardCtx<'_>| {
                let (tg, g) = (ctx.inputs[1].data(), ctx.grad.data());
                let mut gx = vec![0.0; len * c];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for i in 0..len * c {
                    ggamma[i % c] += g[i] * xhat[i];
                    gbeta[i % c] += g[i];
                }
                for gi in 0..groups {
                    let idx = || (0..len).flat_map(move |t| (gi * cg..(gi + 1) * cg).map(move |ch| t * c + ch));
                    let dxhat = |i: usize| g[i] * tg[i % c];
                    let mean_d = idx().map(dxhat).sum::<f64>() / count;
                    let mean_dx = idx().map(|i| dxhat(i) * xhat[i]).sum::<f64>() / count;
                    for i in idx() {
                        gx[i] = inv_std[gi] * (dxhat(i) - mean_d - xhat[i] * mean_dx);
                    }
                }
                vec![
                    Some(Tensor::from_parts(vec![len, c], gx)),
                    Some(Tensor::from_parts(vec![1, c], ggamma)),
                    Some(Tensor::from_parts(vec![1, c], gbeta)),
                ]
            },
        ))
    }

    /// Layer normalisation of every row of `x[m × n]`, then affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        for p in [gamma, beta] {
            if self.shape(p) != [1, n] {
                return Err(Error::shape("layer_norm", &[m, n], self.shape(p)));
            }
        }
        let tx = self.value(x);
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for r in 0..m {
            let row = tx.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            inv_std[r] = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter().enumerate() {
                xhat[r * n + j] = (v - mean) * inv_std[r];
            }
        }
        let (tg, tb) = (self.value(gamma).data(), self.value(beta).data());
        let out = (0..m * n).map(|i| tg[i % n] * xhat[i] + tb[i % n]).collect();
        Ok(self.custom(
            &[x, gamma, beta],
            Tensor::from_parts(vec![m, n], out),
            move |ctx: &BackwardCtx<'_>| {
                let (tg, g) = (ctx.inputs[1].data(), ctx.grad.data());
                let mut gx = vec![0.0; m * n];
                let mut ggamma = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                for r in 0..m {
                    let row = r * n..(r + 1) * n;
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for i in row.clone() {
                        let d = g[i] * tg[i % n];
                        mean_d += d;
                        mean_dx += d * xhat[i];
                        ggamma[i % n] += g[i] * xhat[i];
                        gbeta[i % n] += g[i];
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for i in row {
                        gx[i] = inv_std[r] * (g[i] * tg[i % n] - mean_d - xhat[i] * mean_dx);
                    }
                }
                vec![
                    Some(Tensor::from_parts(vec![m, n], gx)),
                    Some(Tensor::from_parts(vec![1, n], ggamma)),
                    Some(Tensor::from_parts(vec![1, n], gbeta)),
                ]
            },
        ))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sine_relu(v: f64, eps: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        eps * (v.sin() - v.cos())
    }
}

/// Numerically stable softmax of `x` written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Row `t` of the patch matrix holds the `ks` (zero-padded) input rows
/// starting at `t - pad_left`, flattened.
fn im2col(x: &[f64], len: usize, c_in: usize, ks: usize, pad_left: usize, out_len: usize) -> Vec<f64> {
    let width = ks * c_in;
    let mut cols = vec![0.0; out_len * width];
    for t in 0..out_len {
        for j in 0..ks {
            if let Some(src) = (t + j).checked_sub(pad_left).filter(|&s| s < len) {
                cols[t * width + j * c_in..t * width + (j + 1) * c_in]
                    .copy_from_slice(&x[src * c_in..(src + 1) * c_in]);
            }
        }
    }
    cols
}
