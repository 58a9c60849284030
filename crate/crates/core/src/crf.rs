//! Linear-chain CRF over BIO2 tags.
//!
//! A path `y` over emissions `E[n × K]` scores
//!
//! ```text
//! start[y1] + Σ_t E[t, y_t] + Σ_t T[y_{t-1}, y_t] + stop[y_n]
//! ```
//!
//! and its log-likelihood is `score(y) − log Z`, with `log Z` from the
//! forward algorithm. All recursions run in log space.

use crate::autodiff::{BackwardCtx, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::seqdata::{Tag, TagScheme, NUM_TAGS};
use crate::tensor::Tensor;

/// Score given to BIO2-illegal transitions when masking is enabled.
pub const ILLEGAL_SCORE: f64 = -1e4;

/// Plain-value CRF parameters: `transitions[prev][next]`, `start`, `stop`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub transitions: Tensor,
    pub start: Tensor,
    pub stop: Tensor,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        CrfParams {
            transitions: Tensor::zeros(vec![num_tags, num_tags]),
            start: Tensor::zeros(vec![1, num_tags]),
            stop: Tensor::zeros(vec![1, num_tags]),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &Tensor) -> Result<(usize, usize)> {
        let (n, k) = emissions.dims2()?;
        if n == 0 {
            return Err(Error::contract("CRF needs at least one position"));
        }
        if k != self.num_tags() || self.transitions.shape() != [k, k] || self.stop.len() != k {
            return Err(Error::shape("crf", emissions.shape(), self.transitions.shape()));
        }
        Ok((n, k))
    }

    fn trans(&self, i: usize, j: usize) -> f64 {
        self.transitions.data()[i * self.num_tags() + j]
    }

    /// Copy with every BIO2-illegal transition (and illegal start) set to
    /// [`ILLEGAL_SCORE`]. Only meaningful for the 9-tag scheme.
    pub fn masked_illegal(&self) -> Self {
        let mut out = self.clone();
        let k = self.num_tags();
        if k != NUM_TAGS {
            return out;
        }
        for next in Tag::all() {
            if !TagScheme::is_legal(None, next) {
                out.start.data_mut()[next.index()] = ILLEGAL_SCORE;
            }
            for prev in Tag::all() {
                if !TagScheme::is_legal(Some(prev), next) {
                    out.transitions.data_mut()[prev.index() * k + next.index()] = ILLEGAL_SCORE;
                }
            }
        }
        out
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_tags(tags: &[usize], n: usize, k: usize) -> Result<()> {
    if tags.len() != n {
        return Err(Error::shape("crf tags", &[n], &[tags.len()]));
    }
    if let Some(&t) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::contract(format!("tag index {t} out of range 0..{k}")));
    }
    Ok(())
}

/// Unnormalised score of one tag path.
pub fn path_score(emissions: &Tensor, tags: &[usize], params: &CrfParams) -> Result<f64> {
    let (n, k) = params.check(emissions)?;
    check_tags(tags, n, k)?;
    let mut s = params.start.data()[tags[0]] + params.stop.data()[tags[n - 1]];
    for (t, &y) in tags.iter().enumerate() {
        s += emissions.at(t, y);
        if t > 0 {
            s += params.trans(tags[t - 1], y);
        }
    }
    Ok(s)
}

/// Forward log-messages `alpha[t][j]`.
fn forward(emissions: &Tensor, params: &CrfParams, n: usize, k: usize) -> Vec<f64> {
    let mut alpha = vec![0.0; n * k];
    for j in 0..k {
        alpha[j] = params.start.data()[j] + emissions.at(0, j);
    }
    for t in 1..n {
        for j in 0..k {
            let prev = &alpha[(t - 1) * k..t * k];
            alpha[t * k + j] = emissions.at(t, j) + log_sum_exp((0..k).map(|i| prev[i] + params.trans(i, j)));
        }
    }
    alpha
}

/// Backward log-messages `beta[t][i]`, including the stop score.
fn backward(emissions: &Tensor, params: &CrfParams, n: usize, k: usize) -> Vec<f64> {
    let mut beta = vec![0.0; n * k];
    beta[(n - 1) * k..].copy_from_slice(params.stop.data());
    for t in (0..n - 1).rev() {
        for i in 0..k {
            let next = &beta[(t + 1) * k..(t + 2) * k];
            beta[t * k + i] = log_sum_exp((0..k).map(|j| params.trans(i, j) + emissions.at(t + 1, j) + next[j]));
        }
    }
    beta
}

/// `log Z` by the forward algorithm.
pub fn log_partition(emissions: &Tensor, params: &CrfParams) -> Result<f64> {
    let (n, k) = params.check(emissions)?;
    let alpha = forward(emissions, params, n, k);
    Ok(log_sum_exp(
        (0..k).map(|j| alpha[(n - 1) * k + j] + params.stop.data()[j]),
    ))
}

pub fn log_likelihood(emissions: &Tensor, tags: &[usize], params: &CrfParams) -> Result<f64> {
    Ok(path_score(emissions, tags, params)? - log_partition(emissions, params)?)
}

/// Posterior marginals: unary `[n × k]` and pairwise `[k × k]` summed over positions.
pub struct Marginals {
    pub log_z: f64,
    pub unary: Vec<f64>,
    pub pairwise: Vec<f64>,
}

pub fn marginals(emissions: &Tensor, params: &CrfParams) -> Result<Marginals> {
    let (n, k) = params.check(emissions)?;
    let alpha = forward(emissions, params, n, k);
    let beta = backward(emissions, params, n, k);
    let log_z = log_sum_exp((0..k).map(|j| alpha[(n - 1) * k + j] + params.stop.data()[j]));
    let unary = (0..n * k).map(|i| (alpha[i] + beta[i] - log_z).exp()).collect();
    let mut pairwise = vec![0.0; k * k];
    for t in 1..n {
        for i in 0..k {
            for j in 0..k {
                pairwise[i * k + j] +=
                    (alpha[(t - 1) * k + i] + params.trans(i, j) + emissions.at(t, j) + beta[t * k + j] - log_z).exp();
            }
        }
    }
    Ok(Marginals { log_z, unary, pairwise })
}

/// Highest-scoring path and its score. Among equal scores the lowest tag
/// index wins at every back-pointer and at the final position.
pub fn viterbi_decode(emissions: &Tensor, params: &CrfParams) -> Result<(Vec<usize>, f64)> {
    let (n, k) = params.check(emissions)?;
    let mut score: Vec<f64> = (0..k).map(|j| params.start.data()[j] + emissions.at(0, j)).collect();
    let mut back = vec![0usize; n * k];
    for t in 1..n {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let mut best = 0;
            let mut best_score = score[0] + params.trans(0, j);
            for (i, s) in score.iter().enumerate().skip(1) {
                let cand = s + params.trans(i, j);
                if cand > best_score {
                    best = i;
                    best_score = cand;
                }
            }
            back[t * k + j] = best;
            next[j] = best_score + emissions.at(t, j);
        }
        score = next;
    }
    let mut last = 0;
    let mut best = score[0] + params.stop.data()[0];
    for j in 1..k {
        let s = score[j] + params.stop.data()[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut path = vec![last; n];
    for t in (1..n).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok((path, best))
}

/// Differentiable log-likelihood of `tags` under the CRF, as a `1 × 1` node.
pub fn crf_log_likelihood(
    g: &mut Graph<'_>,
    emissions: Var,
    transitions: Var,
    start: Var,
    stop: Var,
    tags: &[usize],
) -> Result<Var> {
    let params = CrfParams {
        transitions: g.value(transitions).clone(),
        start: g.value(start).clone(),
        stop: g.value(stop).clone(),
    };
    let em = g.value(emissions);
    let (n, k) = params.check(em)?;
    if params.start.shape() != [1, k] || params.stop.shape() != [1, k] {
        return Err(Error::shape("crf", &[1, k], params.start.shape()));
    }
    check_tags(tags, n, k)?;
    let ll = log_likelihood(em, tags, &params)?;
    let tags = tags.to_vec();
    Ok(g.custom(
        &[emissions, transitions, start, stop],
        Tensor::scalar(ll),
        move |ctx: &BackwardCtx<'_>| {
            let up = ctx.grad.item();
            let params = CrfParams {
                transitions: ctx.inputs[1].clone(),
                start: ctx.inputs[2].clone(),
                stop: ctx.inputs[3].clone(),
            };
            let m = marginals(ctx.inputs[0], &params).expect("validated in forward");
            // d ll = gold indicator − expectation
            let mut ge: Vec<f64> = m.unary.iter().map(|p| -p * up).collect();
            let mut gt: Vec<f64> = m.pairwise.iter().map(|p| -p * up).collect();
            let mut gs: Vec<f64> = m.unary[..k].iter().map(|p| -p * up).collect();
            let mut gp: Vec<f64> = m.unary[(n - 1) * k..].iter().map(|p| -p * up).collect();
            for (t, &y) in tags.iter().enumerate() {
                ge[t * k + y] += up;
                if t > 0 {
                    gt[tags[t - 1] * k + y] += up;
                }
            }
            gs[tags[0]] += up;
            gp[tags[n - 1]] += up;
            vec![
                Some(Tensor::from_parts(vec![n, k], ge)),
                Some(Tensor::from_parts(vec![k, k], gt)),
                Some(Tensor::from_parts(vec![1, k], gs)),
                Some(Tensor::from_parts(vec![1, k], gp)),
            ]
        },
    ))
}

/// CRF layer whose parameters live in a [`ParamStore`]. Zero-initialised.
#[derive(Clone, Debug)]
pub struct Crf {
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub num_tags: usize,
}

impl Crf {
    pub fn new(store: &mut ParamStore, prefix: &str, num_tags: usize) -> Result<Self> {
        Ok(Crf {
            transitions: store.add(format!("{prefix}/transitions"), Tensor::zeros(vec![num_tags, num_tags]))?,
            start: store.add(format!("{prefix}/start"), Tensor::zeros(vec![1, num_tags]))?,
            stop: store.add(format!("{prefix}/stop"), Tensor::zeros(vec![1, num_tags]))?,
            num_tags,
        })
    }

    pub fn params(&self, store: &ParamStore) -> CrfParams {
        CrfParams {
            transitions: store.value(self.transitions).clone(),
            start: store.value(self.start).clone(),
            stop: store.value(self.stop).clone(),
        }
    }

    pub fn log_likelihood<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        emissions: Var,
        tags: &[usize],
    ) -> Result<Var> {
        let t = g.param(store, self.transitions);
        let s = g.param(store, self.start);
        let e = g.param(store, self.stop);
        crf_log_likelihood(g, emissions, t, s, e, tags)
    }

    /// Negative log-likelihood, the training loss.
    pub fn loss<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, emissions: Var, tags: &[usize]) -> Result<Var> {
        let ll = self.log_likelihood(g, store, emissions, tags)?;
        Ok(g.neg(ll))
    }

    pub fn decode(&self, store: &ParamStore, emissions: &Tensor, mask_illegal: bool) -> Result<Vec<usize>> {
        let mut params = self.params(store);
        if mask_illegal {
            params = params.masked_illegal();
        }
        Ok(viterbi_decode(emissions, &params)?.0)
    }
}
