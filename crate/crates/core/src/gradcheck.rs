//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values on an inference
//! graph, so it shares nothing with the backward rules it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Flips the sign of the first non-zero analytic gradient entry. Used as
    /// a negative control to prove a check can fail.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per checked tensor, as computed by [`relative_error`].
    pub relative_errors: Vec<f64>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() < tolerance
    }
}

/// Gradients whose norms both fall below this are compared absolutely:
/// central differences at the default step carry roughly 1e-10 of noise.
pub const ZERO_GRADIENT_FLOOR: f64 = 1e-7;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute `‖a − n‖` when both norms are
/// under [`ZERO_GRADIENT_FLOOR`].
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic).max(norm(numeric));
    if denom < ZERO_GRADIENT_FLOOR {
        norm(&diff)
    } else {
        norm(&diff) / denom
    }
}

fn corrupt_first(grads: &mut [Vec<f64>]) {
    if let Some(v) = grads.iter_mut().flatten().find(|v| v.abs() > 1e-12) {
        *v = -*v;
    }
}

fn eval_scalar(g: &Graph<'_>, loss: Var) -> Result<f64> {
    let t = g.value(loss);
    if !t.is_scalar() {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    Ok(t.item())
}

/// Checks `f` with respect to every entry of every input tensor.
pub fn check_inputs<'a, F>(inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    if opts.corrupt {
        corrupt_first(&mut analytic);
    }

    let value_at = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        eval_scalar(&g, loss)
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut entries_checked = 0;
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let plus = value_at(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let minus = value_at(&work)?;
            work[i].data_mut()[j] = orig;
            *n = (plus - minus) / (2.0 * opts.step);
        }
        entries_checked += a.len();
        relative_errors.push(relative_error(a, &numeric));
    }
    Ok(GradCheckReport {
        relative_errors,
        entries_checked,
    })
}

/// Checks `f` with respect to parameters of `store`, sampling at most
/// `max_entries` coordinates per parameter (all of them when smaller).
pub fn check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    max_entries: usize,
    seed: u64,
    opts: GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>, &'g ParamStore) -> Result<Var>,
{
    check_owned_params(store, |s| s, ids, max_entries, seed, opts, f)
}

/// [`check_params`] for parameters held inside `owner` (a model), reached
/// through `store_of` when perturbing.
pub fn check_owned_params<T, S, F>(
    owner: &mut T,
    store_of: S,
    ids: &[ParamId],
    max_entries: usize,
    seed: u64,
    opts: GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    T: ?Sized,
    S: Fn(&mut T) -> &mut ParamStore,
    F: for<'g> Fn(&mut Graph<'g>, &'g T) -> Result<Var>,
{
    let mut analytic_full: Vec<Tensor> = {
        let mut g = Graph::new();
        let loss = f(&mut g, owner)?;
        g.backward(loss)?;
        let grads = g.param_grads();
        drop(g);
        let store = store_of(owner);
        ids.iter()
            .map(|id| {
                grads
                    .iter()
                    .find(|(p, _)| p == id)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| Tensor::zeros(store.value(*id).shape().to_vec()))
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| {
            let n = store_of(owner).value(*id).len();
            if n <= max_entries {
                (0..n).collect()
            } else {
                let mut v = sample(&mut rng, n, max_entries).into_vec();
                v.sort_unstable();
                v
            }
        })
        .collect();

    let mut analytic: Vec<Vec<f64>> = analytic_full
        .iter_mut()
        .zip(&picks)
        .map(|(t, p)| p.iter().map(|&j| t.data()[j]).collect())
        .collect();
    if opts.corrupt {
        corrupt_first(&mut analytic);
    }

    let value_of = |owner: &T| -> Result<f64> {
        let mut g = Graph::inference();
        let loss = f(&mut g, owner)?;
        eval_scalar(&g, loss)
    };

    let mut relative_errors = Vec::with_capacity(ids.len());
    let mut entries_checked = 0;
    for ((id, a), pick) in ids.iter().zip(&analytic).zip(&picks) {
        let mut numeric = Vec::with_capacity(pick.len());
        for &j in pick {
            let orig = store_of(owner).value(*id).data()[j];
            store_of(owner).value_mut(*id).data_mut()[j] = orig + opts.step;
            let plus = value_of(owner)?;
            store_of(owner).value_mut(*id).data_mut()[j] = orig - opts.step;
            let minus = value_of(owner)?;
            store_of(owner).value_mut(*id).data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * opts.step));
        }
        entries_checked += pick.len();
        relative_errors.push(relative_error(a, &numeric));
    }
    Ok(GradCheckReport {
        relative_errors,
        entries_checked,
    })
}
