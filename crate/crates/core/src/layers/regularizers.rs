//! The character extractor's output stack: targeted dropout, SineRelu and
//! group normalisation.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use crate::autodiff::sine_relu as sine_relu_scalar;

/// Variance floor inside the square root of group normalisation.
pub const GROUP_NORM_EPS: f64 = 1e-5;

pub fn sine_relu(g: &mut Graph<'_>, x: Var, epsilon: f64) -> Var {
    g.sine_relu(x, epsilon)
}

/// Which units targeted dropout may drop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DropTarget {
    /// The `target_rate` fraction with the smallest magnitude.
    #[default]
    LowestMagnitude,
    /// The `target_rate` fraction with the largest magnitude.
    HighestMagnitude,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetedDropout {
    pub drop_rate: f64,
    pub target_rate: f64,
    pub target: DropTarget,
}

impl TargetedDropout {
    pub fn new(drop_rate: f64, target_rate: f64, target: DropTarget) -> Result<Self> {
        for (name, v) in [("drop rate", drop_rate), ("target rate", target_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(TargetedDropout {
            drop_rate,
            target_rate,
            target,
        })
    }

    /// 0/1 keep-mask over `values`. The target set is the `round(TR·n)`
    /// units selected by magnitude (ties by position); each target is
    /// dropped independently with probability `DR`.
    pub fn mask<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Vec<f64> {
        let n = values.len();
        let k = ((self.target_rate * n as f64).round() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
        let targets = match self.target {
            DropTarget::LowestMagnitude => &order[..k],
            DropTarget::HighestMagnitude => &order[n - k..],
        };
        let mut mask = vec![1.0; n];
        for &i in targets {
            if self.drop_rate >= 1.0 || (self.drop_rate > 0.0 && rng.random::<f64>() < self.drop_rate) {
                mask[i] = 0.0;
            }
        }
        mask
    }

    /// Surviving values are not rescaled. Outside training this is the
    /// identity and returns `x` itself.
    pub fn apply<R: Rng + ?Sized>(&self, g: &mut Graph<'_>, x: Var, training: bool, rng: &mut R) -> Result<Var> {
        if !training || self.drop_rate == 0.0 || self.target_rate == 0.0 {
            return Ok(x);
        }
        let t = g.value(x);
        let mask = Tensor::new(t.shape().to_vec(), self.mask(t.data(), rng))?;
        g.mul_const(x, &mask)
    }
}

/// Group normalisation with learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub channels: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::invalid(
                "group_norm",
                format!("{channels} channels are not divisible into {groups} groups"),
            ));
        }
        Ok(GroupNorm {
            gamma: store.add(format!("{prefix}/gamma"), Tensor::ones(vec![1, channels]))?,
            beta: store.add(format!("{prefix}/beta"), Tensor::zeros(vec![1, channels]))?,
            groups,
            channels,
            eps: GROUP_NORM_EPS,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sine_relu_branch_values() {
        assert_eq!(sine_relu_scalar(1.0, 0.0025), 1.0);
        assert_eq!(sine_relu_scalar(0.0, 0.0025), -0.0025);
        // jump of exactly eps at zero
        let right = sine_relu_scalar(1e-300, 0.0025);
        assert!((right - sine_relu_scalar(0.0, 0.0025) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn dropout_edge_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::row(vec![0.5, -2.0, 0.1, 3.0, -0.3]).unwrap();

        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let td = TargetedDropout::new(0.25, 0.4, DropTarget::LowestMagnitude).unwrap();
        let out = td.apply(&mut g, v, false, &mut rng).unwrap();
        assert_eq!(g.value(out).data(), x.data());

        let none = TargetedDropout::new(0.0, 0.4, DropTarget::LowestMagnitude).unwrap();
        let out = none.apply(&mut g, v, true, &mut rng).unwrap();
        assert_eq!(g.value(out), &x);

        let all = TargetedDropout::new(1.0, 1.0, DropTarget::LowestMagnitude).unwrap();
        let out = all.apply(&mut g, v, true, &mut rng).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn only_targeted_units_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = [0.5, -2.0, 0.1, 3.0, -0.3];
        let low = TargetedDropout::new(1.0, 0.4, DropTarget::LowestMagnitude).unwrap();
        assert_eq!(low.mask(&values, &mut rng), vec![1., 1., 0., 1., 0.]);
        let high = TargetedDropout::new(1.0, 0.4, DropTarget::HighestMagnitude).unwrap();
        assert_eq!(high.mask(&values, &mut rng), vec![1., 0., 1., 0., 1.]);
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let mut store = ParamStore::new();
        assert!(GroupNorm::new(&mut store, "gn", 10, 4).is_err());
    }
}
