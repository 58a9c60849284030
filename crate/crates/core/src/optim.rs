//! SGD and Adam.

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state. Adam moment buffers exist iff the kind is Adam and are
/// shaped like the parameters they were created for.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, shapes: &[Vec<usize>]) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let moments = || -> Vec<Tensor> {
            match kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam { .. } => shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            }
        };
        Ok(Optimizer {
            kind,
            learning_rate,
            step: 0,
            first_moment: moments(),
            second_moment: moments(),
        })
    }

    pub fn for_store(kind: OptimizerKind, learning_rate: f64, store: &ParamStore) -> Result<Self> {
        let shapes: Vec<Vec<usize>> = store.inventory().into_iter().map(|(_, s)| s).collect();
        Self::new(kind, learning_rate, &shapes)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> Option<(&[Tensor], &[Tensor])> {
        match self.kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam { .. } => Some((&self.first_moment, &self.second_moment)),
        }
    }

    /// One update of `params` from `grads`, in matching order and shapes.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::shape(
                        "optimizer_step",
                        &[self.first_moment.len()],
                        &[params.len()],
                    ));
                }
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.first_moment[i].data_mut();
                    let v = self.second_moment[i].data_mut();
                    for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * d;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * d * d;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies the accumulated gradients of `store`. Gradients are not zeroed.
    pub fn step_store(&mut self, store: &mut ParamStore) -> Result<()> {
        let (values, grads) = store.values_and_grads_mut();
        self.step(values, grads)
    }
}
