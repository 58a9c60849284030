//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! A [`Graph`] records every operation as a node holding its value, its
//! input node ids and a closure computing vector-Jacobian products. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Graph::backward`] is a single reverse sweep.
//!
//! Leaf gradients (explicit leaves and parameters) persist across calls to
//! `backward` and accumulate additively; the caller zeroes them.

mod ops;
mod params;

pub use ops::{sigmoid, sine_relu, softmax_into, Padding};
pub use params::{ParamId, ParamStore};

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure gets to see.
pub struct BackwardCtx<'c> {
    pub inputs: Vec<&'c Tensor>,
    pub output: &'c Tensor,
    pub grad: &'c Tensor,
}

type BackwardFn<'a> = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'a>;

struct Node<'a> {
    value: Cow<'a, Tensor>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<'a>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    leaf_grads: HashMap<usize, Tensor>,
    param_vars: HashMap<ParamId, Var>,
    record: bool,
    visits: usize,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_grads: HashMap::new(),
            param_vars: HashMap::new(),
            record: true,
            visits: 0,
        }
    }

    /// A graph that never records backward closures. Used for inference.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Cow::Owned(value), Vec::new(), None, false, None)
    }

    /// A differentiable leaf owned by the graph.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let rg = self.record;
        self.push_node(Cow::Owned(value), Vec::new(), None, rg, None)
    }

    /// A parameter borrowed from `store`. Repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let rg = self.record;
        let v = self.push_node(Cow::Borrowed(store.value(id)), Vec::new(), None, rg, Some(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Number of nodes whose backward rule ran during the last `backward`.
    pub fn last_backward_visits(&self) -> usize {
        self.visits
    }

    /// Records an operation with a caller-supplied vector-Jacobian product.
    ///
    /// `backward` receives the input values, the output value and the
    /// upstream gradient, and returns one optional gradient per input in
    /// order. Returning `None` for an input means it receives nothing.
    pub fn custom<F>(&mut self, inputs: &[Var], value: Tensor, backward: F) -> Var
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'a,
    {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let bw: Option<BackwardFn<'a>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(
            Cow::Owned(value),
            inputs.iter().map(|v| v.0).collect(),
            bw,
            requires_grad,
            None,
        )
    }

    fn push_node(
        &mut self,
        value: Cow<'a, Tensor>,
        inputs: Vec<usize>,
        backward: Option<BackwardFn<'a>>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            backward,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.visits = 0;
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(root.value.shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.visits += 1;
            let Some(bw) = &node.backward else {
                match self.leaf_grads.get_mut(&i) {
                    Some(acc) => acc.add_assign(&gout)?,
                    None => {
                        self.leaf_grads.insert(i, gout);
                    }
                }
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|&j| &*self.nodes[j].value).collect(),
                output: &node.value,
                grad: &gout,
            };
            let input_grads = bw(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&j, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[j].value.shape(), "grad shape for node {j}");
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradients of every parameter node touched by `backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .param_vars
            .iter()
            .filter_map(|(&id, v)| self.leaf_grads.get(&v.0).map(|g| (id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Parameter id backing a node, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        self.nodes[v.0].param
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 2]));
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_of_x_has_unit_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 7., 9.]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1., 2.]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1., 2.]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4., 8.]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn backward_visits_each_reachable_node_once() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.3, -0.2]).unwrap());
        // diamond: x feeds two branches that rejoin
        let a = g.tanh(x);
        let b = g.sigmoid(x);
        let c = g.mul(a, b).unwrap();
        let d = g.add(c, a).unwrap();
        let unused = g.exp(x);
        let _ = unused;
        let s = g.sum(d);
        g.backward(s).unwrap();
        // x, a, b, c, d, s
        assert_eq!(g.last_backward_visits(), 6);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::row(vec![1.0]).unwrap());
        let y = g.exp(x);
        let s = g.sum(y);
        assert!(!g.requires_grad(s));
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn params_are_shared_and_report_grads() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![3.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, w);
        let b = g.param(&store, w);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].1.data(), &[6.0]);
    }
}
