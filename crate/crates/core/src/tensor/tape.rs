use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use super::conv::{ConvGeom, PoolMode};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, a: f64 },
    AddRow { m: Var, v: Var },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Softmax(Var),
    LogPick { p: Var, index: usize, floor: f64 },
    Column { m: Var, index: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    Reshape(Var),
    Select { x: Var, index: usize },
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    Pool { x: Var, mode: PoolMode, route: Vec<usize> },
    BatchNorm { x: Var, scale: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Dropout { x: Var, mask: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Leaf | Param(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | MatMulT(a, b) | MatVec(a, b)
            | VecMat(a, b) => vec![*a, *b],
            AddRow { m, v } => vec![*m, *v],
            Affine { x, .. }
            | Slice { x, .. }
            | Select { x, .. }
            | Pool { x, .. }
            | Dropout { x, .. } => vec![*x],
            Sigmoid(x) | Tanh(x) | Relu(x) | Abs(x) | Square(x) | Sum(x) | Softmax(x)
            | Reshape(x) => vec![*x],
            LogPick { p, .. } => vec![*p],
            Column { m, .. } => vec![*m],
            Concat(xs) => xs.clone(),
            Conv2d { x, k, .. } => vec![*x, *k],
            BatchNorm { x, scale, shift, .. } => vec![*x, *scale, *shift],
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
    /// Accumulated gradient for `Leaf` nodes across backward calls.
    pub leaf_grad: Option<Vec<f64>>,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape is single-threaded; build one per forward pass. Parameters are
/// copied in on first use and gradients are written back to the
/// [`ParamStore`] by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_cache: RefCell<HashMap<ParamId, Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = match op {
            Op::Leaf | Op::Param(_) => true,
            Op::Constant => false,
            _ => op.inputs().iter().any(|v| nodes[v.0].requires_grad),
        };
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            leaf_grad: None,
        });
        Var(nodes.len() - 1)
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// A value that takes no part in differentiation.
    pub fn constant(&self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Constant)
    }

    /// A free input whose gradient is retained and readable via [`Tape::grad`].
    pub fn leaf(&self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    /// Brings a trainable parameter onto the tape (once per tape).
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_cache.borrow().get(&id) {
            return *v;
        }
        let p = store.get(id);
        let v = self.push(p.value.shape().to_vec(), p.value.data().to_vec(), Op::Param(id));
        self.param_cache.borrow_mut().insert(id, v);
        v
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        Tensor {
            shape: nodes[v.0].shape.clone(),
            data: nodes[v.0].value.clone(),
        }
    }

    pub fn data(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.len(), 1);
        nodes[v.0].value[0]
    }

    /// Accumulated gradient of a [`Tape::leaf`] input, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.leaf_grad.as_ref().map(|g| Tensor {
            shape: node.shape.clone(),
            data: g.clone(),
        })
    }

    /// Propagates d(root)/d(node) through the graph.
    ///
    /// Parameter gradients are added to `store`, leaf gradients to the leaf
    /// nodes; both accumulate across repeated calls.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[root.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", nodes[root.0].shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            match &nodes[i].op {
                Op::Constant => {}
                Op::Leaf => {
                    let slot = nodes[i].leaf_grad.get_or_insert_with(|| vec![0.0; g.len()]);
                    slot.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    p.grad
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(s, d)| *s += d);
                }
                _ => backward_node(&nodes, i, &g, &mut grads),
            }
        }
        Ok(())
    }
}

/// Mutable gradient slot for `v`, or `None` when `v` needs no gradient.
pub(crate) fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backward_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    use super::{conv, norm, ops};
    let node = &nodes[i];
    match &node.op {
        Op::Conv2d { x, k, geom } => conv::conv2d_backward(nodes, *x, *k, geom, g, grads),
        Op::Pool { x, mode, route } => conv::pool_backward(nodes, *x, *mode, route, g, grads),
        Op::BatchNorm {
            x,
            scale,
            shift,
            xhat,
            inv_std,
            train,
        } => norm::batchnorm_backward(nodes, [*x, *scale, *shift], xhat, inv_std, *train, g, grads),
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((s, d), m) in gx.iter_mut().zip(g).zip(mask) {
                    *s += d * m;
                }
            }
        }
        _ => ops::backward(nodes, node, g, grads),
    }
}
