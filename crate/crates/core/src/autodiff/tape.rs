use super::ops::{self, Primitive};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Origin {
    /// Differentiable input.
    Leaf,
    /// Input or result that carries no gradient.
    Constant,
    Op {
        kind: Primitive,
        operands: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    origin: Origin,
    grad: Option<Tensor>,
}

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so operands always precede their
/// results. Gradients of leaves accumulate across [`Tape::backward`] calls
/// until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Origin::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Origin::Constant)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, origin: Origin) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            origin,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(Error::ForeignVariable(v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, or zeros if nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad.clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Evaluates `kind` on `operands` and records it when any operand
    /// requires gradients.
    pub fn apply(&mut self, kind: Primitive, operands: &[Var]) -> Result<Var> {
        let mut needs_grad = false;
        for &v in operands {
            needs_grad |= self.node(v)?.requires_grad;
        }
        let value = {
            let args: Vec<&Tensor> = operands.iter().map(|v| &self.nodes[v.0].value).collect();
            ops::forward(&kind, &args)?
        };
        let origin = if needs_grad {
            Origin::Op {
                kind,
                operands: operands.to_vec(),
            }
        } else {
            Origin::Constant
        };
        Ok(self.push(value, needs_grad, origin))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(Primitive::Slice { start, end }, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::GatherRows(rows), &[a])
    }

    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Stack { axis }, parts)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    /// Reverse sweep from a scalar `root`, accumulating into leaf gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        let root_node = self.node(root)?;
        if !root_node.value.is_scalar() {
            return Err(Error::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        if !root_node.requires_grad {
            return Ok(());
        }
        let mut adjoint: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adjoint[root.0] = Some(Tensor::full(root_node.value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.origin {
                Origin::Constant => {}
                Origin::Leaf => match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Origin::Op { kind, operands } => {
                    let args: Vec<&Tensor> = operands.iter().map(|v| &self.nodes[v.0].value).collect();
                    let needs: Vec<bool> = operands.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                    let grads = ops::backward(kind, &args, &node.value, &g, &needs);
                    for (v, grad) in operands.iter().zip(grads) {
                        let Some(grad) = grad else { continue };
                        match &mut adjoint[v.0] {
                            Some(acc) => acc.add_assign(&grad),
                            slot @ None => *slot = Some(grad),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-evaluates every recorded operation from its operands and returns
    /// the resulting values in node order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.origin {
                Origin::Leaf | Origin::Constant => node.value.clone(),
                Origin::Op { kind, operands } => {
                    let args: Vec<&Tensor> = operands.iter().map(|v| &values[v.0]).collect();
                    ops::forward(kind, &args)?
                }
            };
            values.push(value);
        }
        Ok(values)
    }
}
