//! Forward and vector-Jacobian kernels of the primitive set.
//!
//! Every reduction runs left to right over a fixed index order, so results do
//! not depend on how rows are grouped into batches.

use std::fmt;
use std::str::FromStr;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Primitive operations a [`Tape`](super::Tape) can record.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[.., k] x [k, n] -> [.., n]`.
    MatMul,
    /// Elementwise sum; the second operand may be a trailing-axes suffix of
    /// the first and is then broadcast over the leading axes.
    Add,
    /// Like `Add`, with the second operand negated.
    Sub,
    /// Elementwise product of equally shaped operands.
    Mul,
    Scale(f64),
    Relu,
    Tanh,
    /// Concatenation of any number of operands along the last axis.
    Concat,
    /// Columns `start..end` of the last axis.
    Slice {
        start: usize,
        end: usize,
    },
    Sum,
    Mean,
    Square,
    /// Row selection along the first axis; repeated indices are allowed.
    GatherRows(Vec<usize>),
    /// Stacks equally shaped operands along a new axis at `axis`.
    Stack {
        axis: usize,
    },
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "subtract",
            Primitive::Mul => "multiply",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Concat => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Square => "square",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::Stack { .. } => "stack",
            Primitive::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => Some(2),
            Primitive::Concat | Primitive::Stack { .. } => None,
            _ => Some(1),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the parameter-free primitives by name.
impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Primitive::MatMul,
            "add" => Primitive::Add,
            "subtract" | "sub" => Primitive::Sub,
            "multiply" | "mul" => Primitive::Mul,
            "relu" => Primitive::Relu,
            "tanh" => Primitive::Tanh,
            "concat" => Primitive::Concat,
            "sum" => Primitive::Sum,
            "mean" => Primitive::Mean,
            "square" => Primitive::Square,
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }
}

fn suffix_broadcast(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

pub(crate) fn forward(kind: &Primitive, args: &[&Tensor]) -> Result<Tensor> {
    if let Some(n) = kind.arity() {
        if args.len() != n {
            return Err(Error::InvalidArgument(format!("{kind} expects {n} operands, got {}", args.len())));
        }
    } else if args.is_empty() {
        return Err(Error::InvalidArgument(format!("{kind} needs operands")));
    }
    match kind {
        Primitive::MatMul => matmul(args[0], args[1]),
        Primitive::Add | Primitive::Sub => {
            let (a, b) = (args[0], args[1]);
            if !suffix_broadcast(a.shape(), b.shape()) {
                return Err(Error::shape(kind.name(), a.shape(), b.shape()));
            }
            let sign = if *kind == Primitive::Add { 1.0 } else { -1.0 };
            let bd = b.data();
            let mut out = a.data().to_vec();
            if !bd.is_empty() {
                for chunk in out.chunks_mut(bd.len()) {
                    for (o, &v) in chunk.iter_mut().zip(bd) {
                        *o += sign * v;
                    }
                }
            }
            Tensor::new(a.shape().to_vec(), out)
        }
        Primitive::Mul => {
            let (a, b) = (args[0], args[1]);
            if a.shape() != b.shape() {
                return Err(Error::shape("multiply", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Primitive::Scale(c) => Ok(args[0].map(|v| c * v)),
        Primitive::Relu => Ok(args[0].map(|v| if v > 0.0 { v } else { 0.0 })),
        Primitive::Tanh => Ok(args[0].map(f64::tanh)),
        Primitive::Square => Ok(args[0].map(|v| v * v)),
        Primitive::Sum => Ok(Tensor::scalar(sum(args[0].data()))),
        Primitive::Mean => {
            let a = args[0];
            if a.is_empty() {
                return Err(Error::InvalidArgument("mean of an empty tensor".into()));
            }
            Ok(Tensor::scalar(sum(a.data()) / a.len() as f64))
        }
        Primitive::Concat => concat(args),
        Primitive::Slice { start, end } => {
            let a = args[0];
            let w = a.last_dim();
            if start >= end || *end > w || a.rank() == 0 {
                return Err(Error::shape("slice", a.shape(), &[*start, *end]));
            }
            let mut data = Vec::with_capacity(a.leading() * (end - start));
            for r in 0..a.leading() {
                data.extend_from_slice(&a.row(r)[*start..*end]);
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = end - start;
            Tensor::new(shape, data)
        }
        Primitive::GatherRows(idx) => {
            let a = args[0];
            if a.rank() == 0 {
                return Err(Error::shape("gather_rows", a.shape(), &[idx.len()]));
            }
            let rows = a.shape()[0];
            let inner: usize = a.shape()[1..].iter().product();
            let mut data = Vec::with_capacity(idx.len() * inner);
            for &i in idx {
                if i >= rows {
                    return Err(Error::shape("gather_rows", a.shape(), &[i]));
                }
                data.extend_from_slice(&a.data()[i * inner..(i + 1) * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[0] = idx.len();
            Tensor::new(shape, data)
        }
        Primitive::Stack { axis } => {
            let first = args[0].shape();
            if *axis > first.len() {
                return Err(Error::shape("stack", first, &[*axis]));
            }
            if let Some(bad) = args.iter().find(|t| t.shape() != first) {
                return Err(Error::shape("stack", first, bad.shape()));
            }
            let outer: usize = first[..*axis].iter().product();
            let inner: usize = first[*axis..].iter().product();
            let mut data = Vec::with_capacity(outer * inner * args.len());
            for o in 0..outer {
                for t in args {
                    data.extend_from_slice(&t.data()[o * inner..(o + 1) * inner]);
                }
            }
            let mut shape = first.to_vec();
            shape.insert(*axis, args.len());
            Tensor::new(shape, data)
        }
        Primitive::Reshape(shape) => args[0].clone().reshape(shape),
    }
}

/// Left-to-right sum.
fn sum(v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in v {
        acc += x;
    }
    acc
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() == 0 || b.rank() != 2 || a.last_dim() != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.leading(), a.last_dim(), b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}

fn concat(args: &[&Tensor]) -> Result<Tensor> {
    let first = args[0];
    if first.rank() == 0 {
        return Err(Error::shape("concat", first.shape(), &[]));
    }
    let lead = &first.shape()[..first.rank() - 1];
    for t in args {
        if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
            return Err(Error::shape("concat", first.shape(), t.shape()));
        }
    }
    let width: usize = args.iter().map(|t| t.last_dim()).sum();
    let rows = first.leading();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for t in args {
            data.extend_from_slice(t.row(r));
        }
    }
    let mut shape = first.shape().to_vec();
    *shape.last_mut().unwrap() = width;
    Tensor::new(shape, data)
}

/// Gradients of every operand given the upstream gradient `grad` of the
/// result. Entries are `None` for operands that need no gradient.
pub(crate) fn backward(kind: &Primitive, args: &[&Tensor], out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let mut res: Vec<Option<Tensor>> = vec![None; args.len()];
    match kind {
        Primitive::MatMul => {
            let (a, b) = (args[0], args[1]);
            let (m, k, n) = (a.leading(), a.last_dim(), b.shape()[1]);
            let (ad, bd, gd) = (a.data(), b.data(), grad.data());
            if needs[0] {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        let mut acc = 0.0;
                        for (g, bv) in grow.iter().zip(brow) {
                            acc += g * bv;
                        }
                        ga[i * k + kk] = acc;
                    }
                }
                res[0] = Some(Tensor::new(a.shape().to_vec(), ga).unwrap());
            }
            if needs[1] {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    let grow = &gd[i * n..(i + 1) * n];
                    for (kk, &av) in arow.iter().enumerate() {
                        let dst = &mut gb[kk * n..(kk + 1) * n];
                        for (d, &g) in dst.iter_mut().zip(grow) {
                            *d += av * g;
                        }
                    }
                }
                res[1] = Some(Tensor::new(b.shape().to_vec(), gb).unwrap());
            }
        }
        Primitive::Add | Primitive::Sub => {
            if needs[0] {
                res[0] = Some(grad.clone());
            }
            if needs[1] {
                let b = args[1];
                let sign = if *kind == Primitive::Add { 1.0 } else { -1.0 };
                let mut gb = vec![0.0; b.len()];
                if !gb.is_empty() {
                    for chunk in grad.data().chunks(b.len()) {
                        for (d, &g) in gb.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                }
                if sign < 0.0 {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                res[1] = Some(Tensor::new(b.shape().to_vec(), gb).unwrap());
            }
        }
        Primitive::Mul => {
            for (slot, other) in [(0, 1), (1, 0)] {
                if needs[slot] {
                    let data = grad.data().iter().zip(args[other].data()).map(|(g, v)| g * v).collect();
                    res[slot] = Some(Tensor::new(grad.shape().to_vec(), data).unwrap());
                }
            }
        }
        Primitive::Scale(c) => res[0] = Some(grad.map(|g| c * g)),
        Primitive::Relu => {
            let data = grad
                .data()
                .iter()
                .zip(args[0].data())
                .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                .collect();
            res[0] = Some(Tensor::new(grad.shape().to_vec(), data).unwrap());
        }
        Primitive::Tanh => {
            let data = grad.data().iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
            res[0] = Some(Tensor::new(grad.shape().to_vec(), data).unwrap());
        }
        Primitive::Square => {
            let data = grad.data().iter().zip(args[0].data()).map(|(g, x)| 2.0 * x * g).collect();
            res[0] = Some(Tensor::new(grad.shape().to_vec(), data).unwrap());
        }
        Primitive::Sum => res[0] = Some(Tensor::full(args[0].shape(), grad.item())),
        Primitive::Mean => {
            let a = args[0];
            res[0] = Some(Tensor::full(a.shape(), grad.item() / a.len() as f64));
        }
        Primitive::Concat => {
            let rows = grad.leading();
            let width = grad.last_dim();
            let mut offset = 0;
            for (slot, a) in args.iter().enumerate() {
                let w = a.last_dim();
                if needs[slot] {
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        let row = &grad.data()[r * width..(r + 1) * width];
                        data.extend_from_slice(&row[offset..offset + w]);
                    }
                    res[slot] = Some(Tensor::new(a.shape().to_vec(), data).unwrap());
                }
                offset += w;
            }
        }
        Primitive::Slice { start, end } => {
            let a = args[0];
            let w = a.last_dim();
            let gw = end - start;
            let mut data = vec![0.0; a.len()];
            for r in 0..a.leading() {
                data[r * w + start..r * w + end].copy_from_slice(&grad.data()[r * gw..(r + 1) * gw]);
            }
            res[0] = Some(Tensor::new(a.shape().to_vec(), data).unwrap());
        }
        Primitive::GatherRows(idx) => {
            let a = args[0];
            let inner: usize = a.shape()[1..].iter().product();
            let mut data = vec![0.0; a.len()];
            for (pos, &i) in idx.iter().enumerate() {
                let src = &grad.data()[pos * inner..(pos + 1) * inner];
                for (d, s) in data[i * inner..(i + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
            res[0] = Some(Tensor::new(a.shape().to_vec(), data).unwrap());
        }
        Primitive::Stack { axis } => {
            let shape = args[0].shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis..].iter().product();
            let count = args.len();
            for (slot, a) in args.iter().enumerate() {
                if !needs[slot] {
                    continue;
                }
                let mut data = Vec::with_capacity(a.len());
                for o in 0..outer {
                    let base = (o * count + slot) * inner;
                    data.extend_from_slice(&grad.data()[base..base + inner]);
                }
                res[slot] = Some(Tensor::new(a.shape().to_vec(), data).unwrap());
            }
        }
        Primitive::Reshape(_) => {
            res[0] = Some(grad.clone().reshape(args[0].shape()).unwrap());
        }
    }
    for (slot, need) in needs.iter().enumerate() {
        if !need {
            res[slot] = None;
        }
    }
    res
}
