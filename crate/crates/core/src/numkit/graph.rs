//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly (values are computed as nodes
//! are added) and [`Graph::backward`] walks the tape in reverse. Parameters
//! enter as named leaves, so gradients come back shaped like the [`ParamSet`].

use super::conv::{conv_backward, conv_forward, ConvGeometry};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Largest `f64` strictly below 1.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

/// Elementwise activation.
pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Selects the `k` largest entries of each column, ties to the smaller row.
pub fn top_k_rows(x: &Tensor, col: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.sort_by(|&a, &b| x.get2(b, col).total_cmp(&x.get2(a, col)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean of the `k` largest entries of column `col`, summed in row order.
pub fn top_k_mean_col(x: &Tensor, col: usize, k: usize) -> f64 {
    let mut rows = top_k_rows(x, col, k);
    rows.sort_unstable();
    rows.iter().map(|&r| x.get2(r, col)).sum::<f64>() / k as f64
}

enum Op {
    Leaf,
    Param(String),
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    Act(NodeId, Activation),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    TopKMean {
        x: NodeId,
        k: usize,
        selected: Vec<Vec<usize>>,
    },
    /// Scalar sum of per-element terms whose derivatives were precomputed.
    PointwiseSum {
        x: NodeId,
        dvalue: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient of interest.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let value = self.params.get(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn conv(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let geom = ConvGeometry::check(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let (out, cols) = conv_forward(self.value(x), self.value(w), self.value(b), &geom);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            },
        ))
    }

    /// Convolution with parameters `{prefix}.weight` / `{prefix}.bias`.
    pub fn conv_named(
        &mut self,
        x: NodeId,
        prefix: &str,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.conv(x, w, b, stride, padding)
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let v = activation(self.value(x), kind);
        self.push(v, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.value(a).same_shape(self.value(b), "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.value(a).same_shape(self.value(b), "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let v = self.value(x).map(|e| e * factor);
        self.push(v, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let cols = self.value(x).cols();
        if start > end || end > cols {
            return Err(Error::OutOfRange {
                index: end,
                len: cols,
            });
        }
        let v = self.value(x).slice_cols(start, end);
        Ok(self.push(v, Op::SliceCols { x, start }))
    }

    /// Per column: mean of the `k` largest entries. Output has one value per column.
    pub fn top_k_mean(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let src = self.value(x);
        if k == 0 || k > src.rows() {
            return Err(Error::InvalidArgument(format!(
                "top-k mean: k = {k} outside [1, {}]",
                src.rows()
            )));
        }
        let cols = src.cols();
        let mut selected = Vec::with_capacity(cols);
        let mut out = Vec::with_capacity(cols);
        for c in 0..cols {
            out.push(top_k_mean_col(src, c, k));
            selected.push(top_k_rows(src, c, k));
        }
        let v = Tensor::new(vec![cols], out)?;
        Ok(self.push(v, Op::TopKMean { x, k, selected }))
    }

    /// Scalar `Σ_i f(x_i, i)` where `f` returns `(value, d value / d x_i)`.
    pub fn pointwise_sum(
        &mut self,
        x: NodeId,
        mut f: impl FnMut(f64, usize) -> Result<(f64, f64)>,
    ) -> Result<NodeId> {
        let src = self.value(x).data();
        let mut total = 0.0;
        let mut dvalue = Vec::with_capacity(src.len());
        for (i, &v) in src.iter().enumerate() {
            let (l, d) = f(v, i)?;
            total += l;
            dvalue.push(d);
        }
        Ok(self.push(Tensor::scalar(total), Op::PointwiseSum { x, dvalue }))
    }

    /// Reverse pass from scalar `loss`. Returns the loss value and gradients
    /// shaped like the graph's parameter set (zero where a parameter is unused).
    pub fn backward(&self, loss: NodeId) -> Result<(f64, ParamSet)> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.len()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out = self.params.zeros_like();

        for id in (0..=loss.0).rev() {
            let Some(up) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => out.accumulate(name, &up)?,
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let g = conv_backward(&up, cols, self.value(*w), geom);
                    accumulate(&mut grads, *x, g.x);
                    accumulate(&mut grads, *w, g.kernel);
                    accumulate(&mut grads, *b, g.bias);
                }
                Op::Act(x, kind) => {
                    let y = &node.value;
                    let data = up
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&u, &yv)| match kind {
                            Activation::Relu => {
                                if yv > 0.0 {
                                    u
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => u * yv * (1.0 - yv),
                        })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, up.clone());
                    accumulate(&mut grads, *b, up);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = up.data().iter().zip(vb.data()).map(|(u, y)| u * y).collect();
                    let db = up.data().iter().zip(va.data()).map(|(u, x)| u * x).collect();
                    accumulate(&mut grads, *a, Tensor::new(va.shape().to_vec(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(vb.shape().to_vec(), db)?);
                }
                Op::Scale(x, f) => accumulate(&mut grads, *x, up.map(|u| u * f)),
                Op::Sum(x) => {
                    let u = up.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), u));
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let n = self.value(p).rows();
                        accumulate(&mut grads, p, up.slice_rows(row, row + n));
                        row += n;
                    }
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut g = Tensor::zeros(src.shape());
                    let width = up.cols();
                    for r in 0..src.rows() {
                        g.row_mut(r)[*start..*start + width].copy_from_slice(up.row(r));
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::TopKMean { x, k, selected } => {
                    let src = self.value(*x);
                    let mut g = Tensor::zeros(src.shape());
                    for (c, rows) in selected.iter().enumerate() {
                        let d = up.data()[c] / *k as f64;
                        for &r in rows {
                            g.set2(r, c, g.get2(r, c) + d);
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::PointwiseSum { x, dvalue } => {
                    let u = up.data()[0];
                    let src = self.value(*x);
                    let data = dvalue.iter().map(|d| d * u).collect();
                    accumulate(&mut grads, *x, Tensor::new(src.shape().to_vec(), data)?);
                }
            }
        }
        Ok((lv.data()[0], out))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
