//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates gradients per node.

use super::ops;
use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Reshape {
        x: Var,
    },
    Upsample {
        x: Var,
    },
    /// `[B, C, L] + [B, C]` broadcast over `L`.
    AddChannel {
        x: Var,
        e: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    Grl {
        x: Var,
        lambda: f64,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
    CrossEntropy {
        grad: Tensor,
        logits: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Places every parameter of `store` on the tape; index `i` of the
    /// result is parameter `i`.
    pub fn bind(&mut self, store: &ParameterStore) -> Vec<Var> {
        (0..store.len())
            .map(|i| self.push(store.value(i).clone(), Op::Param(i)))
            .collect()
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv1d_forward(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push(
            y,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| ops::leaky_relu(v, slope)).collect();
        let y = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(y, Op::LeakyRelu { x, slope })
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let batch = s[0];
        let width = s[1..].iter().product();
        let y = self.value(x).clone().reshaped(vec![batch, width]).expect("same size");
        self.push(y, Op::Reshape { x })
    }

    pub fn upsample_linear(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let y = ops::upsample_forward(self.value(x), out_len)?;
        Ok(self.push(y, Op::Upsample { x }))
    }

    /// Adds a per-channel embedding `e: [B, C]` to every position of `x: [B, C, L]`.
    pub fn sum_fuse(&mut self, x: Var, e: Var) -> Result<Var> {
        let (xs, es) = (self.shape(x).to_vec(), self.shape(e).to_vec());
        if xs.len() != 3 || es != [xs[0], xs[1]] {
            return Err(Error::Shape(format!(
                "sum_fuse expects [B, C, L] and [B, C], got {xs:?} and {es:?}"
            )));
        }
        let l = xs[2];
        let mut y = self.value(x).clone();
        let ed = self.value(e).data().to_vec();
        for (row, ev) in y.data_mut().chunks_mut(l).zip(ed) {
            for v in row {
                *v += ev;
            }
        }
        Ok(self.push(y, Op::AddChannel { x, e }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let mut y = self.value(x).clone();
        y.scale(k);
        self.push(y, Op::Scale { x, k })
    }

    /// Identity forward; backward multiplies the incoming gradient by `-lambda`.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Var {
        let y = self.value(x).clone();
        self.push(y, Op::Grl { x, lambda })
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "mse of {:?} against {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if p.is_empty() {
            return Err(Error::Shape("mse of empty tensors".into()));
        }
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Mean softmax cross-entropy of `logits: [B, C]` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, grad) = ops::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { grad, logits }))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            // Inputs always precede their consumer on the tape.
            let (grads, rest) = grads.split_at_mut(i);
            let Some(gy) = rest[0].as_ref() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (gx, gw, gb) =
                        ops::conv1d_backward(self.value(*x), self.value(*w), self.value(*b), gy, *stride, *padding)?;
                    acc(grads, *x, gx);
                    acc(grads, *w, gw);
                    acc(grads, *b, gb);
                }
                Op::Linear { x, w, b } => {
                    let (gx, gw, gb) = ops::linear_backward(self.value(*x), self.value(*w), self.value(*b), gy)?;
                    acc(grads, *x, gx);
                    acc(grads, *w, gw);
                    acc(grads, *b, gb);
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                        .collect();
                    acc(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::Reshape { x } => {
                    let shape = self.shape(*x).to_vec();
                    acc(grads, *x, gy.clone().reshaped(shape)?);
                }
                Op::Upsample { x } => {
                    let gx = ops::upsample_backward(self.shape(*x), gy)?;
                    acc(grads, *x, gx);
                }
                Op::AddChannel { x, e } => {
                    let l = self.shape(*x)[2];
                    let ge: Vec<f64> = gy.data().chunks(l).map(|r| r.iter().sum()).collect();
                    acc(grads, *e, Tensor::new(self.shape(*e).to_vec(), ge)?);
                    acc(grads, *x, gy.clone());
                }
                Op::Add { a, b } => {
                    acc(grads, *b, gy.clone());
                    acc(grads, *a, gy.clone());
                }
                Op::Scale { x, k } => {
                    let mut g = gy.clone();
                    g.scale(*k);
                    acc(grads, *x, g);
                }
                Op::Grl { x, lambda } => {
                    let mut g = gy.clone();
                    g.scale(-lambda);
                    acc(grads, *x, g);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let k = 2.0 * gy.data()[0] / p.len() as f64;
                    let data = p.data().iter().zip(target.data()).map(|(a, b)| k * (a - b)).collect();
                    acc(grads, *pred, Tensor::new(p.shape().to_vec(), data)?);
                }
                Op::CrossEntropy { grad, logits } => {
                    let mut g = grad.clone();
                    g.scale(gy.data()[0]);
                    acc(grads, *logits, g);
                }
            }
        }
        Ok(Grads { grads })
    }

    /// Gradients of the bound parameters, aligned with the store; parameters
    /// not reached by `loss` get zeros.
    pub fn param_grads(&self, grads: &Grads, store: &ParameterStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = (0..store.len())
            .map(|i| Tensor::zeros(store.value(i).shape()))
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(p), Some(g)) = (&node.op, grads.grads.get(i).and_then(|g| g.as_ref())) {
                out[*p].add_assign(g);
            }
        }
        out
    }
}
