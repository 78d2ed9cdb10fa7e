//! Dynamic gradient tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op appends a node
//! holding its output value and whatever it needs for the backward sweep;
//! [`Tape::backward`] walks the nodes in reverse creation order.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry, PoolGeometry};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, geom: PoolGeometry },
    Linear { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Concat { parts: Vec<Var> },
    Reshape { input: Var },
    Dropout { input: Var, mask: Vec<T> },
    CrossEntropy { logits: Var, label: usize, probs: Vec<T> },
    Sum { input: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a leaf. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor.clone();
        value.zero_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a constant leaf (never differentiated).
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let mut value = tensor;
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let (is, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if is.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(TensorError::shape(OP, format!("input {is:?}, weight {ws:?}, bias {bs:?}")));
        }
        if ws[1] != is[0] {
            return Err(TensorError::shape(
                OP,
                format!("weight expects {} input channels, input has {}", ws[1], is[0]),
            ));
        }
        if ws[2] != ws[3] {
            return Err(TensorError::shape(OP, format!("non-square kernel {ws:?}")));
        }
        if bs[0] != ws[0] {
            return Err(TensorError::shape(OP, format!("bias {bs:?} for {} filters", ws[0])));
        }
        if stride == 0 {
            return Err(TensorError::argument(OP, "stride must be positive"));
        }
        let geom = ConvGeometry {
            in_channels: is[0],
            out_channels: ws[0],
            height: is[1],
            width: is[2],
            kernel: ws[2],
            stride,
            padding,
        };
        if geom.kernel > geom.height + 2 * padding || geom.kernel > geom.width + 2 * padding {
            return Err(TensorError::shape(OP, format!("kernel {} exceeds padded input {is:?}", geom.kernel)));
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new([geom.out_channels, geom.out_height(), geom.out_width()], out)?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    fn pool_geometry(&self, op: &'static str, input: Var, kernel: usize, stride: usize) -> Result<PoolGeometry> {
        if kernel == 0 || stride == 0 {
            return Err(TensorError::argument(op, format!("kernel {kernel} and stride {stride} must be positive")));
        }
        let s = self.shape(input);
        if s.len() != 3 {
            return Err(TensorError::shape(op, format!("expected [C,H,W], got {s:?}")));
        }
        if kernel > s[1] || kernel > s[2] {
            return Err(TensorError::shape(op, format!("window {kernel} larger than {s:?}")));
        }
        Ok(PoolGeometry { channels: s[0], height: s[1], width: s[2], kernel, stride })
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let geom = self.pool_geometry("max_pool2d", input, kernel, stride)?;
        let (out, argmax) = kernels::max_pool2d_forward(&geom, self.value(input).data());
        let value = Tensor::new([geom.channels, geom.out_height(), geom.out_width()], out)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    pub fn avg_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let geom = self.pool_geometry("avg_pool2d", input, kernel, stride)?;
        let out = kernels::avg_pool2d_forward(&geom, self.value(input).data());
        let value = Tensor::new([geom.channels, geom.out_height(), geom.out_width()], out)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::AvgPool { input, geom }, rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (is, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if is.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != is[0] || bs[0] != ws[0] {
            return Err(TensorError::shape("linear", format!("input {is:?}, weight {ws:?}, bias {bs:?}")));
        }
        let out = kernels::linear_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(Tensor::vector(out), Op::Linear { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.needs(input);
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| TensorError::shape("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| TensorError::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        let rg = self.needs(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Concatenates along the leading axis; trailing axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::argument("concat", "nothing to concatenate"));
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TensorError::shape(
                    "concat",
                    format!("{s:?} does not match trailing axes {tail:?}"),
                ));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`. Identity when
    /// `training` is false or `p == 0`; the generator is not advanced then.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::argument("dropout", format!("p = {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let src = self.value(input);
        let data = src.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.needs(input);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }

    /// `-log softmax(logits)[label]`, computed with max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.shape().len() != 1 || z.is_empty() {
            return Err(TensorError::shape("cross_entropy", format!("logits must be a vector, got {:?}", z.shape())));
        }
        if label >= z.len() {
            return Err(TensorError::argument("cross_entropy", format!("label {label} for {} classes", z.len())));
        }
        let probs = softmax(z.data());
        let max = z.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.data().iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        let loss = lse - z.data()[label];
        let rg = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::argument(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut send = |var: Var, delta: Vec<T>| {
            if !self.needs(var) {
                return;
            }
            match &mut grads[var.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (gi, gw, gb) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.needs(*input),
                );
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                send(*weight, gw);
                send(*bias, gb);
            }
            Op::MaxPool { input, argmax } => {
                send(*input, kernels::max_pool2d_backward(self.value(*input).len(), argmax, g));
            }
            Op::AvgPool { input, geom } => send(*input, kernels::avg_pool2d_backward(geom, g)),
            Op::Linear { input, weight, bias } => {
                let (gi, gw) = kernels::linear_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.needs(*input),
                );
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                send(*weight, gw);
                send(*bias, g.to_vec());
            }
            Op::Relu { input } => {
                let delta = out.data().iter().zip(g).map(|(&y, &d)| if y > T::zero() { d } else { T::zero() }).collect();
                send(*input, delta);
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if a == b {
                    send(*a, va.iter().zip(g).map(|(&x, &d)| (x + x) * d).collect());
                } else {
                    send(*a, vb.iter().zip(g).map(|(&y, &d)| y * d).collect());
                    send(*b, va.iter().zip(g).map(|(&x, &d)| x * d).collect());
                }
            }
            Op::Add { a, b } => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Scale { input, factor } => send(*input, g.iter().map(|&d| d * *factor).collect()),
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    send(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Reshape { input } => send(*input, g.to_vec()),
            Op::Dropout { input, mask } => send(*input, g.iter().zip(mask).map(|(&d, &m)| d * m).collect()),
            Op::CrossEntropy { logits, label, probs } => {
                let scale = g[0];
                let delta = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (if i == *label { p - T::one() } else { p }) * scale)
                    .collect();
                send(*logits, delta);
            }
            Op::Sum { input } => send(*input, vec![g[0]; self.value(*input).len()]),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
