//! Differentiable operations on [`Var`].
//!
//! Every backward rule is expressed through other `Var` operations, so
//! gradients can be differentiated again (needed for gradient penalties).

use crate::kernels::{self, ConvGeom};
use crate::{Tensor, Var};

fn unary(x: &Var, value: Tensor, backward: impl Fn(&Var, &Var, &Var) -> Var + 'static) -> Var {
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |inputs, out, g| vec![Some(backward(&inputs[0], out, g))]),
    )
}

fn assert_same_shape(a: &Var, b: &Var, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        assert_same_shape(self, other, "add");
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a + b),
            vec![self.clone(), other.clone()],
            Box::new(|_, _, g| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        assert_same_shape(self, other, "sub");
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a - b),
            vec![self.clone(), other.clone()],
            Box::new(|_, _, g| vec![Some(g.clone()), Some(g.neg())]),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        assert_same_shape(self, other, "mul");
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a * b),
            vec![self.clone(), other.clone()],
            Box::new(|inputs, _, g| vec![Some(g.mul(&inputs[1])), Some(g.mul(&inputs[0]))]),
        )
    }

    /// Elementwise product with a tensor that carries no gradient.
    pub fn mul_const(&self, factor: &Tensor) -> Var {
        let factor = factor.clone();
        let value = self.value().zip_map(&factor, |a, b| a * b);
        unary(self, value, move |_, _, g| g.mul_const(&factor))
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, factor: f64) -> Var {
        unary(self, self.value().map(|v| v * factor), move |_, _, g| {
            g.scale(factor)
        })
    }

    pub fn add_scalar(&self, offset: f64) -> Var {
        unary(self, self.value().map(|v| v + offset), |_, _, g| g.clone())
    }

    pub fn square(&self) -> Var {
        unary(self, self.value().map(|v| v * v), |x, _, g| {
            g.mul(x).scale(2.0)
        })
    }

    pub fn sqrt(&self) -> Var {
        unary(self, self.value().map(f64::sqrt), |_, y, g| {
            g.mul(&y.recip()).scale(0.5)
        })
    }

    pub fn recip(&self) -> Var {
        unary(self, self.value().map(f64::recip), |_, y, g| {
            g.mul(&y.square()).neg()
        })
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&self) -> Var {
        let sign = self.value().map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        unary(self, self.value().map(f64::abs), move |_, _, g| {
            g.mul_const(&sign)
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|v| if v > 0.0 { 1.0 } else { slope });
        let value = self.value().zip_map(&mask, |a, m| a * m);
        unary(self, value, move |_, _, g| g.mul_const(&mask))
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn sigmoid(&self) -> Var {
        let value = self.value().map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        unary(self, value, |_, y, g| {
            g.mul(&y.mul(&y.neg().add_scalar(1.0)))
        })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Var {
        let shape = self.shape().to_vec();
        unary(self, Tensor::scalar(self.value().sum()), move |_, _, g| {
            g.expand(&shape)
        })
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcast a one-element value to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Var {
        assert_eq!(self.value().len(), 1, "expand needs a scalar");
        let value = Tensor::full(shape, self.value().item());
        let source_shape = self.shape().to_vec();
        unary(self, value, move |_, _, g| g.sum().reshape(&source_shape))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let source_shape = self.shape().to_vec();
        unary(self, self.value().reshape(shape), move |_, _, g| {
            g.reshape(&source_shape)
        })
    }

    /// `[N, C, ...] -> [C]`, summing over every axis except the channel axis.
    pub fn sum_channels(&self) -> Var {
        let shape = self.shape().to_vec();
        assert!(shape.len() >= 2, "sum_channels needs [N, C, ...]");
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let data = self.value().data();
        let mut out = vec![0.0; c];
        for s in 0..n {
            for (ch, acc) in out.iter_mut().enumerate() {
                let start = (s * c + ch) * inner;
                *acc += data[start..start + inner].iter().sum::<f64>();
            }
        }
        unary(self, Tensor::new([c], out), move |_, _, g| {
            g.broadcast_channels(&shape)
        })
    }

    /// `[C] -> shape`, repeating each channel value across batch and space.
    pub fn broadcast_channels(&self, shape: &[usize]) -> Var {
        assert_eq!(
            self.shape(),
            &[shape[1]],
            "broadcast_channels shape mismatch"
        );
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value().data();
        let mut out = Vec::with_capacity(n * c * inner);
        for _ in 0..n {
            for &v in src {
                out.extend(std::iter::repeat_n(v, inner));
            }
        }
        unary(self, Tensor::new(shape, out), |_, _, g| g.sum_channels())
    }

    /// `[N, ...] -> [N]`, summing within each sample.
    pub fn sum_samples(&self) -> Var {
        let shape = self.shape().to_vec();
        let inner = self.value().sample_len();
        let out = self
            .value()
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().sum())
            .collect();
        unary(self, Tensor::new([shape[0]], out), move |_, _, g| {
            g.broadcast_samples(&shape)
        })
    }

    /// `[N] -> shape`, repeating each sample value across the sample.
    pub fn broadcast_samples(&self, shape: &[usize]) -> Var {
        assert_eq!(
            self.shape(),
            &[shape[0]],
            "broadcast_samples shape mismatch"
        );
        let inner: usize = shape[1..].iter().product();
        let out = self
            .value()
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, inner))
            .collect();
        unary(self, Tensor::new(shape, out), |_, _, g| g.sum_samples())
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&self, other: &Var) -> Var {
        let (a, b) = (self.shape(), other.shape());
        assert!(
            a.len() == 4 && b.len() == 4 && a[0] == b[0] && a[2..] == b[2..],
            "concat_channels shape mismatch {a:?} vs {b:?}"
        );
        let (ca, cb) = (a[1], b[1]);
        let inner = a[2] * a[3];
        let mut out = Vec::with_capacity(self.value().len() + other.value().len());
        for s in 0..a[0] {
            out.extend_from_slice(&self.value().data()[s * ca * inner..(s + 1) * ca * inner]);
            out.extend_from_slice(&other.value().data()[s * cb * inner..(s + 1) * cb * inner]);
        }
        let value = Tensor::new([a[0], ca + cb, a[2], a[3]], out);
        Var::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |_, _, g| {
                vec![
                    Some(g.slice_channels(0, ca)),
                    Some(g.slice_channels(ca, ca + cb)),
                ]
            }),
        )
    }

    /// Channels `lo..hi` of an NCHW tensor.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Var {
        let shape = self.shape().to_vec();
        assert!(
            shape.len() == 4 && lo <= hi && hi <= shape[1],
            "bad channel slice"
        );
        let inner = shape[2] * shape[3];
        let c = shape[1];
        let mut out = Vec::with_capacity(shape[0] * (hi - lo) * inner);
        for s in 0..shape[0] {
            out.extend_from_slice(&self.value().data()[(s * c + lo) * inner..(s * c + hi) * inner]);
        }
        let value = Tensor::new([shape[0], hi - lo, shape[2], shape[3]], out);
        unary(self, value, move |_, _, g| g.pad_channels(c, lo))
    }

    /// Place this tensor's channels at `offset` inside `total` zero channels.
    pub fn pad_channels(&self, total: usize, offset: usize) -> Var {
        let shape = self.shape().to_vec();
        let c = shape[1];
        assert!(offset + c <= total, "pad_channels out of range");
        let inner = shape[2] * shape[3];
        let mut out = vec![0.0; shape[0] * total * inner];
        for s in 0..shape[0] {
            out[(s * total + offset) * inner..(s * total + offset + c) * inner]
                .copy_from_slice(&self.value().data()[s * c * inner..(s + 1) * c * inner]);
        }
        let value = Tensor::new([shape[0], total, shape[2], shape[3]], out);
        unary(self, value, move |_, _, g| {
            g.slice_channels(offset, offset + c)
        })
    }

    pub fn transpose(&self) -> Var {
        unary(self, kernels::transpose(self.value()), |_, _, g| {
            g.transpose()
        })
    }

    pub fn matmul(&self, other: &Var) -> Var {
        Var::from_op(
            kernels::matmul(self.value(), other.value()),
            vec![self.clone(), other.clone()],
            Box::new(|inputs, _, g| {
                vec![
                    Some(g.matmul(&inputs[1].transpose())),
                    Some(inputs[0].transpose().matmul(g)),
                ]
            }),
        )
    }

    /// 2-D convolution with `weight` of shape `[out, in, k, k]`.
    pub fn conv2d(&self, weight: &Var, geom: ConvGeom) -> Var {
        let in_hw = (self.shape()[2], self.shape()[3]);
        let kernel = weight.shape()[2];
        Var::from_op(
            kernels::conv2d(self.value(), weight.value(), geom),
            vec![self.clone(), weight.clone()],
            Box::new(move |inputs, _, g| {
                vec![
                    Some(g.conv2d_transpose(&inputs[1], geom, in_hw)),
                    Some(inputs[0].conv2d_weight_grad(g, geom, kernel)),
                ]
            }),
        )
    }

    /// Transposed convolution (the input-adjoint of [`Var::conv2d`]) with
    /// `weight` of shape `[in, out, k, k]`, producing spatial size `out_hw`.
    pub fn conv2d_transpose(&self, weight: &Var, geom: ConvGeom, out_hw: (usize, usize)) -> Var {
        let kernel = weight.shape()[2];
        Var::from_op(
            kernels::conv2d_transpose(self.value(), weight.value(), geom, out_hw),
            vec![self.clone(), weight.clone()],
            Box::new(move |inputs, _, u| {
                vec![
                    Some(u.conv2d(&inputs[1], geom)),
                    Some(u.conv2d_weight_grad(&inputs[0], geom, kernel)),
                ]
            }),
        )
    }

    /// Gradient of `<conv2d(self, w), g>` with respect to `w`.
    pub fn conv2d_weight_grad(&self, g: &Var, geom: ConvGeom, kernel: usize) -> Var {
        let in_hw = (self.shape()[2], self.shape()[3]);
        Var::from_op(
            kernels::conv2d_weight_grad(self.value(), g.value(), geom, kernel),
            vec![self.clone(), g.clone()],
            Box::new(move |inputs, _, u| {
                vec![
                    Some(inputs[1].conv2d_transpose(u, geom, in_hw)),
                    Some(inputs[0].conv2d(u, geom)),
                ]
            }),
        )
    }
}
