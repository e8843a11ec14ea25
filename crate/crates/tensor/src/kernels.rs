//! Forward kernels on plain tensors. The graph calls these and adds the
//! matching backward rules; they are also usable without a graph.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `[m×k] · [k×n] -> [m×n]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new([m, n], out)
}

/// `out += a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm_nn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×n`, `b: k×n`, `out: m×k`.
pub(crate) fn gemm_nt<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * k + p] = out[i * k + p] + acc;
        }
    }
}

/// `out += aᵀ · b` with `a: m×k`, `b: m×n`, `out: k×n`.
pub(crate) fn gemm_tn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Output width of an unpadded sliding window.
pub fn conv_out_len(width: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || width < window || window == 0 {
        None
    } else {
        Some((width - window) / stride + 1)
    }
}

/// Unpadded 1D cross-correlation.
///
/// `input: [Cin×W]`, `kernel: [Cout×Cin×S]` gives `[Cout×((W−S)/stride+1)]`.
pub fn conv1d<T: Element>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (cin, width) = input.dims2("conv1d")?;
    let &[cout, kcin, span] = kernel.shape() else {
        return Err(TensorError::Rank {
            op: "conv1d",
            expected: 3,
            shape: kernel.shape().to_vec(),
        });
    };
    if kcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(TensorError::Invalid {
            op: "conv1d",
            detail: "stride must be positive".into(),
        });
    }
    let out_len = conv_out_len(width, span, stride).ok_or(TensorError::EmptyOutput {
        op: "conv1d",
        width,
        window: span,
    })?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); cout * out_len];
    for o in 0..cout {
        for c in 0..cin {
            let krow = &k[(o * cin + c) * span..(o * cin + c + 1) * span];
            let xrow = &x[c * width..(c + 1) * width];
            let orow = &mut out[o * out_len..(o + 1) * out_len];
            for (t, acc) in orow.iter_mut().enumerate() {
                let window = &xrow[t * stride..t * stride + span];
                let mut s = T::zero();
                for (&kv, &xv) in krow.iter().zip(window) {
                    s = s + kv * xv;
                }
                *acc = *acc + s;
            }
        }
    }
    Tensor::new([cout, out_len], out)
}

/// Geometry of a 2D convolution over a batch of images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    pub fn infer(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, in_channels, height, width], &[out_channels, kcin, kh, kw]) = (input, kernel)
        else {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: if input.len() != 4 { input.to_vec() } else { kernel.to_vec() },
            });
        };
        if kcin != in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let out_h = conv_out_len(height + 2 * pad, kh, stride).ok_or(TensorError::EmptyOutput {
            op: "conv2d",
            width: height + 2 * pad,
            window: kh,
        })?;
        let out_w = conv_out_len(width + 2 * pad, kw, stride).ok_or(TensorError::EmptyOutput {
            op: "conv2d",
            width: width + 2 * pad,
            window: kw,
        })?;
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Input coordinate hit by output row/col `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Zero-padded strided 2D cross-correlation with optional per-channel bias.
///
/// `input: [N×Cin×H×W]`, `kernel: [Cout×Cin×kh×kw]`, `bias: [Cout]`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeometry::infer(input.shape(), kernel.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: kernel.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let x = input.data();
    let k = kernel.data();
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.batch * g.out_channels * plane_out];
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let oplane = &mut out[(n * g.out_channels + o) * plane_out..][..plane_out];
            if let Some(b) = bias {
                let bv = b.data()[o];
                oplane.iter_mut().for_each(|v| *v = bv);
            }
            for c in 0..g.in_channels {
                let iplane = &x[(n * g.in_channels + c) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let kv = k[((o * g.in_channels + c) * g.kh + ky) * g.kw + kx];
                        for oy in 0..g.out_h {
                            let Some(iy) = g.src(oy, ky, g.height) else { continue };
                            let irow = &iplane[iy * g.width..(iy + 1) * g.width];
                            let orow = &mut oplane[oy * g.out_w..(oy + 1) * g.out_w];
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                if let Some(ix) = g.src(ox, kx, g.width) {
                                    *ov = *ov + kv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.out_shape(), out)
}

/// Gradients of [`conv2d`] w.r.t. input (optional) and kernel.
pub(crate) fn conv2d_backward<T: Element>(
    g: &Conv2dGeometry,
    input: &[T],
    kernel: &[T],
    upstream: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let mut gin = want_input.then(|| vec![T::zero(); input.len()]);
    let mut gk = vec![T::zero(); kernel.len()];
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let up = &upstream[(n * g.out_channels + o) * plane_out..][..plane_out];
            for c in 0..g.in_channels {
                let ibase = (n * g.in_channels + c) * plane_in;
                let iplane = &input[ibase..ibase + plane_in];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let kidx = ((o * g.in_channels + c) * g.kh + ky) * g.kw + kx;
                        let kv = kernel[kidx];
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            let Some(iy) = g.src(oy, ky, g.height) else { continue };
                            let urow = &up[oy * g.out_w..(oy + 1) * g.out_w];
                            for (ox, &u) in urow.iter().enumerate() {
                                if let Some(ix) = g.src(ox, kx, g.width) {
                                    acc = acc + u * iplane[iy * g.width + ix];
                                    if let Some(gi) = gin.as_mut() {
                                        let idx = ibase + iy * g.width + ix;
                                        gi[idx] = gi[idx] + u * kv;
                                    }
                                }
                            }
                        }
                        gk[kidx] = gk[kidx] + acc;
                    }
                }
            }
        }
    }
    (gin, gk)
}

/// Softmax over every element, with max subtraction.
pub fn softmax<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let max = x.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let mut out = x.clone();
    for (o, e) in out.data_mut().iter_mut().zip(exps) {
        *o = e / total;
    }
    out
}

/// `log Σ exp(x)` computed stably.
pub fn log_sum_exp<T: Element>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = xs.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Arithmetic mean along `axis`; the axis is removed from the shape.
pub fn mean_axis<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(TensorError::Invalid {
            op: "mean_axis",
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); outer * inner];
    let scale = T::one() / T::cast(n as f64);
    for o in 0..outer {
        for a in 0..n {
            let src = &x.data()[(o * n + a) * inner..][..inner];
            for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v * scale);
    let mut new_shape = shape.to_vec();
    new_shape.remove(axis);
    Tensor::new(new_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f64>::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
    }

    #[test]
    fn matmul_orthogonal_selection() {
        let a = Tensor::<f64>::from_f64([1, 2], &[1., 0.]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 1], &[0., 5.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv1d_zero_kernel_and_identity_kernel() {
        let x = Tensor::<f64>::from_f64([1, 5], &[1., -2., 3., 4., 5.]).unwrap();
        let zero = conv1d(&x, &Tensor::zeros([2, 1, 2]), 1).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let id = conv1d(&x, &Tensor::ones([1, 1, 1]), 1).unwrap();
        assert_eq!(id.data(), x.data());
    }

    #[test]
    fn conv1d_window_too_wide_is_an_error() {
        let x = Tensor::<f64>::zeros([1, 3]);
        let err = conv1d(&x, &Tensor::zeros([1, 1, 4]), 1).unwrap_err();
        assert!(matches!(err, TensorError::EmptyOutput { .. }));
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&Tensor::<f64>::full([4], 7.5));
        assert!(u.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let two = softmax(&Tensor::<f64>::from_f64([2], &[0.0, 3f64.ln()]).unwrap());
        assert!((two.data()[0] - 0.25).abs() < 1e-12);
        assert!((two.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mean_axis_cases() {
        let x = Tensor::<f64>::from_f64([2, 2], &[1., 3., 5., 7.]).unwrap();
        assert_eq!(mean_axis(&x, 0).unwrap().data(), &[3., 5.]);
        assert_eq!(mean_axis(&x, 1).unwrap().data(), &[2., 6.]);
        let single = Tensor::<f64>::from_f64([1, 3], &[1., 2., 3.]).unwrap();
        assert_eq!(mean_axis(&single, 0).unwrap().data(), &[1., 2., 3.]);
        assert!(mean_axis(&x, 2).is_err());
    }

    #[test]
    fn conv2d_padding_geometry() {
        let g = Conv2dGeometry::infer(&[2, 1, 32, 16], &[8, 1, 3, 3], 2, 1).unwrap();
        assert_eq!(g.out_shape(), [2, 8, 16, 8]);
        let g = Conv2dGeometry::infer(&[2, 8, 16, 8], &[16, 8, 3, 3], 2, 1).unwrap();
        assert_eq!(g.out_shape(), [2, 16, 8, 4]);
    }
}
