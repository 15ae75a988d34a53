use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: Shape, weights: Shape, stride: usize, pad: usize) -> Result<Self> {
        x.ensure_nonempty("conv2d input")?;
        weights.ensure_nonempty("conv2d weights")?;
        if weights.c != x.c {
            return Err(Error::shape(format!(
                "conv2d: weights expect {} input channels, input has {}",
                weights.c, x.c
            )));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_size(x.h, weights.h, stride, pad),
            conv_output_size(x.w, weights.w, stride, pad),
        ) else {
            return Err(Error::shape(format!(
                "conv2d: kernel {}x{} with stride {stride}, pad {pad} does not fit input {x}",
                weights.h, weights.w
            )));
        };
        Ok(Geometry {
            cin: x.c,
            h: x.h,
            w: x.w,
            kh: weights.h,
            kw: weights.w,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        let lo = lo.min(self.ow);
        (lo, hi.max(lo))
    }

    /// Unfolds one image into a `(Cin·K·K) × (OH·OW)` block of `cols`, whose
    /// rows are `ld` apart.
    fn im2col(&self, image: &[f32], cols: &mut [f32], ld: usize) {
        let p = self.cols();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut cols[row * ld..row * ld + p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        if lo == hi {
                            continue;
                        }
                        let x0 = lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (v, &s) in line[lo..hi]
                                .iter_mut()
                                .zip(src[x0..].iter().step_by(self.stride))
                            {
                                *v = s;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatters a column matrix back onto an image, accumulating overlaps.
    fn col2im(&self, cols: &[f32], ld: usize, image: &mut [f32]) {
        let p = self.cols();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &mut image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &cols[row * ld..row * ld + p];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo == hi {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let x0 = lo * self.stride + kx - self.pad;
                        let line = &src[oy * self.ow + lo..oy * self.ow + hi];
                        for (d, &g) in dst[x0..].iter_mut().step_by(self.stride).zip(line) {
                            *d += g;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`) with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every operand slice covers the index range implied by its
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Direct 2D cross-correlation with zero padding.
///
/// `weights` has shape `(Cout, Cin, K, K)`; `bias` one entry per output channel.
pub fn conv2d_forward(
    x: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let geo = Geometry::new(x.shape(), weights.shape(), stride, pad)?;
    let cout = weights.shape().n;
    if bias.len() != cout {
        return Err(Error::shape(format!(
            "conv2d: bias has {} entries for {cout} output channels",
            bias.len()
        )));
    }
    let n = x.shape().n;
    let (rows, p) = (geo.rows(), geo.cols());
    let mut out = Tensor::zeros(Shape::new(n, cout, geo.oh, geo.ow));
    let mut cols = vec![0.0f32; rows * p];
    for i in 0..n {
        geo.im2col(x.item(i), &mut cols, p);
        let dst = out.item_mut(i);
        gemm(
            cout,
            rows,
            p,
            weights.data(),
            (rows as isize, 1),
            &cols,
            (p as isize, 1),
            dst,
            false,
        );
        for (co, &b) in bias.iter().enumerate() {
            for v in &mut dst[co * p..(co + 1) * p] {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub x: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    backward(grad_out, x, weights, stride, pad, true)
}

/// Weight and bias gradients only; `x` of the result is an empty tensor.
/// For a first layer, whose input needs no gradient.
pub fn conv2d_param_grads(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    backward(grad_out, x, weights, stride, pad, false)
}

fn backward(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
    input_grad: bool,
) -> Result<ConvGrads> {
    let geo = Geometry::new(x.shape(), weights.shape(), stride, pad)?;
    let cout = weights.shape().n;
    let expected = Shape::new(x.shape().n, cout, geo.oh, geo.ow);
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv2d backward: upstream gradient {} does not match output {expected}",
            grad_out.shape()
        )));
    }
    let (rows, p) = (geo.rows(), geo.cols());
    let mut grad_x = Tensor::zeros(if input_grad {
        x.shape()
    } else {
        Shape::new(0, 0, 0, 0)
    });
    let mut grad_w = Tensor::zeros(weights.shape());
    let mut grad_b = vec![0.0f32; cout];
    let mut cols = vec![0.0f32; rows * p];
    let mut grad_cols = vec![0.0f32; if input_grad { rows * p } else { 0 }];
    for i in 0..x.shape().n {
        let g = grad_out.item(i);
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += g[co * p..(co + 1) * p].iter().sum::<f32>();
        }
        geo.im2col(x.item(i), &mut cols, p);
        // dW += G · colsᵀ
        gemm(
            cout,
            p,
            rows,
            g,
            (p as isize, 1),
            &cols,
            (1, p as isize),
            grad_w.data_mut(),
            true,
        );
        if !input_grad {
            continue;
        }
        // dcols = Wᵀ · G
        gemm(
            rows,
            cout,
            p,
            weights.data(),
            (1, rows as isize),
            g,
            (p as isize, 1),
            &mut grad_cols,
            false,
        );
        geo.col2im(&grad_cols, p, grad_x.item_mut(i));
    }
    Ok(ConvGrads {
        x: grad_x,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| StandardNormal.sample(rng))
    }

    /// Quintuple-loop reference convolution, accumulated in f64.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &[f32], stride: usize, pad: usize) -> Tensor {
        let (xs, ws) = (x.shape(), w.shape());
        let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
        let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
        Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, co, oy, ox| {
            let mut acc = b[co] as f64;
            for ci in 0..xs.c {
                for ky in 0..ws.h {
                    for kx in 0..ws.w {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += x.at(n, ci, iy as usize, ix as usize) as f64
                                * w.at(co, ci, ky, kx) as f64;
                        }
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = normal(Shape::new(2, 1, 5, 5), &mut rng);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        assert_eq!(conv2d_forward(&x, &w, &[0.0], 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_ones() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let out = conv2d_forward(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(out.data(), &[4.0; 4]);
    }

    #[test]
    fn same_padding_shape() {
        let x = Tensor::zeros(Shape::new(2, 3, 8, 8));
        let w = Tensor::zeros(Shape::new(4, 3, 3, 3));
        let out = conv2d_forward(&x, &w, &[0.0; 4], 1, 1).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 4, 8, 8));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
        assert!(conv2d_forward(&x, &w, &[0.0], 1, 1).is_err());
        let w = Tensor::zeros(Shape::new(1, 2, 3, 3));
        assert!(conv2d_forward(&x, &w, &[0.0, 0.0], 1, 1).is_err());
        let w = Tensor::zeros(Shape::new(1, 2, 7, 7));
        assert!(conv2d_forward(&x, &w, &[0.0], 1, 1).is_err());
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, cin, cout, hw, k, stride, pad) in &[
            (2, 3, 4, 8, 3, 1, 1),
            (1, 3, 2, 8, 3, 2, 0),
            (2, 2, 3, 7, 2, 1, 0),
            (1, 1, 1, 5, 5, 1, 2),
            (2, 3, 5, 6, 1, 1, 0),
            (1, 2, 2, 8, 3, 3, 1),
        ] {
            let x = normal(Shape::new(n, cin, hw, hw), &mut rng);
            let w = normal(Shape::new(cout, cin, k, k), &mut rng);
            let b: Vec<f32> = (0..cout).map(|_| StandardNormal.sample(&mut rng)).collect();
            let fast = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() <= 1e-5 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normal(Shape::new(2, 2, 5, 5), &mut rng);
        let w = normal(Shape::new(3, 2, 3, 3), &mut rng);
        let g = conv2d_backward(&Tensor::zeros(Shape::new(2, 3, 5, 5)), &x, &w, 1, 1).unwrap();
        assert!(g.x.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_backward_passes_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normal(Shape::new(1, 1, 4, 4), &mut rng);
        let go = normal(Shape::new(1, 1, 4, 4), &mut rng);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let g = conv2d_backward(&go, &x, &w, 1, 0).unwrap();
        assert_eq!(g.x, go);
    }

    #[test]
    fn param_grads_match_full_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = normal(Shape::new(2, 3, 6, 6), &mut rng);
        let w = normal(Shape::new(4, 3, 3, 3), &mut rng);
        let go = normal(Shape::new(2, 4, 6, 6), &mut rng);
        let full = conv2d_backward(&go, &x, &w, 1, 1).unwrap();
        let params = conv2d_param_grads(&go, &x, &w, 1, 1).unwrap();
        assert_eq!(params.weights, full.weights);
        assert_eq!(params.bias, full.bias);
        assert_eq!(params.x.shape().numel(), 0);
    }

    #[test]
    fn large_padding_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = normal(Shape::new(1, 2, 3, 3), &mut rng);
        let w = normal(Shape::new(2, 2, 3, 3), &mut rng);
        let b = [0.1, -0.2];
        for &(stride, pad) in &[(1, 2), (2, 2), (3, 1), (2, 1)] {
            let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let want = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!(
                    (a - e).abs() <= 1e-5 * e.abs().max(1.0),
                    "stride {stride} pad {pad}: {a} vs {e}"
                );
            }
        }
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        assert!(conv2d_backward(&Tensor::zeros(Shape::new(1, 1, 4, 4)), &x, &w, 1, 0).is_err());
    }

    fn rel_err(a: f32, b: f32) -> f32 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(stride, pad) in &[(1, 1), (2, 0), (1, 0)] {
            let x = normal(Shape::new(2, 2, 5, 5), &mut rng);
            let w = normal(Shape::new(3, 2, 3, 3), &mut rng);
            let b: Vec<f32> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let out_shape = conv2d_forward(&x, &w, &b, stride, pad).unwrap().shape();
            let go = normal(out_shape, &mut rng);
            let loss = |x: &Tensor, w: &Tensor, b: &[f32]| -> f64 {
                let y = conv2d_forward(x, w, b, stride, pad).unwrap();
                y.data()
                    .iter()
                    .zip(go.data())
                    .map(|(&a, &g)| a as f64 * g as f64)
                    .sum()
            };
            let g = conv2d_backward(&go, &x, &w, stride, pad).unwrap();
            // The loss is linear in each argument, so a large step has no
            // truncation error and keeps f32 rounding small relative to it.
            let h = 0.5;
            for i in 0..x.data().len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[i] += h;
                xm.data_mut()[i] -= h;
                let fd = ((loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h as f64)) as f32;
                assert!(
                    rel_err(g.x.data()[i], fd) < 1e-2,
                    "dx[{i}] {} vs {fd}",
                    g.x.data()[i]
                );
            }
            for i in 0..w.data().len() {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp.data_mut()[i] += h;
                wm.data_mut()[i] -= h;
                let fd = ((loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h as f64)) as f32;
                assert!(
                    rel_err(g.weights.data()[i], fd) < 1e-2,
                    "dw[{i}] {} vs {fd}",
                    g.weights.data()[i]
                );
            }
            for i in 0..b.len() {
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[i] += h;
                bm[i] -= h;
                let fd = ((loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h as f64)) as f32;
                assert!(
                    rel_err(g.bias[i], fd) < 1e-2,
                    "db[{i}] {} vs {fd}",
                    g.bias[i]
                );
            }
        }
    }
}
