//! Layer primitives: valid-padding strided convolution (im2col + GEMM),
//! batch normalization, fully connected, ReLU, and 2x2 max pooling.
//!
//! Activations are laid out channels-last, `[batch, height, width, channel]`,
//! so the innermost GEMM dimension is contiguous. Every layer exposes an
//! explicit backward pass that returns gradients with respect to its input
//! and its parameters.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, TensorN};
use crate::error::{Error, Result};

/// out[m,n] = a[m,k] * b[k,n]
fn mat_mul<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    let av = ArrayView2::from_shape((m, k), a).expect("lhs shape");
    let bv = ArrayView2::from_shape((k, n), b).expect("rhs shape");
    let mut ov = ArrayViewMut2::from_shape((m, n), out).expect("out shape");
    general_mat_mul(F::one(), &av, &bv, F::zero(), &mut ov);
}

/// out[k,n] = a[m,k]^T * b[m,n]
fn mat_tmul<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    let av = ArrayView2::from_shape((m, k), a).expect("lhs shape");
    let bv = ArrayView2::from_shape((m, n), b).expect("rhs shape");
    let mut ov = ArrayViewMut2::from_shape((k, n), out).expect("out shape");
    general_mat_mul(F::one(), &av.t(), &bv, F::zero(), &mut ov);
}

/// out[m,k] = a[m,n] * b[k,n]^T
fn mat_mul_t<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, n: usize, k: usize) {
    let av = ArrayView2::from_shape((m, n), a).expect("lhs shape");
    let bv = ArrayView2::from_shape((k, n), b).expect("rhs shape");
    let mut ov = ArrayViewMut2::from_shape((m, k), out).expect("out shape");
    general_mat_mul(F::one(), &av, &bv.t(), F::zero(), &mut ov);
}

fn he_uniform<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<F> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| F::from_f64(rng.gen_range(-limit..limit)))
        .collect()
}

/// Strided convolution without padding. Weights are `[kh, kw, in_c, out_c]`.
#[derive(Clone, Debug)]
pub struct Conv2d<F> {
    pub weight: TensorN<F>,
    pub bias: Vec<F>,
    pub kh: usize,
    pub kw: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
}

/// Stashed im2col matrix from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<F> {
    col: Vec<F>,
    rows: usize,
    in_shape: [usize; 4],
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        kh: usize,
        kw: usize,
        in_c: usize,
        out_c: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = kh * kw * in_c;
        Conv2d {
            weight: TensorN::from_vec(
                &[kh, kw, in_c, out_c],
                he_uniform(rng, fan_in, fan_in * out_c),
            )
            .expect("init shape"),
            bias: vec![F::zero(); out_c],
            kh,
            kw,
            in_c,
            out_c,
            stride,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.kh || w < self.kw {
            return Err(Error::Dimension(format!(
                "input {}x{} smaller than {}x{} kernel",
                h, w, self.kh, self.kw
            )));
        }
        Ok(((h - self.kh) / self.stride + 1, (w - self.kw) / self.stride + 1))
    }

    fn check_input(&self, x: &TensorN<F>) -> Result<[usize; 4]> {
        let s = x.shape();
        if s.len() != 4 || s[3] != self.in_c {
            return Err(Error::Dimension(format!(
                "conv expects [b,h,w,{}], got {:?}",
                self.in_c, s
            )));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    fn im2col(&self, x: &TensorN<F>, oh: usize, ow: usize) -> Vec<F> {
        let [b, _, w, c] = self.check_input(x).expect("checked by caller");
        let k = self.kh * self.kw * c;
        let rows = b * oh * ow;
        let mut col = vec![F::zero(); rows * k];
        let xd = x.data();
        let plane = x.shape()[1] * w * c;
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (bi * oh + oy) * ow + ox;
                    let iy0 = oy * self.stride;
                    let ix0 = ox * self.stride;
                    for ky in 0..self.kh {
                        let src = bi * plane + (iy0 + ky) * w * c + ix0 * c;
                        let dst = row * k + ky * self.kw * c;
                        col[dst..dst + self.kw * c]
                            .copy_from_slice(&xd[src..src + self.kw * c]);
                    }
                }
            }
        }
        col
    }

    fn gemm_forward(&self, col: &[F], rows: usize) -> Vec<F> {
        let k = self.kh * self.kw * self.in_c;
        let mut out = vec![F::zero(); rows * self.out_c];
        mat_mul(col, self.weight.data(), &mut out, rows, k, self.out_c);
        for r in out.chunks_mut(self.out_c) {
            for (v, bv) in r.iter_mut().zip(&self.bias) {
                *v += *bv;
            }
        }
        out
    }

    pub fn forward(&self, x: &TensorN<F>) -> Result<(TensorN<F>, ConvCache<F>)> {
        let in_shape = self.check_input(x)?;
        let (oh, ow) = self.out_hw(in_shape[1], in_shape[2])?;
        let rows = in_shape[0] * oh * ow;
        let col = self.im2col(x, oh, ow);
        let out = self.gemm_forward(&col, rows);
        Ok((
            TensorN::from_vec(&[in_shape[0], oh, ow, self.out_c], out)?,
            ConvCache {
                col,
                rows,
                in_shape,
            },
        ))
    }

    pub fn infer(&self, x: &TensorN<F>) -> Result<TensorN<F>> {
        let in_shape = self.check_input(x)?;
        let (oh, ow) = self.out_hw(in_shape[1], in_shape[2])?;
        let rows = in_shape[0] * oh * ow;
        let col = self.im2col(x, oh, ow);
        let out = self.gemm_forward(&col, rows);
        TensorN::from_vec(&[in_shape[0], oh, ow, self.out_c], out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(
        &self,
        cache: &ConvCache<F>,
        gy: &TensorN<F>,
    ) -> (TensorN<F>, TensorN<F>, Vec<F>) {
        let k = self.kh * self.kw * self.in_c;
        let rows = cache.rows;
        debug_assert_eq!(gy.len(), rows * self.out_c);

        let mut gb = vec![F::zero(); self.out_c];
        for r in gy.data().chunks(self.out_c) {
            for (acc, v) in gb.iter_mut().zip(r) {
                *acc += *v;
            }
        }

        let mut gw = vec![F::zero(); k * self.out_c];
        mat_tmul(&cache.col, gy.data(), &mut gw, rows, k, self.out_c);

        let mut gcol = vec![F::zero(); rows * k];
        mat_mul_t(gy.data(), self.weight.data(), &mut gcol, rows, self.out_c, k);

        // col2im: scatter-add each patch row back; strided windows may overlap.
        let [b, h, w, c] = cache.in_shape;
        let oh = (h - self.kh) / self.stride + 1;
        let ow = (w - self.kw) / self.stride + 1;
        let mut gx = TensorN::zeros(&[b, h, w, c]);
        let gxd = gx.data_mut();
        let plane = h * w * c;
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (bi * oh + oy) * ow + ox;
                    let iy0 = oy * self.stride;
                    let ix0 = ox * self.stride;
                    for ky in 0..self.kh {
                        let dst = bi * plane + (iy0 + ky) * w * c + ix0 * c;
                        let src = row * k + ky * self.kw * c;
                        for i in 0..self.kw * c {
                            gxd[dst + i] += gcol[src + i];
                        }
                    }
                }
            }
        }

        let gw = TensorN::from_vec(&[self.kh, self.kw, self.in_c, self.out_c], gw)
            .expect("weight grad shape");
        (gx, gw, gb)
    }
}

/// Per-channel batch normalization over `[b, h, w, c]` activations.
///
/// Training mode normalizes with biased batch statistics and folds them into
/// the running estimates as `running = momentum * running + (1 - momentum) * batch`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: F,
    pub eps: F,
}

#[derive(Clone, Debug)]
pub struct BnCache<F> {
    mean: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm2d {
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
            momentum: F::from_f64(momentum),
            eps: F::from_f64(eps),
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, x: &TensorN<F>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 4 || s[3] != self.channels() {
            return Err(Error::Dimension(format!(
                "batchnorm expects [b,h,w,{}], got {:?}",
                self.channels(),
                s
            )));
        }
        Ok(x.len() / self.channels())
    }

    pub fn forward_train(&mut self, x: &TensorN<F>) -> Result<(TensorN<F>, BnCache<F>)> {
        let per_channel = self.check_input(x)?;
        let c = self.channels();
        let n = F::from_f64(per_channel as f64);

        let mut mean = vec![F::zero(); c];
        for row in x.data().chunks(c) {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += *v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }

        let mut var = vec![F::zero(); c];
        for row in x.data().chunks(c) {
            for ci in 0..c {
                let d = row[ci] - mean[ci];
                var[ci] += d * d;
            }
        }
        for v in &mut var {
            *v /= n;
        }

        for ci in 0..c {
            self.running_mean[ci] =
                self.momentum * self.running_mean[ci] + (F::one() - self.momentum) * mean[ci];
            self.running_var[ci] =
                self.momentum * self.running_var[ci] + (F::one() - self.momentum) * var[ci];
        }

        let inv_std: Vec<F> = var.iter().map(|&v| (v + self.eps).sqrt().recip()).collect();
        let mut out = vec![F::zero(); x.len()];
        for (orow, xrow) in out.chunks_mut(c).zip(x.data().chunks(c)) {
            for ci in 0..c {
                orow[ci] = self.gamma[ci] * (xrow[ci] - mean[ci]) * inv_std[ci] + self.beta[ci];
            }
        }
        Ok((
            TensorN::from_vec(x.shape(), out)?,
            BnCache { mean, inv_std },
        ))
    }

    pub fn forward_eval(&self, x: &TensorN<F>) -> Result<TensorN<F>> {
        self.check_input(x)?;
        let c = self.channels();
        let inv_std: Vec<F> = self
            .running_var
            .iter()
            .map(|&v| (v + self.eps).sqrt().recip())
            .collect();
        let mut out = vec![F::zero(); x.len()];
        for (orow, xrow) in out.chunks_mut(c).zip(x.data().chunks(c)) {
            for ci in 0..c {
                orow[ci] = self.gamma[ci] * (xrow[ci] - self.running_mean[ci]) * inv_std[ci]
                    + self.beta[ci];
            }
        }
        TensorN::from_vec(x.shape(), out)
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`. Needs the training-mode
    /// input `x` and the cache from the matching forward call.
    pub fn backward(
        &self,
        x: &TensorN<F>,
        cache: &BnCache<F>,
        gy: &TensorN<F>,
    ) -> (TensorN<F>, Vec<F>, Vec<F>) {
        let c = self.channels();
        let per_channel = x.len() / c;
        let n = F::from_f64(per_channel as f64);

        let mut gbeta = vec![F::zero(); c];
        let mut ggamma = vec![F::zero(); c];
        // Accumulate the two reductions the input gradient needs: sum of gy
        // and sum of gy * xhat per channel.
        let mut sum_gy_xhat = vec![F::zero(); c];
        for (grow, xrow) in gy.data().chunks(c).zip(x.data().chunks(c)) {
            for ci in 0..c {
                let xhat = (xrow[ci] - cache.mean[ci]) * cache.inv_std[ci];
                gbeta[ci] += grow[ci];
                ggamma[ci] += grow[ci] * xhat;
                sum_gy_xhat[ci] += grow[ci] * xhat;
            }
        }

        let mut gx = TensorN::zeros(x.shape());
        {
            let gxd = gx.data_mut();
            for (i, (grow, xrow)) in gy.data().chunks(c).zip(x.data().chunks(c)).enumerate() {
                let out = &mut gxd[i * c..(i + 1) * c];
                for ci in 0..c {
                    let xhat = (xrow[ci] - cache.mean[ci]) * cache.inv_std[ci];
                    out[ci] = self.gamma[ci] * cache.inv_std[ci] / n
                        * (n * grow[ci] - gbeta[ci] - xhat * sum_gy_xhat[ci]);
                }
            }
        }
        (gx, ggamma, gbeta)
    }
}

/// Fully connected layer. Weights are `[in, out]`, inputs `[b, in]`.
#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub weight: TensorN<F>,
    pub bias: Vec<F>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<F: Scalar> Dense<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            weight: TensorN::from_vec(
                &[in_dim, out_dim],
                he_uniform(rng, in_dim, in_dim * out_dim),
            )
            .expect("init shape"),
            bias: vec![F::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    fn check_input(&self, x: &TensorN<F>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(Error::Dimension(format!(
                "dense expects [b,{}], got {:?}",
                self.in_dim, s
            )));
        }
        Ok(s[0])
    }

    pub fn forward(&self, x: &TensorN<F>) -> Result<TensorN<F>> {
        let b = self.check_input(x)?;
        let mut out = vec![F::zero(); b * self.out_dim];
        mat_mul(x.data(), self.weight.data(), &mut out, b, self.in_dim, self.out_dim);
        for r in out.chunks_mut(self.out_dim) {
            for (v, bv) in r.iter_mut().zip(&self.bias) {
                *v += *bv;
            }
        }
        TensorN::from_vec(&[b, self.out_dim], out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, x: &TensorN<F>, gy: &TensorN<F>) -> (TensorN<F>, TensorN<F>, Vec<F>) {
        let b = x.shape()[0];
        debug_assert_eq!(gy.shape(), &[b, self.out_dim]);

        let mut gb = vec![F::zero(); self.out_dim];
        for r in gy.data().chunks(self.out_dim) {
            for (acc, v) in gb.iter_mut().zip(r) {
                *acc += *v;
            }
        }

        let mut gw = vec![F::zero(); self.in_dim * self.out_dim];
        mat_tmul(x.data(), gy.data(), &mut gw, b, self.in_dim, self.out_dim);

        let mut gx = vec![F::zero(); b * self.in_dim];
        mat_mul_t(gy.data(), self.weight.data(), &mut gx, b, self.out_dim, self.in_dim);

        (
            TensorN::from_vec(&[b, self.in_dim], gx).expect("input grad shape"),
            TensorN::from_vec(&[self.in_dim, self.out_dim], gw).expect("weight grad shape"),
            gb,
        )
    }
}

pub fn relu<F: Scalar>(x: &TensorN<F>) -> TensorN<F> {
    let data = x.data().iter().map(|&v| v.max(F::zero())).collect();
    TensorN::from_vec(x.shape(), data).expect("same shape")
}

/// `pre` is the input the matching `relu` call saw.
pub fn relu_backward<F: Scalar>(pre: &TensorN<F>, gy: &TensorN<F>) -> TensorN<F> {
    debug_assert_eq!(pre.shape(), gy.shape());
    let data = pre
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&p, &g)| if p > F::zero() { g } else { F::zero() })
        .collect();
    TensorN::from_vec(gy.shape(), data).expect("same shape")
}

/// 2x2 max pooling with stride 2; trailing odd rows or columns are dropped.
/// Returns the pooled tensor and the flat input index of each selected
/// element (first occurrence wins on ties).
pub fn maxpool2<F: Scalar>(x: &TensorN<F>) -> Result<(TensorN<F>, Vec<u32>)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("maxpool expects [b,h,w,c], got {:?}", s)));
    }
    let [b, h, w, c] = [s[0], s[1], s[2], s[3]];
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Dimension(format!("input {}x{} too small for 2x2 pool", h, w)));
    }
    let xd = x.data();
    let mut out = vec![F::zero(); b * oh * ow * c];
    let mut argmax = vec![0u32; out.len()];
    let plane = h * w * c;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best_idx = bi * plane + (2 * oy) * w * c + (2 * ox) * c + ci;
                    let mut best = xd[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = bi * plane + (2 * oy + dy) * w * c + (2 * ox + dx) * c + ci;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    let o = ((bi * oh + oy) * ow + ox) * c + ci;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    Ok((TensorN::from_vec(&[b, oh, ow, c], out)?, argmax))
}

pub fn maxpool2_backward<F: Scalar>(
    in_shape: &[usize],
    argmax: &[u32],
    gy: &TensorN<F>,
) -> TensorN<F> {
    let mut gx = TensorN::zeros(in_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(gy.data()) {
        gxd[idx as usize] += g;
    }
    gx
}
