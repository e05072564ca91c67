//! Forward and backward kernels for the layer set, on raw tensors.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Output length of a 1D convolution: `floor((L - K + 2P) / S) + 1`.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Shape("kernel and stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "input length {input} (padding {padding}) shorter than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn infer(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d expects input [B, C, L] and kernels [Co, Ci, K], got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "conv1d input has {} channels, kernels expect {}",
                xs[1], ws[1]
            )));
        }
        if b.shape() != [ws[0]] {
            return Err(Error::Shape(format!("conv1d bias shape {:?}", b.shape())));
        }
        Ok(Self {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ws[0],
            in_len: xs[2],
            out_len: conv_output_len(xs[2], ws[2], stride, padding)?,
            kernel: ws[2],
            stride,
            padding,
        })
    }

    /// Output positions `f` for which input index `f*S + k - P` lies in `[0, L)`.
    fn valid(&self, k: usize) -> (usize, usize) {
        let lo = if k >= self.padding {
            0
        } else {
            (self.padding - k).div_ceil(self.stride)
        };
        // f*S + k - P <= L - 1  =>  f <= (L - 1 + P - k) / S
        let hi = if self.in_len + self.padding > k {
            ((self.in_len - 1 + self.padding - k) / self.stride + 1).min(self.out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel
    }

    /// Patches of sample `bi` as `[F, Ci*K]`, zero where the window hangs
    /// over the padding.
    fn im2col(&self, xd: &[f64], bi: usize, cols: &mut [f64]) {
        let pl = self.patch_len();
        cols.fill(0.0);
        for ci in 0..self.in_channels {
            let xr = &xd[(bi * self.in_channels + ci) * self.in_len..][..self.in_len];
            for k in 0..self.kernel {
                let (f0, f1) = self.valid(k);
                for f in f0..f1 {
                    cols[f * pl + ci * self.kernel + k] = xr[f * self.stride + k - self.padding];
                }
            }
        }
    }

    /// Scatter-adds patch gradients `[F, Ci*K]` back onto sample `bi` of `gx`.
    fn col2im(&self, gcols: &[f64], bi: usize, gx: &mut [f64]) {
        let pl = self.patch_len();
        for ci in 0..self.in_channels {
            let gr = &mut gx[(bi * self.in_channels + ci) * self.in_len..][..self.in_len];
            for k in 0..self.kernel {
                let (f0, f1) = self.valid(k);
                for f in f0..f1 {
                    gr[f * self.stride + k - self.padding] += gcols[f * pl + ci * self.kernel + k];
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Valid cross-correlation with zero padding; `x: [B, Ci, L]`, `w: [Co, Ci, K]`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::infer(x, w, b, stride, padding)?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let pl = g.patch_len();
    let mut cols = vec![0.0; g.out_len * pl];
    let mut y = vec![0.0; g.batch * g.out_channels * g.out_len];
    for bi in 0..g.batch {
        g.im2col(xd, bi, &mut cols);
        for (co, wr) in wd.chunks(pl).enumerate() {
            let out = &mut y[(bi * g.out_channels + co) * g.out_len..][..g.out_len];
            for (o, patch) in out.iter_mut().zip(cols.chunks(pl)) {
                *o = bd[co] + dot(wr, patch);
            }
        }
    }
    Tensor::new(vec![g.batch, g.out_channels, g.out_len], y)
}

/// Gradients `(dx, dw, db)` of a conv1d given upstream `gy: [B, Co, F]`.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    gy: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::infer(x, w, b, stride, padding)?;
    let (xd, wd, gd) = (x.data(), w.data(), gy.data());
    let pl = g.patch_len();
    let mut cols = vec![0.0; g.out_len * pl];
    let mut gcols = vec![0.0; g.out_len * pl];
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; g.out_channels];
    for bi in 0..g.batch {
        g.im2col(xd, bi, &mut cols);
        gcols.fill(0.0);
        for co in 0..g.out_channels {
            let gr = &gd[(bi * g.out_channels + co) * g.out_len..][..g.out_len];
            gb[co] += gr.iter().sum::<f64>();
            let wr = &wd[co * pl..][..pl];
            let gwr = &mut gw[co * pl..][..pl];
            for (f, &gv) in gr.iter().enumerate() {
                if gv != 0.0 {
                    axpy(gv, &cols[f * pl..][..pl], gwr);
                    axpy(gv, wr, &mut gcols[f * pl..][..pl]);
                }
            }
        }
        g.col2im(&gcols, bi, &mut gx);
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![g.out_channels], gb)?,
    ))
}

fn linear_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "linear expects x [B, In], W [Out, In], b [Out]; got {xs:?}, {ws:?}, {:?}",
            b.shape()
        )));
    }
    Ok((xs[0], ws[1], ws[0]))
}

/// `y = x W^T + b` with `x: [B, In]`, `W: [Out, In]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inp, out) = linear_dims(x, w, b)?;
    let mut y = vec![0.0; batch * out];
    for (xr, yr) in x.data().chunks(inp).zip(y.chunks_mut(out)) {
        for ((yo, wr), bo) in yr.iter_mut().zip(w.data().chunks(inp)).zip(b.data()) {
            *yo = bo + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    Tensor::new(vec![batch, out], y)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, b: &Tensor, gy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, inp, out) = linear_dims(x, w, b)?;
    let mut gx = vec![0.0; batch * inp];
    let mut gw = vec![0.0; out * inp];
    let mut gb = vec![0.0; out];
    for ((xr, gxr), gyr) in x.data().chunks(inp).zip(gx.chunks_mut(inp)).zip(gy.data().chunks(out)) {
        for (o, &g) in gyr.iter().enumerate() {
            gb[o] += g;
            let wr = &w.data()[o * inp..][..inp];
            let gwr = &mut gw[o * inp..][..inp];
            for i in 0..inp {
                gxr[i] += wr[i] * g;
                gwr[i] += g * xr[i];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![out], gb)?,
    ))
}

pub fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Source position of output sample `j` under endpoint-aligned interpolation.
fn upsample_source(j: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    if in_len == 1 || out_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
    let i0 = (pos.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Linear interpolation along the last axis of `[B, C, L]` to `out_len`,
/// aligning first and last samples.
pub fn upsample_forward(x: &Tensor, out_len: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || out_len == 0 {
        return Err(Error::Shape(format!("upsample expects [B, C, L], got {s:?}")));
    }
    let l = s[2];
    let rows = s[0] * s[1];
    let mut y = vec![0.0; rows * out_len];
    let taps: Vec<_> = (0..out_len).map(|j| upsample_source(j, l, out_len)).collect();
    for (xr, yr) in x.data().chunks(l).zip(y.chunks_mut(out_len)) {
        for (yv, &(i0, i1, w)) in yr.iter_mut().zip(&taps) {
            *yv = xr[i0] * (1.0 - w) + xr[i1] * w;
        }
    }
    Tensor::new(vec![s[0], s[1], out_len], y)
}

pub fn upsample_backward(x_shape: &[usize], gy: &Tensor) -> Result<Tensor> {
    let l = x_shape[2];
    let out_len = gy.shape()[2];
    let mut gx = vec![0.0; x_shape.iter().product()];
    let taps: Vec<_> = (0..out_len).map(|j| upsample_source(j, l, out_len)).collect();
    for (gxr, gyr) in gx.chunks_mut(l).zip(gy.data().chunks(out_len)) {
        for (g, &(i0, i1, w)) in gyr.iter().zip(&taps) {
            gxr[i0] += g * (1.0 - w);
            gxr[i1] += g * w;
        }
    }
    Tensor::new(x_shape.to_vec(), gx)
}

/// Numerically stable two-or-more-class softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of `logits: [B, C]` against class `labels`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape(format!(
            "cross entropy expects [B, C] logits for {} labels, got {s:?}",
            labels.len()
        )));
    }
    let (batch, classes) = (s[0], s[1]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; batch * classes];
    for ((row, g), &label) in logits.data().chunks(classes).zip(grad.chunks_mut(classes)).zip(labels) {
        if label >= classes {
            return Err(Error::Shape(format!("label {label} out of {classes} classes")));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (gv, p) in g.iter_mut().zip(softmax(row)) {
            *gv = p / batch as f64;
        }
        g[label] -= 1.0 / batch as f64;
    }
    Ok((loss / batch as f64, Tensor::new(vec![batch, classes], grad)?))
}
