//! Slice-level kernels behind the tape's ops.

use rayon::prelude::*;

use crate::hsi::reflect_index;

/// Geometry of a same-size, reflect-padded convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// For each output pixel and kernel tap, the source pixel it reads.
    fn taps(&self) -> Vec<usize> {
        let half = (self.k / 2) as isize;
        let mut taps = Vec::with_capacity(self.pixels() * self.k * self.k);
        for py in 0..self.h {
            for px in 0..self.w {
                for ky in 0..self.k {
                    let r = reflect_index(py as isize + ky as isize - half, self.h);
                    for kx in 0..self.k {
                        let c = reflect_index(px as isize + kx as isize - half, self.w);
                        taps.push(r * self.w + c);
                    }
                }
            }
        }
        taps
    }
}

/// `[B, C, h, w]` -> `[B * h * w, C * k * k]`, row `(b, pixel)` holding the
/// reflect-padded neighbourhood in `(channel, ky, kx)` order.
pub(crate) fn im2col(x: &[f64], g: ConvGeom) -> Vec<f64> {
    let (l, kk, plen) = (g.pixels(), g.k * g.k, g.patch_len());
    let taps = g.taps();
    let mut cols = vec![0.0; g.batch * l * plen];
    cols.par_chunks_mut(l * plen)
        .enumerate()
        .for_each(|(b, block)| {
            let xb = &x[b * g.c_in * l..(b + 1) * g.c_in * l];
            for p in 0..l {
                let row = &mut block[p * plen..(p + 1) * plen];
                let tp = &taps[p * kk..(p + 1) * kk];
                for ci in 0..g.c_in {
                    let plane = &xb[ci * l..(ci + 1) * l];
                    for (dst, &src) in row[ci * kk..(ci + 1) * kk].iter_mut().zip(tp) {
                        *dst = plane[src];
                    }
                }
            }
        });
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im_add(dcols: &[f64], g: ConvGeom, dx: &mut [f64]) {
    let (l, kk, plen) = (g.pixels(), g.k * g.k, g.patch_len());
    let taps = g.taps();
    dx.par_chunks_mut(g.c_in * l)
        .enumerate()
        .for_each(|(b, dxb)| {
            let block = &dcols[b * l * plen..(b + 1) * l * plen];
            for p in 0..l {
                let row = &block[p * plen..(p + 1) * plen];
                let tp = &taps[p * kk..(p + 1) * kk];
                for ci in 0..g.c_in {
                    let plane = &mut dxb[ci * l..(ci + 1) * l];
                    for (&v, &src) in row[ci * kk..(ci + 1) * kk].iter().zip(tp) {
                        plane[src] += v;
                    }
                }
            }
        });
}

/// Row-wise LayerNorm. Returns `(out, mean, rstd)`.
pub(crate) fn layer_norm_forward(
    x: &[f64],
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    out.par_chunks_mut(d)
        .zip(mean.par_iter_mut().zip(rstd.par_iter_mut()))
        .enumerate()
        .for_each(|(r, (o, (m, s)))| {
            let xr = &x[r * d..(r + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                o[i] = (xr[i] - mu) * inv * gamma[i] + beta[i];
            }
            *m = mu;
            *s = inv;
        });
    (out, mean, rstd)
}

/// Accumulates LayerNorm gradients. Any of the three outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    g: &[f64],
    x: &[f64],
    d: usize,
    gamma: &[f64],
    mean: &[f64],
    rstd: &[f64],
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let rows = x.len() / d;
    if let Some(dgamma) = dgamma {
        for r in 0..rows {
            let (mu, inv) = (mean[r], rstd[r]);
            for i in 0..d {
                dgamma[i] += g[r * d + i] * (x[r * d + i] - mu) * inv;
            }
        }
    }
    if let Some(dbeta) = dbeta {
        for r in 0..rows {
            for i in 0..d {
                dbeta[i] += g[r * d + i];
            }
        }
    }
    if let Some(dx) = dx {
        dx.par_chunks_mut(d).enumerate().for_each(|(r, dxr)| {
            let (mu, inv) = (mean[r], rstd[r]);
            let xr = &x[r * d..(r + 1) * d];
            let gr = &g[r * d..(r + 1) * d];
            let mut mean_dn = 0.0;
            let mut mean_dn_n = 0.0;
            for i in 0..d {
                let dn = gamma[i] * gr[i];
                mean_dn += dn;
                mean_dn_n += dn * (xr[i] - mu) * inv;
            }
            mean_dn /= d as f64;
            mean_dn_n /= d as f64;
            for i in 0..d {
                let n = (xr[i] - mu) * inv;
                dxr[i] += (gamma[i] * gr[i] - mean_dn - n * mean_dn_n) * inv;
            }
        });
    }
}

/// Max-subtracted softmax over each row of length `d`.
pub(crate) fn softmax_rows(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    out.par_chunks_mut(d).enumerate().for_each(|(r, o)| {
        let xr = &x[r * d..(r + 1) * d];
        let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, &xi) in o.iter_mut().zip(xr) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= sum;
        }
    });
    out
}

pub(crate) fn softmax_rows_backward(p: &[f64], g: &[f64], d: usize, dx: &mut [f64]) {
    dx.par_chunks_mut(d).enumerate().for_each(|(r, dxr)| {
        let pr = &p[r * d..(r + 1) * d];
        let gr = &g[r * d..(r + 1) * d];
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for i in 0..d {
            dxr[i] += pr[i] * (gr[i] - dot);
        }
    });
}
