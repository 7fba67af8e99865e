//! Pixel-domain JPEG: 8-bit quantization, 8x8 DCT-II, table quantization and
//! the inverse path. No entropy coding is done since only the decoded pixels
//! matter.

use std::f64::consts::PI;

use super::{record, require_normalized, Degradation, DegradationRecord, Sampled};
use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use rayon::prelude::*;

const LUMINANCE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard luminance table scaled for quality `q`, entries clamped to
/// `[1, 255]`. Any `q >= 100` yields the all-ones table.
pub fn quantization_table(q: u32) -> [f64; 64] {
    let mut table = [1.0; 64];
    if q >= 100 {
        return table;
    }
    let scale = if q < 50 {
        5000 / q as i64
    } else {
        200 - 2 * q as i64
    };
    for (t, &base) in table.iter_mut().zip(LUMINANCE.iter()) {
        *t = ((i64::from(base) * scale + 50) / 100).clamp(1, 255) as f64;
    }
    table
}

/// `basis[u][x] = c(u)/2 * cos((2x+1) u pi / 16)`, the orthonormal 8-point DCT.
fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0.0; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let cu = if u == 0 { (0.5f64).sqrt() } else { 1.0 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = 0.5 * cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
        }
    }
    b
}

fn forward(block: &[f64; 64], basis: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    // rows
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| basis[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| basis[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn inverse(coef: &[f64; 64], basis: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|v| basis[v][y] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| basis[u][x] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn compress_band(band: &mut [f32], h: usize, w: usize, table: &[f64; 64], basis: &[[f64; 8]; 8]) {
    let level = |v: f32| (f64::from(v).clamp(0.0, 1.0) * 255.0).round();
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let mut decoded = vec![0.0f64; ph * pw];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                let r = (by + y).min(h - 1);
                for x in 0..8 {
                    let c = (bx + x).min(w - 1);
                    block[y * 8 + x] = level(band[r * w + c]) - 128.0;
                }
            }
            let mut coef = forward(&block, basis);
            for (c, q) in coef.iter_mut().zip(table.iter()) {
                *c = (*c / q).round() * q;
            }
            let pixels = inverse(&coef, basis);
            for y in 0..8 {
                for x in 0..8 {
                    decoded[(by + y) * pw + bx + x] =
                        (pixels[y * 8 + x] + 128.0).round().clamp(0.0, 255.0);
                }
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            band[r * w + c] = (decoded[r * pw + c] / 255.0) as f32;
        }
    }
}

/// JPEG-style compression at quality `q`. The seed is only recorded; the
/// operator is deterministic.
pub fn apply_jpeg(cube: &HsiCube, q: u32, seed: u64) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if q < 1 {
        return Err(Error::Argument(format!("jpeg quality {q} < 1")));
    }
    let table = quantization_table(q);
    let basis = dct_basis();
    let (h, w) = (cube.height(), cube.width());
    let mut out = cube.clone();
    out.bands_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .for_each(|band| compress_band(band, h, w, &table, &basis));
    let rec = record(cube, Degradation::Jpeg { q }, seed, Sampled::default());
    Ok((out, rec))
}
