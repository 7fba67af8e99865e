use super::{record, require_normalized, Degradation, DegradationRecord, Sampled};
use crate::error::{Error, Result};
use crate::hsi::{reflect_index, HsiCube};
use rayon::prelude::*;

/// Same-size `k x k` box mean over a row-major `h x w` plane with reflect
/// padding. Separable: a horizontal then a vertical pass, both in `f64`.
pub fn mean_filter(plane: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    debug_assert_eq!(plane.len(), h * w);
    let half = (k / 2) as isize;
    let inv = 1.0 / k as f64;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        for c in 0..w {
            let s: f64 = (-half..=half)
                .map(|d| row[reflect_index(c as isize + d, w)])
                .sum();
            tmp[r * w + c] = s * inv;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let s: f64 = (-half..=half)
                .map(|d| tmp[reflect_index(r as isize + d, h) * w + c])
                .sum();
            out[r * w + c] = s * inv;
        }
    }
    out
}

/// Per-band uniform `k x k` blur; bands never mix.
pub fn apply_mean_blur(
    cube: &HsiCube,
    k: usize,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "blur kernel {k} must be odd and at least 3"
        )));
    }
    let (h, w) = (cube.height(), cube.width());
    let mut out = cube.clone();
    out.bands_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .for_each(|band| {
            let plane: Vec<f64> = band.iter().map(|&v| f64::from(v)).collect();
            for (dst, v) in band.iter_mut().zip(mean_filter(&plane, h, w, k)) {
                *dst = v.clamp(0.0, 1.0) as f32;
            }
        });
    Ok((
        out,
        record(cube, Degradation::MeanBlur { k }, seed, Sampled::default()),
    ))
}
