use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HsiCube;

/// The `(min, max)` a band had before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub min: f64,
    pub max: f64,
}

impl BandRange {
    /// Maps a normalized value back to the band's original scale.
    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub cube: HsiCube,
    pub ranges: Vec<BandRange>,
    /// Human-readable notes for degenerate (constant) bands.
    pub warnings: Vec<String>,
}

/// Min-max normalizes every band independently to `[0, 1]`.
///
/// Reductions run in `f64`. A constant band maps to all zeros and leaves a
/// warning instead of failing, since dead bands show up after deadline
/// corruption.
pub fn normalize_bands(cube: &HsiCube) -> Normalized {
    let mut out = cube.clone();
    let ranges: Vec<BandRange> = out
        .bands_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|band| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in band.iter() {
                let v = f64::from(v);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = hi - lo;
            if span > 0.0 {
                for v in band.iter_mut() {
                    *v = ((f64::from(*v) - lo) / span) as f32;
                }
            } else {
                band.fill(0.0);
            }
            BandRange { min: lo, max: hi }
        })
        .collect();
    let warnings: Vec<String> = ranges
        .iter()
        .enumerate()
        .filter(|(_, r)| r.max - r.min <= 0.0)
        .map(|(c, r)| format!("band {c} is constant ({}); mapped to zero", r.min))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    out.set_normalized_unchecked(true);
    Normalized {
        cube: out,
        ranges,
        warnings,
    }
}
