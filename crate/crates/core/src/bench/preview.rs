use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::HsiCube;

/// Three bands as a binary PPM (P6). Each band is min-max scaled to 0..=255
/// on its own; a constant band renders as 0.
pub fn export_preview(cube: &HsiCube, bands: (usize, usize, usize), path: &Path) -> Result<()> {
    fs::write(path, preview_bytes(cube, bands)?).map_err(|e| Error::io(path, e))
}

pub fn preview_bytes(cube: &HsiCube, bands: (usize, usize, usize)) -> Result<Vec<u8>> {
    let picks = [bands.0, bands.1, bands.2];
    if let Some(b) = picks.iter().find(|&&b| b >= cube.bands()) {
        return Err(Error::Argument(format!(
            "preview band {b} outside 0..{}",
            cube.bands()
        )));
    }
    let scaled: Vec<Vec<u8>> = picks.iter().map(|&b| scale_band(cube.band(b))).collect();
    let header = format!("P6\n{} {}\n255\n", cube.width(), cube.height());
    let mut out = Vec::with_capacity(header.len() + 3 * cube.pixels());
    out.extend_from_slice(header.as_bytes());
    for p in 0..cube.pixels() {
        out.extend(scaled.iter().map(|band| band[p]));
    }
    Ok(out)
}

fn scale_band(band: &[f32]) -> Vec<u8> {
    let (lo, hi) = band
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = (hi - lo) as f64;
    band.iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) as f64 / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}
