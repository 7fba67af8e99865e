use super::HsiCube;
use crate::error::{Error, Result};

/// A `w x w` spatial window of all bands, laid out `[band][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    pub size: usize,
    pub bands: usize,
    pub values: Vec<f32>,
}

impl Patch {
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[(band * self.size + row) * self.size + col]
    }
}

/// Mirrors an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n - 2`). Offsets beyond one period keep folding.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Extracts the `w x w` window centred on `center`, reflect-padding at the
/// borders.
pub fn extract_patch(cube: &HsiCube, center: (usize, usize), w: usize) -> Result<Patch> {
    let (h, wd) = (cube.height(), cube.width());
    if w.is_multiple_of(2) {
        return Err(Error::Argument(format!("patch size {w} must be odd")));
    }
    if w > 2 * h.min(wd) - 1 {
        return Err(Error::Argument(format!(
            "patch size {w} exceeds reflect limit {} for a {h}x{wd} image",
            2 * h.min(wd) - 1
        )));
    }
    let (r0, c0) = center;
    if r0 >= h || c0 >= wd {
        return Err(Error::Argument(format!(
            "center ({r0}, {c0}) outside {h}x{wd} image"
        )));
    }
    let half = (w / 2) as isize;
    let rows: Vec<usize> = (-half..=half)
        .map(|d| reflect_index(r0 as isize + d, h))
        .collect();
    let cols: Vec<usize> = (-half..=half)
        .map(|d| reflect_index(c0 as isize + d, wd))
        .collect();
    let mut values = Vec::with_capacity(w * w * cube.bands());
    for c in 0..cube.bands() {
        let band = cube.band(c);
        for &r in &rows {
            let row = &band[r * wd..(r + 1) * wd];
            values.extend(cols.iter().map(|&cc| row[cc]));
        }
    }
    Ok(Patch {
        center,
        size: w,
        bands: cube.bands(),
        values,
    })
}
