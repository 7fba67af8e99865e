//! Hyperspectral cubes, label maps and the plumbing around them.
//!
//! Cubes are stored band-sequential (BSQ): all pixels of band 0 in row-major
//! order, then band 1, and so on. Values are `f32` in memory and on disk.

mod io;
mod normalize;
mod patch;
mod split;

pub(crate) use io::write_json;
pub use io::{read_cube, read_labels, sidecar_path, write_cube, write_labels};
pub use normalize::{normalize_bands, BandRange, Normalized};
pub use patch::{extract_patch, reflect_index, Patch};
pub use split::{stratified_split, PixelRole, SplitSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    wavelengths_nm: Option<Vec<f64>>,
    normalized: bool,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube data has {} values, expected {height}*{width}*{bands} = {}",
                data.len(),
                height * width * bands
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
            wavelengths_nm: None,
            normalized: false,
        })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f32) -> Result<Self> {
        Self::new(height, width, bands, vec![value; height * width * bands])
    }

    pub fn with_wavelengths(mut self, wavelengths_nm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} wavelengths for {} bands",
                wavelengths_nm.len(),
                self.bands
            )));
        }
        if wavelengths_nm.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Argument(
                "wavelengths must be positive and finite".into(),
            ));
        }
        self.wavelengths_nm = Some(wavelengths_nm);
        Ok(self)
    }

    /// Sets the normalized flag after checking every value lies in `[0, 1]`.
    pub fn mark_normalized(mut self) -> Result<Self> {
        if !self.values_in_unit_range() {
            return Err(Error::Contract(
                "cannot flag a cube as normalized: values outside [0, 1]".into(),
            ));
        }
        self.normalized = true;
        Ok(self)
    }

    pub(crate) fn set_normalized_unchecked(&mut self, flag: bool) {
        self.normalized = flag;
    }

    pub fn values_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn wavelengths_nm(&self) -> Option<&[f64]> {
        self.wavelengths_nm.as_deref()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn band_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Mutable views of every band, for per-band parallel kernels.
    pub fn bands_mut(&mut self) -> std::slice::ChunksExactMut<'_, f32> {
        let n = self.pixels();
        self.data.chunks_exact_mut(n)
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[band * self.pixels() + row * self.width + col]
    }

    /// `sha256:<hex>` over dimensions, wavelengths and the little-endian payload.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in [self.height, self.width, self.bands] {
            h.update((d as u64).to_le_bytes());
        }
        if let Some(w) = &self.wavelengths_nm {
            for v in w {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        format!("sha256:{}", crate::hex(&h.finalize()))
    }
}

/// Per-pixel class ids; `0` is unlabeled, `1..=K` are classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub const UNLABELED: u16 = 0;

    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label map has {} entries, expected {height}*{width}",
                labels.len()
            )));
        }
        let k = class_names.len();
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) > k) {
            return Err(Error::Argument(format!(
                "label {bad} exceeds class count {k}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per class; index 0 holds the unlabeled count.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes() + 1];
        for &l in &self.labels {
            h[usize::from(l)] += 1;
        }
        h
    }

    pub fn check_matches(&self, cube: &HsiCube) -> Result<()> {
        if self.height != cube.height() || self.width != cube.width() {
            return Err(Error::Shape(format!(
                "label map is {}x{} but cube is {}x{}",
                self.height,
                self.width,
                cube.height(),
                cube.width()
            )));
        }
        Ok(())
    }
}
