use serde::{Deserialize, Serialize};

use super::LabelMap;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelRole {
    Train,
    Target,
}

/// Per-class partition of labeled pixels into a training side and a target
/// side. Pixel indices are flat row-major positions, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub train: Vec<usize>,
    pub target: Vec<usize>,
}

impl SplitSpec {
    pub fn role(&self, pixel: usize) -> Option<PixelRole> {
        if self.train.binary_search(&pixel).is_ok() {
            Some(PixelRole::Train)
        } else if self.target.binary_search(&pixel).is_ok() {
            Some(PixelRole::Target)
        } else {
            None
        }
    }

    /// Number of pixels assigned to both sides; zero for any valid split.
    pub fn overlap(&self) -> usize {
        self.train
            .iter()
            .filter(|p| self.target.binary_search(p).is_ok())
            .count()
    }

    pub fn to_row_col(&self, pixel: usize) -> (usize, usize) {
        (pixel / self.width, pixel % self.width)
    }
}

/// Train count for a class of `n` pixels: round-half-up, at least one.
pub(crate) fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).clamp(1, n)
}

/// Shuffles each class with its own seeded stream and sends the first
/// `round(fraction * n_c)` pixels to the training side.
pub fn stratified_split(labels: &LabelMap, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let k = labels.classes();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for (i, &l) in labels.labels().iter().enumerate() {
        members[usize::from(l)].push(i);
    }
    let mut train = Vec::new();
    let mut target = Vec::new();
    for (class, pixels) in members.iter_mut().enumerate().skip(1) {
        if pixels.is_empty() {
            return Err(Error::Config(format!(
                "class {class} ({}) has no labeled pixels",
                labels.class_names()[class - 1]
            )));
        }
        let mut stream = Stream::new(seed, "split", class as u64);
        stream.shuffle(pixels);
        let n_train = train_count(pixels.len(), train_fraction);
        train.extend_from_slice(&pixels[..n_train]);
        target.extend_from_slice(&pixels[n_train..]);
    }
    train.sort_unstable();
    target.sort_unstable();
    Ok(SplitSpec {
        train_fraction,
        seed,
        height: labels.height(),
        width: labels.width(),
        train,
        target,
    })
}
