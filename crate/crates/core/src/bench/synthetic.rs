use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{normalize_bands, HsiCube, LabelMap};
use crate::rng::Stream;

/// Parameters of the generated stand-in scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Voronoi cells; each is one class region.
    pub regions: usize,
    pub wavelength_min_nm: f64,
    pub wavelength_max_nm: f64,
    /// Standard deviation, in nm, of each class's reflectance peak.
    pub peak_width_nm: f64,
    /// Standard deviation of the per-pixel spectral perturbation.
    pub noise_scale: f64,
    /// Moving-average length, in bands, that correlates the perturbation.
    pub noise_correlation: usize,
    /// Standard deviation of a per-pixel multiplicative brightness factor.
    pub brightness_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            bands: 32,
            classes: 5,
            regions: 150,
            wavelength_min_nm: 430.0,
            wavelength_max_nm: 860.0,
            peak_width_nm: 150.0,
            noise_scale: 0.03,
            noise_correlation: 4,
            brightness_jitter: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return fail("scene dimensions must be positive".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.regions < self.classes || self.regions > self.height * self.width {
            return fail(format!(
                "{} regions cannot hold {} classes on {} pixels",
                self.regions,
                self.classes,
                self.height * self.width
            ));
        }
        if !(self.wavelength_min_nm > 0.0 && self.wavelength_max_nm > self.wavelength_min_nm) {
            return fail("wavelength range must be positive and increasing".into());
        }
        if !(self.peak_width_nm > 0.0 && self.noise_scale >= 0.0 && self.brightness_jitter >= 0.0) {
            return fail("peak width must be positive and noise scales nonnegative".into());
        }
        if self.noise_correlation == 0 {
            return fail("noise_correlation must be at least 1".into());
        }
        Ok(())
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        let n = self.bands;
        let (lo, hi) = (self.wavelength_min_nm, self.wavelength_max_nm);
        (0..n)
            .map(|i| {
                if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Peak wavelength of each class, evenly spread and seed-permuted.
    pub fn class_peaks(&self) -> Vec<f64> {
        let (lo, hi) = (self.wavelength_min_nm, self.wavelength_max_nm);
        let k = self.classes;
        let mut peaks: Vec<f64> = (0..k)
            .map(|c| lo + (hi - lo) * (c as f64 + 0.5) / k as f64)
            .collect();
        Stream::new(self.seed, "synthetic-peaks", 0).shuffle(&mut peaks);
        peaks
    }

    /// Mean reflectance curve of each class over the band wavelengths.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let wl = self.wavelengths();
        let span = self.wavelength_max_nm - self.wavelength_min_nm;
        self.class_peaks()
            .iter()
            .enumerate()
            .map(|(c, &mu)| {
                // A gentle class-specific slope keeps the curves from being
                // pure translates of one another.
                let slope = 0.1 * ((c % 3) as f64 - 1.0);
                wl.iter()
                    .map(|&l| {
                        let z = (l - mu) / self.peak_width_nm;
                        let t = (l - self.wavelength_min_nm) / span;
                        0.25 + slope * t + 0.5 * (-0.5 * z * z).exp()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Builds a seeded scene: a Voronoi label map, class spectra with correlated
/// noise, linearly spaced wavelengths, normalized per band.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(HsiCube, LabelMap)> {
    spec.validate()?;
    let (h, w, c, k) = (spec.height, spec.width, spec.bands, spec.classes);
    let n = h * w;

    let mut s = Stream::new(spec.seed, "synthetic-regions", 0);
    let sites: Vec<(f64, f64)> = s
        .sample_distinct(n, spec.regions)
        .into_iter()
        .map(|p| ((p / w) as f64, (p % w) as f64))
        .collect();
    let mut site_class: Vec<u16> = (0..spec.regions).map(|i| (i % k) as u16 + 1).collect();
    s.shuffle(&mut site_class);
    let labels: Vec<u16> = (0..n)
        .map(|p| {
            let (r, col) = ((p / w) as f64, (p % w) as f64);
            let mut best = (f64::INFINITY, 0);
            for (i, &(sr, sc)) in sites.iter().enumerate() {
                let d = (r - sr).powi(2) + (col - sc).powi(2);
                if d < best.0 {
                    best = (d, i);
                }
            }
            site_class[best.1]
        })
        .collect();

    let means = spec.class_means();
    let corr = spec.noise_correlation;
    // Averaging `corr` unit normals has variance 1/corr; rescale to 1.
    let norm = (corr as f64).sqrt();
    let mut data = vec![0f32; n * c];
    let mut white = vec![0.0; c + corr - 1];
    for (p, &y) in labels.iter().enumerate() {
        let mut ps = Stream::new(spec.seed, "synthetic-pixel", p as u64);
        white.iter_mut().for_each(|v| *v = ps.normal());
        let gain = 1.0 + spec.brightness_jitter * ps.normal();
        let mean = &means[y as usize - 1];
        for b in 0..c {
            let smooth: f64 = white[b..b + corr].iter().sum::<f64>() / norm;
            data[b * n + p] = (gain * mean[b] + spec.noise_scale * smooth) as f32;
        }
    }
    let raw = HsiCube::new(h, w, c, data)?.with_wavelengths(spec.wavelengths())?;
    let normalized = normalize_bands(&raw);
    for warning in &normalized.warnings {
        log::warn!("{warning}");
    }
    let names = (1..=k).map(|i| format!("class{i}")).collect();
    let labels = LabelMap::new(h, w, labels, names)?;
    Ok((normalized.cube, labels))
}
