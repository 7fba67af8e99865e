//! Wavelength-aware haze.
//!
//! `x' = x * t_c + A_c * (1 - t_c)` with `t_c = t1^((lambda_0 / lambda_c)^gamma)`
//! and `t1 = 1 - omega * rho`. The density field `rho` and the decay exponent
//! `gamma` are synthetic stand-ins: `rho` is uniform noise smoothed by a box
//! filter of side `ceil(min(H, W) / 8)` (made odd) and min-max normalized;
//! `gamma` is the constant [`FOG_DECAY`]. Both are written to the record.

use super::blur::mean_filter;
use super::{record, require_normalized, Degradation, DegradationRecord, Sampled};
use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::rng::Stream;

pub const FOG_DECAY: f64 = 1.0;

/// Transmission of a band at `lambda_c` given base transmission `t1`.
pub fn fog_transmission(t1: f64, lambda_0: f64, lambda_c: f64, decay: f64) -> f64 {
    t1.powf((lambda_0 / lambda_c).powf(decay))
}

/// Smoothed, `[0, 1]`-normalized density field and the filter side used.
pub fn fog_density(h: usize, w: usize, seed: u64) -> (Vec<f64>, usize) {
    let mut stream = Stream::new(seed, "fog", 0);
    let noise: Vec<f64> = (0..h * w).map(|_| stream.uniform()).collect();
    let mut window = h.min(w).div_ceil(8);
    if window.is_multiple_of(2) {
        window += 1;
    }
    let mut rho = if window > 1 {
        mean_filter(&noise, h, w, window)
    } else {
        noise
    };
    let lo = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in rho.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    (rho, window)
}

pub fn apply_fog(cube: &HsiCube, omega: f64, seed: u64) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::Argument(format!(
            "fog omega {omega} must lie in (0, 1)"
        )));
    }
    let wavelengths = cube
        .wavelengths_nm()
        .ok_or_else(|| {
            Error::Contract("fog requires spectral calibration (wavelengths_nm)".into())
        })?
        .to_vec();
    let lambda_0 = wavelengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let (rho, window) = fog_density(cube.height(), cube.width(), seed);
    let t1: Vec<f64> = rho.iter().map(|r| 1.0 - omega * r).collect();
    let mut out = cube.clone();
    let mut light = Vec::with_capacity(cube.bands());
    for (c, band) in out.bands_mut().enumerate() {
        let a = band.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exponent = (lambda_0 / wavelengths[c]).powf(FOG_DECAY);
        for (v, &t1) in band.iter_mut().zip(&t1) {
            let t = t1.powf(exponent);
            *v = (f64::from(*v) * t + a * (1.0 - t)) as f32;
        }
        light.push(a);
    }
    let sampled = Sampled {
        fog_window: Some(window),
        fog_decay: Some(FOG_DECAY),
        atmospheric_light: Some(light),
        ..Sampled::default()
    };
    Ok((out, record(cube, Degradation::Fog { omega }, seed, sampled)))
}
