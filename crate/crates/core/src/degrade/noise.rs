use super::{
    clip01, per_band, record, require_normalized, Degradation, DegradationRecord, Sampled,
};
use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::rng::Stream;

/// Above this mean the sampler switches to the rounded normal approximation.
pub const POISSON_NORMAL_THRESHOLD: f64 = 30.0;

/// Poisson variate with mean `lambda`.
///
/// Below [`POISSON_NORMAL_THRESHOLD`]: inversion by sequential search on one
/// uniform. At or above it: `round(lambda + sqrt(lambda) * z)` clamped at 0.
pub fn sample_poisson(lambda: f64, stream: &mut Stream) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda >= POISSON_NORMAL_THRESHOLD {
        return (lambda + lambda.sqrt() * stream.normal()).round().max(0.0);
    }
    let u = stream.uniform();
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    // The cap only matters if u lands within rounding error of 1.
    while u > cdf && k < 1000 {
        k += 1;
        p *= lambda / f64::from(k);
        cdf += p;
    }
    f64::from(k)
}

pub fn apply_zero_mean_gaussian(
    cube: &HsiCube,
    sigma: f64,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("sigma {sigma} must be positive")));
    }
    let mut out = cube.clone();
    per_band(&mut out, seed, "zero_mean_gaussian", |_, band, s| {
        for v in band.iter_mut() {
            *v = clip01(f64::from(*v) + sigma * s.normal());
        }
    });
    let rec = record(
        cube,
        Degradation::ZeroMeanGaussian { sigma },
        seed,
        Sampled::default(),
    );
    Ok((out, rec))
}

/// Each band draws its own `sigma_c ~ U[0, sigma_max)` before adding noise.
pub fn apply_additive_gaussian(
    cube: &HsiCube,
    sigma_max: f64,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if !(sigma_max > 0.0) {
        return Err(Error::Argument(format!(
            "sigma_max {sigma_max} must be positive"
        )));
    }
    let mut out = cube.clone();
    let sigmas = per_band(&mut out, seed, "additive_gaussian", |_, band, s| {
        let sigma = s.uniform_in(0.0, sigma_max);
        for v in band.iter_mut() {
            *v = clip01(f64::from(*v) + sigma * s.normal());
        }
        sigma
    });
    let sampled = Sampled {
        sigma: Some(sigmas),
        ..Sampled::default()
    };
    let rec = record(
        cube,
        Degradation::AdditiveGaussian { sigma_max },
        seed,
        sampled,
    );
    Ok((out, rec))
}

/// Photon-count noise. Each band is scaled by
/// `gamma_c = SNR_lin / mean(x^2 / (x + eps_div))`, sampled from a Poisson
/// with that mean, divided back by `gamma_c` and clipped.
pub fn apply_poisson(
    cube: &HsiCube,
    snr_db: f64,
    eps_div: f64,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if !(eps_div > 0.0) || !snr_db.is_finite() {
        return Err(Error::Argument(format!(
            "poisson needs eps_div > 0 and a finite snr (got {eps_div}, {snr_db})"
        )));
    }
    let snr_lin = 10f64.powf(snr_db / 10.0);
    let mut out = cube.clone();
    let gammas = per_band(&mut out, seed, "poisson", |_, band, s| {
        let n = band.len() as f64;
        let power: f64 = band
            .iter()
            .map(|&v| {
                let x = f64::from(v);
                x * x / (x + eps_div)
            })
            .sum::<f64>()
            / n;
        if power <= 0.0 {
            return None;
        }
        let gamma = snr_lin / power;
        for v in band.iter_mut() {
            let counts = sample_poisson(gamma * f64::from(*v), s);
            *v = clip01(counts / gamma);
        }
        Some(gamma)
    });
    let warnings = gammas
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_none())
        .map(|(c, _)| format!("band {c} is all zero; passed through without Poisson noise"))
        .collect::<Vec<_>>();
    for w in &warnings {
        log::warn!("{w}");
    }
    let sampled = Sampled {
        gamma: Some(gammas),
        warnings,
        ..Sampled::default()
    };
    let rec = record(
        cube,
        Degradation::Poisson { snr_db, eps_div },
        seed,
        sampled,
    );
    Ok((out, rec))
}

/// Each value independently becomes 0 with probability `p/2`, 1 with
/// probability `p/2`.
pub fn apply_salt_pepper(
    cube: &HsiCube,
    p: f64,
    seed: u64,
) -> Result<(HsiCube, DegradationRecord)> {
    require_normalized(cube)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
    }
    let mut out = cube.clone();
    let half = p / 2.0;
    per_band(&mut out, seed, "salt_pepper", |_, band, s| {
        for v in band.iter_mut() {
            let u = s.uniform();
            if u < half {
                *v = 0.0;
            } else if u < p {
                *v = 1.0;
            }
        }
    });
    let rec = record(
        cube,
        Degradation::SaltPepper { p },
        seed,
        Sampled::default(),
    );
    Ok((out, rec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(h: usize, w: usize, c: usize, v: f32) -> HsiCube {
        HsiCube::filled(h, w, c, v)
            .unwrap()
            .mark_normalized()
            .unwrap()
    }

    fn diff_stats(a: &[f32], b: &[f32]) -> (f64, f64) {
        let n = a.len() as f64;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| f64::from(y - x)).collect();
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn poisson_sampler_moments() {
        for &lambda in &[0.3, 4.0, 25.0, 30.0, 200.0] {
            let mut s = Stream::new(2, "p", 0);
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(lambda, &mut s)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(
                (mean - lambda).abs() < 0.02 * lambda.max(1.0),
                "lambda {lambda}: mean {mean}"
            );
            assert!(
                (var - lambda).abs() < 0.05 * lambda.max(1.0),
                "lambda {lambda}: var {var}"
            );
        }
    }

    #[test]
    fn vanishing_sigma_is_identity() {
        let mut s = Stream::new(1, "t", 0);
        let data = (0..64 * 3).map(|_| s.uniform() as f32).collect();
        let cube = HsiCube::new(8, 8, 3, data)
            .unwrap()
            .mark_normalized()
            .unwrap();
        let (a, _) = apply_zero_mean_gaussian(&cube, 1e-12, 4).unwrap();
        let (b, _) = apply_additive_gaussian(&cube, 1e-12, 4).unwrap();
        for (x, (y, z)) in cube.data().iter().zip(a.data().iter().zip(b.data())) {
            assert!((x - y).abs() <= 1e-9);
            assert!((x - z).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_mean_gaussian_statistics() {
        let cube = constant(256, 256, 1, 0.5);
        let (out, _) = apply_zero_mean_gaussian(&cube, 0.1, 17).unwrap();
        let (mean, std) = diff_stats(cube.data(), out.data());
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((0.097..0.103).contains(&std), "std {std}");
    }

    #[test]
    fn additive_gaussian_per_band_sigma() {
        let cube = constant(128, 128, 64, 0.5);
        let (out, rec) = apply_additive_gaussian(&cube, 0.2, 3).unwrap();
        let sigmas = rec.sampled.sigma.unwrap();
        assert_eq!(sigmas.len(), 64);
        for (c, &sigma) in sigmas.iter().enumerate() {
            assert!((0.0..0.2).contains(&sigma));
            let (_, std) = diff_stats(cube.band(c), out.band(c));
            assert!(
                (std - sigma).abs() <= 0.15 * sigma,
                "band {c}: {std} vs {sigma}"
            );
        }
    }

    #[test]
    fn poisson_near_noiseless_at_high_snr() {
        let cube = constant(64, 64, 2, 0.5);
        let (out, _) = apply_poisson(&cube, 60.0, 1e-6, 9).unwrap();
        for v in out.data() {
            assert!((v - 0.5).abs() < 0.01, "{v}");
        }
    }

    #[test]
    fn poisson_achieves_target_snr() {
        let cube = constant(128, 128, 1, 0.5);
        let (out, rec) = apply_poisson(&cube, 15.0, 1e-6, 21).unwrap();
        let signal: f64 = cube.data().iter().map(|&x| f64::from(x).powi(2)).sum();
        let noise: f64 = cube
            .data()
            .iter()
            .zip(out.data())
            .map(|(&x, &y)| f64::from(y - x).powi(2))
            .sum();
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 15.0).abs() < 1.0, "snr {snr}");
        assert_eq!(rec.sampled.gamma.unwrap().len(), 1);
    }

    #[test]
    fn poisson_all_zero_band_passes_through() {
        let mut cube = constant(8, 8, 2, 0.5);
        cube.band_mut(1).fill(0.0);
        let (out, rec) = apply_poisson(&cube, 5.0, 1e-6, 1).unwrap();
        assert!(out.band(1).iter().all(|&v| v == 0.0));
        assert_eq!(rec.sampled.gamma.as_ref().unwrap()[1], None);
        assert_eq!(rec.sampled.warnings.len(), 1);
    }

    #[test]
    fn salt_pepper_zero_probability_is_identity() {
        let cube = constant(16, 16, 2, 0.3);
        let (out, _) = apply_salt_pepper(&cube, 0.0, 5).unwrap();
        assert_eq!(out.data(), cube.data());
    }

    #[test]
    fn salt_pepper_fraction_and_balance() {
        let cube = constant(256, 256, 1, 0.5);
        let (out, _) = apply_salt_pepper(&cube, 0.1, 12).unwrap();
        let n = out.data().len() as f64;
        let salt = out.data().iter().filter(|&&v| v == 1.0).count() as f64;
        let pepper = out.data().iter().filter(|&&v| v == 0.0).count() as f64;
        let frac = (salt + pepper) / n;
        assert!((frac - 0.1).abs() < 0.005, "fraction {frac}");
        let ratio = salt / pepper;
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    }
}
