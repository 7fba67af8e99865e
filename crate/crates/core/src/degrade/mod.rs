//! The nine seeded degradation operators.
//!
//! Every operator takes a normalized cube and returns the degraded cube plus a
//! [`DegradationRecord`] holding the spec, a digest of the input, and every
//! value that was sampled along the way. Random draws come from one
//! [`Stream`](crate::rng::Stream) per `(seed, operator, band)`, so bands are
//! processed in parallel without affecting the output.

mod blur;
mod columns;
mod fog;
mod jpeg;
mod noise;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use blur::{apply_mean_blur, mean_filter};
pub use columns::{apply_deadlines, apply_stripes};
pub use fog::{apply_fog, fog_density, fog_transmission};
pub use jpeg::{apply_jpeg, quantization_table};
pub use noise::{
    apply_additive_gaussian, apply_poisson, apply_salt_pepper, apply_zero_mean_gaussian,
    sample_poisson,
};

use crate::error::{Error, Result};
use crate::hsi::{read_cube, write_cube, HsiCube};
use crate::rng::Stream;

/// One of the nine corruption families with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum Degradation {
    Jpeg { q: u32 },
    ZeroMeanGaussian { sigma: f64 },
    AdditiveGaussian { sigma_max: f64 },
    Poisson { snr_db: f64, eps_div: f64 },
    SaltPepper { p: f64 },
    Stripe { a: usize, b: usize },
    Deadline { a: usize, b: usize },
    MeanBlur { k: usize },
    Fog { omega: f64 },
}

impl Degradation {
    pub const NAMES: [&'static str; 9] = [
        "jpeg",
        "zero_mean_gaussian",
        "additive_gaussian",
        "poisson",
        "salt_pepper",
        "stripe",
        "deadline",
        "mean_blur",
        "fog",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Degradation::Jpeg { .. } => "jpeg",
            Degradation::ZeroMeanGaussian { .. } => "zero_mean_gaussian",
            Degradation::AdditiveGaussian { .. } => "additive_gaussian",
            Degradation::Poisson { .. } => "poisson",
            Degradation::SaltPepper { .. } => "salt_pepper",
            Degradation::Stripe { .. } => "stripe",
            Degradation::Deadline { .. } => "deadline",
            Degradation::MeanBlur { .. } => "mean_blur",
            Degradation::Fog { .. } => "fog",
        }
    }

    /// Compact `key=value` rendering used in report tables.
    pub fn params_label(&self) -> String {
        match self {
            Degradation::Jpeg { q } => format!("q={q}"),
            Degradation::ZeroMeanGaussian { sigma } => format!("sigma={sigma}"),
            Degradation::AdditiveGaussian { sigma_max } => format!("sigma_max={sigma_max}"),
            Degradation::Poisson { snr_db, eps_div } => format!("snr_db={snr_db} eps={eps_div}"),
            Degradation::SaltPepper { p } => format!("p={p}"),
            Degradation::Stripe { a, b } | Degradation::Deadline { a, b } => {
                format!("a={a} b={b}")
            }
            Degradation::MeanBlur { k } => format!("k={k}"),
            Degradation::Fog { omega } => format!("omega={omega}"),
        }
    }

    /// Range checks that do not depend on the cube.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        match *self {
            Degradation::Jpeg { q } if q < 1 => bad(format!("jpeg quality {q} < 1")),
            Degradation::ZeroMeanGaussian { sigma } if !(sigma > 0.0) => {
                bad(format!("sigma {sigma} must be positive"))
            }
            Degradation::AdditiveGaussian { sigma_max } if !(sigma_max > 0.0) => {
                bad(format!("sigma_max {sigma_max} must be positive"))
            }
            Degradation::Poisson { eps_div, snr_db } if !(eps_div > 0.0) || !snr_db.is_finite() => {
                bad(format!(
                    "poisson needs eps_div > 0 and finite snr (got {eps_div}, {snr_db})"
                ))
            }
            Degradation::SaltPepper { p } if !(0.0..=1.0).contains(&p) => {
                bad(format!("salt-and-pepper probability {p} outside [0, 1]"))
            }
            Degradation::Stripe { a, b } | Degradation::Deadline { a, b } if a >= b => {
                bad(format!("count range [{a}, {b}) is empty"))
            }
            Degradation::MeanBlur { k } if k < 3 || k % 2 == 0 => {
                bad(format!("blur kernel {k} must be odd and at least 3"))
            }
            Degradation::Fog { omega } if !(omega > 0.0 && omega < 1.0) => {
                bad(format!("fog omega {omega} must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub kind: Degradation,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: Degradation, seed: u64) -> Self {
        DegradationSpec { kind, seed }
    }

    /// The nine specs at the Pavia University settings. `stripe_range` and
    /// `deadline_range` are `(30, 35)` there; smaller scenes need them scaled.
    pub fn pavia_set(
        seed: u64,
        stripe_range: (usize, usize),
        deadline_range: (usize, usize),
    ) -> Vec<DegradationSpec> {
        let kinds = [
            Degradation::Jpeg { q: 110 },
            Degradation::ZeroMeanGaussian { sigma: 0.25 },
            Degradation::AdditiveGaussian { sigma_max: 0.2 },
            Degradation::Poisson {
                snr_db: -10.0,
                eps_div: 1e-6,
            },
            Degradation::SaltPepper { p: 0.1 },
            Degradation::Stripe {
                a: stripe_range.0,
                b: stripe_range.1,
            },
            Degradation::Deadline {
                a: deadline_range.0,
                b: deadline_range.1,
            },
            Degradation::MeanBlur { k: 3 },
            Degradation::Fog { omega: 0.3 },
        ];
        kinds
            .into_iter()
            .map(|kind| DegradationSpec::new(kind, seed))
            .collect()
    }

    /// The nine specs at the WHU-Hi-LongKou settings.
    pub fn longkou_set(seed: u64) -> Vec<DegradationSpec> {
        let kinds = [
            Degradation::Jpeg { q: 15 },
            Degradation::ZeroMeanGaussian { sigma: 0.15 },
            Degradation::AdditiveGaussian { sigma_max: 0.25 },
            Degradation::Poisson {
                snr_db: 15.0,
                eps_div: 1e-6,
            },
            Degradation::SaltPepper { p: 0.09 },
            Degradation::Stripe { a: 35, b: 40 },
            Degradation::Deadline { a: 25, b: 30 },
            Degradation::MeanBlur { k: 3 },
            Degradation::Fog { omega: 0.2 },
        ];
        kinds
            .into_iter()
            .map(|kind| DegradationSpec::new(kind, seed))
            .collect()
    }
}

/// Values drawn (or derived) while degrading, indexed by band where relevant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    /// Additive Gaussian: per-band noise standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    /// Poisson: per-band photon scale, `None` for all-zero bands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stripe_columns: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stripe_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_starts: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_widths: Option<Vec<Vec<usize>>>,
    /// Fog: side of the mean filter that smooths the density field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fog_window: Option<usize>,
    /// Fog: the wavelength decay exponent (a constant stand-in).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fog_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atmospheric_light: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    #[serde(flatten)]
    pub spec: DegradationSpec,
    pub source_digest: String,
    pub sampled: Sampled,
}

pub(crate) fn require_normalized(cube: &HsiCube) -> Result<()> {
    if !cube.is_normalized() {
        return Err(Error::Contract(
            "degradation operators require a normalized cube".into(),
        ));
    }
    Ok(())
}

/// Runs `f` on every band with that band's private stream and collects the
/// per-band results in band order.
pub(crate) fn per_band<S, F>(cube: &mut HsiCube, seed: u64, tag: &str, f: F) -> Vec<S>
where
    S: Send,
    F: Fn(usize, &mut [f32], &mut Stream) -> S + Sync,
{
    cube.bands_mut()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, band)| {
            let mut stream = Stream::new(seed, tag, c as u64);
            f(c, band, &mut stream)
        })
        .collect()
}

pub(crate) fn clip01(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

/// Applies `spec` to `cube`.
pub fn degrade(cube: &HsiCube, spec: &DegradationSpec) -> Result<(HsiCube, DegradationRecord)> {
    let seed = spec.seed;
    match spec.kind {
        Degradation::Jpeg { q } => apply_jpeg(cube, q, seed),
        Degradation::ZeroMeanGaussian { sigma } => apply_zero_mean_gaussian(cube, sigma, seed),
        Degradation::AdditiveGaussian { sigma_max } => {
            apply_additive_gaussian(cube, sigma_max, seed)
        }
        Degradation::Poisson { snr_db, eps_div } => apply_poisson(cube, snr_db, eps_div, seed),
        Degradation::SaltPepper { p } => apply_salt_pepper(cube, p, seed),
        Degradation::Stripe { a, b } => apply_stripes(cube, a, b, seed),
        Degradation::Deadline { a, b } => apply_deadlines(cube, a, b, seed),
        Degradation::MeanBlur { k } => apply_mean_blur(cube, k, seed),
        Degradation::Fog { omega } => apply_fog(cube, omega, seed),
    }
}

/// `dir/out.hsi` -> `dir/out.degradation.json`.
pub fn metadata_path(cube_path: &Path) -> PathBuf {
    cube_path.with_extension("degradation.json")
}

/// Degrades, then writes the cube to `out` and the record next to it.
pub fn degrade_and_record(
    cube: &HsiCube,
    spec: &DegradationSpec,
    out: &Path,
) -> Result<(HsiCube, DegradationRecord)> {
    let (degraded, record) = degrade(cube, spec)?;
    write_cube(&degraded, out)?;
    crate::hsi::write_json(&metadata_path(out), &record)?;
    Ok((degraded, record))
}

pub fn read_record(path: &Path) -> Result<DegradationRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Re-runs the degradation described by a metadata file on `source`,
/// refusing if the source digest does not match.
pub fn replay(source: &HsiCube, metadata: &Path) -> Result<(HsiCube, DegradationRecord)> {
    let record = read_record(metadata)?;
    let digest = source.digest();
    if digest != record.source_digest {
        return Err(Error::Contract(format!(
            "source digest {digest} does not match recorded {}",
            record.source_digest
        )));
    }
    degrade(source, &record.spec)
}

/// Reads the clean cube at `source_path` and replays `metadata` on it.
pub fn replay_from_files(source_path: &Path, metadata: &Path) -> Result<HsiCube> {
    let source = read_cube(source_path)?;
    replay(&source, metadata).map(|(cube, _)| cube)
}

pub(crate) fn record(
    cube: &HsiCube,
    kind: Degradation,
    seed: u64,
    sampled: Sampled,
) -> DegradationRecord {
    DegradationRecord {
        spec: DegradationSpec::new(kind, seed),
        source_digest: cube.digest(),
        sampled,
    }
}
