use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::files::{read_dataset, write_dataset, write_predictions, Dataset};
use super::{evaluate, gen_synthetic, Evaluation, SyntheticSpec};
use crate::cela::{run_adaptation, target_stream, AdaptConfig};
use crate::degrade::{degrade_and_record, DegradationSpec};
use crate::error::{Error, Result};
use crate::hsi::{stratified_split, write_json, PixelRole};
use crate::sstc::{argmax_rows, save_checkpoint, train, SstcConfig, SstcModel, TrainReport};

/// Where the clean scene comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        spec: SyntheticSpec,
    },
    /// A directory holding `cube.hsi` and `labels.lbl`; any split there is
    /// ignored and redrawn from the plan.
    Directory {
        path: PathBuf,
    },
}

/// A full train, degrade, adapt, evaluate run.
///
/// Repeat `r` adds `r` to the split seed, the model seed, the stream seed and
/// every degradation seed; the clean scene is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub dataset: DatasetSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Split seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sstc: SstcConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    pub degradations: Vec<DegradationSpec>,
    pub output_dir: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_train_fraction() -> f64 {
    0.2
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

impl From<&Evaluation> for Scores {
    fn from(e: &Evaluation) -> Self {
        Scores {
            oa: e.oa,
            aa: e.aa,
            kappa: e.kappa,
        }
    }
}

impl Scores {
    fn minus(&self, other: &Scores) -> Scores {
        Scores {
            oa: self.oa - other.oa,
            aa: self.aa - other.aa,
            kappa: self.kappa - other.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationResult {
    pub repeat: usize,
    pub index: usize,
    #[serde(rename = "type")]
    pub kind: String,
    pub params: String,
    pub seed: u64,
    pub unadapted: Scores,
    pub adapted: Scores,
    pub delta: Scores,
    pub degraded_digest: String,
}

/// Evidence that no training pixel was scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub repeat: usize,
    pub split_seed: u64,
    pub train_pixels: usize,
    pub target_pixels: usize,
    pub overlap: usize,
    pub evaluated_pixels: usize,
    pub evaluated_train_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub repeat: usize,
    pub model_seed: u64,
    pub stream_seed: u64,
    pub clean: Scores,
    pub train: TrainReport,
    pub audit: SplitAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub source_digest: String,
    pub repeats: Vec<RepeatSummary>,
    pub results: Vec<DegradationResult>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.degradations.is_empty() {
            return Err(Error::Config("plan lists no degradations".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        for d in &self.degradations {
            d.kind.validate()?;
        }
        self.adapt.validate()
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs `plan`, writing every artifact under `plan.output_dir`:
/// `data/` (clean scene and split), `repeat<r>/` (model, per-degradation
/// cubes, predictions and adaptation reports), `results.csv`, `results.md`
/// and `report.json`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    stage("plan", plan.validate())?;
    let out = &plan.output_dir;
    stage("plan", mkdir(out))?;
    stage("plan", write_json(&out.join("plan.json"), plan))?;

    let (cube, labels) = stage(
        "load",
        match &plan.dataset {
            DatasetSource::Synthetic { spec } => gen_synthetic(spec),
            DatasetSource::Directory { path } => {
                let d = read_dataset(path)?;
                Ok((d.cube, d.labels))
            }
        },
    )?;
    if !cube.is_normalized() {
        return Err(Error::Contract("plan dataset must be normalized".into()).in_stage("load"));
    }
    let source_digest = cube.digest();

    let mut repeats = Vec::new();
    let mut results = Vec::new();
    for r in 0..plan.repeats {
        let ro = r as u64;
        let split = stage(
            "split",
            stratified_split(&labels, plan.train_fraction, plan.seed.wrapping_add(ro)),
        )?;
        let rdir = out.join(format!("repeat{r}"));
        stage("split", mkdir(&rdir))?;
        let data = Dataset {
            cube: cube.clone(),
            labels: labels.clone(),
            split: split.clone(),
        };
        stage("split", write_dataset(&rdir.join("data"), &data))?;

        let cfg = SstcConfig {
            seed: plan.sstc.seed.wrapping_add(ro),
            ..plan.sstc.clone()
        }
        .with_data_shape(cube.bands(), labels.classes());
        let mut model = stage("train", SstcModel::new(cfg))?;
        let train_report = stage("train", train(&mut model, &cube, &labels, &split.train))?;
        stage("train", save_checkpoint(&model, &rdir.join("model.ckpt")))?;
        stage(
            "train",
            write_json(&rdir.join("train_report.json"), &train_report),
        )?;

        let adapt = AdaptConfig {
            seed: plan.adapt.seed.wrapping_add(ro),
            ..plan.adapt.clone()
        };
        let stream = target_stream(&split.target, adapt.seed);
        let chunk = adapt.batch_size.max(64);
        let clean_pred = stage("evaluate", model.classify_pixels(&cube, &stream, chunk))?;
        let clean = stage(
            "evaluate",
            evaluate(&argmax_rows(&clean_pred), &labels, &stream),
        )?;

        let audit = SplitAudit {
            repeat: r,
            split_seed: split.seed,
            train_pixels: split.train.len(),
            target_pixels: split.target.len(),
            overlap: split.overlap(),
            evaluated_pixels: stream.len(),
            evaluated_train_pixels: stream
                .iter()
                .filter(|&&p| split.role(p) != Some(PixelRole::Target))
                .count(),
        };
        if audit.evaluated_train_pixels != 0 || audit.overlap != 0 {
            return Err(Error::Contract("split audit failed".into()).in_stage("split"));
        }

        let branch = |(i, spec): (usize, &DegradationSpec)| -> Result<DegradationResult> {
            let spec = DegradationSpec {
                seed: spec.seed.wrapping_add(ro),
                ..spec.clone()
            };
            let name = spec.kind.name();
            let bdir = rdir.join(format!("{i:02}_{name}"));
            mkdir(&bdir)?;
            let (degraded, _) = stage(
                &format!("degrade {name}"),
                degrade_and_record(&cube, &spec, &bdir.join("degraded.hsi")),
            )?;
            let label = format!("adapt {name}");
            let base = stage(&label, model.classify_pixels(&degraded, &stream, chunk))?;
            let base_pred = argmax_rows(&base);
            stage(
                &label,
                write_predictions(&bdir.join("unadapted.bin"), &base_pred),
            )?;
            let mut replica = model.clone();
            let (pred, report) = stage(
                &label,
                run_adaptation(&mut replica, &degraded, &stream, &adapt),
            )?;
            stage(&label, write_predictions(&bdir.join("adapted.bin"), &pred))?;
            stage(&label, write_json(&bdir.join("adapt_report.json"), &report))?;
            let label = format!("evaluate {name}");
            let u = Scores::from(&stage(&label, evaluate(&base_pred, &labels, &stream))?);
            let a = Scores::from(&stage(&label, evaluate(&pred, &labels, &stream))?);
            log::info!(
                "repeat {r} {name}: OA {:.2} -> {:.2}",
                100.0 * u.oa,
                100.0 * a.oa
            );
            Ok(DegradationResult {
                repeat: r,
                index: i,
                kind: name.to_string(),
                params: spec.kind.params_label(),
                seed: spec.seed,
                unadapted: u,
                adapted: a,
                delta: a.minus(&u),
                degraded_digest: degraded.digest(),
            })
        };
        let rows: Vec<Result<DegradationResult>> = plan
            .degradations
            .par_iter()
            .enumerate()
            .map(branch)
            .collect();
        for row in rows {
            results.push(row?);
        }
        repeats.push(RepeatSummary {
            repeat: r,
            model_seed: model.config().seed,
            stream_seed: adapt.seed,
            clean: Scores::from(&clean),
            train: train_report,
            audit,
        });
    }

    let report = ExperimentReport {
        plan: plan.clone(),
        source_digest,
        repeats,
        results,
    };
    stage("report", write_report_files(out, &report))?;
    Ok(report)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_report_files(dir: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    let csv = render_csv(report);
    fs::write(dir.join("results.csv"), csv).map_err(|e| Error::io(dir.join("results.csv"), e))?;
    let md = render_markdown(report);
    fs::write(dir.join("results.md"), md).map_err(|e| Error::io(dir.join("results.md"), e))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

const CSV_HEADER: &str = "repeat,index,type,params,seed,oa_unadapted,aa_unadapted,kappa_unadapted,oa_adapted,aa_adapted,kappa_adapted,delta_oa,delta_aa,delta_kappa";

/// One row per (repeat, degradation). Metrics are percentages (Kappa x 100)
/// with four decimals.
pub fn render_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    let pct = |v: f64| format!("{:.4}", 100.0 * v);
    for r in &report.results {
        let params = if r.params.contains(',') {
            format!("\"{}\"", r.params)
        } else {
            r.params.clone()
        };
        let cells = [
            r.repeat.to_string(),
            r.index.to_string(),
            r.kind.clone(),
            params,
            r.seed.to_string(),
            pct(r.unadapted.oa),
            pct(r.unadapted.aa),
            pct(r.unadapted.kappa),
            pct(r.adapted.oa),
            pct(r.adapted.aa),
            pct(r.adapted.kappa),
            pct(r.delta.oa),
            pct(r.delta.aa),
            pct(r.delta.kappa),
        ];
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Mean over repeats, plus half the min-max range when there are several.
fn cell(values: &[f64]) -> String {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() > 1 {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        format!("{:.2} ± {:.2}", 100.0 * mean, 50.0 * (hi - lo))
    } else {
        format!("{:.2}", 100.0 * mean)
    }
}

/// Method x metric rows, one column per degradation plus the average.
pub fn render_markdown(report: &ExperimentReport) -> String {
    let types: Vec<(usize, String)> = {
        let mut t: Vec<(usize, String)> = report
            .results
            .iter()
            .map(|r| (r.index, r.kind.clone()))
            .collect();
        t.sort();
        t.dedup();
        t
    };
    let mut s = String::new();
    let _ = write!(s, "| Method | Metric |");
    for (_, name) in &types {
        let _ = write!(s, " {name} |");
    }
    s.push_str(" Avg. |\n|---|---|");
    for _ in 0..=types.len() {
        s.push_str("---|");
    }
    s.push('\n');
    type Pick = fn(&DegradationResult) -> Scores;
    let methods: [(&str, Pick); 3] = [
        ("Unadapted", |r| r.unadapted),
        ("CELA", |r| r.adapted),
        ("Δ", |r| r.delta),
    ];
    type Metric = fn(&Scores) -> f64;
    let metrics: [(&str, Metric); 3] = [
        ("OA (%)", |s| s.oa),
        ("AA (%)", |s| s.aa),
        ("Kappa×100", |s| s.kappa),
    ];
    let repeats = report.repeats.len().max(1);
    for (mname, pick) in methods {
        for (metric, get) in metrics {
            let _ = write!(s, "| {mname} | {metric} |");
            // Per-repeat averages over the degradation types feed Avg.
            let mut avg = vec![0.0; repeats];
            for (idx, _) in &types {
                let vals: Vec<f64> = report
                    .results
                    .iter()
                    .filter(|r| r.index == *idx)
                    .map(|r| get(&pick(r)))
                    .collect();
                for (i, v) in vals.iter().enumerate() {
                    avg[i] += v / types.len() as f64;
                }
                let _ = write!(s, " {} |", cell(&vals));
            }
            let _ = writeln!(s, " {} |", cell(&avg));
        }
    }
    s.push('\n');
    for rep in &report.repeats {
        let _ = writeln!(
            s,
            "Repeat {}: clean OA {:.2}%, {} train / {} evaluated target pixels, {} train pixels evaluated.",
            rep.repeat,
            100.0 * rep.clean.oa,
            rep.audit.train_pixels,
            rep.audit.evaluated_pixels,
            rep.audit.evaluated_train_pixels
        );
    }
    s
}
