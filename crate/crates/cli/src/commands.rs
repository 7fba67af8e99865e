use std::fs;
use std::path::Path;

use hypertta::bench::{
    evaluate, export_preview, gen_synthetic, read_dataset, read_predictions, read_report,
    render_markdown, run_experiment, write_dataset, write_predictions, write_report_files, Dataset,
    ExperimentPlan, SyntheticSpec,
};
use hypertta::cela::{run_adaptation, target_stream, AdaptConfig, AdaptReport};
use hypertta::degrade::{
    degrade_and_record, metadata_path, read_record, replay, Degradation, DegradationSpec,
};
use hypertta::hsi::{read_cube, stratified_split, write_cube};
use hypertta::sstc::{
    argmax_rows, load_checkpoint, save_checkpoint, train as train_model, SstcConfig, SstcModel,
};
use hypertta::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{
    AdaptArgs, DegradationType, DegradeArgs, EvalArgs, GenArgs, ReportArgs, RunArgs, TrainArgs,
};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

/// Configuration files are user input: parse failures are config errors.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|e| match e {
        Error::Format { path, message } => Error::Config(format!("{}: {message}", path.display())),
        other => other,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.into(),
            source,
        })?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

pub fn gen(args: GenArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(p) => read_config(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (cube, labels) = gen_synthetic(&spec)?;
    let split = stratified_split(&labels, args.train_fraction, args.split_seed)?;
    log::info!(
        "scene {}x{}x{}, {} classes, {} train / {} target pixels",
        cube.height(),
        cube.width(),
        cube.bands(),
        labels.classes(),
        split.train.len(),
        split.target.len()
    );
    write_dataset(
        &args.out,
        &Dataset {
            cube,
            labels,
            split,
        },
    )?;
    write_json(&args.out.join("scene.json"), &spec)
}

fn required<T>(value: Option<T>, flag: &str, kind: &str) -> Result<T> {
    value.ok_or_else(|| Error::Argument(format!("--type {kind} needs --{flag}")))
}

fn degradation_from_args(kind: DegradationType, a: &DegradeArgs) -> Result<Degradation> {
    Ok(match kind {
        DegradationType::Jpeg => Degradation::Jpeg {
            q: required(a.q, "q", "jpeg")?,
        },
        DegradationType::ZeroMeanGaussian => Degradation::ZeroMeanGaussian {
            sigma: required(a.sigma, "sigma", "zero_mean_gaussian")?,
        },
        DegradationType::AdditiveGaussian => Degradation::AdditiveGaussian {
            sigma_max: required(a.sigma_max, "sigma-max", "additive_gaussian")?,
        },
        DegradationType::Poisson => Degradation::Poisson {
            snr_db: required(a.snr_db, "snr-db", "poisson")?,
            eps_div: a.eps_div,
        },
        DegradationType::SaltPepper => Degradation::SaltPepper {
            p: required(a.p, "p", "salt_pepper")?,
        },
        DegradationType::Stripe => Degradation::Stripe {
            a: required(a.a, "a", "stripe")?,
            b: required(a.b, "b", "stripe")?,
        },
        DegradationType::Deadline => Degradation::Deadline {
            a: required(a.a, "a", "deadline")?,
            b: required(a.b, "b", "deadline")?,
        },
        DegradationType::MeanBlur => Degradation::MeanBlur {
            k: required(a.k, "k", "mean_blur")?,
        },
        DegradationType::Fog => Degradation::Fog {
            omega: required(a.omega, "omega", "fog")?,
        },
    })
}

pub fn degrade(args: DegradeArgs) -> Result<()> {
    let cube = read_cube(&args.input)?;
    let (degraded, record) = match (&args.replay, args.kind) {
        (Some(meta), _) => {
            let (degraded, record) = replay(&cube, meta)?;
            write_cube(&degraded, &args.out)?;
            write_json(&metadata_path(&args.out), &read_record(meta)?)?;
            (degraded, record)
        }
        (None, Some(kind)) => {
            let kind = degradation_from_args(kind, &args)?;
            kind.validate()?;
            degrade_and_record(&cube, &DegradationSpec::new(kind, args.seed), &args.out)?
        }
        (None, None) => {
            return Err(Error::Argument(
                "either --type or --replay is required".into(),
            ))
        }
    };
    for w in &record.sampled.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "{} ({}) seed {} -> {}",
        record.spec.kind.name(),
        record.spec.kind.params_label(),
        record.spec.seed,
        args.out.display()
    );
    if let Some(bands) = &args.preview {
        if bands.len() != 3 {
            return Err(Error::Argument(format!(
                "--preview takes three bands, got {}",
                bands.len()
            )));
        }
        let path = args.out.with_extension("ppm");
        export_preview(&degraded, (bands[0], bands[1], bands[2]), &path)?;
        log::info!("preview -> {}", path.display());
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let data = read_dataset(&args.data)?;
    let config: SstcConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => SstcConfig::default(),
    };
    let config = config.with_data_shape(data.cube.bands(), data.labels.classes());
    let mut model = SstcModel::new(config)?;
    let report = train_model(&mut model, &data.cube, &data.labels, &data.split.train)?;
    for (e, (l, a)) in report
        .epoch_loss
        .iter()
        .zip(&report.epoch_accuracy)
        .enumerate()
    {
        log::info!(
            "epoch {}: loss {l:.4}, train accuracy {:.2}%",
            e + 1,
            100.0 * a
        );
    }
    save_checkpoint(&model, &args.out)?;
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    Ok(())
}

pub fn adapt(args: AdaptArgs) -> Result<()> {
    let mut model = load_checkpoint(&args.model)?;
    let data = read_dataset(&args.data)?;
    let cube = match &args.cube {
        Some(p) => read_cube(p)?,
        None => data.cube,
    };
    if (cube.height(), cube.width()) != (data.labels.height(), data.labels.width()) {
        return Err(Error::Shape(format!(
            "cube is {}x{} but the dataset is {}x{}",
            cube.height(),
            cube.width(),
            data.labels.height(),
            data.labels.width()
        )));
    }
    let config = AdaptConfig {
        tau: args.tau,
        top_fraction: args.top,
        lr: args.lr,
        steps: args.steps,
        batch_size: args.batch,
        reset_mode: args.reset.into(),
        seed: args.seed,
    };
    config.validate()?;
    let stream = target_stream(&data.split.target, config.seed);
    if let Some(p) = &args.unadapted {
        let probs = model.classify_pixels(&cube, &stream, config.batch_size.max(64))?;
        write_predictions(p, &argmax_rows(&probs))?;
    }
    let (predictions, report) = run_adaptation(&mut model, &cube, &stream, &config)?;
    log::info!(
        "{} predictions over {} batches",
        predictions.len(),
        report.batches.len()
    );
    write_predictions(&args.out, &predictions)?;
    write_json(&args.report, &report)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let data = read_dataset(&args.data)?;
    let predictions = read_predictions(&args.preds)?;
    let pixels = match &args.report {
        Some(p) => read_json::<AdaptReport>(p)?.stream,
        None => data.split.target.clone(),
    };
    if predictions.len() != pixels.len() {
        return Err(Error::Format {
            path: args.preds.clone(),
            message: format!(
                "{} predictions for {} pixels",
                predictions.len(),
                pixels.len()
            ),
        });
    }
    let evaluation = evaluate(&predictions, &data.labels, &pixels)?;
    log::info!(
        "OA {:.2}  AA {:.2}  Kappa {:.2}",
        100.0 * evaluation.oa,
        100.0 * evaluation.aa,
        100.0 * evaluation.kappa
    );
    match &args.out {
        Some(p) => write_json(p, &evaluation),
        None => {
            println!("{}", serde_json::to_string_pretty(&evaluation)?);
            Ok(())
        }
    }
}

pub fn report(args: ReportArgs) -> Result<()> {
    let report = read_report(&args.run.join("report.json"))?;
    let out = args.out.as_deref().unwrap_or(&args.run);
    write_report_files(out, &report)?;
    print!("{}", render_markdown(&report));
    Ok(())
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut plan: ExperimentPlan = read_config(&args.plan)?;
    if let Some(r) = args.repeats {
        plan.repeats = r;
    }
    if let Some(out) = args.out {
        plan.output_dir = out;
    }
    let report = run_experiment(&plan)?;
    print!("{}", render_markdown(&report));
    Ok(())
}
