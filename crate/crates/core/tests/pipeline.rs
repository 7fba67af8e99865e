use std::fs;

use hypertta::bench::{run_experiment, DatasetSource, ExperimentPlan, SyntheticSpec};
use hypertta::cela::AdaptConfig;
use hypertta::degrade::{Degradation, DegradationSpec};
use hypertta::sstc::SstcConfig;

fn plan(out: &std::path::Path, degradations: Vec<DegradationSpec>) -> ExperimentPlan {
    ExperimentPlan {
        dataset: DatasetSource::Synthetic {
            spec: SyntheticSpec {
                height: 20,
                width: 20,
                bands: 8,
                classes: 3,
                regions: 10,
                seed: 3,
                ..SyntheticSpec::default()
            },
        },
        train_fraction: 0.3,
        seed: 3,
        sstc: SstcConfig {
            patch_size: 3,
            kernel_sizes: vec![1, 3],
            branch_channels: 4,
            projected_dims: vec![4, 4],
            heads: 2,
            layers: 1,
            epochs: 4,
            batch_size: 32,
            seed: 3,
            ..SstcConfig::default()
        },
        adapt: AdaptConfig {
            batch_size: 32,
            ..AdaptConfig::default()
        },
        degradations,
        output_dir: out.to_path_buf(),
        repeats: 1,
    }
}

#[test]
fn nine_specs_give_nine_rows_and_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let specs = DegradationSpec::pavia_set(5, (2, 4), (2, 4));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report = run_experiment(&plan(&a, specs.clone())).unwrap();
    run_experiment(&plan(&b, specs)).unwrap();
    assert_eq!(report.results.len(), 9);
    let csv_a = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("results.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("results.md")).unwrap(),
        fs::read(b.join("results.md")).unwrap()
    );
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 10);
    let audit = &report.repeats[0].audit;
    assert_eq!((audit.overlap, audit.evaluated_train_pixels), (0, 0));
    for entry in [
        "model.ckpt",
        "model.json",
        "data/split.json",
        "00_jpeg/degraded.degradation.json",
    ] {
        assert!(a.join("repeat0").join(entry).exists(), "{entry}");
    }
}

#[test]
fn near_identity_degradation_keeps_clean_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DegradationSpec::new(Degradation::ZeroMeanGaussian { sigma: 1e-12 }, 1);
    let report = run_experiment(&plan(dir.path(), vec![spec])).unwrap();
    let clean = report.repeats[0].clean.oa;
    let base = report.results[0].unadapted.oa;
    assert!((clean - base).abs() <= 0.005, "clean {clean} vs {base}");
}

#[test]
fn repeats_shift_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DegradationSpec::new(Degradation::SaltPepper { p: 0.05 }, 8);
    let mut p = plan(dir.path(), vec![spec]);
    p.repeats = 2;
    let report = run_experiment(&p).unwrap();
    assert_eq!(report.results.len(), 2);
    assert_eq!(report.results[1].seed, 9);
    assert_eq!(report.repeats[1].audit.split_seed, 4);
    let md = fs::read_to_string(dir.path().join("results.md")).unwrap();
    assert!(md.contains(" ± "));
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    // Deadline spans cannot fit in a 20-pixel-wide scene.
    let spec = DegradationSpec::new(Degradation::Deadline { a: 30, b: 35 }, 1);
    let err = run_experiment(&plan(dir.path(), vec![spec])).unwrap_err();
    assert!(err.to_string().contains("deadline"), "{err}");
    assert!(dir.path().join("repeat0/model.ckpt").exists());
}
