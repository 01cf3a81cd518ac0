use std::fs;
use std::path::Path;

use gradps::dataset::{load_dataset, DatasetObject, LoadOptions};
use gradps::evaluate::{evaluate, run_baseline, EvalOptions, SUMMARY_FILE};
use gradps::net::{Model, NetConfig};
use gradps::synth::{generate_dataset, BrdfSpec, NoiseSpec, SurfaceKind, SurfaceSpec};
use gradps::Error;

fn surfaces(size: usize) -> Vec<SurfaceSpec> {
    vec![
        SurfaceSpec::sphere(size, 0.45 * size as f64),
        SurfaceSpec {
            kind: SurfaceKind::SinusoidalBumps {
                amplitude: 3.0,
                frequency: 0.05,
            },
            height: size,
            width: size,
        },
    ]
}

fn render_to(dir: &Path, brdf: &BrdfSpec, noise: &NoiseSpec) -> Vec<DatasetObject> {
    generate_dataset(&surfaces(32), 12, brdf, noise, dir).unwrap().objects
}

#[test]
fn generated_dataset_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let written = render_to(dir.path(), &BrdfSpec::lambertian(0.7), &NoiseSpec::gaussian(0.01, 3));
    let loaded = load_dataset(dir.path(), LoadOptions::default()).unwrap();
    assert_eq!(written, loaded);
    let single = load_dataset(&dir.path().join(&written[0].name), LoadOptions { deterministic: true, ..Default::default() }).unwrap();
    assert_eq!(single[0], written[0]);
}

#[test]
fn missing_mask_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let objects = render_to(dir.path(), &BrdfSpec::lambertian(0.7), &NoiseSpec::none());
    let object_dir = dir.path().join(&objects[0].name);
    fs::remove_file(object_dir.join("mask.png")).unwrap();
    assert!(matches!(
        load_dataset(&object_dir, LoadOptions::default()),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn gt_scored_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = render_to(&dir.path().join("data"), &BrdfSpec::lambertian(0.7), &NoiseSpec::none());
    let out = dir.path().join("eval");
    let options = EvalOptions {
        gt_as_prediction: true,
        ..Default::default()
    };
    let summary = evaluate(Path::new("unused"), &data, &out, &options).unwrap();
    assert_eq!(summary.average_mae, 0.0);
    assert_eq!(summary.average_err15, 1.0);
    assert_eq!(summary.average_err30, 1.0);
    for o in &data {
        assert!(out.join(format!("{}.report.txt", o.name)).exists());
        assert!(out.join(format!("{}.error.png", o.name)).exists());
    }
    let table = fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Metric", "00_sphere", "01_bumps", "Avg."]);
    assert_eq!(table.lines().count(), 4);
}

/// Rewrites the per-image text files of an object in a shuffled order.
fn permute_on_disk(dir: &Path, order: &[usize]) {
    for file in ["filenames.txt", "light_directions.txt", "light_intensities.txt"] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let permuted: Vec<&str> = order.iter().map(|&j| lines[j]).collect();
        fs::write(&path, permuted.join("\n") + "\n").unwrap();
    }
}

#[test]
fn image_order_on_disk_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    render_to(&data_dir, &BrdfSpec::lambertian(0.7), &NoiseSpec::none());
    let checkpoint = dir.path().join("model.ckpt");
    Model::new(NetConfig {
        base_channels: 8,
        ..NetConfig::default()
    })
    .unwrap()
    .save(&checkpoint)
    .unwrap();

    let options = EvalOptions::default();
    let data = load_dataset(&data_dir, LoadOptions::default()).unwrap();
    let before = evaluate(&checkpoint, &data, &dir.path().join("a"), &options).unwrap();

    let order = [5, 0, 11, 3, 8, 1, 10, 2, 7, 4, 9, 6];
    for o in &data {
        permute_on_disk(&data_dir.join(&o.name), &order);
    }
    let shuffled = load_dataset(&data_dir, LoadOptions::default()).unwrap();
    assert_ne!(shuffled[0].stack, data[0].stack);
    let after = evaluate(&checkpoint, &shuffled, &dir.path().join("b"), &options).unwrap();
    for (a, b) in before.objects.iter().zip(&after.objects) {
        assert!((a.report.mae_degrees - b.report.mae_degrees).abs() < 1e-5);
        assert!((a.report.err15 - b.report.err15).abs() < 1e-5);
        assert!((a.report.err30 - b.report.err30).abs() < 1e-5);
    }
}

#[test]
fn evaluate_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = render_to(&dir.path().join("data"), &BrdfSpec::lambertian(0.7), &NoiseSpec::none());
    let checkpoint = dir.path().join("model.ckpt");
    Model::new(NetConfig {
        base_channels: 8,
        ..NetConfig::default()
    })
    .unwrap()
    .save(&checkpoint)
    .unwrap();
    let options = EvalOptions {
        expected_config: Some(NetConfig {
            base_channels: 16,
            ..NetConfig::default()
        }),
        ..Default::default()
    };
    assert!(matches!(
        evaluate(&checkpoint, &data, &dir.path().join("eval"), &options),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn baseline_is_exact_on_noiseless_lambertian_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = render_to(&dir.path().join("data"), &BrdfSpec::lambertian(0.7), &NoiseSpec::none());
    let summary = run_baseline(&data, &dir.path().join("out")).unwrap();
    assert!(summary.average_mae < 0.5, "{}", summary.average_mae);
}

#[test]
fn baseline_degrades_with_noise() {
    let dir = tempfile::tempdir().unwrap();
    let clean = render_to(&dir.path().join("clean"), &BrdfSpec::lambertian(0.7), &NoiseSpec::gaussian(0.0, 4));
    let noisy = render_to(&dir.path().join("noisy"), &BrdfSpec::lambertian(0.7), &NoiseSpec::gaussian(0.01, 4));
    let a = run_baseline(&clean, &dir.path().join("a")).unwrap().average_mae;
    let b = run_baseline(&noisy, &dir.path().join("b")).unwrap().average_mae;
    assert!(b.is_finite() && b > a, "{a} vs {b}");
}

#[test]
fn baseline_degrades_on_specular_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let matte = render_to(&dir.path().join("matte"), &BrdfSpec::lambertian(0.6), &NoiseSpec::none());
    let shiny = render_to(&dir.path().join("shiny"), &BrdfSpec::blinn_phong(0.6, 0.4, 30.0), &NoiseSpec::none());
    let a = run_baseline(&matte, &dir.path().join("a")).unwrap().average_mae;
    let b = run_baseline(&shiny, &dir.path().join("b")).unwrap().average_mae;
    assert!(b > a, "{a} vs {b}");
}

#[test]
fn baseline_requires_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = render_to(&dir.path().join("data"), &BrdfSpec::lambertian(0.7), &NoiseSpec::none());
    data[1].gt = None;
    assert!(matches!(
        run_baseline(&data, &dir.path().join("out")),
        Err(Error::NoGroundTruth(_))
    ));
}
