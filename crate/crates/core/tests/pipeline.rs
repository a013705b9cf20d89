use std::path::Path;

use hrcam_core::backbone::network::{argmax_rows, predict_backbone};
use hrcam_core::backbone::{build_model, train_backbone, AugmentConfig, ModelSpec, TrainConfig};
use hrcam_core::cam::CamMethod;
use hrcam_core::io::{read_model, read_pgm, read_tensor_file};
use hrcam_core::mask::Mask;
use hrcam_core::pipeline::{
    self, cam_inputs_from_dataset, compare_csv, export_cams, read_metrics_csv, write_metrics_csv, CamRequest,
    RunConfig, METRICS_CSV, MODEL_FILE, SUMMARY_JSON,
};
use hrcam_core::simdata::{LesionKind, Sample, SimConfig, Split};
use hrcam_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        sim: SimConfig { image_size: 32, per_class_count: 16, train_count: 20, test_count: 12, ..SimConfig::default() },
        model: ModelSpec::desk(&[4, 6, 8], 32, false),
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.phase1.epochs = 2;
    cfg.phase1.batch_size = 8;
    cfg.phase1.augmentation = AugmentConfig::standard(32);
    cfg.phase2.epochs = 3;
    cfg.phase2.batch_size = 8;
    cfg
}

/// Bright 3x3 square on a blank 8x8 frame for label 1, blank frame for label 0.
fn separable_samples(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|id| {
            let label = id % 2;
            let mut image = Tensor::zeros(&[1, 8, 8]);
            let mut mask = Mask::empty(8, 8);
            if label == 1 {
                let (y0, x0) = (1 + id % 4, 1 + (id / 2) % 4);
                for y in y0..y0 + 3 {
                    for x in x0..x0 + 3 {
                        image.set(&[0, y, x], 1.0);
                        mask.set(y, x, true);
                    }
                }
            }
            let kind = if label == 1 { LesionKind::Localized } else { LesionKind::None };
            Sample { id, image, label, mask, kind }
        })
        .collect()
}

#[test]
fn backbone_learns_a_separable_task() {
    let samples = separable_samples(20);
    let spec = ModelSpec::desk(&[8, 8], 8, false);
    let cfg = TrainConfig { learning_rate: 1e-2, epochs: 10, batch_size: 4, seed: 9, ..TrainConfig::default() };
    let mut epochs = 0;
    let (params, log) = train_backbone::<f64>(&samples, &spec, &cfg, |_, _, _| epochs += 1).unwrap();
    assert_eq!(epochs, 10);
    assert!(log.epoch_losses.last().unwrap() < log.epoch_losses.first().unwrap());
    let refs: Vec<Tensor<f64>> = samples.iter().map(|s| s.image.cast()).collect();
    let batch = Tensor::stack(&refs.iter().collect::<Vec<_>>()).unwrap();
    let predicted = argmax_rows(&predict_backbone(&params, &spec, &batch).unwrap());
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    assert_eq!(predicted, labels);
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let samples = separable_samples(8);
    let spec = ModelSpec::desk(&[4, 4], 8, true);
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 2, batch_size: 3, seed: 4, ..TrainConfig::default() };
    let (params, _) = train_backbone::<f32>(&samples, &spec, &cfg, |_, _, _| {}).unwrap();
    assert_eq!(params, build_model::<f32>(&spec, 4).unwrap().0);
}

#[test]
fn training_is_deterministic_under_seed() {
    let samples = separable_samples(12);
    let spec = ModelSpec::desk(&[4, 4], 8, false);
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 2, batch_size: 5, augmentation: AugmentConfig::standard(8), ..TrainConfig::default() };
    let a = train_backbone::<f32>(&samples, &spec, &cfg, |_, _, _| {}).unwrap();
    let b = train_backbone::<f32>(&samples, &spec, &cfg, |_, _, _| {}).unwrap();
    assert_eq!(a.0.checksum(), b.0.checksum());
    assert_eq!(a.1, b.1);
}

#[test]
fn tiny_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let report = pipeline::run_all(&cfg, 1, &mut |_, _, _, _| {}).unwrap();
    assert!(report.train.backbone_frozen);
    assert_eq!(report.train.phase1.epoch_losses.len(), 2);
    assert_eq!(report.train.phase2.epoch_losses.len(), 3);
    let summary = &report.eval.summary;
    assert_eq!(summary.test_samples, 12);
    assert_eq!(summary.abnormal_test_samples, 6);
    assert_eq!(summary.methods.len(), 3);
    for m in &summary.methods {
        assert_eq!(m.evaluated + m.skipped.len(), 6);
    }
    assert!(report.compare.is_some());
    for f in [METRICS_CSV, SUMMARY_JSON] {
        assert!(cfg.eval_dir().join(f).is_file(), "{f}");
    }

    // reloading the CSV gives back exactly the computed metrics
    let table = read_metrics_csv(&cfg.eval_dir().join(METRICS_CSV)).unwrap();
    assert_eq!(table.to_metrics().unwrap(), report.eval.metrics);
    assert_eq!(compare_csv(&cfg.eval_dir().join(METRICS_CSV)).unwrap(), report.compare.clone().unwrap());

    // more evaluation threads give the same bytes
    let again = tmp.path().join("eval-threads");
    pipeline::evaluate(&cfg, &cfg.model_dir().join(MODEL_FILE), &cfg.data_dir(), &again, 3).unwrap();
    assert_eq!(
        std::fs::read(again.join(METRICS_CSV)).unwrap(),
        std::fs::read(cfg.eval_dir().join(METRICS_CSV)).unwrap()
    );

    // exported maps match their input's size and read back within one grey level
    let model = read_model::<f32>(&cfg.model_dir().join(MODEL_FILE)).unwrap();
    let inputs = cam_inputs_from_dataset(&cfg.data_dir(), Split::Test, &[], Some(2)).unwrap();
    let req = CamRequest { methods: CamMethod::ALL.to_vec(), class_id: Some(1), layer: None, raw: true };
    let cams = tmp.path().join("cams");
    let outputs = export_cams(&model, &inputs, &req, &cams).unwrap();
    assert_eq!(outputs.len(), 6);
    for o in &outputs {
        let img = read_pgm(&o.map).unwrap();
        assert_eq!((img.width, img.height), (32, 32));
        assert_eq!(read_pgm(&o.strip).unwrap().width, 3 * 32 + 4);
        let raw = read_tensor_file::<f32>(o.raw.as_ref().unwrap()).unwrap();
        let lo = raw.min();
        let range = raw.max() - lo;
        for (p, v) in img.to_unit().zip(raw.data()) {
            let want = if range > 0.0 { ((v - lo) / range) as f64 } else { 0.0 };
            assert!((p - want).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn mismatched_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    pipeline::gen_data(&cfg, &cfg.data_dir()).unwrap();
    let mut other = cfg.clone();
    other.sim.seed = 77;
    let err = pipeline::train(&other, &cfg.data_dir(), &other.model_dir(), &mut |_, _, _, _| {}).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn metrics_csv_round_trips_awkward_floats() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sweeps: Vec<_> = (0..3)
        .map(|_| {
            let values: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
            let mask = Mask::from_vec(8, 8, (0..64).map(|i| i % 3 == 0).collect()).unwrap();
            let map = hrcam_core::cam::CamMap {
                values: Tensor::new(vec![8, 8], values).unwrap(),
                class_id: 1,
                method: CamMethod::HrCam,
                normalized: true,
            };
            hrcam_core::eval::sweep(&map, &mask).unwrap()
        })
        .collect();
    let agg = hrcam_core::eval::aggregate(&sweeps).unwrap();
    let metrics = vec![(CamMethod::HrCam, agg.clone()), (CamMethod::GradCam, sweeps[0].clone()), (CamMethod::Zhou, sweeps[1].clone())];
    let path = tmp.path().join(METRICS_CSV);
    write_metrics_csv(&path, &metrics).unwrap();
    assert_eq!(read_metrics_csv(&path).unwrap().to_metrics().unwrap(), metrics);
}
