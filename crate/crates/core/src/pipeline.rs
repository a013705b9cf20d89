//! Seeded end-to-end runs: dataset generation, two-phase training, CAM export,
//! evaluation and the method-ordering check.
//!
//! Every step that writes to a directory also writes its effective
//! configuration there as `run_config.json` (or `cam_config.json` for CAM
//! export), so each output directory describes how it was produced.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{
    argmax_rows, predict, predict_backbone, train_backbone, train_gap_head, AugmentConfig, ModelSpec, TrainConfig,
    TrainLog,
};
use crate::cam::{default_gradcam_tap, grad_cam, hrcam, normalize_cam, zhou_cam, CamMap, CamMethod};
use crate::error::{Error, Result};
use crate::eval::{classification_accuracy, evaluate_method, thresholds, EvalMetrics, Rates, ThresholdRow};
use crate::io::container::encode_model;
use crate::io::{read_model, read_pgm, read_tensor_file, write_pgm, write_tensor_file, GrayImage, ModelFile};
use crate::mask::Mask;
use crate::simdata::{generate_dataset, load_dataset, load_sample, read_manifest, write_dataset, Manifest, SimConfig, Split};
use crate::tensor::Tensor;

pub const CONFIG_ECHO: &str = "run_config.json";
pub const CAM_ECHO: &str = "cam_config.json";
pub const MODEL_FILE: &str = "model.hrm";
pub const TRAIN_LOG: &str = "train_log.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MEAN_ROW: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CamConfig {
    pub methods: Vec<CamMethod>,
    /// Grad-CAM tap index; `None` selects the penultimate tap.
    pub gradcam_layer: Option<usize>,
    /// Class whose map is evaluated against the lesion masks.
    pub class_id: usize,
}

impl Default for CamConfig {
    fn default() -> Self {
        CamConfig { methods: CamMethod::ALL.to_vec(), gradcam_layer: None, class_id: 1 }
    }
}

/// Everything a run depends on. Re-running one config reproduces every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub model: ModelSpec,
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
    pub cam: CamConfig,
    /// Also store exact `f32` images next to the 8-bit PGMs, and train on those.
    pub raw_images: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        RunConfig {
            model: ModelSpec::desk(&[16, 32, 64], sim.image_size, false),
            phase1: TrainConfig {
                epochs: 8,
                batch_size: 16,
                seed: 1,
                augmentation: AugmentConfig::standard(sim.image_size),
                ..TrainConfig::default()
            },
            phase2: TrainConfig { epochs: 100, batch_size: 16, seed: 2, ..TrainConfig::default() },
            cam: CamConfig::default(),
            raw_images: false,
            output_dir: PathBuf::from("hrcam-run"),
            sim,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let taps = self.model.tap_set()?;
        self.phase1.validate()?;
        self.phase2.validate()?;
        let n = self.sim.image_size;
        if self.model.input_shape != [1, n, n] {
            return Err(Error::config(format!(
                "model input shape {:?} does not match {n}x{n} single-channel images",
                self.model.input_shape
            )));
        }
        if self.model.class_count < 2 {
            return Err(Error::config("the dataset has two classes"));
        }
        check_cam_request(&self.model, &taps, self.cam.class_id, self.cam.gradcam_layer)?;
        if self.cam.methods.is_empty() {
            return Err(Error::config("no CAM methods selected"));
        }
        let mut seen = self.cam.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.cam.methods.len() {
            return Err(Error::config("CAM methods listed more than once"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.output_dir.join("model")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }

    pub fn cam_dir(&self) -> PathBuf {
        self.output_dir.join("cams")
    }
}

fn check_cam_request(spec: &ModelSpec, taps: &crate::backbone::TapSet, class_id: usize, layer: Option<usize>) -> Result<()> {
    if class_id >= spec.class_count {
        return Err(Error::input(format!("class {class_id} out of range for {} classes", spec.class_count)));
    }
    if let Some(l) = layer {
        if l >= taps.len() {
            return Err(Error::input(format!("layer {l} out of range for {} taps", taps.len())));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(CONFIG_ECHO), cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generates the dataset of `cfg.sim` into `dir`.
pub fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.sim)?;
    create_dir(dir)?;
    let manifest = write_dataset(&ds, dir, cfg.raw_images)?;
    echo_config(dir, cfg)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase1: TrainLog,
    pub phase2: TrainLog,
    pub backbone_checksum_before_phase2: String,
    pub backbone_checksum_after_phase2: String,
    pub backbone_frozen: bool,
    /// SHA-256 of the model file.
    pub model_checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Backbone,
    Head,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Backbone => "phase 1",
            Phase::Head => "phase 2",
        })
    }
}

/// Per-epoch progress: phase, epoch index, mean loss, training accuracy.
pub type Progress<'a> = &'a mut dyn FnMut(Phase, usize, f64, f64);

fn load_matching_dataset(cfg: &RunConfig, data_dir: &Path) -> Result<crate::simdata::SimDataset> {
    let manifest = read_manifest(data_dir)?;
    if manifest.config != cfg.sim {
        return Err(Error::config(format!(
            "dataset in {} was generated with a different simulation config",
            data_dir.display()
        )));
    }
    load_dataset(data_dir)
}

/// Phase 1 then phase 2 on the training split; writes the model and training log to `out_dir`.
pub fn train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, progress: Progress) -> Result<TrainReport> {
    cfg.validate()?;
    let ds = load_matching_dataset(cfg, data_dir)?;
    let spec = &cfg.model;
    let (params, phase1) =
        train_backbone::<f32>(&ds.train, spec, &cfg.phase1, |e, l, a| progress(Phase::Backbone, e, l, a))?;
    let taps = spec.tap_set()?;
    let before = params.checksum();
    let (head, phase2) =
        train_gap_head(&ds.train, &params, spec, &taps, &cfg.phase2, |e, l, a| progress(Phase::Head, e, l, a))?;
    let after = params.checksum();
    let model = ModelFile { spec: spec.clone(), taps, params, head: Some(head) };
    let bytes = encode_model(&model)?;
    echo_config(out_dir, cfg)?;
    let path = out_dir.join(MODEL_FILE);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    let report = TrainReport {
        phase1,
        phase2,
        backbone_frozen: before == after,
        backbone_checksum_before_phase2: before,
        backbone_checksum_after_phase2: after,
        model_checksum: sha256_hex(&bytes),
    };
    write_json(&out_dir.join(TRAIN_LOG), &report)?;
    Ok(report)
}

/// Raw (unnormalized) map of one `[1, H, W]` image.
pub fn compute_cam(
    model: &ModelFile<f32>,
    method: CamMethod,
    image: &Tensor<f32>,
    class_id: usize,
    layer: Option<usize>,
) -> Result<CamMap<f32>> {
    let spec = &model.spec;
    match method {
        CamMethod::HrCam => {
            let head = model.head.as_ref().ok_or_else(|| Error::Usage("model file has no phase-2 head".into()))?;
            hrcam(image, &model.params, spec, &model.taps, head, class_id)
        }
        CamMethod::Zhou => zhou_cam(image, &model.params, spec, class_id),
        CamMethod::GradCam => grad_cam(image, &model.params, spec, class_id, layer),
    }
}

const PREDICT_CHUNK: usize = 50;

fn predictions(
    model: &ModelFile<f32>,
    images: &[&Tensor<f32>],
    f: impl Fn(&ModelFile<f32>, &Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for part in images.chunks(PREDICT_CHUNK) {
        out.extend(argmax_rows(&f(model, &Tensor::stack(part)?)?));
    }
    Ok(out)
}

/// Test-set accuracies of the phase-1 classifier and the phase-2 head.
pub fn accuracies(model: &ModelFile<f32>, samples: &[crate::simdata::Sample]) -> Result<(f64, f64)> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let head = model.head.as_ref().ok_or_else(|| Error::Usage("model file has no phase-2 head".into()))?;
    let backbone = predictions(model, &images, |m, x| predict_backbone(&m.params, &m.spec, x))?;
    let gap_head = predictions(model, &images, |m, x| predict(&m.params, &m.spec, &m.taps, head, x))?;
    Ok((classification_accuracy(&backbone, &labels)?, classification_accuracy(&gap_head, &labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: CamMethod,
    pub evaluated: usize,
    /// Ids of abnormal samples whose mask left the metrics undefined.
    pub skipped: Vec<usize>,
    pub means: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub backbone_accuracy: f64,
    pub gap_head_accuracy: f64,
    pub test_samples: usize,
    pub abnormal_test_samples: usize,
    pub class_id: usize,
    pub gradcam_layer: usize,
    pub methods: Vec<MethodSummary>,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub metrics: Vec<(CamMethod, EvalMetrics)>,
}

/// Localization metrics of every configured method on the abnormal test samples,
/// plus both test accuracies. Writes `metrics.csv` and `summary.json` to `out_dir`.
pub fn evaluate(cfg: &RunConfig, model_path: &Path, data_dir: &Path, out_dir: &Path, threads: usize) -> Result<EvalReport> {
    cfg.validate()?;
    let model = read_model::<f32>(model_path)?;
    if model.spec != cfg.model {
        return Err(Error::config(format!("{} was trained with a different model spec", model_path.display())));
    }
    let ds = load_matching_dataset(cfg, data_dir)?;
    let abnormal = ds.abnormal_test().count();
    if abnormal == 0 {
        return Err(Error::Data("the test split has no abnormal samples".into()));
    }
    let (backbone_accuracy, gap_head_accuracy) = accuracies(&model, &ds.test)?;
    let class_id = cfg.cam.class_id;
    let layer = cfg.cam.gradcam_layer;
    let mut metrics = Vec::new();
    let mut methods = Vec::new();
    for &method in &cfg.cam.methods {
        let r = evaluate_method(&ds.test, threads, |s| compute_cam(&model, method, &s.image, class_id, layer))?;
        methods.push(MethodSummary { method, evaluated: r.evaluated, skipped: r.skipped, means: r.metrics.means });
        metrics.push((method, r.metrics));
    }
    let summary = EvalSummary {
        backbone_accuracy,
        gap_head_accuracy,
        test_samples: ds.test.len(),
        abnormal_test_samples: abnormal,
        class_id,
        gradcam_layer: layer.unwrap_or_else(|| default_gradcam_tap(&model.taps)),
        methods,
        config: cfg.clone(),
    };
    echo_config(out_dir, cfg)?;
    write_metrics_csv(&out_dir.join(METRICS_CSV), &metrics)?;
    write_json(&out_dir.join(SUMMARY_JSON), &summary)?;
    Ok(EvalReport { summary, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    method: String,
    threshold: String,
    sensitivity: f64,
    specificity: f64,
    precision: f64,
    fallout: f64,
}

impl CsvRow {
    fn new(method: CamMethod, threshold: String, r: &Rates) -> Self {
        CsvRow {
            method: method.name().to_string(),
            threshold,
            sensitivity: r.sensitivity,
            specificity: r.specificity,
            precision: r.precision,
            fallout: r.fallout,
        }
    }

    fn rates(&self) -> Rates {
        Rates {
            sensitivity: self.sensitivity,
            specificity: self.specificity,
            precision: self.precision,
            fallout: self.fallout,
        }
    }
}

/// Nine threshold rows and one `mean` row per method. Values use the shortest
/// representation that reads back to the same `f64`.
pub fn write_metrics_csv(path: &Path, metrics: &[(CamMethod, EvalMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (method, m) in metrics {
        for row in &m.per_threshold {
            w.serialize(CsvRow::new(*method, row.threshold.to_string(), &row.rates))?;
        }
        w.serialize(CsvRow::new(*method, MEAN_ROW.to_string(), &m.means))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of a metrics CSV, grouped by method in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub methods: Vec<(CamMethod, MethodRows)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodRows {
    pub per_threshold: Vec<ThresholdRow>,
    pub means: Option<Rates>,
}

impl MetricsTable {
    pub fn get(&self, method: CamMethod) -> Option<&MethodRows> {
        self.methods.iter().find(|(m, _)| *m == method).map(|(_, r)| r)
    }

    /// Full per-method metrics; every method needs all nine threshold rows and a mean row.
    pub fn to_metrics(&self) -> Result<Vec<(CamMethod, EvalMetrics)>> {
        self.methods
            .iter()
            .map(|(m, rows)| {
                let ts: Vec<f64> = rows.per_threshold.iter().map(|r| r.threshold).collect();
                match rows.means {
                    Some(means) if ts == thresholds() => {
                        Ok((*m, EvalMetrics { per_threshold: rows.per_threshold.clone(), means }))
                    }
                    _ => Err(Error::Data(format!("{m}: expected nine threshold rows and a mean row"))),
                }
            })
            .collect()
    }
}

pub fn read_metrics_csv(path: &Path) -> Result<MetricsTable> {
    let mut r = csv::Reader::from_path(path)?;
    let mut table = MetricsTable::default();
    for row in r.deserialize::<CsvRow>() {
        let row = row?;
        let method: CamMethod = row.method.parse().map_err(|_| Error::Data(format!("unknown method {:?}", row.method)))?;
        let idx = match table.methods.iter().position(|(m, _)| *m == method) {
            Some(i) => i,
            None => {
                table.methods.push((method, MethodRows::default()));
                table.methods.len() - 1
            }
        };
        let entry = &mut table.methods[idx].1;
        if row.threshold == MEAN_ROW {
            entry.means = Some(row.rates());
        } else {
            let threshold: f64 =
                row.threshold.parse().map_err(|_| Error::Data(format!("bad threshold {:?}", row.threshold)))?;
            entry.per_threshold.push(ThresholdRow { threshold, rates: row.rates() });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingCheck {
    pub metric: &'static str,
    /// Expected direction: HR-CAM highest for most metrics, lowest for fall-out.
    pub higher_is_better: bool,
    pub hrcam: f64,
    pub gradcam: f64,
    pub zhou: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub checks: Vec<OrderingCheck>,
}

impl CompareReport {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8} {:>8} {:>8}  expected", "metric", "hrcam", "gradcam", "zhou")?;
        for c in &self.checks {
            let rel = if c.higher_is_better { ">=" } else { "<=" };
            writeln!(
                f,
                "{:<12} {:>8.4} {:>8.4} {:>8.4}  hrcam {rel} gradcam {rel} zhou: {}",
                c.metric,
                c.hrcam,
                c.gradcam,
                c.zhou,
                if c.holds { "ok" } else { "VIOLATED" }
            )?;
        }
        write!(f, "ordering {}", if self.holds() { "holds" } else { "violated" })
    }
}

/// Non-strict ordering of the three methods' means: HR-CAM >= Grad-CAM >= Zhou for
/// sensitivity, specificity and precision, and the reverse for fall-out.
pub fn compare_means(means: &BTreeMap<CamMethod, Rates>) -> Result<CompareReport> {
    let get = |m: CamMethod| means.get(&m).ok_or_else(|| Error::input(format!("no mean row for {m}")));
    let (h, g, z) = (get(CamMethod::HrCam)?, get(CamMethod::GradCam)?, get(CamMethod::Zhou)?);
    let metrics: [(&'static str, bool, fn(&Rates) -> f64); 4] = [
        ("sensitivity", true, |r| r.sensitivity),
        ("specificity", true, |r| r.specificity),
        ("precision", true, |r| r.precision),
        ("fallout", false, |r| r.fallout),
    ];
    let checks = metrics
        .into_iter()
        .map(|(metric, higher_is_better, f)| {
            let (hv, gv, zv) = (f(h), f(g), f(z));
            let holds = if higher_is_better { hv >= gv && gv >= zv } else { hv <= gv && gv <= zv };
            OrderingCheck { metric, higher_is_better, hrcam: hv, gradcam: gv, zhou: zv, holds }
        })
        .collect();
    Ok(CompareReport { checks })
}

pub fn compare_csv(path: &Path) -> Result<CompareReport> {
    let table = read_metrics_csv(path)?;
    let means = table.methods.iter().filter_map(|(m, rows)| rows.means.map(|r| (*m, r))).collect();
    compare_means(&means)
}

/// One image to export maps for.
#[derive(Debug, Clone)]
pub struct CamInput {
    pub name: String,
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub mask: Option<Mask>,
}

/// Loads a single image from a PGM or HRT1 file.
pub fn cam_input_from_file(path: &Path) -> Result<CamInput> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let image = match path.extension().and_then(|e| e.to_str()) {
        Some("hrt") => {
            let t = read_tensor_file::<f32>(path)?;
            match t.rank() {
                2 => {
                    let s = t.shape().to_vec();
                    t.reshape(&[1, s[0], s[1]])?
                }
                _ => t,
            }
        }
        _ => {
            let img = read_pgm(path)?;
            Tensor::new(vec![1, img.height, img.width], img.to_unit().map(|v| v as f32).collect())?
        }
    };
    Ok(CamInput { name, image, mask: None })
}

/// Loads samples of one split; `ids` selects specific sample ids, `limit` caps the count.
pub fn cam_inputs_from_dataset(dir: &Path, split: Split, ids: &[usize], limit: Option<usize>) -> Result<Vec<CamInput>> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::new();
    for e in manifest.samples.iter().filter(|e| e.split == split) {
        if !ids.is_empty() && !ids.contains(&e.id) {
            continue;
        }
        if limit.is_some_and(|l| out.len() >= l) {
            break;
        }
        let s = load_sample(dir, e)?;
        out.push(CamInput { name: format!("s{:05}", s.id), image: s.image, mask: Some(s.mask) });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no matching samples in {}", dir.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamRequest {
    pub methods: Vec<CamMethod>,
    /// `None` uses the class predicted by the phase-2 head (the phase-1 classifier without one).
    pub class_id: Option<usize>,
    pub layer: Option<usize>,
    /// Also dump the raw map as an HRT1 tensor.
    pub raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CamOutput {
    pub input: String,
    pub method: CamMethod,
    pub class_id: usize,
    pub map: PathBuf,
    pub strip: PathBuf,
    pub raw: Option<PathBuf>,
}

fn predicted_class(model: &ModelFile<f32>, image: &Tensor<f32>) -> Result<usize> {
    let [c, h, w] = model.spec.input_shape;
    let x = image.clone().reshape(&[1, c, h, w])?;
    let probs = match &model.head {
        Some(head) => predict(&model.params, &model.spec, &model.taps, head, &x)?,
        None => predict_backbone(&model.params, &model.spec, &x)?,
    };
    Ok(argmax_rows(&probs)[0])
}

fn unit_image(t: &Tensor<f32>) -> Result<GrayImage> {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if t.len() != h * w {
        return Err(Error::input("only single-channel images can be exported"));
    }
    Ok(GrayImage::from_unit(w, h, t.data().iter().map(|&v| v as f64)))
}

/// Writes one normalized map per input and method (`<name>_<method>.pgm`), a
/// composite strip of input, mask (when known) and map (`<name>_<method>_strip.pgm`),
/// and with `raw` the unnormalized map (`<name>_<method>.hrt`).
pub fn export_cams(
    model: &ModelFile<f32>,
    inputs: &[CamInput],
    req: &CamRequest,
    out_dir: &Path,
) -> Result<Vec<CamOutput>> {
    if req.methods.is_empty() {
        return Err(Error::input("no CAM methods selected"));
    }
    if let Some(c) = req.class_id {
        check_cam_request(&model.spec, &model.taps, c, req.layer)?;
    } else {
        check_cam_request(&model.spec, &model.taps, 0, req.layer)?;
    }
    create_dir(out_dir)?;
    write_json(&out_dir.join(CAM_ECHO), req)?;
    let mut outputs = Vec::new();
    for input in inputs {
        let class_id = match req.class_id {
            Some(c) => c,
            None => predicted_class(model, &input.image)?,
        };
        let input_img = unit_image(&input.image)?;
        for &method in &req.methods {
            let raw = compute_cam(model, method, &input.image, class_id, req.layer)?;
            let norm = normalize_cam(&raw);
            let stem = format!("{}_{}", input.name, method);
            let map_img = unit_image(&norm.values)?;
            let map = out_dir.join(format!("{stem}.pgm"));
            write_pgm(&map, &map_img)?;
            let mask_img = input.mask.as_ref().map(|m| GrayImage {
                width: m.width(),
                height: m.height(),
                pixels: m.data().iter().map(|&b| if b { 255 } else { 0 }).collect(),
            });
            let mut panels = vec![&input_img];
            panels.extend(mask_img.as_ref());
            panels.push(&map_img);
            let strip = out_dir.join(format!("{stem}_strip.pgm"));
            write_pgm(&strip, &GrayImage::hstack(&panels, 2))?;
            let raw_path = if req.raw {
                let p = out_dir.join(format!("{stem}.hrt"));
                write_tensor_file(&p, &raw.values)?;
                Some(p)
            } else {
                None
            };
            outputs.push(CamOutput { input: input.name.clone(), method, class_id, map, strip, raw: raw_path });
        }
    }
    Ok(outputs)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub train: TrainReport,
    pub eval: EvalReport,
    pub compare: Option<CompareReport>,
}

/// Generation, training and evaluation under `cfg.output_dir` (`data/`, `model/`, `eval/`).
pub fn run_all(cfg: &RunConfig, threads: usize, progress: Progress) -> Result<RunReport> {
    cfg.validate()?;
    echo_config(&cfg.output_dir, cfg)?;
    gen_data(cfg, &cfg.data_dir())?;
    let train = train(cfg, &cfg.data_dir(), &cfg.model_dir(), progress)?;
    let eval = evaluate(cfg, &cfg.model_dir().join(MODEL_FILE), &cfg.data_dir(), &cfg.eval_dir(), threads)?;
    let means: BTreeMap<CamMethod, Rates> = eval.metrics.iter().map(|(m, e)| (*m, e.means)).collect();
    let compare = if means.len() == CamMethod::ALL.len() { Some(compare_means(&means)?) } else { None };
    Ok(RunReport { train, eval, compare })
}
