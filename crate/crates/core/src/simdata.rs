//! Two-class simulated dataset: noisy flat backgrounds, with or without bright
//! localized or diffuse abnormalities, and exact binary ground-truth masks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::hrt::{read_tensor_file, write_tensor_file};
use crate::io::pgm::{read_pgm, write_pgm, GrayImage};
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian noise mean (added to the background level).
    pub mean: f64,
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { mean: 0.0, sigma: 0.08 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizedConfig {
    pub radius_min: f64,
    pub radius_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for LocalizedConfig {
    fn default() -> Self {
        LocalizedConfig { radius_min: 4.0, radius_max: 10.0, delta_min: 0.25, delta_max: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffuseConfig {
    pub speckles_min: usize,
    pub speckles_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Side of the square scatter region as a fraction of the image size.
    pub region_min_frac: f64,
    pub region_max_frac: f64,
}

impl Default for DiffuseConfig {
    fn default() -> Self {
        DiffuseConfig {
            speckles_min: 15,
            speckles_max: 40,
            radius_min: 1.0,
            radius_max: 2.0,
            delta_min: 0.25,
            delta_max: 0.5,
            region_min_frac: 0.3,
            region_max_frac: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub image_size: usize,
    pub per_class_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub background: f64,
    pub noise: NoiseConfig,
    /// Fraction of abnormal samples with a localized (rather than diffuse) lesion.
    pub lesion_mix: f64,
    pub localized: LocalizedConfig,
    pub diffuse: DiffuseConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            image_size: 64,
            per_class_count: 1000,
            train_count: 1500,
            test_count: 500,
            background: 0.3,
            noise: NoiseConfig::default(),
            lesion_mix: 0.5,
            localized: LocalizedConfig::default(),
            diffuse: DiffuseConfig::default(),
            seed: 0,
        }
    }
}

fn check_range(name: &str, lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::config(format!("{name}: invalid range [{lo}, {hi}]")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_count + self.test_count != 2 * self.per_class_count {
            return Err(Error::config(format!(
                "train_count + test_count = {} but two classes of {} give {}",
                self.train_count + self.test_count,
                self.per_class_count,
                2 * self.per_class_count
            )));
        }
        if self.train_count.div_ceil(2) > self.per_class_count {
            return Err(Error::config("train split larger than a class"));
        }
        if self.image_size < 4 {
            return Err(Error::config("image_size must be at least 4"));
        }
        if !(0.0..=1.0).contains(&self.lesion_mix) {
            return Err(Error::config("lesion_mix must lie in [0, 1]"));
        }
        if self.noise.sigma < 0.0 || !self.noise.sigma.is_finite() {
            return Err(Error::config("noise sigma must be finite and non-negative"));
        }
        let l = &self.localized;
        let d = &self.diffuse;
        check_range("localized radius", l.radius_min, l.radius_max)?;
        check_range("localized delta", l.delta_min, l.delta_max)?;
        check_range("diffuse radius", d.radius_min, d.radius_max)?;
        check_range("diffuse delta", d.delta_min, d.delta_max)?;
        check_range("diffuse region", d.region_min_frac, d.region_max_frac)?;
        if l.delta_min <= 0.0 || d.delta_min <= 0.0 {
            return Err(Error::config("lesion intensity deltas must be strictly positive"));
        }
        if l.radius_min <= 0.0 || d.radius_min <= 0.0 {
            return Err(Error::config("lesion radii must be positive"));
        }
        let max_r = l.radius_max.max(d.radius_max);
        if 2.0 * max_r + 1.0 > self.image_size as f64 {
            return Err(Error::config("lesion radius does not fit in the frame"));
        }
        if d.speckles_min < 5 || d.speckles_min > d.speckles_max {
            return Err(Error::config("diffuse speckle count range must start at 5 or more"));
        }
        if d.region_min_frac <= 0.0 || d.region_max_frac > 1.0 {
            return Err(Error::config("diffuse region fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionKind {
    None,
    Localized,
    Diffuse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// 0 = normal, 1 = abnormal.
    pub label: usize,
    pub mask: Mask,
    pub kind: LesionKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.distance(y, x) <= self.radius
    }

    fn distance(&self, y: usize, x: usize) -> f64 {
        ((y as f64 - self.cy).powi(2) + (x as f64 - self.cx).powi(2)).sqrt()
    }

    /// Intensity weight in `(0, 1]` inside the disk: full in the interior,
    /// tapering to one half over the outermost pixel. Zero outside.
    fn weight(&self, y: usize, x: usize) -> f64 {
        let d = self.distance(y, x);
        if d > self.radius {
            0.0
        } else {
            0.5 + 0.5 * (self.radius - d).min(1.0)
        }
    }
}

/// Hard mask, additive intensity field and the disks that made them.
#[derive(Debug, Clone)]
pub struct Lesion {
    pub mask: Mask,
    /// Row-major `H x W` intensity increments; positive exactly on the mask.
    pub delta: Vec<f64>,
    pub disks: Vec<Disk>,
}

fn paint(size: usize, disks: &[(Disk, f64)]) -> Lesion {
    let mut mask = Mask::empty(size, size);
    let mut delta = vec![0.0; size * size];
    for (disk, amp) in disks {
        let y0 = (disk.cy - disk.radius).floor().max(0.0) as usize;
        let y1 = ((disk.cy + disk.radius).ceil() as usize).min(size - 1);
        let x0 = (disk.cx - disk.radius).floor().max(0.0) as usize;
        let x1 = ((disk.cx + disk.radius).ceil() as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let w = disk.weight(y, x);
                if w > 0.0 {
                    mask.set(y, x, true);
                    let v: &mut f64 = &mut delta[y * size + x];
                    *v = v.max(amp * w);
                }
            }
        }
    }
    Lesion { mask, delta, disks: disks.iter().map(|(d, _)| *d).collect() }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One filled disk, fully inside the frame, at a uniformly random center.
pub fn draw_localized_lesion<R: Rng>(rng: &mut R, size: usize, cfg: &LocalizedConfig) -> Lesion {
    let r = uniform(rng, cfg.radius_min, cfg.radius_max);
    let hi = size as f64 - 1.0 - r;
    let cy = uniform(rng, r, hi);
    let cx = uniform(rng, r, hi);
    let amp = uniform(rng, cfg.delta_min, cfg.delta_max);
    paint(size, &[(Disk { cy, cx, radius: r }, amp)])
}

/// Many small disks scattered over a random square sub-region.
pub fn draw_diffuse_lesion<R: Rng>(rng: &mut R, size: usize, cfg: &DiffuseConfig) -> Lesion {
    let n = rng.random_range(cfg.speckles_min..=cfg.speckles_max);
    let side = uniform(rng, cfg.region_min_frac, cfg.region_max_frac) * size as f64;
    let oy = uniform(rng, 0.0, size as f64 - side);
    let ox = uniform(rng, 0.0, size as f64 - side);
    let disks: Vec<(Disk, f64)> = (0..n)
        .map(|_| {
            let r = uniform(rng, cfg.radius_min, cfg.radius_max);
            let lim = size as f64 - 1.0 - r;
            let cy = uniform(rng, oy.max(r), (oy + side).min(lim));
            let cx = uniform(rng, ox.max(r), (ox + side).min(lim));
            let amp = uniform(rng, cfg.delta_min, cfg.delta_max);
            (Disk { cy: cy.min(lim), cx: cx.min(lim), radius: r }, amp)
        })
        .collect();
    paint(size, &disks)
}

/// Adds i.i.d. Gaussian noise and clamps to `[0, 1]`.
pub fn add_noise<R: Rng>(image: &mut Tensor<f32>, rng: &mut R, cfg: &NoiseConfig) -> Result<()> {
    if cfg.sigma == 0.0 {
        for v in image.data_mut() {
            *v = (*v as f64 + cfg.mean).clamp(0.0, 1.0) as f32;
        }
        return Ok(());
    }
    let normal = Normal::new(cfg.mean, cfg.sigma).map_err(|e| Error::config(e.to_string()))?;
    for v in image.data_mut() {
        *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SimDataset {
    pub fn abnormal_test(&self) -> impl Iterator<Item = &Sample> {
        self.test.iter().filter(|s| s.label == 1)
    }
}

fn make_sample<R: Rng>(rng: &mut R, cfg: &SimConfig, id: usize, label: usize) -> Result<Sample> {
    let n = cfg.image_size;
    let mut image = Tensor::filled(&[1, n, n], cfg.background as f32);
    let (mask, kind) = if label == 0 {
        (Mask::empty(n, n), LesionKind::None)
    } else {
        let (lesion, kind) = if rng.random_bool(cfg.lesion_mix) {
            (draw_localized_lesion(rng, n, &cfg.localized), LesionKind::Localized)
        } else {
            (draw_diffuse_lesion(rng, n, &cfg.diffuse), LesionKind::Diffuse)
        };
        for (v, d) in image.data_mut().iter_mut().zip(&lesion.delta) {
            *v = (cfg.background + d) as f32;
        }
        (lesion.mask, kind)
    };
    add_noise(&mut image, rng, &cfg.noise)?;
    Ok(Sample { id, image, label, mask, kind })
}

/// Generates both classes and a stratified train/test split, deterministically from `cfg.seed`.
pub fn generate_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per = cfg.per_class_count;
    let mut classes: [Vec<Sample>; 2] = [Vec::with_capacity(per), Vec::with_capacity(per)];
    for id in 0..2 * per {
        let label = id / per;
        classes[label].push(make_sample(&mut rng, cfg, id, label)?);
    }
    let train_per = [cfg.train_count / 2, cfg.train_count - cfg.train_count / 2];
    let mut train = Vec::with_capacity(cfg.train_count);
    let mut test = Vec::with_capacity(cfg.test_count);
    for (label, mut samples) in classes.into_iter().enumerate() {
        samples.shuffle(&mut rng);
        let rest = samples.split_off(train_per[label]);
        train.extend(samples);
        test.extend(rest);
    }
    train.shuffle(&mut rng);
    test.sort_by_key(|s| s.id);
    Ok(SimDataset { config: cfg.clone(), train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    pub label: usize,
    pub kind: LesionKind,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_raw: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SimConfig,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn mask_image(mask: &Mask) -> GrayImage {
    GrayImage {
        width: mask.width(),
        height: mask.height(),
        pixels: mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
}

/// Writes `manifest.json`, `images/*.pgm`, `masks/*.pgm`, and with `raw` also `raw/*.hrt`
/// (exact `f32` images).
pub fn write_dataset(ds: &SimDataset, dir: &Path, raw: bool) -> Result<Manifest> {
    for sub in ["images", "masks"] {
        create_dir(&dir.join(sub))?;
    }
    if raw {
        create_dir(&dir.join("raw"))?;
    }
    let mut entries = Vec::with_capacity(ds.train.len() + ds.test.len());
    let splits = ds.train.iter().map(|s| (Split::Train, s)).chain(ds.test.iter().map(|s| (Split::Test, s)));
    for (split, s) in splits {
        let n = ds.config.image_size;
        let image = format!("images/s{:05}.pgm", s.id);
        let mask = format!("masks/s{:05}.pgm", s.id);
        write_pgm(&dir.join(&image), &GrayImage::from_unit(n, n, s.image.data().iter().map(|&v| v as f64)))?;
        write_pgm(&dir.join(&mask), &mask_image(&s.mask))?;
        let image_raw = if raw {
            let p = format!("raw/s{:05}.hrt", s.id);
            write_tensor_file(&dir.join(&p), &s.image)?;
            Some(p)
        } else {
            None
        };
        entries.push(ManifestEntry { id: s.id, split, label: s.label, kind: s.kind, image, mask, image_raw });
    }
    let manifest = Manifest { config: ds.config.clone(), samples: entries };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads a sample; prefers the raw tensor when the manifest lists one.
pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let image = match &entry.image_raw {
        Some(p) => read_tensor_file::<f32>(&dir.join(p))?,
        None => {
            let img = read_pgm(&dir.join(&entry.image))?;
            Tensor::new(vec![1, img.height, img.width], img.to_unit().map(|v| v as f32).collect())?
        }
    };
    let m = read_pgm(&dir.join(&entry.mask))?;
    let mask = Mask::from_vec(m.height, m.width, m.pixels.iter().map(|&p| p > 127).collect())?;
    if image.shape()[1..] != [m.height, m.width] {
        return Err(Error::Data(format!("sample {}: image and mask sizes differ", entry.id)));
    }
    Ok(Sample { id: entry.id, image, label: entry.label, mask, kind: entry.kind })
}

/// Reads a dataset directory back into train and test splits in manifest order.
pub fn load_dataset(dir: &Path) -> Result<SimDataset> {
    let manifest = read_manifest(dir)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.samples {
        let s = load_sample(dir, e)?;
        match e.split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    Ok(SimDataset { config: manifest.config, train, test })
}

pub fn sample_paths(dir: &Path, entry: &ManifestEntry) -> (PathBuf, PathBuf) {
    (dir.join(&entry.image), dir.join(&entry.mask))
}
