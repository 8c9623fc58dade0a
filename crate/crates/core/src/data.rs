//! Synthetic single-channel benchmark: class-dependent Gaussian blobs as the
//! in-distribution signal, with either a localized bright artifact or a global
//! intensity shift as the OOD perturbation. Also hosts stochastic augmentation
//! and epoch-shuffled batch sampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixels above this value only occur inside an artifact overlay.
const BASE_PIXEL_CEIL: f32 = 0.95;
const ARTIFACT_VALUE: f32 = 1.0;
const DATASET_MAGIC: [u8; 4] = *b"IDS1";

/// One flat P x P patch with its class label. The `ood` flag is ground truth
/// visible to the experiment harness only; it never crosses the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f32>,
    pub label: usize,
    pub ood: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub patch_size: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    CornerSquare,
    Stripe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    Artifact,
    IntensityShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub patch_size: usize,
    pub num_classes: usize,
    pub train_per_class: usize,
    /// Total ID test samples (classes cycled).
    pub id_test: usize,
    /// Total OOD test samples.
    pub ood_test: usize,
    pub noise_sigma: f32,
    pub artifact: ArtifactKind,
    pub ood_kind: OodKind,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            patch_size: 16,
            num_classes: 2,
            train_per_class: 200,
            id_test: 50,
            ood_test: 50,
            noise_sigma: 0.05,
            artifact: ArtifactKind::CornerSquare,
            ood_kind: OodKind::Artifact,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 {
            return Err(Error::InvalidConfig("patch_size must be >= 8".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.train_per_class == 0 {
            return Err(Error::InvalidConfig("train_per_class must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        // the artifact geometry below always fits for patch_size >= 8
        Ok(())
    }

    /// Pixels touched by the artifact overlay.
    pub fn artifact_mask(&self) -> Vec<bool> {
        let p = self.patch_size;
        let mut mask = vec![false; p * p];
        match self.artifact {
            ArtifactKind::CornerSquare => {
                // top-right corner: class blobs sit on the main diagonal, so
                // this region stays dark for every class
                let side = (p / 5).max(3);
                for row in 1..1 + side {
                    for col in p - 1 - side..p - 1 {
                        mask[row * p + col] = true;
                    }
                }
            }
            ArtifactKind::Stripe => {
                let row0 = p / 2 - 1;
                for row in row0..row0 + 2 {
                    for col in 0..p {
                        mask[row * p + col] = true;
                    }
                }
            }
        }
        mask
    }
}

/// Blob center for a class: evenly spaced along the diagonal, away from the
/// borders so augmentation shifts keep most of the blob in view.
fn class_center(cfg: &SyntheticConfig, class: usize) -> (f32, f32) {
    let p = cfg.patch_size as f32;
    let margin = p / 4.0;
    let frac = class as f32 / (cfg.num_classes - 1) as f32;
    let coord = margin + frac * (p - 1.0 - 2.0 * margin);
    (coord, coord)
}

fn base_sample(cfg: &SyntheticConfig, class: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let p = cfg.patch_size;
    let (cy, cx) = class_center(cfg, class);
    let jitter = 1.0f32;
    let cy = cy + rng.random_range(-jitter..=jitter);
    let cx = cx + rng.random_range(-jitter..=jitter);
    let sigma = p as f32 / 6.0;
    let amp = 0.8f32;
    let noise = Normal::new(0.0f32, cfg.noise_sigma.max(1e-12)).expect("valid sigma");
    let mut pixels = Vec::with_capacity(p * p);
    for row in 0..p {
        for col in 0..p {
            let dy = row as f32 - cy;
            let dx = col as f32 - cx;
            let v = amp * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            let n = if cfg.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            pixels.push((v + n).clamp(0.0, BASE_PIXEL_CEIL));
        }
    }
    pixels
}

fn apply_ood(cfg: &SyntheticConfig, pixels: &mut [f32]) {
    match cfg.ood_kind {
        OodKind::Artifact => {
            for (px, &hit) in pixels.iter_mut().zip(&cfg.artifact_mask()) {
                if hit {
                    *px = ARTIFACT_VALUE;
                }
            }
        }
        OodKind::IntensityShift => {
            for px in pixels.iter_mut() {
                *px = (*px * 0.7 + 0.25).clamp(0.0, 1.0);
            }
        }
    }
}

/// Generates (train, id_test, ood_test) with disjoint seed streams per split.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset, Dataset)> {
    cfg.validate()?;
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(3).wrapping_add(1));
    let mut id_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(3).wrapping_add(2));
    let mut ood_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(3).wrapping_add(3));

    let mut train = Vec::with_capacity(cfg.num_classes * cfg.train_per_class);
    for class in 0..cfg.num_classes {
        for _ in 0..cfg.train_per_class {
            train.push(Sample { pixels: base_sample(cfg, class, &mut train_rng), label: class, ood: false });
        }
    }

    let id_test = (0..cfg.id_test)
        .map(|i| {
            let class = i % cfg.num_classes;
            Sample { pixels: base_sample(cfg, class, &mut id_rng), label: class, ood: false }
        })
        .collect();

    let ood_test = (0..cfg.ood_test)
        .map(|i| {
            let class = i % cfg.num_classes;
            let mut pixels = base_sample(cfg, class, &mut ood_rng);
            apply_ood(cfg, &mut pixels);
            Sample { pixels, label: class, ood: true }
        })
        .collect();

    let mk = |samples| Dataset {
        patch_size: cfg.patch_size,
        num_classes: cfg.num_classes,
        samples,
    };
    Ok((mk(train), mk(id_test), mk(ood_test)))
}

/// Which node(s) apply augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyOn {
    Both,
    SourceOnly,
    TargetOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub apply_on: ApplyOn,
    pub flip_prob: f32,
    /// Maximum circular shift in pixels, per axis.
    pub max_shift: usize,
    pub noise_sigma: f32,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            enabled: true,
            apply_on: ApplyOn::Both,
            flip_prob: 0.5,
            max_shift: 2,
            noise_sigma: 0.02,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        AugmentPolicy { enabled: false, apply_on: ApplyOn::None, ..Default::default() }
    }

    pub fn active_on_source(&self) -> bool {
        self.enabled && matches!(self.apply_on, ApplyOn::Both | ApplyOn::SourceOnly)
    }

    pub fn active_on_target(&self) -> bool {
        self.enabled && matches!(self.apply_on, ApplyOn::Both | ApplyOn::TargetOnly)
    }
}

pub fn flip_horizontal(pixels: &mut [f32], patch_size: usize) {
    for row in pixels.chunks_mut(patch_size) {
        row.reverse();
    }
}

fn circular_shift(pixels: &[f32], patch_size: usize, dy: isize, dx: isize) -> Vec<f32> {
    let p = patch_size as isize;
    let mut out = vec![0.0; pixels.len()];
    for row in 0..p {
        for col in 0..p {
            let src_row = (row - dy).rem_euclid(p) as usize;
            let src_col = (col - dx).rem_euclid(p) as usize;
            out[(row * p + col) as usize] = pixels[src_row * patch_size + src_col];
        }
    }
    out
}

/// Horizontal flip w.p. `flip_prob`, integer circular shift up to `max_shift`
/// per axis, then additive Gaussian noise clamped back to `[0, 1]`. The label
/// is untouched; callers pass pixels only. Identity when the policy is
/// disabled, and consumes no rng draws in that case.
pub fn augment(pixels: &[f32], patch_size: usize, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Vec<f32> {
    if !policy.enabled {
        return pixels.to_vec();
    }
    let mut out = pixels.to_vec();
    if rng.random::<f32>() < policy.flip_prob {
        flip_horizontal(&mut out, patch_size);
    }
    if policy.max_shift > 0 {
        let s = policy.max_shift as i64;
        let dy = rng.random_range(-s..=s) as isize;
        let dx = rng.random_range(-s..=s) as isize;
        if dy != 0 || dx != 0 {
            out = circular_shift(&out, patch_size, dy, dx);
        }
    }
    if policy.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, policy.noise_sigma).expect("valid sigma");
        for px in &mut out {
            *px = (*px + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    out
}

/// All samples whose label equals `class`; may be empty.
pub fn class_subset(dataset: &Dataset, class: usize) -> Dataset {
    Dataset {
        patch_size: dataset.patch_size,
        num_classes: dataset.num_classes,
        samples: dataset
            .samples
            .iter()
            .filter(|s| s.label == class)
            .cloned()
            .collect(),
    }
}

/// Without-replacement sampling over an epoch-shuffled order; reshuffles when
/// an epoch is exhausted so consecutive batches never repeat an index within
/// an epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize) -> Self {
        BatchSampler { order: (0..n).collect(), pos: n }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.order.len();
        assert!(n > 0, "sampler over empty dataset");
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            if self.pos == n {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Writes a dataset as a flat binary file: magic, P, C, count, then one
/// record per sample (label u32, ood u8, P*P little-endian f32 pixels).
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&(dataset.patch_size as u32).to_le_bytes())?;
    w.write_all(&(dataset.num_classes as u32).to_le_bytes())?;
    w.write_all(&(dataset.samples.len() as u32).to_le_bytes())?;
    for s in &dataset.samples {
        w.write_all(&(s.label as u32).to_le_bytes())?;
        w.write_all(&[s.ood as u8])?;
        for px in &s.pixels {
            w.write_all(&px.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != DATASET_MAGIC {
        return Err(Error::MalformedFile("bad dataset magic".into()));
    }
    let patch_size = read_u32(&mut r)? as usize;
    let num_classes = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let dim = patch_size * patch_size;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut pixels = Vec::with_capacity(dim);
        let mut buf = [0u8; 4];
        for _ in 0..dim {
            r.read_exact(&mut buf)?;
            pixels.push(f32::from_le_bytes(buf));
        }
        samples.push(Sample { pixels, label, ood: flag[0] != 0 });
    }
    Ok(Dataset { patch_size, num_classes, samples })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
