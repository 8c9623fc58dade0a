//! Training of the primary multiclass model whose feature extractor seeds
//! every isolation run, plus checkpoint save/load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    forward_multiclass, gradient_multiclass, init_params, HeadKind, NetworkSpec, OptimizerKind,
    OptimizerState, ParameterVector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
    pub seed: u64,
    pub spec: NetworkSpec,
    /// Train-time augmentation; makes the model less sensitive to small
    /// perturbations, which keeps its confidence honest on unseen inputs.
    pub augment: AugmentPolicy,
}

impl PretrainConfig {
    pub fn defaults_for(spec: NetworkSpec) -> Self {
        PretrainConfig {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            seed: 0,
            spec,
            augment: AugmentPolicy::disabled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        self.spec.validate()
    }
}

/// Per-epoch training accuracy.
pub type TrainingLog = Vec<f32>;

/// Standard epoch loop minimizing multiclass cross-entropy. Deterministic
/// given the seed; the shuffle order and initialization are both derived from
/// it.
pub fn pretrain(cfg: &PretrainConfig, train: &Dataset) -> Result<(ParameterVector, TrainingLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.input_dim() != cfg.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.spec.input_dim,
            actual: train.input_dim(),
        });
    }
    let mut spec = cfg.spec.clone();
    spec.seed = cfg.seed;
    let mut params = init_params(&spec, HeadKind::Multiclass)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7e7a_11));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<f32>> = chunk
                .iter()
                .map(|&i| {
                    let s = &train.samples[i];
                    if cfg.augment.enabled {
                        augment(&s.pixels, train.patch_size, &cfg.augment, &mut rng)
                    } else {
                        s.pixels.clone()
                    }
                })
                .collect();
            let batch: Vec<(&[f32], usize)> = chunk
                .iter()
                .zip(&inputs)
                .map(|(&i, x)| (x.as_slice(), train.samples[i].label as usize))
                .collect();
            let grad = gradient_multiclass(&spec, &params, &batch)?;
            optimizer.step(&mut params, &grad)?;
        }
        log.push(evaluate_accuracy(&spec, &params, train)?);
    }
    Ok((params, log))
}

/// Fraction of samples whose argmax class matches the label.
pub fn evaluate_accuracy(
    spec: &NetworkSpec,
    params: &ParameterVector,
    dataset: &Dataset,
) -> Result<f32> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for s in &dataset.samples {
        let (probs, _) = forward_multiclass(spec, params, &s.pixels)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        if best == s.label as usize {
            correct += 1;
        }
    }
    Ok(correct as f32 / dataset.len() as f32)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ICK1";

/// Checkpoint layout: magic, JSON-encoded spec (u32 length prefix), head kind
/// byte, then the f32 parameter payload little-endian in layout order — the
/// same float encoding the wire format uses.
pub fn save_checkpoint(
    path: &Path,
    spec: &NetworkSpec,
    head: HeadKind,
    params: &ParameterVector,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let spec_json = serde_json::to_vec(spec)
        .map_err(|e| Error::InvalidConfig(format!("spec serialization failed: {e}")))?;
    w.write_all(&(spec_json.len() as u32).to_le_bytes())?;
    w.write_all(&spec_json)?;
    w.write_all(&[match head {
        HeadKind::Binary => 0u8,
        HeadKind::Multiclass => 1u8,
    }])?;
    w.write_all(&(params.values.len() as u32).to_le_bytes())?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, HeadKind, ParameterVector)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::MalformedFile("bad checkpoint magic".into()));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let spec_len = u32::from_le_bytes(len4) as usize;
    if spec_len > 1 << 20 {
        return Err(Error::MalformedFile("oversized checkpoint header".into()));
    }
    let mut spec_json = vec![0u8; spec_len];
    r.read_exact(&mut spec_json)?;
    let spec: NetworkSpec = serde_json::from_slice(&spec_json)
        .map_err(|e| Error::MalformedFile(format!("bad checkpoint spec: {e}")))?;
    spec.validate()?;
    let mut head_byte = [0u8; 1];
    r.read_exact(&mut head_byte)?;
    let head = match head_byte[0] {
        0 => HeadKind::Binary,
        1 => HeadKind::Multiclass,
        other => return Err(Error::MalformedFile(format!("bad head kind byte {other}"))),
    };
    r.read_exact(&mut len4)?;
    let count = u32::from_le_bytes(len4) as usize;
    let layout = spec.layout(head);
    if count != layout.total_len() {
        return Err(Error::MalformedFile(format!(
            "checkpoint payload length {count} does not match layout {}",
            layout.total_len()
        )));
    }
    let mut params = ParameterVector::zeros(layout);
    let mut buf = [0u8; 4];
    for v in params.values.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok((spec, head, params))
}
