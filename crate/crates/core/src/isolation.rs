//! Centralized isolation: train a binary head to separate one target sample
//! from the source set, oversampling the target inside each mini-batch, and
//! score the target by the number of optimization steps until the dual
//! convergence criterion holds.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentPolicy, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    binary_ce_loss, forward_binary, gradient_binary, NetworkSpec, OptimizerKind, OptimizerState,
    ParameterVector,
};
use crate::protocol::initialize_global;

/// Convergence criterion constants: a stability window over the target score
/// and a source-accuracy threshold, with a hard round cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub e_stab: usize,
    pub tau: f32,
    pub max_rounds: usize,
    /// Optional cap on how many source samples the accuracy check uses.
    pub source_eval_subsample: Option<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { e_stab: 5, tau: 0.85, max_rounds: 150, source_eval_subsample: None }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_stab == 0 {
            return Err(Error::InvalidConfig("e_stab must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must be in (0, 1]".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rolling view of the last `e_stab` target sigmoid scores.
#[derive(Debug, Clone)]
pub struct ConvergenceState {
    history: VecDeque<f32>,
    e_stab: usize,
    pub updates_seen: usize,
}

impl ConvergenceState {
    pub fn new(e_stab: usize) -> Self {
        ConvergenceState { history: VecDeque::with_capacity(e_stab), e_stab, updates_seen: 0 }
    }

    pub fn push_target_score(&mut self, p: f32) {
        if self.history.len() == self.e_stab {
            self.history.pop_front();
        }
        self.history.push_back(p);
        self.updates_seen += 1;
    }

    /// Criterion 1: the window is full and every score is strictly above 0.5.
    pub fn target_stable(&self) -> bool {
        self.updates_seen >= self.e_stab
            && self.history.len() == self.e_stab
            && self.history.iter().all(|&p| p > 0.5)
    }
}

/// Fraction of source samples the binary head assigns p <= 0.5 (the correct
/// side for label 0). `indices` restricts the evaluation to a fixed subsample.
pub fn source_accuracy(
    spec: &NetworkSpec,
    params: &ParameterVector,
    source: &Dataset,
    indices: Option<&[usize]>,
) -> Result<f32> {
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut eval = |pixels: &[f32]| -> Result<()> {
        let (p, _) = forward_binary(spec, params, pixels)?;
        if p <= 0.5 {
            correct += 1;
        }
        total += 1;
        Ok(())
    };
    match indices {
        Some(idx) => {
            for &i in idx {
                eval(&source.samples[i].pixels)?;
            }
        }
        None => {
            for s in &source.samples {
                eval(&s.pixels)?;
            }
        }
    }
    Ok(correct as f32 / total as f32)
}

/// Outcome of evaluating both criteria on the current parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCheck {
    pub converged: bool,
    pub target_stable: bool,
    /// Present only when criterion 1 held and the accuracy was computed.
    pub source_accuracy: Option<f32>,
}

/// Evaluates the dual criterion: the state's window must be stable above 0.5
/// and the source accuracy at these parameters must reach tau. The accuracy
/// scan is skipped when criterion 1 already fails.
pub fn check_convergence(
    state: &ConvergenceState,
    cfg: &ConvergenceConfig,
    spec: &NetworkSpec,
    params: &ParameterVector,
    source: &Dataset,
    eval_indices: Option<&[usize]>,
) -> Result<ConvergenceCheck> {
    if !state.target_stable() {
        return Ok(ConvergenceCheck { converged: false, target_stable: false, source_accuracy: None });
    }
    let acc = source_accuracy(spec, params, source, eval_indices)?;
    Ok(ConvergenceCheck {
        converged: acc >= cfg.tau,
        target_stable: true,
        source_accuracy: Some(acc),
    })
}

/// A mini-batch for the isolation objective: source inputs labeled 0 and one
/// target input replicated `replication` times with label 1.
#[derive(Debug, Clone)]
pub struct IsolationBatch {
    pub source_inputs: Vec<Vec<f32>>,
    pub target_input: Vec<f32>,
    pub replication: usize,
}

impl IsolationBatch {
    pub fn new(source_inputs: Vec<Vec<f32>>, target_input: Vec<f32>, replication: usize) -> Result<Self> {
        if source_inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if replication == 0 {
            return Err(Error::InvalidConfig("replication must be >= 1".into()));
        }
        Ok(IsolationBatch { source_inputs, target_input, replication })
    }

    fn expanded(&self) -> Vec<(&[f32], bool)> {
        let mut batch: Vec<(&[f32], bool)> = self
            .source_inputs
            .iter()
            .map(|x| (x.as_slice(), false))
            .collect();
        for _ in 0..self.replication {
            batch.push((self.target_input.as_slice(), true));
        }
        batch
    }
}

/// Mean binary cross-entropy over the replica-expanded batch:
/// `(sum_s L(x_s, 0) + N * L(x_t, 1)) / (|B_s| + N)`.
pub fn centralized_loss(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &IsolationBatch,
) -> Result<f32> {
    let mut total = 0.0;
    for x in &batch.source_inputs {
        let (p, _) = forward_binary(spec, params, x)?;
        total += binary_ce_loss(p, false);
    }
    let (p, _) = forward_binary(spec, params, &batch.target_input)?;
    total += batch.replication as f32 * binary_ce_loss(p, true);
    Ok(total / (batch.source_inputs.len() + batch.replication) as f32)
}

/// Gradient of [`centralized_loss`], computed over the replica-expanded batch
/// so it shares the floating path with an explicit expansion.
pub fn centralized_gradient(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &IsolationBatch,
) -> Result<ParameterVector> {
    gradient_binary(spec, params, &batch.expanded())
}

/// Seed bundle. The source stream drives batch selection and source-side
/// augmentation; the target stream drives target-side augmentation. Keeping
/// them experiment-owned lets the centralized and decentralized paths consume
/// identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub head: u64,
    pub source: u64,
    pub target: u64,
}

impl RunSeeds {
    pub fn derive(base: u64, target_index: u64) -> Self {
        let k = base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(target_index);
        RunSeeds {
            head: k.wrapping_add(1),
            source: k.wrapping_add(2),
            target: k.wrapping_add(3),
        }
    }
}

/// One step (centralized) or round (decentralized) of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub target_score: f32,
    pub target_stable: bool,
    pub source_converged: bool,
    pub source_accuracy: Option<f32>,
    pub params_crc32: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_params: Option<Vec<f32>>,
}

/// Full record of one isolation run; `score` is the OOD score (steps or
/// rounds, the round cap when censored).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub score: u32,
    pub censored: bool,
    pub rounds: Vec<RoundRecord>,
    pub predicted_class: Option<u32>,
    pub final_params_crc32: u32,
    pub param_messages_sent: u32,
    pub param_messages_received: u32,
    pub class_messages_sent: u32,
}

/// Knobs of a centralized run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Oversampling count N for the target within each batch.
    pub replication: usize,
    pub augment: AugmentPolicy,
    pub record_params: bool,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        CentralizedConfig {
            optimizer: OptimizerKind::adam(),
            learning_rate: 1e-3,
            batch_size: 16,
            replication: 4,
            augment: AugmentPolicy::default(),
            record_params: false,
        }
    }
}

/// Fixed random subsample of source indices for the accuracy check, derived
/// from the source seed so both execution modes agree on it.
pub fn derive_eval_indices(
    conv: &ConvergenceConfig,
    source_len: usize,
    source_seed: u64,
) -> Option<Vec<usize>> {
    use rand::seq::SliceRandom;
    let cap = conv.source_eval_subsample?;
    if cap >= source_len {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(source_seed ^ 0x5eed_ca11_ba5e_u64);
    let mut idx: Vec<usize> = (0..source_len).collect();
    idx.shuffle(&mut rng);
    idx.truncate(cap);
    Some(idx)
}

/// Runs the centralized isolation loop and returns the step count K at which
/// the dual criterion first holds (the round cap if never; convergence wins a
/// tie at the cap). Deterministic given the seed bundle.
pub fn run_centralized(
    spec: &NetworkSpec,
    pretrained: &ParameterVector,
    source: &Dataset,
    target: &[f32],
    conv: &ConvergenceConfig,
    cfg: &CentralizedConfig,
    seeds: RunSeeds,
) -> Result<Transcript> {
    conv.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = initialize_global(spec, pretrained, seeds.head)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut source_rng = ChaCha8Rng::seed_from_u64(seeds.source);
    let mut target_rng = ChaCha8Rng::seed_from_u64(seeds.target);
    let mut sampler = BatchSampler::new(source.len());
    let eval_indices = derive_eval_indices(conv, source.len(), seeds.source);
    let mut state = ConvergenceState::new(conv.e_stab);
    let mut rounds = Vec::new();
    let patch = source.patch_size;

    for step in 1..=conv.max_rounds as u32 {
        let batch_indices = sampler.next_batch(cfg.batch_size, &mut source_rng);
        let source_inputs: Vec<Vec<f32>> = batch_indices
            .iter()
            .map(|&i| {
                let pixels = &source.samples[i].pixels;
                if cfg.augment.active_on_source() {
                    augment(pixels, patch, &cfg.augment, &mut source_rng)
                } else {
                    pixels.to_vec()
                }
            })
            .collect();
        let target_input = if cfg.augment.active_on_target() {
            augment(target, patch, &cfg.augment, &mut target_rng)
        } else {
            target.to_vec()
        };
        let batch = IsolationBatch::new(source_inputs, target_input, cfg.replication)?;
        let grad = centralized_gradient(spec, &params, &batch)?;
        optimizer.step(&mut params, &grad)?;

        let (p, _) = forward_binary(spec, &params, target)?;
        state.push_target_score(p);
        let check = check_convergence(&state, conv, spec, &params, source, eval_indices.as_deref())?;
        rounds.push(RoundRecord {
            round: step,
            target_score: p,
            target_stable: check.target_stable,
            source_converged: check.converged,
            source_accuracy: check.source_accuracy,
            params_crc32: params.crc32(),
            global_params: cfg.record_params.then(|| params.values.clone()),
        });
        if check.converged {
            return Ok(finish(step, false, rounds, params.crc32()));
        }
    }
    Ok(finish(conv.max_rounds as u32, true, rounds, params.crc32()))
}

fn finish(score: u32, censored: bool, rounds: Vec<RoundRecord>, crc: u32) -> Transcript {
    Transcript {
        score,
        censored,
        rounds,
        predicted_class: None,
        final_params_crc32: crc,
        param_messages_sent: 0,
        param_messages_received: 0,
        class_messages_sent: 0,
    }
}
