//! Two-node isolation protocol. The source node holds the training data and
//! the pretrained feature extractor; the target node holds one sample. Each
//! round both sides take local steps, the target sends its parameters, the
//! source aggregates, checks source-side convergence, and returns the global
//! model with that flag. The target checks its own stability criterion and
//! terminates the session when both hold. The round count is the OOD score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, class_subset, AugmentPolicy, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::isolation::{
    derive_eval_indices, source_accuracy, ConvergenceConfig, ConvergenceState, RoundRecord,
    RunSeeds, Transcript,
};
use crate::nn::{
    forward_binary, forward_multiclass, gradient_binary, init_params, HeadKind, NetworkSpec,
    OptimizerKind, OptimizerState, ParameterVector,
};
use crate::transport::{channel_pair, Endpoint, RoundMessage, TransportError};

/// Convex aggregation coefficients; beta is always derived as 1 - alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f32", into = "f32")]
pub struct AggregationWeights {
    alpha: f32,
}

impl AggregationWeights {
    pub fn new(alpha: f32) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "aggregation weight must lie strictly inside (0, 1), got {alpha}"
            )));
        }
        Ok(AggregationWeights { alpha })
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn beta(&self) -> f32 {
        1.0 - self.alpha
    }
}

impl TryFrom<f32> for AggregationWeights {
    type Error = Error;
    fn try_from(alpha: f32) -> Result<Self> {
        AggregationWeights::new(alpha)
    }
}

impl From<AggregationWeights> for f32 {
    fn from(w: AggregationWeights) -> f32 {
        w.alpha
    }
}

/// Controls for the label-scrambling ablation. The modes select *which*
/// targets report a wrong class; ground truth stays in the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisclassMode {
    None,
    AllWrong,
    IdWrong,
    OodWrong,
}

impl MisclassMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MisclassMode::None => "none",
            MisclassMode::AllWrong => "all_wrong",
            MisclassMode::IdWrong => "id_wrong",
            MisclassMode::OodWrong => "ood_wrong",
        }
    }
}

/// Per-session schedule shared by both nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    /// Local optimization steps E per node per round.
    pub local_steps: usize,
    pub max_rounds: usize,
    pub weights: AggregationWeights,
    pub class_conditional: bool,
    pub misclass_mode: MisclassMode,
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::InvalidConfig("local_steps must be >= 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Global model at round 0: pretrained feature extractor, fresh random binary
/// head drawn from `seed`.
pub fn initialize_global(
    spec: &NetworkSpec,
    pretrained: &ParameterVector,
    seed: u64,
) -> Result<ParameterVector> {
    let mut head_spec = spec.clone();
    head_spec.seed = seed;
    let mut params = init_params(&head_spec, HeadKind::Binary)?;
    params.copy_feature_extractor_from(pretrained)?;
    Ok(params)
}

/// Class the pretrained model assigns to the target; ties break toward the
/// lowest index.
pub fn predict_class(
    spec: &NetworkSpec,
    pretrained: &ParameterVector,
    x: &[f32],
) -> Result<usize> {
    let (probs, _) = forward_multiclass(spec, pretrained, x)?;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Uniform draw from the classes other than `y_hat`, for the misclassification
/// ablation.
pub fn scrambled_class(y_hat: usize, num_classes: usize, rng: &mut impl Rng) -> usize {
    debug_assert!(num_classes >= 2);
    let k = rng.random_range(0..num_classes - 1);
    if k >= y_hat {
        k + 1
    } else {
        k
    }
}

/// `alpha * theta_s + (1 - alpha) * theta_t` elementwise.
pub fn aggregate(
    theta_s: &ParameterVector,
    theta_t: &ParameterVector,
    weights: AggregationWeights,
) -> Result<ParameterVector> {
    theta_s.scale(weights.alpha()).add(&theta_t.scale(weights.beta()))
}

/// Mutable source-side training state that survives across rounds: optimizer
/// moments, the epoch sampler position, and the batch/augmentation stream.
pub struct SourceTrainer<'a> {
    spec: &'a NetworkSpec,
    dataset: &'a Dataset,
    optimizer: OptimizerState,
    sampler: BatchSampler,
    rng: ChaCha8Rng,
    batch_size: usize,
    augment: AugmentPolicy,
}

impl<'a> SourceTrainer<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        dataset: &'a Dataset,
        optimizer: OptimizerKind,
        learning_rate: f32,
        batch_size: usize,
        augment: AugmentPolicy,
        seed: u64,
        param_len: usize,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(SourceTrainer {
            spec,
            dataset,
            optimizer: OptimizerState::new(optimizer, learning_rate, param_len),
            sampler: BatchSampler::new(dataset.len()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_size,
            augment,
        })
    }

    /// E optimizer steps on fresh source mini-batches, all labeled 0.
    pub fn local_update(&mut self, global: &ParameterVector, steps: usize) -> Result<ParameterVector> {
        let mut params = global.clone();
        let patch = self.dataset.patch_size;
        for _ in 0..steps {
            let indices = self.sampler.next_batch(self.batch_size, &mut self.rng);
            let inputs: Vec<Vec<f32>> = indices
                .iter()
                .map(|&i| {
                    let pixels = &self.dataset.samples[i].pixels;
                    if self.augment.active_on_source() {
                        augment(pixels, patch, &self.augment, &mut self.rng)
                    } else {
                        pixels.to_vec()
                    }
                })
                .collect();
            let batch: Vec<(&[f32], bool)> =
                inputs.iter().map(|x| (x.as_slice(), false)).collect();
            let grad = gradient_binary(self.spec, &params, &batch)?;
            self.optimizer.step(&mut params, &grad)?;
        }
        Ok(params)
    }
}

/// Mutable target-side training state across rounds.
pub struct TargetTrainer<'a> {
    spec: &'a NetworkSpec,
    target: &'a [f32],
    patch_size: usize,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    augment: AugmentPolicy,
}

impl<'a> TargetTrainer<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        target: &'a [f32],
        patch_size: usize,
        optimizer: OptimizerKind,
        learning_rate: f32,
        augment: AugmentPolicy,
        seed: u64,
        param_len: usize,
    ) -> Self {
        TargetTrainer {
            spec,
            target,
            patch_size,
            optimizer: OptimizerState::new(optimizer, learning_rate, param_len),
            rng: ChaCha8Rng::seed_from_u64(seed),
            augment,
        }
    }

    /// E optimizer steps on the single target with label 1; augmentation is
    /// re-sampled each step.
    pub fn local_update(&mut self, global: &ParameterVector, steps: usize) -> Result<ParameterVector> {
        let mut params = global.clone();
        for _ in 0..steps {
            let input = if self.augment.active_on_target() {
                augment(self.target, self.patch_size, &self.augment, &mut self.rng)
            } else {
                self.target.to_vec()
            };
            let grad = gradient_binary(self.spec, &params, &[(input.as_slice(), true)])?;
            self.optimizer.step(&mut params, &grad)?;
        }
        Ok(params)
    }
}

/// Source-node run configuration; the seeds bundle must match the target
/// node's for a coherent session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub spec: NetworkSpec,
    pub plan: RoundPlan,
    pub conv: ConvergenceConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub augment: AugmentPolicy,
    pub seeds: RunSeeds,
    /// Target side only: keep each round's global parameter vector in the
    /// transcript (for trajectory comparisons).
    pub record_params: bool,
    /// Target side only: report a scrambled class instead of the prediction.
    pub scramble_class: bool,
}

impl NodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.plan.validate()?;
        self.conv.validate()
    }
}

/// What the source node learned during a session; merged into the target's
/// transcript when both run in one process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceNodeLog {
    pub predicted_class: Option<u32>,
    pub per_round_accuracy: Vec<f32>,
    pub rounds_completed: u32,
}

fn unexpected(expected: &'static str, got: &RoundMessage) -> Error {
    Error::Transport(TransportError::UnexpectedMessage { expected, got: got.kind_name() })
}

/// Source-node session: optionally receive the predicted class, send the
/// initial model, then per round receive the target's parameters, take local
/// steps, aggregate, evaluate source accuracy on its training set, and
/// send the global model with the convergence flag. Ends on Terminate.
pub fn run_source_node(
    endpoint: &mut dyn Endpoint,
    cfg: &NodeConfig,
    pretrained: &ParameterVector,
    dataset: &Dataset,
) -> Result<SourceNodeLog> {
    cfg.validate()?;
    let predicted_class = if cfg.plan.class_conditional {
        match endpoint.recv().map_err(Error::Transport)? {
            RoundMessage::PredictedClass { class } => Some(class),
            other => return Err(unexpected("PredictedClass", &other)),
        }
    } else {
        None
    };

    let global0 = initialize_global(&cfg.spec, pretrained, cfg.seeds.head)?;
    endpoint
        .send(&RoundMessage::InitModel { params: global0.values.clone() })
        .map_err(Error::Transport)?;

    let train_set = match predicted_class {
        Some(class) => {
            let subset = class_subset(dataset, class as usize);
            if subset.is_empty() {
                return Err(Error::EmptyClassSubset(class as usize));
            }
            subset
        }
        None => dataset.clone(),
    };
    let mut trainer = SourceTrainer::new(
        &cfg.spec,
        &train_set,
        cfg.optimizer,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.augment.clone(),
        cfg.seeds.source,
        global0.len(),
    )?;
    // convergence is judged on the data this node actually trains on: the
    // class subset in class-conditional mode, the full set otherwise (the
    // binary head is never fit to the other classes, so holding them below
    // 0.5 is not a meaningful requirement)
    let eval_indices = derive_eval_indices(&cfg.conv, train_set.len(), cfg.seeds.source);

    let mut global = global0;
    let mut log = SourceNodeLog { predicted_class, per_round_accuracy: Vec::new(), rounds_completed: 0 };
    loop {
        let (round, theta_t) = match endpoint.recv().map_err(Error::Transport)? {
            RoundMessage::LocalParams { round, params } => (round, params),
            RoundMessage::Terminate { .. } => return Ok(log),
            other => return Err(unexpected("LocalParams or Terminate", &other)),
        };
        if round != log.rounds_completed + 1 {
            return Err(Error::Protocol(format!(
                "round counter out of order: expected {}, got {round}",
                log.rounds_completed + 1
            )));
        }
        if theta_t.len() != global.len() {
            return Err(Error::Protocol(format!(
                "parameter length mismatch: expected {}, got {}",
                global.len(),
                theta_t.len()
            )));
        }
        let theta_s = trainer.local_update(&global, cfg.plan.local_steps)?;
        let theta_t = ParameterVector { values: theta_t, layout: global.layout.clone() };
        global = aggregate(&theta_s, &theta_t, cfg.plan.weights)?;
        let acc = source_accuracy(&cfg.spec, &global, &train_set, eval_indices.as_deref())?;
        log.per_round_accuracy.push(acc);
        log.rounds_completed = round;
        endpoint
            .send(&RoundMessage::GlobalParams {
                round,
                params: global.values.clone(),
                source_converged: acc >= cfg.conv.tau,
            })
            .map_err(Error::Transport)?;
    }
}

/// Target-node session: optionally announce the (possibly scrambled)
/// predicted class, receive the initial model, then per round take local
/// steps, send parameters, receive the global model, and test the stability
/// criterion on it. Sends Terminate with the final round count.
pub fn run_target_node(
    endpoint: &mut dyn Endpoint,
    cfg: &NodeConfig,
    pretrained: &ParameterVector,
    target: &[f32],
    patch_size: usize,
) -> Result<Transcript> {
    cfg.validate()?;
    let mut predicted_class = None;
    if cfg.plan.class_conditional {
        let mut class = predict_class(&cfg.spec, pretrained, target)?;
        if cfg.scramble_class {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.target ^ 0x5c2a_3b1e_u64);
            class = scrambled_class(class, cfg.spec.num_classes, &mut rng);
        }
        endpoint
            .send(&RoundMessage::PredictedClass { class: class as u32 })
            .map_err(Error::Transport)?;
        predicted_class = Some(class as u32);
    }

    let layout = cfg.spec.layout(HeadKind::Binary);
    let mut global = match endpoint.recv().map_err(Error::Transport)? {
        RoundMessage::InitModel { params } => {
            if params.len() != layout.total_len() {
                return Err(Error::Protocol(format!(
                    "initial model length mismatch: expected {}, got {}",
                    layout.total_len(),
                    params.len()
                )));
            }
            ParameterVector { values: params, layout }
        }
        other => return Err(unexpected("InitModel", &other)),
    };

    let mut trainer = TargetTrainer::new(
        &cfg.spec,
        target,
        patch_size,
        cfg.optimizer,
        cfg.learning_rate,
        cfg.augment.clone(),
        cfg.seeds.target,
        global.len(),
    );
    let mut state = ConvergenceState::new(cfg.conv.e_stab);
    let mut rounds = Vec::new();
    let mut param_messages_sent = 0;
    let mut param_messages_received = 1; // InitModel

    let finish = |endpoint: &mut dyn Endpoint,
                      score: u32,
                      censored: bool,
                      rounds: Vec<RoundRecord>,
                      crc: u32,
                      sent: u32,
                      received: u32|
     -> Result<Transcript> {
        endpoint
            .send(&RoundMessage::Terminate { final_round: score })
            .map_err(Error::Transport)?;
        Ok(Transcript {
            score,
            censored,
            rounds,
            predicted_class,
            final_params_crc32: crc,
            param_messages_sent: sent,
            param_messages_received: received,
            class_messages_sent: if predicted_class.is_some() { 1 } else { 0 },
        })
    };

    for round in 1..=cfg.plan.max_rounds as u32 {
        let theta_t = trainer.local_update(&global, cfg.plan.local_steps)?;
        endpoint
            .send(&RoundMessage::LocalParams { round, params: theta_t.values.clone() })
            .map_err(Error::Transport)?;
        param_messages_sent += 1;

        let source_converged = match endpoint.recv().map_err(Error::Transport)? {
            RoundMessage::GlobalParams { round: r, params, source_converged } => {
                if r != round {
                    return Err(Error::Protocol(format!(
                        "round counter out of order: expected {round}, got {r}"
                    )));
                }
                if params.len() != global.len() {
                    return Err(Error::Protocol(format!(
                        "parameter length mismatch: expected {}, got {}",
                        global.len(),
                        params.len()
                    )));
                }
                global.values = params;
                source_converged
            }
            other => return Err(unexpected("GlobalParams", &other)),
        };
        param_messages_received += 1;

        let (p, _) = forward_binary(&cfg.spec, &global, target)?;
        state.push_target_score(p);
        let target_stable = state.target_stable();
        rounds.push(RoundRecord {
            round,
            target_score: p,
            target_stable,
            source_converged,
            source_accuracy: None,
            params_crc32: global.crc32(),
            global_params: cfg.record_params.then(|| global.values.clone()),
        });
        if target_stable && source_converged {
            return finish(
                endpoint,
                round,
                false,
                rounds,
                global.crc32(),
                param_messages_sent,
                param_messages_received,
            );
        }
    }
    finish(
        endpoint,
        cfg.plan.max_rounds as u32,
        true,
        rounds,
        global.crc32(),
        param_messages_sent,
        param_messages_received,
    )
}

/// Runs one full session with both nodes in-process over the byte-codec
/// channel. The source node's per-round accuracies are merged into the
/// transcript, which otherwise matches a cross-process run exactly.
pub fn run_dison_inproc(
    cfg: &NodeConfig,
    pretrained: &ParameterVector,
    dataset: &Dataset,
    target: &[f32],
) -> Result<Transcript> {
    let (source_ep, target_ep) = channel_pair();
    let patch_size = dataset.patch_size;
    let (log, transcript) = std::thread::scope(|scope| {
        // each node owns its endpoint so an early exit on one side surfaces
        // as a disconnect on the other instead of a hang
        let source = scope.spawn(move || {
            let mut ep = source_ep;
            run_source_node(&mut ep, cfg, pretrained, dataset)
        });
        let transcript = {
            let mut ep = target_ep;
            run_target_node(&mut ep, cfg, pretrained, target, patch_size)
        };
        let log = source.join().expect("source node thread panicked");
        (log, transcript)
    });
    let log = log?;
    let mut transcript = transcript?;
    for (record, acc) in transcript.rounds.iter_mut().zip(&log.per_round_accuracy) {
        record.source_accuracy = Some(*acc);
    }
    Ok(transcript)
}
