//! Scores a pool of ID and OOD targets with the selected isolation mode and
//! collects per-target records. In-process runs parallelize over targets;
//! TCP mode runs the two roles in separate processes over loopback or a real
//! network.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use isonet::data::{generate, load_dataset, Dataset};
use isonet::isolation::{run_centralized, CentralizedConfig, RunSeeds, Transcript};
use isonet::metrics::msp_score;
use isonet::nn::{HeadKind, NetworkSpec, ParameterVector};
use isonet::pretrain::{load_checkpoint, pretrain, PretrainConfig};
use isonet::protocol::{
    run_dison_inproc, run_source_node, run_target_node, AggregationWeights, MisclassMode,
    NodeConfig, RoundPlan,
};
use isonet::transport::{tcp_dial, TcpConfig, TcpHost};

use crate::config::{ExperimentConfig, Mode, Role, Transport};
use crate::report::{build_report, ExperimentReport, TargetRecord};

pub struct Assets {
    pub spec: NetworkSpec,
    pub pretrained: ParameterVector,
    pub train: Dataset,
    pub id_test: Dataset,
    pub ood_test: Dataset,
}

pub const TRAIN_FILE: &str = "train.ids";
pub const ID_TEST_FILE: &str = "id_test.ids";
pub const OOD_TEST_FILE: &str = "ood_test.ids";

fn load_splits(dir: &Path) -> Result<(Dataset, Dataset, Dataset)> {
    let read = |name: &str| {
        load_dataset(&dir.join(name)).with_context(|| format!("loading {name} from {dir:?}"))
    };
    Ok((read(TRAIN_FILE)?, read(ID_TEST_FILE)?, read(OOD_TEST_FILE)?))
}

/// The three splits from `dataset_dir` when configured, otherwise freshly
/// generated from the synthetic config.
pub fn load_or_generate_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Dataset)> {
    match &cfg.dataset_dir {
        Some(dir) => load_splits(dir),
        None => Ok(generate(&cfg.synthetic)?),
    }
}

/// Builds the model and data for a run: loads the configured dataset files
/// and checkpoint when given, otherwise regenerates and pretrains in-process
/// (deterministic from the config).
pub fn prepare_assets(cfg: &ExperimentConfig) -> Result<Assets> {
    let (train, id_test, ood_test) = match &cfg.dataset_dir {
        Some(dir) => load_splits(dir)?,
        None => generate(&cfg.synthetic)?,
    };
    let spec = NetworkSpec {
        input_dim: train.input_dim(),
        hidden_widths: cfg.hidden_widths.clone(),
        use_instance_norm: cfg.use_instance_norm,
        num_classes: train.num_classes,
        seed: cfg.synthetic.seed,
    };
    spec.validate()?;
    let pretrained = match &cfg.checkpoint {
        Some(path) => {
            let (ckpt_spec, head, params) = load_checkpoint(path)?;
            if head != HeadKind::Multiclass {
                bail!("checkpoint {path:?} does not hold a multiclass model");
            }
            if ckpt_spec.input_dim != spec.input_dim || ckpt_spec.num_classes != spec.num_classes {
                bail!(
                    "checkpoint {path:?} was trained for {}x{} classes, config wants {}x{}",
                    ckpt_spec.input_dim,
                    ckpt_spec.num_classes,
                    spec.input_dim,
                    spec.num_classes
                );
            }
            return Ok(Assets { spec: ckpt_spec, pretrained: params, train, id_test, ood_test });
        }
        None => {
            let pre_cfg = PretrainConfig {
                epochs: cfg.pretrain_epochs,
                batch_size: cfg.pretrain_batch_size,
                optimizer: isonet::nn::OptimizerKind::adam(),
                learning_rate: cfg.pretrain_learning_rate,
                seed: cfg.synthetic.seed,
                spec: spec.clone(),
                augment: isonet::data::AugmentPolicy::default(),
            };
            let (params, _) = pretrain(&pre_cfg, &train)?;
            params
        }
    };
    Ok(Assets { spec, pretrained, train, id_test, ood_test })
}

#[derive(Debug, Clone)]
pub struct TargetCase {
    pub pool_index: usize,
    pub ood: bool,
    pub pixels: Vec<f32>,
}

/// First `n_id` ID test samples followed by the first `n_ood` OOD samples.
pub fn target_pool(cfg: &ExperimentConfig, assets: &Assets) -> Result<Vec<TargetCase>> {
    if cfg.n_id > assets.id_test.len() || cfg.n_ood > assets.ood_test.len() {
        bail!(
            "target pool ({} ID, {} OOD) exceeds the test splits ({}, {})",
            cfg.n_id,
            cfg.n_ood,
            assets.id_test.len(),
            assets.ood_test.len()
        );
    }
    let mut pool = Vec::with_capacity(cfg.n_id + cfg.n_ood);
    for (i, s) in assets.id_test.samples.iter().take(cfg.n_id).enumerate() {
        pool.push(TargetCase { pool_index: i, ood: false, pixels: s.pixels.clone() });
    }
    for (i, s) in assets.ood_test.samples.iter().take(cfg.n_ood).enumerate() {
        pool.push(TargetCase { pool_index: cfg.n_id + i, ood: true, pixels: s.pixels.clone() });
    }
    Ok(pool)
}

fn scramble_for(misclass: MisclassMode, ood: bool) -> bool {
    match misclass {
        MisclassMode::None => false,
        MisclassMode::AllWrong => true,
        MisclassMode::IdWrong => !ood,
        MisclassMode::OodWrong => ood,
    }
}

pub fn node_config(
    cfg: &ExperimentConfig,
    assets: &Assets,
    seed: u64,
    case_index: usize,
    scramble_class: bool,
) -> Result<NodeConfig> {
    Ok(NodeConfig {
        spec: assets.spec.clone(),
        plan: RoundPlan {
            local_steps: cfg.effective_local_steps(assets.train.len()),
            max_rounds: cfg.convergence.max_rounds,
            weights: AggregationWeights::new(cfg.alpha)?,
            class_conditional: cfg.mode == Mode::CcDison,
            misclass_mode: cfg.misclass,
        },
        conv: cfg.convergence.clone(),
        optimizer: cfg.optimizer,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        augment: cfg.augment.clone(),
        seeds: RunSeeds::derive(seed, case_index as u64),
        record_params: false,
        scramble_class,
    })
}

fn record_from_transcript(
    assets: &Assets,
    seed: u64,
    case: &TargetCase,
    transcript: &Transcript,
) -> Result<TargetRecord> {
    Ok(TargetRecord {
        seed,
        target_index: case.pool_index,
        ood: case.ood,
        score: transcript.score,
        censored: transcript.censored,
        msp: msp_score(&assets.spec, &assets.pretrained, &case.pixels)?,
        predicted_class: transcript.predicted_class,
        final_params_crc32: transcript.final_params_crc32,
    })
}

/// One target, one seed, in-process.
pub fn score_target(
    cfg: &ExperimentConfig,
    assets: &Assets,
    seed: u64,
    case: &TargetCase,
) -> Result<TargetRecord> {
    let transcript = match cfg.mode {
        Mode::Centralized => {
            let central = CentralizedConfig {
                optimizer: cfg.optimizer,
                learning_rate: cfg.learning_rate,
                batch_size: cfg.batch_size,
                replication: cfg.replication,
                augment: cfg.augment.clone(),
                record_params: false,
            };
            run_centralized(
                &assets.spec,
                &assets.pretrained,
                &assets.train,
                &case.pixels,
                &cfg.convergence,
                &central,
                RunSeeds::derive(seed, case.pool_index as u64),
            )?
        }
        Mode::Dison | Mode::CcDison => {
            let node = node_config(
                cfg,
                assets,
                seed,
                case.pool_index,
                scramble_for(cfg.misclass, case.ood),
            )?;
            run_dison_inproc(&node, &assets.pretrained, &assets.train, &case.pixels)?
        }
    };
    record_from_transcript(assets, seed, case, &transcript)
}

/// Full in-process experiment: all seeds, all targets, parallel over targets.
pub fn run_inproc(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let assets = prepare_assets(cfg)?;
    let pool = target_pool(cfg, &assets)?;
    let jobs: Vec<(u64, &TargetCase)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| pool.iter().map(move |c| (s, c)))
        .collect();
    let thread_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    let records: Result<Vec<TargetRecord>> = thread_pool.install(|| {
        jobs.par_iter()
            .map(|(seed, case)| score_target(cfg, &assets, *seed, case))
            .collect()
    });
    build_report(cfg, records?)
}

/// Source-node process in TCP mode: serves one session per (seed, target) in
/// the same order the target process dials them. Produces no report.
pub fn run_tcp_source(cfg: &ExperimentConfig, addr: &str) -> Result<()> {
    cfg.validate()?;
    if cfg.mode == Mode::Centralized {
        bail!("centralized mode has no source role");
    }
    let assets = prepare_assets(cfg)?;
    let sessions = cfg.seeds.len() * (cfg.n_id + cfg.n_ood);
    let host = TcpHost::bind(addr, TcpConfig::default())?;
    eprintln!("source node listening on {addr}, serving {sessions} sessions");
    for &seed in &cfg.seeds {
        for case_index in 0..cfg.n_id + cfg.n_ood {
            let mut endpoint = host.accept()?;
            let node = node_config(cfg, &assets, seed, case_index, false)?;
            run_source_node(&mut endpoint, &node, &assets.pretrained, &assets.train)?;
        }
    }
    Ok(())
}

/// Target-node process in TCP mode: dials one session per (seed, target),
/// sequentially, and assembles the report. Ground-truth OOD labels live only
/// on this side.
pub fn run_tcp_target(cfg: &ExperimentConfig, addr: &str) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.mode == Mode::Centralized {
        bail!("centralized mode has no target role");
    }
    let assets = prepare_assets(cfg)?;
    let pool = target_pool(cfg, &assets)?;
    let mut records = Vec::with_capacity(cfg.seeds.len() * pool.len());
    for &seed in &cfg.seeds {
        for case in &pool {
            let mut endpoint = tcp_dial(addr, TcpConfig::default())?;
            let node = node_config(
                cfg,
                &assets,
                seed,
                case.pool_index,
                scramble_for(cfg.misclass, case.ood),
            )?;
            let transcript = run_target_node(
                &mut endpoint,
                &node,
                &assets.pretrained,
                &case.pixels,
                assets.train.patch_size,
            )?;
            records.push(record_from_transcript(&assets, seed, case, &transcript)?);
        }
    }
    build_report(cfg, records)
}

/// Entry point used by the `run` subcommand.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Option<ExperimentReport>> {
    match &cfg.transport {
        Transport::Inproc => Ok(Some(run_inproc(cfg)?)),
        Transport::Tcp { role: Role::Source, addr } => {
            let addr = addr.clone();
            run_tcp_source(cfg, &addr)?;
            Ok(None)
        }
        Transport::Tcp { role: Role::Target, addr } => {
            let addr = addr.clone();
            Ok(Some(run_tcp_target(cfg, &addr)?))
        }
    }
}
