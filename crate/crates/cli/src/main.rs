//! Experiment driver for isolation-based OOD detection on the synthetic
//! benchmark: dataset generation, primary-model pretraining, centralized and
//! two-node runs (in-process or TCP), ablation sweeps, and report
//! verification.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use isonet::data::{generate, save_dataset, ApplyOn};
use isonet::nn::HeadKind;
use isonet::pretrain::{evaluate_accuracy, pretrain, save_checkpoint, PretrainConfig};
use isonet::protocol::MisclassMode;

use isonet_cli::config::{ExperimentConfig, Mode, Role, Transport};
use isonet_cli::experiment::{
    load_or_generate_splits, run_experiment, ID_TEST_FILE, OOD_TEST_FILE, TRAIN_FILE,
};
use isonet_cli::report::{csv_sibling, load_json, verify_report, write_csv, write_json};
use isonet_cli::sweep::{run_sweep, write_tidy_csv, SweepKind};

#[derive(Parser)]
#[command(name = "isonet", version, about = "Isolation-network OOD detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AugmentSetting {
    None,
    SourceOnly,
    TargetOnly,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MisclassArg {
    None,
    AllWrong,
    IdWrong,
    OodWrong,
}

impl From<MisclassArg> for MisclassMode {
    fn from(v: MisclassArg) -> Self {
        match v {
            MisclassArg::None => MisclassMode::None,
            MisclassArg::AllWrong => MisclassMode::AllWrong,
            MisclassArg::IdWrong => MisclassMode::IdWrong,
            MisclassArg::OodWrong => MisclassMode::OodWrong,
        }
    }
}

/// Flags shared by run/sweep; every one overrides the JSON config.
#[derive(Debug, Args)]
struct RunOpts {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    transport: Option<TransportKind>,
    /// TCP role (requires --transport tcp).
    #[arg(long)]
    role: Option<Role>,
    /// TCP address, e.g. 127.0.0.1:4780.
    #[arg(long)]
    addr: Option<String>,
    #[arg(long)]
    alpha: Option<f32>,
    /// Local steps E per round; omit to cover one source epoch per round.
    #[arg(long)]
    local_steps: Option<usize>,
    #[arg(long)]
    e_stab: Option<usize>,
    #[arg(long)]
    tau: Option<f32>,
    /// Round cap R_max.
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    augment: Option<AugmentSetting>,
    #[arg(long)]
    misclass: Option<MisclassArg>,
    /// Comma-separated seed list, e.g. --seeds 0,1,2.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    n_id: Option<usize>,
    #[arg(long)]
    n_ood: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Directory with train.ids / id_test.ids / ood_test.ids.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Report output path (JSON; a CSV sibling is written next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunOpts {
    fn build_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        match self.transport {
            Some(TransportKind::Inproc) => cfg.transport = Transport::Inproc,
            Some(TransportKind::Tcp) => {
                let role = self.role.context("--transport tcp requires --role")?;
                let addr = self.addr.clone().context("--transport tcp requires --addr")?;
                cfg.transport = Transport::Tcp { role, addr };
            }
            None => {
                if self.role.is_some() || self.addr.is_some() {
                    if let Transport::Inproc = cfg.transport {
                        bail!("--role/--addr require --transport tcp");
                    }
                }
            }
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if self.local_steps.is_some() {
            cfg.local_steps = self.local_steps;
        }
        if let Some(e_stab) = self.e_stab {
            cfg.convergence.e_stab = e_stab;
        }
        if let Some(tau) = self.tau {
            cfg.convergence.tau = tau;
        }
        if let Some(r_max) = self.r_max {
            cfg.convergence.max_rounds = r_max;
        }
        if let Some(setting) = self.augment {
            match setting {
                AugmentSetting::None => cfg.augment.enabled = false,
                AugmentSetting::SourceOnly => {
                    cfg.augment.enabled = true;
                    cfg.augment.apply_on = ApplyOn::SourceOnly;
                }
                AugmentSetting::TargetOnly => {
                    cfg.augment.enabled = true;
                    cfg.augment.apply_on = ApplyOn::TargetOnly;
                }
                AugmentSetting::Both => {
                    cfg.augment.enabled = true;
                    cfg.augment.apply_on = ApplyOn::Both;
                }
            }
        }
        if let Some(misclass) = self.misclass {
            cfg.misclass = misclass.into();
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(n) = self.n_id {
            cfg.n_id = n;
        }
        if let Some(n) = self.n_ood {
            cfg.n_ood = n;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.dataset.is_some() {
            cfg.dataset_dir = self.dataset.clone();
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint = self.checkpoint.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the three synthetic dataset splits as binary files.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generation seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train the primary classifier and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory from `generate`; regenerates when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Score a target pool and write the report.
    Run {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run an ablation sweep and write a merged report plus a tidy CSV.
    Sweep {
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long)]
        sweep: SweepKind,
    },
    /// Recompute a report's aggregates from its per-target records.
    VerifyReport {
        #[arg(long)]
        report: PathBuf,
    },
}

fn cmd_generate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.synthetic.seed = seed;
    }
    cfg.synthetic.validate()?;
    let (train, id_test, ood_test) = generate(&cfg.synthetic)?;
    std::fs::create_dir_all(&out)?;
    save_dataset(&out.join(TRAIN_FILE), &train)?;
    save_dataset(&out.join(ID_TEST_FILE), &id_test)?;
    save_dataset(&out.join(OOD_TEST_FILE), &ood_test)?;
    println!(
        "wrote {} train, {} id_test, {} ood_test samples to {}",
        train.len(),
        id_test.len(),
        ood_test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(
    config: Option<PathBuf>,
    dataset: Option<PathBuf>,
    epochs: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(epochs) = epochs {
        cfg.pretrain_epochs = epochs;
    }
    if dataset.is_some() {
        cfg.dataset_dir = dataset;
    }
    let (train, id_test, _) = load_or_generate_splits(&cfg)?;
    let spec = isonet::nn::NetworkSpec {
        input_dim: train.input_dim(),
        hidden_widths: cfg.hidden_widths.clone(),
        use_instance_norm: cfg.use_instance_norm,
        num_classes: train.num_classes,
        seed: cfg.synthetic.seed,
    };
    let pre_cfg = PretrainConfig {
        epochs: cfg.pretrain_epochs,
        batch_size: cfg.pretrain_batch_size,
        optimizer: isonet::nn::OptimizerKind::adam(),
        learning_rate: cfg.pretrain_learning_rate,
        seed: cfg.synthetic.seed,
        spec: spec.clone(),
        augment: isonet::data::AugmentPolicy::default(),
    };
    let (params, log) = pretrain(&pre_cfg, &train)?;
    save_checkpoint(&out, &spec, HeadKind::Multiclass, &params)?;
    let id_acc = evaluate_accuracy(&spec, &params, &id_test)?;
    println!(
        "checkpoint {} | train accuracy {:.4} | id_test accuracy {:.4}",
        out.display(),
        log.last().copied().unwrap_or(0.0),
        id_acc
    );
    Ok(())
}

fn cmd_run(opts: RunOpts) -> Result<()> {
    let cfg = opts.build_config()?;
    cfg.validate()?;
    match run_experiment(&cfg)? {
        Some(report) => {
            println!(
                "mode={} misclass={} AUROC {:.4} ± {:.4} | FPR95 {:.4} ± {:.4} | MSP AUROC {:.4}",
                report.mode,
                report.misclass,
                report.auroc_mean,
                report.auroc_std,
                report.fpr95_mean,
                report.fpr95_std,
                report.msp_auroc_mean,
            );
            let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
            write_json(&report, &out)?;
            write_csv(&report, &csv_sibling(&out))?;
            println!("report: {} (+ {})", out.display(), csv_sibling(&out).display());
        }
        None => println!("source role finished; the report is produced by the target process"),
    }
    Ok(())
}

fn cmd_sweep(opts: RunOpts, kind: SweepKind) -> Result<()> {
    let cfg = opts.build_config()?;
    if !matches!(cfg.transport, Transport::Inproc) {
        bail!("sweeps run in-process only");
    }
    let sweep = run_sweep(&cfg, kind)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("sweep.json"));
    std::fs::write(&out, serde_json::to_string_pretty(&sweep)?)?;
    write_tidy_csv(&sweep, &csv_sibling(&out))?;
    for point in &sweep.points {
        println!(
            "{}: AUROC {:.4} ± {:.4}",
            point.label, point.report.auroc_mean, point.report.auroc_std
        );
    }
    println!("sweep: {} (+ {})", out.display(), csv_sibling(&out).display());
    Ok(())
}

fn cmd_verify(report_path: PathBuf) -> Result<()> {
    let report = load_json(&report_path)?;
    verify_report(&report)?;
    println!("ok: all aggregates match the per-target records");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, seed, out } => cmd_generate(config, seed, out),
        Command::Pretrain { config, dataset, epochs, out } => {
            cmd_pretrain(config, dataset, epochs, out)
        }
        Command::Run { opts } => cmd_run(opts),
        Command::Sweep { opts, sweep } => cmd_sweep(opts, sweep),
        Command::VerifyReport { report } => cmd_verify(report),
    }
}
