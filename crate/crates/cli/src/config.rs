//! Experiment configuration: JSON on disk, every field overridable from the
//! command line, echoed verbatim into every report.

use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use isonet::data::{ApplyOn, AugmentPolicy, SyntheticConfig};
use isonet::isolation::ConvergenceConfig;
use isonet::nn::OptimizerKind;
use isonet::protocol::MisclassMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Dison,
    CcDison,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Dison => "dison",
            Mode::CcDison => "cc_dison",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transport {
    Inproc,
    Tcp { role: Role, addr: String },
}

/// Hidden-layer width presets standing in for a network-size ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum WidthPreset {
    Slim,
    Base,
    Deep,
}

impl WidthPreset {
    pub fn hidden_widths(&self) -> Vec<usize> {
        match self {
            WidthPreset::Slim => vec![16],
            WidthPreset::Base => vec![32],
            WidthPreset::Deep => vec![32, 32],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            WidthPreset::Slim => "slim",
            WidthPreset::Base => "base",
            WidthPreset::Deep => "deep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub transport: Transport,
    /// Aggregation weight for the source parameters.
    pub alpha: f32,
    /// Local steps per round; `null` derives E so E * batch_size covers one
    /// pass over the source set.
    pub local_steps: Option<usize>,
    pub misclass: MisclassMode,
    pub convergence: ConvergenceConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Target oversampling count N in centralized mode.
    pub replication: usize,
    pub augment: AugmentPolicy,
    pub synthetic: SyntheticConfig,
    pub hidden_widths: Vec<usize>,
    pub use_instance_norm: bool,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_learning_rate: f32,
    /// Existing checkpoint to use instead of pretraining in-process.
    pub checkpoint: Option<PathBuf>,
    /// Directory holding train.ids / id_test.ids / ood_test.ids; when absent
    /// the splits are regenerated from `synthetic`.
    pub dataset_dir: Option<PathBuf>,
    pub n_id: usize,
    pub n_ood: usize,
    pub seeds: Vec<u64>,
    /// Worker threads for the target pool; 0 uses all cores.
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::CcDison,
            transport: Transport::Inproc,
            alpha: 0.8,
            // a fixed small E keeps round granularity fine enough for the
            // round count to discriminate; `None` (one epoch per round) works
            // too but costs ~2.5x the wall time per session
            local_steps: Some(10),
            misclass: MisclassMode::None,
            convergence: ConvergenceConfig {
                e_stab: 5,
                tau: 0.85,
                max_rounds: 100,
                source_eval_subsample: Some(128),
            },
            // plain SGD: saturated objectives must stop pushing for the
            // two-node tug-of-war to settle, which Adam's normalized steps
            // never do at this scale
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.02,
            batch_size: 16,
            replication: 4,
            augment: AugmentPolicy { enabled: true, apply_on: ApplyOn::Both, ..Default::default() },
            synthetic: SyntheticConfig::default(),
            hidden_widths: WidthPreset::Base.hidden_widths(),
            use_instance_norm: true,
            pretrain_epochs: 30,
            pretrain_batch_size: 32,
            pretrain_learning_rate: 1e-3,
            checkpoint: None,
            dataset_dir: None,
            n_id: 50,
            n_ood: 50,
            seeds: vec![0, 1, 2],
            workers: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n_id == 0 {
            anyhow::bail!("n_id must be >= 1: AUROC is undefined without ID targets");
        }
        if self.n_ood == 0 {
            anyhow::bail!("n_ood must be >= 1: AUROC is undefined without OOD targets");
        }
        if self.seeds.is_empty() {
            anyhow::bail!("at least one seed is required");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            anyhow::bail!("alpha must lie strictly inside (0, 1)");
        }
        if self.batch_size == 0 || self.replication == 0 {
            anyhow::bail!("batch_size and replication must be >= 1");
        }
        self.convergence
            .validate()
            .map_err(|e| anyhow::anyhow!("convergence config: {e}"))?;
        self.synthetic
            .validate()
            .map_err(|e| anyhow::anyhow!("synthetic config: {e}"))?;
        Ok(())
    }

    /// E such that E * batch_size covers roughly one pass over the source set.
    pub fn effective_local_steps(&self, source_len: usize) -> usize {
        self.local_steps
            .unwrap_or_else(|| (source_len / self.batch_size).max(1))
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn zero_target_pools_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.n_id = 0;
        assert!(cfg.validate().is_err());
        cfg.n_id = 10;
        cfg.n_ood = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn auto_local_steps_cover_one_epoch() {
        let mut cfg = ExperimentConfig::default();
        cfg.local_steps = None;
        assert_eq!(cfg.effective_local_steps(400), 25);
        assert_eq!(cfg.effective_local_steps(7), 1);
        cfg.local_steps = Some(3);
        assert_eq!(cfg.effective_local_steps(400), 3);
    }
}
