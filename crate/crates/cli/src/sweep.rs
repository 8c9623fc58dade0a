//! Ablation sweeps: aggregation weight, augmentation placement, and network
//! width. Each point is a full experiment; the merged output is a tidy CSV
//! with one row per point and seed.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use isonet::data::ApplyOn;

use crate::config::{ExperimentConfig, WidthPreset};
use crate::experiment::run_inproc;
use crate::report::ExperimentReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Alpha,
    Augment,
    Width,
}

pub const ALPHA_GRID: [f32; 4] = [0.4, 0.5, 0.8, 0.95];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
}

fn augment_variants(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let mut out = Vec::new();
    let mut none = base.clone();
    none.augment.enabled = false;
    out.push(("none".to_string(), none));
    for (label, apply_on) in [
        ("source_only", ApplyOn::SourceOnly),
        ("target_only", ApplyOn::TargetOnly),
        ("both", ApplyOn::Both),
    ] {
        let mut cfg = base.clone();
        cfg.augment.enabled = true;
        cfg.augment.apply_on = apply_on;
        out.push((label.to_string(), cfg));
    }
    out
}

pub fn sweep_points(base: &ExperimentConfig, kind: SweepKind) -> Vec<(String, ExperimentConfig)> {
    match kind {
        SweepKind::Alpha => ALPHA_GRID
            .iter()
            .map(|&alpha| {
                let mut cfg = base.clone();
                cfg.alpha = alpha;
                (format!("alpha={alpha}"), cfg)
            })
            .collect(),
        SweepKind::Augment => augment_variants(base),
        SweepKind::Width => [WidthPreset::Slim, WidthPreset::Base, WidthPreset::Deep]
            .iter()
            .map(|preset| {
                let mut cfg = base.clone();
                cfg.hidden_widths = preset.hidden_widths();
                (preset.label().to_string(), cfg)
            })
            .collect(),
    }
}

pub fn run_sweep(base: &ExperimentConfig, kind: SweepKind) -> Result<SweepReport> {
    let mut points = Vec::new();
    for (label, cfg) in sweep_points(base, kind) {
        eprintln!("sweep point {label}");
        let report = run_inproc(&cfg)?;
        points.push(SweepPoint { label, report });
    }
    Ok(SweepReport { kind, points })
}

/// One row per (point, seed) with the per-seed aggregates; suitable for
/// external plotting.
pub fn write_tidy_csv(sweep: &SweepReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "point,seed,auroc,fpr95,msp_auroc,id_mean_rounds,ood_mean_rounds,id_median_rounds,ood_median_rounds"
    )?;
    for point in &sweep.points {
        for agg in &point.report.per_seed {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                point.label,
                agg.seed,
                agg.auroc,
                agg.fpr95,
                agg.msp_auroc,
                agg.id_rounds.mean,
                agg.ood_rounds.mean,
                agg.id_rounds.quantiles[1],
                agg.ood_rounds.quantiles[1],
            )?;
        }
    }
    Ok(())
}
