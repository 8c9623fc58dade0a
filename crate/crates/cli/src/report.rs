//! Report assembly: per-target records, per-seed aggregates, cross-seed
//! mean/std, JSON + CSV emission, and independent re-verification of the
//! aggregates from the raw records.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use isonet::metrics::{auroc, fpr95, quantiles, ScoreSet, ROUND_QUANTILES};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub seed: u64,
    pub target_index: usize,
    pub ood: bool,
    /// Convergence steps (centralized) or rounds (decentralized); higher
    /// means harder to isolate, i.e. more ID-like.
    pub score: u32,
    pub censored: bool,
    /// Maximum-softmax-probability baseline from the pretrained model.
    pub msp: f64,
    pub predicted_class: Option<u32>,
    pub final_params_crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    /// 25th, 50th, 75th percentile of scores (linear interpolation).
    pub quantiles: Vec<f64>,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seed: u64,
    pub auroc: f64,
    pub fpr95: f64,
    pub msp_auroc: f64,
    pub id_rounds: GroupStats,
    pub ood_rounds: GroupStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: String,
    pub misclass: String,
    pub per_seed: Vec<SeedAggregate>,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub fpr95_mean: f64,
    pub fpr95_std: f64,
    pub msp_auroc_mean: f64,
    pub msp_auroc_std: f64,
    pub config: ExperimentConfig,
    pub records: Vec<TargetRecord>,
}

fn group_stats(records: &[&TargetRecord]) -> Result<GroupStats> {
    let scores: Vec<u32> = records.iter().map(|r| r.score).collect();
    let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64;
    Ok(GroupStats {
        count: scores.len(),
        mean,
        quantiles: quantiles(&scores, &ROUND_QUANTILES)?,
        censored: records.iter().filter(|r| r.censored).count(),
    })
}

fn aggregate_seed(seed: u64, records: &[&TargetRecord]) -> Result<SeedAggregate> {
    let id: Vec<&TargetRecord> = records.iter().filter(|r| !r.ood).copied().collect();
    let ood: Vec<&TargetRecord> = records.iter().filter(|r| r.ood).copied().collect();
    if id.is_empty() || ood.is_empty() {
        bail!("seed {seed}: both ID and OOD records are required for aggregation");
    }
    let rounds = ScoreSet {
        id_scores: id.iter().map(|r| r.score as f64).collect(),
        ood_scores: ood.iter().map(|r| r.score as f64).collect(),
    };
    let msp = ScoreSet {
        id_scores: id.iter().map(|r| r.msp).collect(),
        ood_scores: ood.iter().map(|r| r.msp).collect(),
    };
    Ok(SeedAggregate {
        seed,
        auroc: auroc(&rounds)?,
        fpr95: fpr95(&rounds)?,
        msp_auroc: auroc(&msp)?,
        id_rounds: group_stats(&id)?,
        ood_rounds: group_stats(&ood)?,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Computes every aggregate from the records; nothing in the aggregate
/// section exists that this function does not derive.
pub fn build_report(cfg: &ExperimentConfig, records: Vec<TargetRecord>) -> Result<ExperimentReport> {
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let subset: Vec<&TargetRecord> = records.iter().filter(|r| r.seed == seed).collect();
        if subset.is_empty() {
            bail!("no records for seed {seed}");
        }
        per_seed.push(aggregate_seed(seed, &subset)?);
    }
    let (auroc_mean, auroc_std) = mean_std(&per_seed.iter().map(|a| a.auroc).collect::<Vec<_>>());
    let (fpr95_mean, fpr95_std) = mean_std(&per_seed.iter().map(|a| a.fpr95).collect::<Vec<_>>());
    let (msp_auroc_mean, msp_auroc_std) =
        mean_std(&per_seed.iter().map(|a| a.msp_auroc).collect::<Vec<_>>());
    Ok(ExperimentReport {
        mode: cfg.mode.as_str().to_string(),
        misclass: cfg.misclass.as_str().to_string(),
        per_seed,
        auroc_mean,
        auroc_std,
        fpr95_mean,
        fpr95_std,
        msp_auroc_mean,
        msp_auroc_std,
        config: cfg.clone(),
        records,
    })
}

/// Recomputes the aggregate section from the per-target records and fails on
/// any discrepancy; used by `verify-report`.
pub fn verify_report(report: &ExperimentReport) -> Result<()> {
    let rebuilt = build_report(&report.config, report.records.clone())?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    if rebuilt.per_seed != report.per_seed {
        bail!("per-seed aggregates do not match the records");
    }
    for (name, got, want) in [
        ("auroc_mean", report.auroc_mean, rebuilt.auroc_mean),
        ("auroc_std", report.auroc_std, rebuilt.auroc_std),
        ("fpr95_mean", report.fpr95_mean, rebuilt.fpr95_mean),
        ("fpr95_std", report.fpr95_std, rebuilt.fpr95_std),
        ("msp_auroc_mean", report.msp_auroc_mean, rebuilt.msp_auroc_mean),
        ("msp_auroc_std", report.msp_auroc_std, rebuilt.msp_auroc_std),
    ] {
        if !close(got, want) {
            bail!("{name} in report ({got}) does not match recomputation ({want})");
        }
    }
    Ok(())
}

pub fn write_json(report: &ExperimentReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).with_context(|| format!("writing {path:?}"))?;
    Ok(())
}

pub fn load_json(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
    Ok(serde_json::from_str(&text)?)
}

/// One row per target record.
pub fn write_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "seed,target_index,ood,score,censored,msp,predicted_class,final_params_crc32,mode,misclass"
    )?;
    for r in &report.records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.target_index,
            r.ood,
            r.score,
            r.censored,
            r.msp,
            r.predicted_class.map_or(String::new(), |c| c.to_string()),
            r.final_params_crc32,
            report.mode,
            report.misclass,
        )?;
    }
    Ok(())
}

/// `report.json` -> `report.csv` naming convention.
pub fn csv_sibling(path: &Path) -> std::path::PathBuf {
    path.with_extension("csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, idx: usize, ood: bool, score: u32, msp: f64) -> TargetRecord {
        TargetRecord {
            seed,
            target_index: idx,
            ood,
            score,
            censored: false,
            msp,
            predicted_class: None,
            final_params_crc32: 0,
        }
    }

    fn sample_report() -> ExperimentReport {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![0, 1];
        cfg.n_id = 2;
        cfg.n_ood = 2;
        let records = vec![
            record(0, 0, false, 40, 0.9),
            record(0, 1, false, 35, 0.8),
            record(0, 2, true, 10, 0.6),
            record(0, 3, true, 12, 0.55),
            record(1, 0, false, 42, 0.88),
            record(1, 1, false, 30, 0.81),
            record(1, 2, true, 11, 0.62),
            record(1, 3, true, 9, 0.5),
        ];
        build_report(&cfg, records).unwrap()
    }

    #[test]
    fn aggregates_are_recomputable_from_records() {
        let report = sample_report();
        assert_eq!(report.per_seed.len(), 2);
        assert_eq!(report.auroc_mean, 1.0); // perfectly separated scores
        verify_report(&report).unwrap();
    }

    #[test]
    fn tampered_aggregate_fails_verification() {
        let mut report = sample_report();
        report.auroc_mean = 0.5;
        assert!(verify_report(&report).is_err());
    }

    #[test]
    fn json_round_trip_preserves_report() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_json(&report, &path).unwrap();
        let back = load_json(&path).unwrap();
        assert_eq!(back, report);
        write_csv(&report, &csv_sibling(&path)).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + report.records.len());
    }

    #[test]
    fn missing_group_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![0];
        let records = vec![record(0, 0, false, 40, 0.9)];
        assert!(build_report(&cfg, records).is_err());
    }
}
