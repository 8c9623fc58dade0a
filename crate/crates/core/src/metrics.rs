//! OOD evaluation metrics. Score convention throughout: higher = more ID.

use crate::error::{Error, Result};
use crate::nn::{forward_multiclass, NetworkSpec, ParameterVector};

/// ID and OOD score samples for threshold-free evaluation.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    fn validate(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::InvalidConfig(
                "AUROC/FPR95 need at least one ID and one OOD score".into(),
            ));
        }
        Ok(())
    }
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counted 0.5 (Mann-Whitney). Computed via average ranks in O(n log n).
pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    scores.validate()?;
    let n_id = scores.id_scores.len();
    let n_ood = scores.ood_scores.len();
    let mut all: Vec<(f64, bool)> = scores
        .id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let n = all.len();
    let mut rank_sum_id = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_id += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_id - (n_id * (n_id + 1)) as f64 / 2.0;
    Ok(u / (n_id as f64 * n_ood as f64))
}

/// False positive rate at the threshold keeping `tpr_level` of ID scores.
/// The threshold is the largest value s* with at least `tpr_level` of ID
/// scores >= s*; the result is the fraction of OOD scores >= s*.
pub fn fpr_at_tpr(scores: &ScoreSet, tpr_level: f64) -> Result<f64> {
    scores.validate()?;
    if !(0.0 < tpr_level && tpr_level <= 1.0) {
        return Err(Error::InvalidConfig("tpr_level must be in (0, 1]".into()));
    }
    let mut id_sorted = scores.id_scores.clone();
    id_sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let n = id_sorted.len();
    let k = (tpr_level * n as f64).ceil() as usize;
    let threshold = id_sorted[k.clamp(1, n) - 1];
    let fp = scores.ood_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(fp as f64 / scores.ood_scores.len() as f64)
}

pub fn fpr95(scores: &ScoreSet) -> Result<f64> {
    fpr_at_tpr(scores, 0.95)
}

/// Quantiles with linear interpolation between closest ranks (the common
/// "linear" convention: index h = (n-1)q).
pub fn quantiles(rounds: &[u32], qs: &[f64]) -> Result<Vec<f64>> {
    if rounds.is_empty() {
        return Err(Error::InvalidConfig("quantiles of an empty list".into()));
    }
    let mut sorted: Vec<f64> = rounds.iter().map(|&r| r as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    Ok(qs
        .iter()
        .map(|&q| {
            let h = (n as f64 - 1.0) * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}

pub const ROUND_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Maximum softmax probability of the primary model; higher = more ID.
pub fn msp_score(spec: &NetworkSpec, params: &ParameterVector, x: &[f32]) -> Result<f64> {
    let (probs, _) = forward_multiclass(spec, params, x)?;
    Ok(probs.iter().cloned().fold(f64::MIN, |acc, p| acc.max(p as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, HeadKind};

    fn set(id: &[f64], ood: &[f64]) -> ScoreSet {
        ScoreSet { id_scores: id.to_vec(), ood_scores: ood.to_vec() }
    }

    #[test]
    fn auroc_perfect_and_inverted() {
        assert_eq!(auroc(&set(&[3.0, 4.0], &[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[1.0], &[2.0])).unwrap(), 0.0);
    }

    #[test]
    fn auroc_with_tie() {
        // pairs: (2,2)=0.5, (2,1)=1, (3,2)=1, (3,1)=1 -> 3.5/4
        assert_eq!(auroc(&set(&[2.0, 3.0], &[2.0, 1.0])).unwrap(), 0.875);
    }

    #[test]
    fn auroc_rejects_empty_sets() {
        assert!(auroc(&set(&[], &[1.0])).is_err());
        assert!(auroc(&set(&[1.0], &[])).is_err());
    }

    #[test]
    fn fpr95_perfect_separation_is_zero() {
        let s = set(&[10.0, 11.0, 12.0], &[1.0, 2.0]);
        assert_eq!(fpr95(&s).unwrap(), 0.0);
    }

    #[test]
    fn fpr95_identical_distributions_is_high() {
        let vals: Vec<f64> = (0..40).map(|i| (i % 10) as f64).collect();
        let s = set(&vals, &vals);
        assert!(fpr95(&s).unwrap() >= 0.95);
    }

    #[test]
    fn fpr95_single_id_above_all_ood() {
        let s = set(&[5.0], &[1.0, 2.0, 3.0]);
        assert_eq!(fpr95(&s).unwrap(), 0.0);
    }

    #[test]
    fn quantile_conventions() {
        assert_eq!(quantiles(&[1, 2, 3, 4], &[0.5]).unwrap(), vec![2.5]);
        assert_eq!(quantiles(&[7, 7, 7], &ROUND_QUANTILES).unwrap(), vec![7.0, 7.0, 7.0]);
        assert_eq!(quantiles(&[9], &ROUND_QUANTILES).unwrap(), vec![9.0, 9.0, 9.0]);
    }

    #[test]
    fn msp_bounds_and_zero_weight_case() {
        let spec = NetworkSpec {
            input_dim: 4,
            hidden_widths: vec![3],
            use_instance_norm: true,
            num_classes: 2,
            seed: 9,
        };
        let mut params = init_params(&spec, HeadKind::Multiclass).unwrap();
        params.segment_mut("head.weight").unwrap().fill(0.0);
        params.segment_mut("head.bias").unwrap().fill(0.0);
        let s = msp_score(&spec, &params, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((s - 0.5).abs() < 1e-6);

        let params = init_params(&spec, HeadKind::Multiclass).unwrap();
        let s = msp_score(&spec, &params, &[0.1, 0.9, 0.0, 0.5]).unwrap();
        assert!(s >= 0.5 - 1e-6 && s <= 1.0);
    }
}
