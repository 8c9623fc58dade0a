//! Brute-force reference implementations of the ranking metrics, written
//! directly from the definitions. Included via `#[path]` by the test targets
//! that need an independent referee.

/// Probability a random ID score beats a random OOD score, ties 0.5, by
/// enumerating every pair.
pub fn auroc_oracle(id: &[f64], ood: &[f64]) -> f64 {
    let mut total = 0.0;
    for &a in id {
        for &b in ood {
            total += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    total / (id.len() * ood.len()) as f64
}

/// Exhaustive scan: the threshold is the largest candidate keeping at least
/// `tpr` of the ID scores above it; FPR is the OOD mass at or above it.
pub fn fpr_oracle(id: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let frac_ge = |xs: &[f64], s: f64| xs.iter().filter(|&&x| x >= s).count() as f64 / xs.len() as f64;
    let threshold = id
        .iter()
        .cloned()
        .filter(|&s| frac_ge(id, s) >= tpr)
        .fold(f64::NEG_INFINITY, f64::max);
    frac_ge(ood, threshold)
}
