//! Backprop vs. central finite differences. The reference loss is computed by
//! an independent f64 forward pass (see support/gradcheck.rs), not by the
//! library code, so the two implementations can only agree if both are
//! correct.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[path = "support/gradcheck.rs"]
mod support;

#[test]
fn binary_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..60 {
        support::binary_trial(&mut rng);
    }
}

#[test]
fn multiclass_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..60 {
        support::multiclass_trial(&mut rng);
    }
}
