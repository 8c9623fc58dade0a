//! Shared oracle for gradient checks: an independent f64 forward pass and a
//! central finite-difference comparator. Included via `#[path]` by the test
//! targets that need it, so the reference implementation is written exactly
//! once and never lives in the library itself.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use isonet::nn::{
    gradient_binary, gradient_multiclass, init_params, HeadKind, NetworkSpec, ParameterVector,
};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

/// Independent f64 forward + loss over a batch, reading parameters from a
/// plain f64 vector with the library's layout names.
pub struct Shadow<'a> {
    spec: &'a NetworkSpec,
    layout: isonet::nn::Layout,
}

impl<'a> Shadow<'a> {
    pub fn new(spec: &'a NetworkSpec, head: HeadKind) -> Self {
        Shadow { spec, layout: spec.layout(head) }
    }

    fn seg<'b>(&self, theta: &'b [f64], name: &str) -> &'b [f64] {
        &theta[self.layout.range_of(name).expect("segment")]
    }

    fn features(&self, theta: &[f64], x: &[f32]) -> Vec<f64> {
        let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for (i, &width) in self.spec.hidden_widths.iter().enumerate() {
            let w = self.seg(theta, &format!("layer{i}.weight"));
            let b = self.seg(theta, &format!("layer{i}.bias"));
            let fan_in = act.len();
            let mut z = vec![0.0f64; width];
            for r in 0..width {
                let mut acc = b[r];
                for c in 0..fan_in {
                    acc += w[r * fan_in + c] * act[c];
                }
                z[r] = acc;
            }
            let mut u = z.clone();
            if self.spec.use_instance_norm {
                let g = self.seg(theta, &format!("layer{i}.norm_gain"));
                let nb = self.seg(theta, &format!("layer{i}.norm_bias"));
                let mean = z.iter().sum::<f64>() / width as f64;
                let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
                let inv = 1.0 / (var + 1e-5).sqrt();
                for r in 0..width {
                    u[r] = g[r] * ((z[r] - mean) * inv) + nb[r];
                }
            }
            act = u.into_iter().map(|v| v.max(0.0)).collect();
        }
        act
    }

    pub fn binary_loss(&self, theta: &[f64], batch: &[(&[f32], bool)]) -> f64 {
        let w = self.seg(theta, "head.weight");
        let b = self.seg(theta, "head.bias");
        let mut total = 0.0;
        for (x, m) in batch {
            let h = self.features(theta, x);
            let logit = b[0] + h.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-logit).exp());
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            total += if *m { -p.ln() } else { -(1.0 - p).ln() };
        }
        total / batch.len() as f64
    }

    pub fn multiclass_loss(&self, theta: &[f64], batch: &[(&[f32], usize)]) -> f64 {
        let w = self.seg(theta, "head.weight");
        let b = self.seg(theta, "head.bias");
        let classes = self.spec.num_classes;
        let mut total = 0.0;
        for (x, y) in batch {
            let h = self.features(theta, x);
            let latent = h.len();
            let logits: Vec<f64> = (0..classes)
                .map(|r| b[r] + h.iter().enumerate().map(|(c, v)| w[r * latent + c] * v).sum::<f64>())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let p = ((logits[*y] - max).exp() / denom).max(1e-7);
            total += -p.ln();
        }
        total / batch.len() as f64
    }
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let depth = rng.random_range(1..=2);
    NetworkSpec {
        input_dim: rng.random_range(3..=7),
        hidden_widths: (0..depth).map(|_| rng.random_range(2..=6)).collect(),
        use_instance_norm: rng.random::<bool>(),
        num_classes: rng.random_range(2..=4),
        seed: rng.random(),
    }
}

pub fn random_inputs(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f32>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random::<f32>()).collect())
        .collect()
}

pub fn check_against_fd(
    analytic: &ParameterVector,
    theta: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    label: &str,
) {
    let mut fd = vec![0.0f64; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + FD_STEP;
        let up = loss(&probe);
        probe[i] = theta[i] - FD_STEP;
        let down = loss(&probe);
        probe[i] = theta[i];
        fd[i] = (up - down) / (2.0 * FD_STEP);
    }
    // near-zero components carry f32 round-off comparable to their own
    // magnitude, so normalize by the gradient's scale, not per component
    let scale = fd
        .iter()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max)
        .max(1e-3);
    for (i, (&f, &b)) in fd.iter().zip(&analytic.values).enumerate() {
        let rel = (f - b as f64).abs() / f.abs().max((b as f64).abs()).max(scale);
        assert!(
            rel < REL_TOL,
            "{label}: component {i} relative error {rel:.3e} (fd {f:.6e}, backprop {b:.6e})"
        );
    }
}

/// One randomized binary-head trial; returns after asserting the check.
pub fn binary_trial(rng: &mut ChaCha8Rng) {
    let spec = random_spec(rng);
    let params = init_params(&spec, HeadKind::Binary).unwrap();
    let count = rng.random_range(1..=3);
    let inputs = random_inputs(rng, spec.input_dim, count);
    let batch: Vec<(&[f32], bool)> = inputs
        .iter()
        .map(|x| (x.as_slice(), rng.random::<bool>()))
        .collect();
    let grad = gradient_binary(&spec, &params, &batch).unwrap();
    let theta: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
    let shadow = Shadow::new(&spec, HeadKind::Binary);
    check_against_fd(&grad, &theta, |t| shadow.binary_loss(t, &batch), "binary");
}

/// One randomized multiclass-head trial.
pub fn multiclass_trial(rng: &mut ChaCha8Rng) {
    let spec = random_spec(rng);
    let params = init_params(&spec, HeadKind::Multiclass).unwrap();
    let count = rng.random_range(1..=3);
    let inputs = random_inputs(rng, spec.input_dim, count);
    let batch: Vec<(&[f32], usize)> = inputs
        .iter()
        .map(|x| (x.as_slice(), rng.random_range(0..spec.num_classes)))
        .collect();
    let grad = gradient_multiclass(&spec, &params, &batch).unwrap();
    let theta: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
    let shadow = Shadow::new(&spec, HeadKind::Multiclass);
    check_against_fd(&grad, &theta, |t| shadow.multiclass_loss(t, &batch), "multiclass");
}
