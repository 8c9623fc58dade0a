use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParameterVector;

/// Optimizer family and its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum { momentum: f32 },
    Adam { beta1: f32, beta2: f32, epsilon: f32 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimizer with per-parameter accumulators sized to one parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    step_count: u64,
    first_moment: Vec<f32>,
    second_moment: Vec<f32>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f32, param_len: usize) -> Self {
        let needs_first = !matches!(kind, OptimizerKind::Sgd);
        let needs_second = matches!(kind, OptimizerKind::Adam { .. });
        OptimizerState {
            kind,
            learning_rate,
            step_count: 0,
            first_moment: if needs_first { vec![0.0; param_len] } else { Vec::new() },
            second_moment: if needs_second { vec![0.0; param_len] } else { Vec::new() },
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParameterVector, grad: &ParameterVector) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch { expected: params.len(), actual: grad.len() });
        }
        let eta = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values.iter_mut().zip(&grad.values) {
                    *p -= eta * g;
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, g), v) in params
                    .values
                    .iter_mut()
                    .zip(&grad.values)
                    .zip(&mut self.first_moment)
                {
                    *v = momentum * *v + g;
                    *p -= eta * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                self.step_count += 1;
                let t = self.step_count as f32;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                for (((p, g), m), v) in params
                    .values
                    .iter_mut()
                    .zip(&grad.values)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= eta * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HeadKind, NetworkSpec};

    fn tiny_vec(vals: &[f32]) -> ParameterVector {
        // Smallest valid network: 1 input, one hidden unit, no norm, binary head.
        let spec = NetworkSpec {
            input_dim: 1,
            hidden_widths: vec![1],
            use_instance_norm: false,
            num_classes: 2,
            seed: 0,
        };
        let mut p = ParameterVector::zeros(spec.layout(HeadKind::Binary));
        p.values[..vals.len()].copy_from_slice(vals);
        p
    }

    #[test]
    fn sgd_step_matches_hand_computation() {
        let mut params = tiny_vec(&[1.0]);
        let mut grad = tiny_vec(&[0.0]);
        grad.values[0] = 2.0;
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, params.len());
        opt.step(&mut params, &grad).unwrap();
        assert!((params.values[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_sgd_params_unchanged() {
        let mut params = tiny_vec(&[0.3, -0.7, 1.1, 0.0]);
        let before = params.values.clone();
        let grad = tiny_vec(&[0.0, 0.0, 0.0, 0.0]);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.5, params.len());
        opt.step(&mut params, &grad).unwrap();
        assert_eq!(params.values, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_bias_corrected_lr() {
        // At t=1: m_hat = g, v_hat = g^2, so the update is eta*g/(|g|+eps) ~ eta.
        for &c in &[0.01f32, 1.0, 250.0] {
            let mut params = tiny_vec(&[0.0]);
            let mut grad = tiny_vec(&[0.0]);
            grad.values[0] = c;
            let mut opt = OptimizerState::new(OptimizerKind::adam(), 1e-3, params.len());
            opt.step(&mut params, &grad).unwrap();
            assert!((params.values[0] + 1e-3).abs() < 1e-6, "c={c}");
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut params = tiny_vec(&[0.0]);
        let mut grad = tiny_vec(&[0.0]);
        grad.values[0] = 1.0;
        let mut opt =
            OptimizerState::new(OptimizerKind::SgdMomentum { momentum: 0.9 }, 0.1, params.len());
        opt.step(&mut params, &grad).unwrap();
        opt.step(&mut params, &grad).unwrap();
        // v1 = 1, v2 = 1.9 -> theta = -(0.1 + 0.19)
        assert!((params.values[0] + 0.29).abs() < 1e-6);
    }
}
