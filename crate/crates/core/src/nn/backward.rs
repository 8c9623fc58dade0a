//! Exact backprop through the MLP. Gradients come out in the same flat layout
//! as the parameters, so they feed straight into the optimizers and into the
//! convex gradient combinations used by the isolation objective.

use crate::error::{Error, Result};

use super::forward::{forward_binary, forward_multiclass, ForwardTrace};
use super::{NetworkSpec, ParameterVector};

/// Accumulates the gradient of one sample's loss into `grad`, given the
/// gradient w.r.t. the head logits.
fn backward_sample(
    spec: &NetworkSpec,
    params: &ParameterVector,
    trace: &ForwardTrace,
    dlogits: &[f32],
    grad: &mut ParameterVector,
) {
    let latent_dim = spec.latent_dim();
    let head_weight = params.segment("head.weight").expect("head weight");

    // Head linear.
    {
        let gw = grad.segment_mut("head.weight").expect("head weight grad");
        for (r, &dl) in dlogits.iter().enumerate() {
            for (c, &a) in trace.latent.iter().enumerate() {
                gw[r * latent_dim + c] += dl * a;
            }
        }
        let gb = grad.segment_mut("head.bias").expect("head bias grad");
        for (r, &dl) in dlogits.iter().enumerate() {
            gb[r] += dl;
        }
    }
    let mut d_act: Vec<f32> = (0..latent_dim)
        .map(|c| {
            dlogits
                .iter()
                .enumerate()
                .map(|(r, &dl)| head_weight[r * latent_dim + c] * dl)
                .sum()
        })
        .collect();

    for i in (0..spec.hidden_widths.len()).rev() {
        let width = spec.hidden_widths[i];
        // ReLU
        let mut du = d_act;
        for (d, &u) in du.iter_mut().zip(&trace.pre_relu[i]) {
            if u <= 0.0 {
                *d = 0.0;
            }
        }

        // Instance norm: y = g*xh + b with xh = (z - mean) / sqrt(var + eps)
        let dz: Vec<f32> = if spec.use_instance_norm {
            let gain = params
                .segment(&format!("layer{i}.norm_gain"))
                .expect("norm gain");
            let normed = &trace.normed[i];
            {
                let gg = grad
                    .segment_mut(&format!("layer{i}.norm_gain"))
                    .expect("norm gain grad");
                for ((g, &d), &xh) in gg.iter_mut().zip(&du).zip(normed) {
                    *g += d * xh;
                }
                let gb = grad
                    .segment_mut(&format!("layer{i}.norm_bias"))
                    .expect("norm bias grad");
                for (g, &d) in gb.iter_mut().zip(&du) {
                    *g += d;
                }
            }
            let dxh: Vec<f32> = du.iter().zip(gain).map(|(&d, &g)| d * g).collect();
            let n = width as f32;
            let mean_dxh = dxh.iter().sum::<f32>() / n;
            let mean_dxh_xh = dxh.iter().zip(normed).map(|(&d, &xh)| d * xh).sum::<f32>() / n;
            let inv_std = trace.inv_std[i];
            dxh.iter()
                .zip(normed)
                .map(|(&d, &xh)| inv_std * (d - mean_dxh - xh * mean_dxh_xh))
                .collect()
        } else {
            du
        };

        let input = &trace.layer_inputs[i];
        let fan_in = input.len();
        let weight = params
            .segment(&format!("layer{i}.weight"))
            .expect("layer weight");
        {
            let gw = grad
                .segment_mut(&format!("layer{i}.weight"))
                .expect("layer weight grad");
            for (r, &d) in dz.iter().enumerate() {
                for (c, &a) in input.iter().enumerate() {
                    gw[r * fan_in + c] += d * a;
                }
            }
            let gb = grad
                .segment_mut(&format!("layer{i}.bias"))
                .expect("layer bias grad");
            for (g, &d) in gb.iter_mut().zip(&dz) {
                *g += d;
            }
        }
        d_act = (0..fan_in)
            .map(|c| {
                dz.iter()
                    .enumerate()
                    .map(|(r, &d)| weight[r * fan_in + c] * d)
                    .sum()
            })
            .collect();
    }
}

/// Mean gradient of the binary cross-entropy over a batch of
/// `(input, isolation label)` pairs.
pub fn gradient_binary(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &[(&[f32], bool)],
) -> Result<ParameterVector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = ParameterVector::zeros(params.layout.clone());
    for &(x, m) in batch {
        let (p, trace) = forward_binary(spec, params, x)?;
        let dlogit = p - if m { 1.0 } else { 0.0 };
        backward_sample(spec, params, &trace, &[dlogit], &mut grad);
    }
    let inv = 1.0 / batch.len() as f32;
    for g in &mut grad.values {
        *g *= inv;
    }
    Ok(grad)
}

/// Mean gradient of the multiclass cross-entropy over `(input, class)` pairs.
pub fn gradient_multiclass(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &[(&[f32], usize)],
) -> Result<ParameterVector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for &(_, y) in batch {
        if y >= spec.num_classes {
            return Err(Error::InvalidConfig(format!(
                "class label {y} out of range for {} classes",
                spec.num_classes
            )));
        }
    }
    let mut grad = ParameterVector::zeros(params.layout.clone());
    for &(x, y) in batch {
        let (probs, trace) = forward_multiclass(spec, params, x)?;
        let mut dlogits = probs;
        dlogits[y] -= 1.0;
        backward_sample(spec, params, &trace, &dlogits, &mut grad);
    }
    let inv = 1.0 / batch.len() as f32;
    for g in &mut grad.values {
        *g *= inv;
    }
    Ok(grad)
}
