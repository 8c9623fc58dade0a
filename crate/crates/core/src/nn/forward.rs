use crate::error::{Error, Result};

use super::{HeadKind, NetworkSpec, ParameterVector, EPS_CLAMP, EPS_NORM};

/// Per-layer intermediates retained for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Activation entering each hidden layer; `layer_inputs[0]` is the input.
    pub(crate) layer_inputs: Vec<Vec<f32>>,
    /// Standardized pre-activations `(z - mean) / sqrt(var + eps)` per layer.
    /// Empty vectors when instance norm is disabled.
    pub(crate) normed: Vec<Vec<f32>>,
    /// `1 / sqrt(var + eps)` per layer.
    pub(crate) inv_std: Vec<f32>,
    /// Value entering ReLU per layer.
    pub(crate) pre_relu: Vec<Vec<f32>>,
    /// Final hidden activation.
    pub(crate) latent: Vec<f32>,
    /// Head output before sigmoid/softmax.
    pub logits: Vec<f32>,
}

/// `gain ⊙ (x - mean) / sqrt(var + eps) + bias`, with mean and population
/// variance taken over the single sample's feature vector.
pub fn instance_normalize(activation: &[f32], gain: &[f32], bias: &[f32]) -> Vec<f32> {
    let (normed, _) = standardize(activation);
    normed
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&xh, (&g, &b))| g * xh + b)
        .collect()
}

/// Returns the standardized vector and 1/sqrt(var + eps).
pub(crate) fn standardize(x: &[f32]) -> (Vec<f32>, f32) {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv_std = 1.0 / (var + EPS_NORM).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

fn matvec(weight: &[f32], bias: &[f32], input: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &weight[r * cols..(r + 1) * cols];
        let mut acc = bias[r];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        out.push(acc);
    }
    out
}

fn forward_features(
    spec: &NetworkSpec,
    params: &ParameterVector,
    x: &[f32],
) -> Result<ForwardTrace> {
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch { expected: spec.input_dim, actual: x.len() });
    }
    let n_layers = spec.hidden_widths.len();
    let mut trace = ForwardTrace {
        layer_inputs: Vec::with_capacity(n_layers),
        normed: Vec::with_capacity(n_layers),
        inv_std: Vec::with_capacity(n_layers),
        pre_relu: Vec::with_capacity(n_layers),
        latent: Vec::new(),
        logits: Vec::new(),
    };
    let mut activation = x.to_vec();
    let mut fan_in = spec.input_dim;
    for (i, &width) in spec.hidden_widths.iter().enumerate() {
        let weight = params
            .segment(&format!("layer{i}.weight"))
            .ok_or(Error::LayoutMismatch)?;
        let bias = params
            .segment(&format!("layer{i}.bias"))
            .ok_or(Error::LayoutMismatch)?;
        let z = matvec(weight, bias, &activation, width, fan_in);
        trace.layer_inputs.push(std::mem::take(&mut activation));

        let pre_relu = if spec.use_instance_norm {
            let gain = params
                .segment(&format!("layer{i}.norm_gain"))
                .ok_or(Error::LayoutMismatch)?;
            let nbias = params
                .segment(&format!("layer{i}.norm_bias"))
                .ok_or(Error::LayoutMismatch)?;
            let (normed, inv_std) = standardize(&z);
            let u: Vec<f32> = normed
                .iter()
                .zip(gain.iter().zip(nbias))
                .map(|(&xh, (&g, &b))| g * xh + b)
                .collect();
            trace.normed.push(normed);
            trace.inv_std.push(inv_std);
            u
        } else {
            trace.normed.push(Vec::new());
            trace.inv_std.push(0.0);
            z
        };
        activation = pre_relu.iter().map(|&v| v.max(0.0)).collect();
        trace.pre_relu.push(pre_relu);
        fan_in = width;
    }
    trace.latent = activation;
    Ok(trace)
}

fn head_logits(
    spec: &NetworkSpec,
    params: &ParameterVector,
    latent: &[f32],
    head: HeadKind,
) -> Result<Vec<f32>> {
    let rows = match head {
        HeadKind::Binary => 1,
        HeadKind::Multiclass => spec.num_classes,
    };
    let weight = params.segment("head.weight").ok_or(Error::LayoutMismatch)?;
    let bias = params.segment("head.bias").ok_or(Error::LayoutMismatch)?;
    if weight.len() != rows * latent.len() || bias.len() != rows {
        return Err(Error::LayoutMismatch);
    }
    Ok(matvec(weight, bias, latent, rows, latent.len()))
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Sigmoid score of the binary head: `p = sigmoid(head logit)`.
pub fn forward_binary(
    spec: &NetworkSpec,
    params: &ParameterVector,
    x: &[f32],
) -> Result<(f32, ForwardTrace)> {
    let mut trace = forward_features(spec, params, x)?;
    trace.logits = head_logits(spec, params, &trace.latent, HeadKind::Binary)?;
    Ok((sigmoid(trace.logits[0]), trace))
}

/// Softmax distribution of the C-class head.
pub fn forward_multiclass(
    spec: &NetworkSpec,
    params: &ParameterVector,
    x: &[f32],
) -> Result<(Vec<f32>, ForwardTrace)> {
    let mut trace = forward_features(spec, params, x)?;
    trace.logits = head_logits(spec, params, &trace.latent, HeadKind::Multiclass)?;
    Ok((softmax(&trace.logits), trace))
}

/// Binary cross-entropy `-[m ln p + (1-m) ln(1-p)]` with `p` clamped away
/// from 0 and 1.
pub fn binary_ce_loss(p: f32, target: bool) -> f32 {
    let p = p.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP);
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Multiclass cross-entropy of a softmax distribution against class `y`.
pub fn multiclass_ce_loss(probs: &[f32], y: usize) -> f32 {
    -probs[y].clamp(EPS_CLAMP, 1.0).ln()
}
