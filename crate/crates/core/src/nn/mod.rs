//! Minimal feedforward network: linear layers with optional per-sample
//! (instance) normalization and ReLU, plus a single-logit sigmoid head or a
//! C-class softmax head. Forward, exact backprop and optimizers are all
//! hand-rolled over flat `f32` parameter vectors so that the same arrays can
//! be aggregated elementwise and shipped over the wire unchanged.

mod backward;
mod forward;
mod optim;

pub use backward::{gradient_binary, gradient_multiclass};
pub use forward::{
    binary_ce_loss, forward_binary, forward_multiclass, instance_normalize, multiclass_ce_loss,
    ForwardTrace,
};
pub use optim::{OptimizerKind, OptimizerState};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance floor for instance normalization.
pub const EPS_NORM: f32 = 1e-5;
/// Clamp for probabilities entering a logarithm.
pub const EPS_CLAMP: f32 = 1e-7;

/// Architecture description. The feature extractor (hidden layers) is shared
/// between the binary isolation head and the multiclass primary head; the
/// latent dimension is the last hidden width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub use_instance_norm: bool,
    /// Class count C for the multiclass head.
    pub num_classes: usize,
    /// Seed for weight initialization.
    pub seed: u64,
}

/// Which classification head sits on top of the feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Binary,
    Multiclass,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::InvalidSpec("hidden_widths must be non-empty".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidSpec("hidden widths must be positive".into()));
        }
        if self.use_instance_norm && self.hidden_widths.iter().any(|&w| w < 2) {
            // variance over a length-1 vector is degenerate
            return Err(Error::InvalidSpec(
                "hidden widths must be >= 2 when use_instance_norm is set".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        *self.hidden_widths.last().expect("non-empty hidden_widths")
    }

    /// Parameter layout for this spec with the given head. A pure function of
    /// the spec, so two nodes sharing a spec always agree on offsets.
    pub fn layout(&self, head: HeadKind) -> Layout {
        let mut segments = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &width) in self.hidden_widths.iter().enumerate() {
            segments.push(Segment::new(format!("layer{i}.weight"), width, fan_in));
            segments.push(Segment::new(format!("layer{i}.bias"), width, 1));
            if self.use_instance_norm {
                segments.push(Segment::new(format!("layer{i}.norm_gain"), width, 1));
                segments.push(Segment::new(format!("layer{i}.norm_bias"), width, 1));
            }
            fan_in = width;
        }
        let head_rows = match head {
            HeadKind::Binary => 1,
            HeadKind::Multiclass => self.num_classes,
        };
        segments.push(Segment::new("head.weight".into(), head_rows, fan_in));
        segments.push(Segment::new("head.bias".into(), head_rows, 1));
        Layout::new(segments)
    }
}

/// One named block of parameters with a (rows, cols) shape; vectors use cols = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: (usize, usize),
}

impl Segment {
    fn new(name: String, rows: usize, cols: usize) -> Self {
        Segment { name, shape: (rows, cols) }
    }

    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of segments with precomputed offsets into the flat array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(segments: Vec<Segment>) -> Self {
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for seg in &segments {
            offsets.push(total);
            total += seg.len();
        }
        Layout { segments, offsets, total }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.segments
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.offsets[i]..self.offsets[i] + self.segments[i].len())
    }
}

/// Flat array of 32-bit weights plus the layout describing it. This is the
/// unit exchanged between nodes and the operand of the round aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f32>,
    pub layout: Layout,
}

impl ParameterVector {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        ParameterVector { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f32]> {
        self.layout.range_of(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        self.layout.range_of(name).map(|r| &mut self.values[r])
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &ParameterVector) -> Result<ParameterVector> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ParameterVector { values, layout: self.layout.clone() })
    }

    /// Elementwise `c * self`.
    pub fn scale(&self, c: f32) -> ParameterVector {
        let values = self.values.iter().map(|v| c * v).collect();
        ParameterVector { values, layout: self.layout.clone() }
    }

    /// CRC-32 over the little-endian byte image; used to fingerprint the
    /// exchanged parameters in transcripts.
    pub fn crc32(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for v in &self.values {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }

    /// Copies every `layer*` segment (the feature extractor) from `source`.
    /// Head segments are left untouched, so the two vectors may carry
    /// different heads as long as the hidden stack matches.
    pub fn copy_feature_extractor_from(&mut self, source: &ParameterVector) -> Result<()> {
        for seg in source.layout.segments() {
            if !seg.name.starts_with("layer") {
                continue;
            }
            let src = source
                .segment(&seg.name)
                .expect("segment listed by its own layout");
            let dst = self
                .segment_mut(&seg.name)
                .ok_or(Error::LayoutMismatch)?;
            if src.len() != dst.len() {
                return Err(Error::LayoutMismatch);
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Initialize parameters for `spec` with the given head. Linear weights and
/// biases are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; normalization
/// gains start at 1 and biases at 0. Deterministic given `spec.seed`.
pub fn init_params(spec: &NetworkSpec, head: HeadKind) -> Result<ParameterVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = spec.layout(head);
    let mut params = ParameterVector::zeros(layout);
    for seg in params.layout.segments().to_vec() {
        let range = params.layout.range_of(&seg.name).expect("own segment");
        if seg.name.ends_with("norm_gain") {
            params.values[range].fill(1.0);
        } else if seg.name.ends_with("norm_bias") {
            params.values[range].fill(0.0);
        } else {
            // weight or bias of a linear map; bound derives from the weight fan-in
            let fan_in = if seg.name.ends_with("weight") {
                seg.shape.1
            } else {
                linear_fan_in(spec, &seg.name)
            };
            let bound = 1.0 / (fan_in as f32).sqrt();
            for v in &mut params.values[range] {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }
    Ok(params)
}

fn linear_fan_in(spec: &NetworkSpec, bias_name: &str) -> usize {
    if bias_name == "head.bias" {
        return spec.latent_dim();
    }
    let idx: usize = bias_name
        .trim_start_matches("layer")
        .trim_end_matches(".bias")
        .parse()
        .expect("layer bias segment name");
    if idx == 0 {
        spec.input_dim
    } else {
        spec.hidden_widths[idx - 1]
    }
}
