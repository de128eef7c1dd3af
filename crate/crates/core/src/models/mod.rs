//! RetiNerveNet, its three baselines, and the pass-to-location schedule.
//!
//! Each network has two sub-networks. The first RNFL half (indices 0..384,
//! temporal → superior → nasal) estimates the inferior visual hemifield;
//! the second half estimates the superior one. A convolutional sub-network
//! maps its half to a coarse feature map r⁽⁰⁾, applies the progression
//! layer seven times, and projects every r⁽ᵗ⁾ to five output slots of which
//! the first 5, 4, 4, 4, 4, 4 and 1 are kept.

pub mod config;
pub mod schedule;
mod variant;

pub use config::{Architecture, LayerSpec, ModelKind, Progression, ResidualBlock, SubnetConfig, HALF_LENGTH};
pub use schedule::{collect_outputs, HemifieldSchedule, PassSchedule, KEPT_PER_PASS, PASSES, SLOTS};
pub use variant::{
    ForwardNodes, GroupValues, ModelVariant, Normalization, Prediction, ValidationMetrics,
    FULLY_CONNECTED_PARAMS, LINEAR_PARAMS, MASK_PARAMS,
};

use crate::error::{Error, Result};
use crate::tensor::ops::{conv1d, Activation, ConvSpec};
use crate::tensor::FeatureMap;

/// Applies the same progression layer `passes` times, returning
/// `[r⁽¹⁾, …, r⁽ᵖᵃˢˢᵉˢ⁾]`.
pub fn rpl_unroll(
    r0: &FeatureMap,
    spec: &ConvSpec,
    kernel: &[f64],
    bias: &[f64],
    passes: usize,
) -> Result<Vec<FeatureMap>> {
    if spec.activation != Activation::Linear || spec.in_channels != spec.out_channels {
        return Err(Error::config(
            "progression layer must be linear and channel-preserving",
        ));
    }
    let mut out = Vec::with_capacity(passes);
    let mut r = r0.clone();
    for _ in 0..passes {
        let next = conv1d(&r, kernel, bias, spec)?;
        if next.shape() != r0.shape() {
            return Err(Error::Training(format!(
                "progression changed shape {:?} -> {:?}",
                r0.shape(),
                next.shape()
            )));
        }
        out.push(next.clone());
        r = next;
    }
    Ok(out)
}

/// `Σ_j softmax(logits)_j · vf_j`.
pub fn estimate_md(vf: &[f64], logits: &[f64]) -> Result<f64> {
    if vf.len() != logits.len() {
        return Err(Error::Shape {
            op: "estimate_md",
            detail: format!("{} values for {} logits", vf.len(), logits.len()),
        });
    }
    let w = crate::tensor::softmax(logits);
    Ok(w.iter().zip(vf).map(|(w, v)| w * v).sum())
}

/// Inclusive index ranges of r⁽⁰⁾ that can influence each of the five
/// output slots after `pass` (1-based) progression steps. Ranges are
/// hulls: a residual block contributes the union of its two paths.
pub fn slot_receptive_fields(cfg: &SubnetConfig, pass: usize) -> Result<Vec<(usize, usize)>> {
    let shapes = cfg.validate(PASSES)?;
    let r_len = shapes.progression.1;
    let prog: Vec<ConvSpec> = match &cfg.progression {
        Progression::Shared { layer } => vec![*layer; pass],
        Progression::Unshared { layers } => layers[..pass.min(layers.len())].to_vec(),
    };
    // forward lengths through block3 so each layer knows its input length
    let mut b3_lengths = vec![r_len];
    for l in &cfg.block3.layers {
        let n = *b3_lengths.last().unwrap();
        b3_lengths.push(match l {
            LayerSpec::Conv(c) => c.output_length(n)?,
            LayerSpec::MaxPool { window } => n / window,
        });
    }
    let mut b4_lengths = vec![*b3_lengths.last().unwrap()];
    for l in &cfg.block4 {
        let n = *b4_lengths.last().unwrap();
        b4_lengths.push(match l {
            LayerSpec::Conv(c) => c.output_length(n)?,
            LayerSpec::MaxPool { window } => n / window,
        });
    }
    let back = |layer: &LayerSpec, (lo, hi): (usize, usize), in_len: usize| -> (usize, usize) {
        match layer {
            LayerSpec::Conv(c) => {
                let start = (lo * c.stride) as isize - c.padding as isize;
                let end = (hi * c.stride + c.width - 1) as isize - c.padding as isize;
                (start.max(0) as usize, (end.max(0) as usize).min(in_len - 1))
            }
            LayerSpec::MaxPool { window } => (lo * window, (hi * window + window - 1).min(in_len - 1)),
        }
    };
    let mut fields = Vec::new();
    for slot in 0..SLOTS {
        let mut range = (slot, slot);
        for (i, l) in cfg.block4.iter().enumerate().rev() {
            range = back(l, range, b4_lengths[i]);
        }
        let out_range = range;
        for (i, l) in cfg.block3.layers.iter().enumerate().rev() {
            range = back(l, range, b3_lengths[i]);
        }
        if let Some(skip) = &cfg.block3.skip {
            let s = back(&LayerSpec::Conv(*skip), out_range, r_len);
            range = (range.0.min(s.0), range.1.max(s.1));
        }
        for p in prog.iter().rev() {
            range = back(&LayerSpec::Conv(*p), range, r_len);
        }
        fields.push(range);
    }
    Ok(fields)
}

/// How many of the five output slots of `pass` can be influenced by
/// element `position` of r⁽⁰⁾.
pub fn affected_slots(cfg: &SubnetConfig, pass: usize, position: usize) -> Result<usize> {
    Ok(slot_receptive_fields(cfg, pass)?
        .iter()
        .filter(|(lo, hi)| (*lo..=*hi).contains(&position))
        .count())
}
