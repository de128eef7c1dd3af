//! Forward and adjoint kernels for the layer kinds the networks use.
//!
//! These operate on raw slices; [`Tape`](super::Tape) wraps them with
//! bookkeeping. The free functions [`conv1d`] and [`maxpool1d`] are the
//! checked, allocation-returning entry points.

use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Linear => x,
        }
    }
}

/// Geometry of one 1D convolution layer. Kernel layout is
/// `(out_channels, in_channels, width)`, bias is `(out_channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    pub activation: Activation,
}

fn one() -> usize {
    1
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            width,
            stride,
            padding,
            activation,
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.width
    }

    /// Kernel plus bias.
    pub fn param_count(&self) -> usize {
        self.kernel_len() + self.out_channels
    }

    /// Output length for an input of `length`, floor semantics.
    pub fn output_length(&self, length: usize) -> Result<usize> {
        if self.width == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!(
                    "channels, width and stride must be positive (in {}, out {}, width {}, stride {})",
                    self.in_channels, self.out_channels, self.width, self.stride
                ),
            });
        }
        let padded = length + 2 * self.padding;
        if padded < self.width {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!(
                    "padded length {padded} (length {length} + 2x{}) shorter than width {}",
                    self.padding, self.width
                ),
            });
        }
        Ok((padded - self.width) / self.stride + 1)
    }

    fn check_input(&self, input: &FeatureMap) -> Result<usize> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!(
                    "input has {} channels, kernel expects {}",
                    input.channels(),
                    self.in_channels
                ),
            });
        }
        self.output_length(input.length())
    }
}

fn pad(input: &FeatureMap, padding: usize) -> Vec<f64> {
    if padding == 0 {
        return input.values().to_vec();
    }
    let len = input.length();
    let plen = len + 2 * padding;
    let mut out = vec![0.0; input.channels() * plen];
    for c in 0..input.channels() {
        out[c * plen + padding..c * plen + padding + len].copy_from_slice(input.channel(c));
    }
    out
}

/// Cross-correlation with per-channel bias followed by the activation.
///
/// Returns the activated output; the padded input is returned alongside
/// so the adjoint does not need to rebuild it.
pub(crate) fn conv1d_forward(
    input: &FeatureMap,
    kernel: &[f64],
    bias: &[f64],
    spec: &ConvSpec,
) -> Result<(FeatureMap, Vec<f64>)> {
    let out_len = spec.check_input(input)?;
    if kernel.len() != spec.kernel_len() || bias.len() != spec.out_channels {
        return Err(Error::Shape {
            op: "conv1d",
            detail: format!(
                "kernel has {} values (expected {}x{}x{} = {}), bias has {} (expected {})",
                kernel.len(),
                spec.out_channels,
                spec.in_channels,
                spec.width,
                spec.kernel_len(),
                bias.len(),
                spec.out_channels
            ),
        });
    }
    let padded = pad(input, spec.padding);
    let plen = input.length() + 2 * spec.padding;
    let (w, s) = (spec.width, spec.stride);
    let mut out = vec![0.0; spec.out_channels * out_len];
    for o in 0..spec.out_channels {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        row.fill(bias[o]);
        for i in 0..spec.in_channels {
            let x = &padded[i * plen..(i + 1) * plen];
            let krow = &kernel[(o * spec.in_channels + i) * w..(o * spec.in_channels + i + 1) * w];
            for (k, &wk) in krow.iter().enumerate() {
                if s == 1 {
                    for (r, xv) in row.iter_mut().zip(&x[k..k + out_len]) {
                        *r += wk * xv;
                    }
                } else {
                    for (t, r) in row.iter_mut().enumerate() {
                        *r += wk * x[t * s + k];
                    }
                }
            }
        }
        if spec.activation == Activation::Relu {
            for r in row.iter_mut() {
                *r = Activation::Relu.apply(*r);
            }
        }
    }
    Ok((FeatureMap::from_raw(spec.out_channels, out_len, out), padded))
}

/// Adjoint of [`conv1d_forward`]. Accumulates into `grad_kernel`,
/// `grad_bias` and (if given) `grad_input`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    spec: &ConvSpec,
    in_len: usize,
    padded: &[f64],
    output: &FeatureMap,
    grad_out: &[f64],
    kernel: &[f64],
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    let out_len = output.length();
    let plen = in_len + 2 * spec.padding;
    let (w, s) = (spec.width, spec.stride);

    let mut g_pre = grad_out.to_vec();
    if spec.activation == Activation::Relu {
        // Subgradient at exactly zero is zero.
        for (g, &y) in g_pre.iter_mut().zip(output.values()) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
    }

    let mut g_padded = grad_input.as_ref().map(|_| vec![0.0; spec.in_channels * plen]);
    for o in 0..spec.out_channels {
        let g = &g_pre[o * out_len..(o + 1) * out_len];
        grad_bias[o] += g.iter().sum::<f64>();
        for i in 0..spec.in_channels {
            let x = &padded[i * plen..(i + 1) * plen];
            let base = (o * spec.in_channels + i) * w;
            for k in 0..w {
                let acc: f64 = if s == 1 {
                    g.iter().zip(&x[k..k + out_len]).map(|(a, b)| a * b).sum()
                } else {
                    g.iter().enumerate().map(|(t, a)| a * x[t * s + k]).sum()
                };
                grad_kernel[base + k] += acc;
                if let Some(gp) = g_padded.as_mut() {
                    let wk = kernel[base + k];
                    let gx = &mut gp[i * plen..(i + 1) * plen];
                    if s == 1 {
                        for (d, a) in gx[k..k + out_len].iter_mut().zip(g) {
                            *d += wk * a;
                        }
                    } else {
                        for (t, a) in g.iter().enumerate() {
                            gx[t * s + k] += wk * a;
                        }
                    }
                }
            }
        }
    }
    if let (Some(gi), Some(gp)) = (grad_input, g_padded) {
        for i in 0..spec.in_channels {
            let src = &gp[i * plen + spec.padding..i * plen + spec.padding + in_len];
            for (d, v) in gi[i * in_len..(i + 1) * in_len].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
}

pub(crate) fn check_pool(input: &FeatureMap, window: usize) -> Result<usize> {
    if window == 0 || input.length() % window != 0 {
        return Err(Error::Shape {
            op: "maxpool1d",
            detail: format!(
                "length {} is not divisible by window {window}",
                input.length()
            ),
        });
    }
    Ok(input.length() / window)
}

/// Non-overlapping max pooling. Ties resolve to the lowest index, which
/// is also where the adjoint is routed.
pub(crate) fn maxpool1d_forward(
    input: &FeatureMap,
    window: usize,
) -> Result<(FeatureMap, Vec<usize>)> {
    let out_len = check_pool(input, window)?;
    let channels = input.channels();
    let mut out = Vec::with_capacity(channels * out_len);
    let mut argmax = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        let x = input.channel(c);
        for t in 0..out_len {
            let start = t * window;
            let mut best = start;
            for j in start + 1..start + window {
                if x[j] > x[best] {
                    best = j;
                }
            }
            out.push(x[best]);
            argmax.push(c * input.length() + best);
        }
    }
    Ok((FeatureMap::from_raw(channels, out_len, out), argmax))
}

/// `y = act(W x + b)` over the flattened input. `W` is `(out, in)` row-major.
pub(crate) fn dense_forward(
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    outputs: usize,
    activation: Activation,
) -> Vec<f64> {
    let n = input.len();
    (0..outputs)
        .map(|o| {
            let row = &weight[o * n..(o + 1) * n];
            let mut acc: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
            if let Some(b) = bias {
                acc += b[o];
            }
            activation.apply(acc)
        })
        .collect()
}

/// Checked convolution: `kernel` is `(out, in, width)` and `bias` `(out)`.
///
/// ```
/// use retinn::tensor::{FeatureMap, ops::{conv1d, Activation, ConvSpec}};
/// let x = FeatureMap::from_row(&[1.0, 2.0, 3.0, 4.0]).unwrap();
/// let spec = ConvSpec::new(1, 1, 2, 1, 0, Activation::Linear);
/// let y = conv1d(&x, &[1.0, 1.0], &[0.0], &spec).unwrap();
/// assert_eq!(y.values(), &[3.0, 5.0, 7.0]);
/// ```
pub fn conv1d(
    input: &FeatureMap,
    kernel: &[f64],
    bias: &[f64],
    spec: &ConvSpec,
) -> Result<FeatureMap> {
    conv1d_forward(input, kernel, bias, spec).map(|(y, _)| y)
}

pub fn maxpool1d(input: &FeatureMap, window: usize) -> Result<FeatureMap> {
    maxpool1d_forward(input, window).map(|(y, _)| y)
}
