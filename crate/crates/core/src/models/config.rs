//! Architecture descriptions and their static shape checks.

use serde::{Deserialize, Serialize};

use super::schedule::SLOTS;
use crate::error::{Error, Result};
use crate::tensor::ops::{Activation, ConvSpec};

/// Samples per RNFL half fed to one sub-network.
pub const HALF_LENGTH: usize = 384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvSpec),
    MaxPool { window: usize },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv(c) => c.param_count(),
            LayerSpec::MaxPool { .. } => 0,
        }
    }

    fn output_shape(&self, shape: (usize, usize), ctx: &str) -> Result<(usize, usize)> {
        match self {
            LayerSpec::Conv(c) => {
                if c.in_channels != shape.0 {
                    return Err(Error::config(format!(
                        "{ctx}: conv expects {} input channels, receives {}",
                        c.in_channels, shape.0
                    )));
                }
                let len = c
                    .output_length(shape.1)
                    .map_err(|e| Error::config(format!("{ctx}: {e}")))?;
                Ok((c.out_channels, len))
            }
            LayerSpec::MaxPool { window } => {
                if *window == 0 || shape.1 % window != 0 {
                    return Err(Error::config(format!(
                        "{ctx}: max-pool window {window} does not divide length {}",
                        shape.1
                    )));
                }
                Ok((shape.0, shape.1 / window))
            }
        }
    }
}

/// Sequential layers plus an optional convolutional skip from the block
/// input, summed onto the main path output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub skip: Option<ConvSpec>,
}

impl ResidualBlock {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum::<usize>()
            + self.skip.map_or(0, |s| s.param_count())
    }

    fn output_shape(&self, input: (usize, usize), ctx: &str) -> Result<(usize, usize)> {
        let mut shape = input;
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape, &format!("{ctx} layer {i}"))?;
        }
        if let Some(skip) = &self.skip {
            let s = LayerSpec::Conv(*skip).output_shape(input, &format!("{ctx} skip"))?;
            if s != shape {
                return Err(Error::config(format!(
                    "{ctx}: skip connection yields {}x{} but main path yields {}x{}",
                    s.0, s.1, shape.0, shape.1
                )));
            }
        }
        Ok(shape)
    }
}

/// How the recursive passes are produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Progression {
    /// One layer applied on every pass.
    Shared { layer: ConvSpec },
    /// A distinct layer per pass.
    Unshared { layers: Vec<ConvSpec> },
}

impl Progression {
    pub fn param_count(&self) -> usize {
        match self {
            Progression::Shared { layer } => layer.param_count(),
            Progression::Unshared { layers } => layers.iter().map(ConvSpec::param_count).sum(),
        }
    }
}

/// One sub-network: coarse feature block, progression, projection block,
/// and the 1-channel head pooled down to [`SLOTS`] outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetConfig {
    pub input_length: usize,
    pub block1: ResidualBlock,
    pub progression: Progression,
    pub block3: ResidualBlock,
    pub block4: Vec<LayerSpec>,
}

/// Shapes produced by [`SubnetConfig::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubnetShapes {
    /// Shape of r^(0), and of every progression output.
    pub progression: (usize, usize),
}

impl SubnetConfig {
    pub fn param_count(&self) -> usize {
        self.block1.param_count()
            + self.progression.param_count()
            + self.block3.param_count()
            + self.block4.iter().map(LayerSpec::param_count).sum::<usize>()
    }

    /// Structural checks shared by every convolutional variant.
    pub fn validate(&self, passes: usize) -> Result<SubnetShapes> {
        let r0 = self
            .block1
            .output_shape((1, self.input_length), "block1")?;
        let prog_layers: Vec<&ConvSpec> = match &self.progression {
            Progression::Shared { layer } => vec![layer],
            Progression::Unshared { layers } => {
                if layers.len() != passes {
                    return Err(Error::config(format!(
                        "unshared progression has {} layers, expected {passes}",
                        layers.len()
                    )));
                }
                layers.iter().collect()
            }
        };
        for (i, layer) in prog_layers.iter().enumerate() {
            let out = LayerSpec::Conv(**layer).output_shape(r0, &format!("progression {i}"))?;
            if out != r0 || layer.in_channels != layer.out_channels {
                return Err(Error::config(format!(
                    "progression layer must preserve shape for recursion: {}x{} -> {}x{}",
                    r0.0, r0.1, out.0, out.1
                )));
            }
            if layer.activation != Activation::Linear {
                return Err(Error::config("progression layer must use linear activation"));
            }
        }
        let b3 = self.block3.output_shape(r0, "block3")?;
        let mut shape = b3;
        for (i, layer) in self.block4.iter().enumerate() {
            shape = layer.output_shape(shape, &format!("block4 layer {i}"))?;
        }
        if shape != (1, SLOTS) {
            return Err(Error::config(format!(
                "block3+block4 yield {}x{}, expected 1x{SLOTS}",
                shape.0, shape.1
            )));
        }
        match self.block4.first() {
            Some(LayerSpec::Conv(c)) if c.out_channels == 1 => {
                if c.activation != Activation::Linear {
                    return Err(Error::config("block4 conv must use linear activation"));
                }
            }
            _ => {
                return Err(Error::config(
                    "block4 must start with a 1-channel convolution",
                ))
            }
        }
        if !self.block4[1..]
            .iter()
            .all(|l| matches!(l, LayerSpec::MaxPool { .. }))
        {
            return Err(Error::config(
                "block4 may only contain max-pooling after its convolution",
            ));
        }
        for (name, block) in [("block1", &self.block1), ("block3", &self.block3)] {
            for layer in &block.layers {
                if let LayerSpec::Conv(c) = layer {
                    if c.activation != Activation::Relu {
                        return Err(Error::config(format!(
                            "{name} main-path convolutions must use ReLU"
                        )));
                    }
                }
            }
            if let Some(skip) = &block.skip {
                if skip.activation != Activation::Linear {
                    return Err(Error::config(format!("{name} skip must be linear")));
                }
            }
        }
        Ok(SubnetShapes { progression: r0 })
    }

    /// Shared-progression sub-network with the given channel widths:
    /// `features` after the first conv, `progression` through the
    /// recursion, `projection` in block 3.
    pub fn retinervenet(features: usize, progression: usize, projection: usize) -> Self {
        let (a, c, d) = (features, progression, projection);
        use Activation::{Linear, Relu};
        Self {
            input_length: HALF_LENGTH,
            block1: ResidualBlock {
                layers: vec![
                    LayerSpec::Conv(ConvSpec::new(1, a, 7, 2, 3, Relu)),
                    LayerSpec::MaxPool { window: 2 },
                    LayerSpec::Conv(ConvSpec::new(a, c, 5, 2, 2, Relu)),
                ],
                skip: Some(ConvSpec::new(1, c, 8, 8, 0, Linear)),
            },
            progression: Progression::Shared {
                layer: ConvSpec::new(c, c, 3, 1, 1, Linear),
            },
            block3: ResidualBlock {
                layers: vec![
                    LayerSpec::Conv(ConvSpec::new(c, d, 5, 1, 2, Relu)),
                    LayerSpec::MaxPool { window: 2 },
                    LayerSpec::Conv(ConvSpec::new(d, d, 5, 1, 0, Relu)),
                ],
                skip: Some(ConvSpec::new(c, d, 10, 2, 0, Linear)),
            },
            block4: vec![
                LayerSpec::Conv(ConvSpec::new(d, 1, 1, 1, 0, Linear)),
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::MaxPool { window: 2 },
            ],
        }
    }

    /// Same layer layout with one distinct progression layer per pass and
    /// no skip connections.
    pub fn vanilla(features: usize, progression: usize, projection: usize, passes: usize) -> Self {
        let mut cfg = Self::retinervenet(features, progression, projection);
        cfg.block1.skip = None;
        cfg.block3.skip = None;
        let layer = match cfg.progression {
            Progression::Shared { layer } => layer,
            Progression::Unshared { .. } => unreachable!(),
        };
        cfg.progression = Progression::Unshared {
            layers: vec![layer; passes],
        };
        cfg
    }
}

/// The network families.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Two shared-progression sub-networks and a learned MD mask.
    Retinervenet {
        superior: SubnetConfig,
        inferior: SubnetConfig,
    },
    /// Each hemifield a bias-free linear function of the opposite RNFL half.
    Linear,
    /// Per hemifield: 384 → hidden… → 26 with ReLU and biases.
    FullyConnected { hidden: Vec<usize> },
    /// Unshared progression, no skips.
    VanillaConv {
        superior: SubnetConfig,
        inferior: SubnetConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Retinervenet,
    Linear,
    FullyConnected,
    VanillaConv,
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Retinervenet { .. } => ModelKind::Retinervenet,
            Architecture::Linear => ModelKind::Linear,
            Architecture::FullyConnected { .. } => ModelKind::FullyConnected,
            Architecture::VanillaConv { .. } => ModelKind::VanillaConv,
        }
    }

    /// Channel widths (19, 15, 21) put each sub-network at 9432
    /// parameters, 18864 for the pair before the 52 mask logits.
    pub fn reference_retinervenet() -> Self {
        let sub = SubnetConfig::retinervenet(19, 15, 21);
        Architecture::Retinervenet {
            superior: sub.clone(),
            inferior: sub,
        }
    }

    /// A narrow RetiNerveNet with the reference layout, cheap enough for
    /// repeated training runs on one core.
    pub fn compact_retinervenet() -> Self {
        let sub = SubnetConfig::retinervenet(4, 6, 8);
        Architecture::Retinervenet {
            superior: sub.clone(),
            inferior: sub,
        }
    }

    /// Channel widths (22, 17, 26) give 27840 parameters in total.
    pub fn reference_vanilla_conv() -> Self {
        let sub = SubnetConfig::vanilla(22, 17, 26, super::schedule::PASSES);
        Architecture::VanillaConv {
            superior: sub.clone(),
            inferior: sub,
        }
    }

    pub fn fully_connected() -> Self {
        Architecture::FullyConnected {
            hidden: vec![32, 32],
        }
    }
}
