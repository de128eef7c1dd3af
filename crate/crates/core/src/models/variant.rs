use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{Architecture, LayerSpec, ModelKind, Progression, ResidualBlock, SubnetConfig, HALF_LENGTH};
use super::schedule::{PassSchedule, SlotRef, PASSES};
use crate::dataio::{DiseaseGroup, RNFL_LENGTH};
use crate::error::{Error, Result};
use crate::grid::NUM_LOCATIONS;
use crate::objective::LossHyper;
use crate::tensor::ops::{Activation, ConvSpec};
use crate::tensor::{ConvParams, DenseParams, FeatureMap, NodeId, ParamEntry, ParamId, ParameterStore, Tape};

pub const LINEAR_PARAMS: usize = 19968;
pub const FULLY_CONNECTED_PARAMS: usize = 28468;
pub const MASK_PARAMS: usize = NUM_LOCATIONS;

/// Per-input z-score statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Population statistics per input position. Positions with (near)
    /// zero spread are only centred.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::data("cannot fit normalization on zero rows"));
        };
        let n = first.len();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for r in &rows {
            if r.len() != n {
                return Err(Error::data("rows of unequal length"));
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape {
                op: "normalize",
                detail: format!("input has {} values, expected {}", x.len(), self.mean.len()),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

/// One value per evaluation group; `None` when the group had no exams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupValues {
    pub early: Option<f64>,
    pub moderate: Option<f64>,
    pub advanced: Option<f64>,
}

impl GroupValues {
    pub fn get(&self, g: DiseaseGroup) -> Option<f64> {
        match g {
            DiseaseGroup::Early => self.early,
            DiseaseGroup::Moderate => self.moderate,
            DiseaseGroup::Advanced => self.advanced,
        }
    }

    pub fn set(&mut self, g: DiseaseGroup, v: Option<f64>) {
        match g {
            DiseaseGroup::Early => self.early = v,
            DiseaseGroup::Moderate => self.moderate = v,
            DiseaseGroup::Advanced => self.advanced = v,
        }
    }

    /// Unweighted mean over the groups that are present.
    pub fn mean_present(&self) -> Option<f64> {
        let v: Vec<f64> = DiseaseGroup::ALL.iter().filter_map(|&g| self.get(g)).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    /// Composite training objective on the validation split.
    pub loss: f64,
    pub overall_mae: f64,
    pub mae: GroupValues,
    pub md_mae: GroupValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub vf: Vec<f64>,
    pub md: f64,
}

/// Nodes produced by recording one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// 1×52 estimate in canonical location order.
    pub vf: NodeId,
    pub md: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitRole {
    Relu,
    Linear,
    /// Recursion layers start near the identity map.
    Identity,
}

#[derive(Debug, Clone)]
enum LayerHandle {
    Conv(ConvParams),
    Pool(usize),
}

#[derive(Debug, Clone)]
struct BlockHandles {
    layers: Vec<LayerHandle>,
    skip: Option<ConvParams>,
}

#[derive(Debug, Clone)]
struct SubnetHandles {
    block1: BlockHandles,
    /// One entry when shared, one per pass otherwise.
    progression: Vec<ConvParams>,
    block3: BlockHandles,
    block4: Vec<LayerHandle>,
}

#[derive(Debug, Clone)]
enum Handles {
    Conv {
        superior: SubnetHandles,
        inferior: SubnetHandles,
        mask: Option<ParamId>,
    },
    Dense {
        superior: Vec<DenseParams>,
        inferior: Vec<DenseParams>,
    },
}

struct Builder {
    store: ParameterStore,
    roles: Vec<(ParamId, Option<ParamId>, usize, InitRole)>,
}

impl Builder {
    fn conv(&mut self, name: &str, spec: ConvSpec, role: InitRole) -> Result<ConvParams> {
        let kernel = self.store.add(
            format!("{name}.kernel"),
            &[spec.out_channels, spec.in_channels, spec.width],
        )?;
        let bias = self.store.add(format!("{name}.bias"), &[spec.out_channels])?;
        self.roles
            .push((kernel, Some(bias), spec.in_channels * spec.width, role));
        Ok(ConvParams { spec, kernel, bias })
    }

    fn layers(&mut self, prefix: &str, layers: &[LayerSpec], last_linear: bool) -> Result<Vec<LayerHandle>> {
        layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                LayerSpec::Conv(c) => {
                    let role = if last_linear || c.activation == Activation::Linear {
                        InitRole::Linear
                    } else {
                        InitRole::Relu
                    };
                    Ok(LayerHandle::Conv(self.conv(&format!("{prefix}.layer{i}"), *c, role)?))
                }
                LayerSpec::MaxPool { window } => Ok(LayerHandle::Pool(*window)),
            })
            .collect()
    }

    fn block(&mut self, prefix: &str, block: &ResidualBlock) -> Result<BlockHandles> {
        let layers = self.layers(prefix, &block.layers, false)?;
        let skip = block
            .skip
            .map(|s| self.conv(&format!("{prefix}.skip"), s, InitRole::Linear))
            .transpose()?;
        Ok(BlockHandles { layers, skip })
    }

    fn subnet(&mut self, prefix: &str, cfg: &SubnetConfig) -> Result<SubnetHandles> {
        let block1 = self.block(&format!("{prefix}.block1"), &cfg.block1)?;
        let progression = match &cfg.progression {
            Progression::Shared { layer } => {
                vec![self.conv(&format!("{prefix}.rpl"), *layer, InitRole::Identity)?]
            }
            Progression::Unshared { layers } => layers
                .iter()
                .enumerate()
                .map(|(t, l)| self.conv(&format!("{prefix}.progression{t}"), *l, InitRole::Identity))
                .collect::<Result<_>>()?,
        };
        let block3 = self.block(&format!("{prefix}.block3"), &cfg.block3)?;
        let block4 = self.layers(&format!("{prefix}.block4"), &cfg.block4, true)?;
        Ok(SubnetHandles {
            block1,
            progression,
            block3,
            block4,
        })
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize, bias: bool, activation: Activation) -> Result<DenseParams> {
        let weight = self.store.add(format!("{name}.weight"), &[outputs, inputs])?;
        let bias = if bias {
            Some(self.store.add(format!("{name}.bias"), &[outputs])?)
        } else {
            None
        };
        let role = match activation {
            Activation::Relu => InitRole::Relu,
            Activation::Linear => InitRole::Linear,
        };
        self.roles.push((weight, bias, inputs, role));
        Ok(DenseParams {
            weight,
            bias,
            outputs,
            activation,
        })
    }
}

/// A network of one of the four families, its parameters, and the
/// training context it was produced under.
#[derive(Debug, Clone)]
pub struct ModelVariant {
    pub architecture: Architecture,
    pub schedule: PassSchedule,
    pub params: ParameterStore,
    pub hyper: LossHyper,
    pub normalization: Normalization,
    pub validation: Option<ValidationMetrics>,
    handles: Handles,
    roles: Vec<(ParamId, Option<ParamId>, usize, InitRole)>,
}

fn check_subnet(cfg: &SubnetConfig, kind: ModelKind) -> Result<()> {
    cfg.validate(PASSES)?;
    if cfg.input_length != HALF_LENGTH {
        return Err(Error::config(format!(
            "sub-network input length {} must be {HALF_LENGTH}",
            cfg.input_length
        )));
    }
    match kind {
        ModelKind::Retinervenet => {
            if !matches!(cfg.progression, Progression::Shared { .. }) {
                return Err(Error::config("RetiNerveNet needs one shared progression layer"));
            }
            if cfg.block1.skip.is_none() || cfg.block3.skip.is_none() {
                return Err(Error::config("RetiNerveNet blocks 1 and 3 need skip convolutions"));
            }
        }
        ModelKind::VanillaConv => {
            if !matches!(cfg.progression, Progression::Unshared { .. }) {
                return Err(Error::config("vanilla convolutional model needs unshared progression layers"));
            }
            if cfg.block1.skip.is_some() || cfg.block3.skip.is_some() {
                return Err(Error::config("vanilla convolutional model has no skip connections"));
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

impl ModelVariant {
    /// Validates `architecture`, registers its parameters and initializes
    /// them from `seed`.
    pub fn build(architecture: Architecture, schedule: PassSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        let mut b = Builder {
            store: ParameterStore::new(),
            roles: Vec::new(),
        };
        let handles = match &architecture {
            Architecture::Retinervenet { superior, inferior } | Architecture::VanillaConv { superior, inferior } => {
                let kind = architecture.kind();
                check_subnet(superior, kind)?;
                check_subnet(inferior, kind)?;
                let sup = b.subnet("superior", superior)?;
                let inf = b.subnet("inferior", inferior)?;
                let mask = if kind == ModelKind::Retinervenet {
                    Some(b.store.add("md_mask.logits", &[MASK_PARAMS])?)
                } else {
                    None
                };
                Handles::Conv {
                    superior: sup,
                    inferior: inf,
                    mask,
                }
            }
            Architecture::Linear => {
                let sup = vec![b.dense("superior.linear", HALF_LENGTH, 26, false, Activation::Linear)?];
                let inf = vec![b.dense("inferior.linear", HALF_LENGTH, 26, false, Activation::Linear)?];
                Handles::Dense {
                    superior: sup,
                    inferior: inf,
                }
            }
            Architecture::FullyConnected { hidden } => {
                let mut make = |prefix: &str| -> Result<Vec<DenseParams>> {
                    let mut layers = Vec::new();
                    let mut width = HALF_LENGTH;
                    for (i, &h) in hidden.iter().enumerate() {
                        layers.push(b.dense(&format!("{prefix}.dense{i}"), width, h, true, Activation::Relu)?);
                        width = h;
                    }
                    layers.push(b.dense(&format!("{prefix}.dense{}", hidden.len()), width, 26, true, Activation::Linear)?);
                    Ok(layers)
                };
                let sup = make("superior")?;
                let inf = make("inferior")?;
                Handles::Dense {
                    superior: sup,
                    inferior: inf,
                }
            }
        };
        let expected = match &architecture {
            Architecture::Linear => Some(LINEAR_PARAMS),
            Architecture::FullyConnected { .. } => Some(FULLY_CONNECTED_PARAMS),
            _ => None,
        };
        if let Some(expected) = expected {
            let got = b.store.total_count();
            if got != expected {
                return Err(Error::config(format!(
                    "{:?} baseline has {got} parameters, expected {expected}",
                    architecture.kind()
                )));
            }
        }
        let mut model = Self {
            architecture,
            schedule,
            params: b.store,
            hyper: LossHyper::default(),
            normalization: Normalization::identity(RNFL_LENGTH),
            validation: None,
            handles,
            roles: b.roles,
        };
        model.initialize(seed)?;
        Ok(model)
    }

    pub fn build_retinervenet(superior: SubnetConfig, inferior: SubnetConfig, schedule: PassSchedule, seed: u64) -> Result<Self> {
        Self::build(Architecture::Retinervenet { superior, inferior }, schedule, seed)
    }

    /// Rebuilds a model and loads stored parameter values, checking that
    /// names and shapes agree with the architecture.
    pub fn from_entries(architecture: Architecture, schedule: PassSchedule, entries: Vec<ParamEntry>) -> Result<Self> {
        let mut model = Self::build(architecture, schedule, 0)?;
        if entries.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter entries stored, architecture defines {}",
                entries.len(),
                model.params.len()
            )));
        }
        for (stored, fresh) in entries.iter().zip(model.params.entries()) {
            if stored.name != fresh.name || stored.shape != fresh.shape {
                return Err(Error::Checkpoint(format!(
                    "stored parameter `{}` {:?} does not match `{}` {:?}",
                    stored.name, stored.shape, fresh.name, fresh.shape
                )));
            }
        }
        model.params = ParameterStore::from_entries(entries)?;
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.architecture.kind()
    }

    pub fn param_count(&self) -> usize {
        self.params.total_count()
    }

    /// He-normal for ReLU layers, 1/fan-in variance for linear ones,
    /// identity plus small noise for progression layers; biases and mask
    /// logits start at zero.
    pub fn initialize(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(w, bias, fan_in, role) in &self.roles {
            let fan = fan_in.max(1) as f64;
            let sd = match role {
                InitRole::Relu => (2.0 / fan).sqrt(),
                InitRole::Linear => (1.0 / fan).sqrt(),
                InitRole::Identity => 0.05 / fan.sqrt(),
            };
            let normal = Normal::new(0.0, sd).map_err(|e| Error::config(e.to_string()))?;
            let shape = self.params.entry(w).shape.clone();
            let values = self.params.values_mut(w);
            for v in values.iter_mut() {
                *v = normal.sample(&mut rng);
            }
            if role == InitRole::Identity {
                let (out, inp, width) = (shape[0], shape[1], shape[2]);
                for c in 0..out.min(inp) {
                    values[(c * inp + c) * width + width / 2] += 1.0;
                }
            }
            if let Some(b) = bias {
                self.params.values_mut(b).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for e in 0..self.params.len() {
            let id = ParamId(e);
            if self.params.entry(id).name == "md_mask.logits" {
                self.params.values_mut(id).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(())
    }

    /// Shifts the output layer's bias so an untrained model predicts
    /// `offset` dB. A no-op for the bias-free linear baseline.
    pub fn set_output_offset(&mut self, offset: f64) {
        let biases: Vec<ParamId> = match &self.handles {
            Handles::Conv { superior, inferior, .. } => [superior, inferior]
                .iter()
                .filter_map(|s| match s.block4.first() {
                    Some(LayerHandle::Conv(c)) => Some(c.bias),
                    _ => None,
                })
                .collect(),
            Handles::Dense { superior, inferior } => [superior, inferior]
                .iter()
                .filter_map(|l| l.last().and_then(|d| d.bias))
                .collect(),
        };
        for b in biases {
            self.params.values_mut(b).iter_mut().for_each(|v| *v = offset);
        }
    }

    /// Name of the shared progression kernel/bias of each sub-network
    /// (RetiNerveNet only).
    pub fn rpl_params(&self) -> Option<[ConvParams; 2]> {
        match &self.handles {
            Handles::Conv { superior, inferior, .. } if superior.progression.len() == 1 => {
                Some([superior.progression[0], inferior.progression[0]])
            }
            _ => None,
        }
    }

    /// Records the forward pass for an already-normalized input.
    pub fn record(&self, tape: &mut Tape<'_>, x: &[f64]) -> Result<ForwardNodes> {
        if x.len() != RNFL_LENGTH {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("input has {} values, expected {RNFL_LENGTH}", x.len()),
            });
        }
        let first = tape.input(FeatureMap::new(1, HALF_LENGTH, x[..HALF_LENGTH].to_vec())?);
        let second = tape.input(FeatureMap::new(1, HALF_LENGTH, x[HALF_LENGTH..].to_vec())?);
        // The first RNFL half (temporal → superior → nasal) maps onto the
        // inferior visual hemifield, the second half onto the superior one.
        let mut sources = vec![(first, 0); NUM_LOCATIONS];
        let mask = match &self.handles {
            Handles::Conv {
                superior,
                inferior,
                mask,
            } => {
                let from_first = record_subnet(tape, superior, first)?;
                let from_second = record_subnet(tape, inferior, second)?;
                place(&mut sources, &self.schedule.inferior_locations, &self.schedule.inferior.positions, &from_first);
                place(&mut sources, &self.schedule.superior_locations, &self.schedule.superior.positions, &from_second);
                *mask
            }
            Handles::Dense { superior, inferior } => {
                let a = record_dense(tape, superior, first)?;
                let b = record_dense(tape, inferior, second)?;
                for (k, &loc) in self.schedule.inferior_locations.iter().enumerate() {
                    sources[loc] = (a, k);
                }
                for (k, &loc) in self.schedule.superior_locations.iter().enumerate() {
                    sources[loc] = (b, k);
                }
                None
            }
        };
        let vf = tape.gather(&sources)?;
        let md = match mask {
            Some(logits) => tape.softmax_pool(vf, logits)?,
            None => tape.mean(vf),
        };
        Ok(ForwardNodes { vf, md })
    }

    /// Forward pass on a normalized input.
    pub fn forward_normalized(&self, x: &[f64]) -> Result<Prediction> {
        let mut tape = Tape::new(&self.params);
        let nodes = self.record(&mut tape, x)?;
        let vf = tape.value(nodes.vf).values().to_vec();
        let md = tape.scalar(nodes.md)?;
        if !md.is_finite() || vf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inference("model produced non-finite output".into()));
        }
        Ok(Prediction { vf, md })
    }

    /// Normalizes raw RNFL thickness with the stored statistics, then runs
    /// the forward pass.
    pub fn predict(&self, rnfl: &[f64]) -> Result<Prediction> {
        let x = self.normalization.apply(rnfl)?;
        self.forward_normalized(&x)
    }

    /// Per-pass 1×5 outputs of both sub-networks for a normalized input
    /// (`[first half, second half]`). Dense baselines have none.
    pub fn pass_outputs(&self, x: &[f64]) -> Result<Option<[Vec<Vec<f64>>; 2]>> {
        let Handles::Conv { superior, inferior, .. } = &self.handles else {
            return Ok(None);
        };
        let mut tape = Tape::new(&self.params);
        let first = tape.input(FeatureMap::new(1, HALF_LENGTH, x[..HALF_LENGTH].to_vec())?);
        let second = tape.input(FeatureMap::new(1, HALF_LENGTH, x[HALF_LENGTH..].to_vec())?);
        let a = record_subnet(&mut tape, superior, first)?;
        let b = record_subnet(&mut tape, inferior, second)?;
        let read = |nodes: &[NodeId]| nodes.iter().map(|&n| tape.value(n).values().to_vec()).collect();
        Ok(Some([read(&a), read(&b)]))
    }
}

fn place(sources: &mut [(NodeId, usize)], locations: &[usize], positions: &[SlotRef], passes: &[NodeId]) {
    for (&loc, &(p, s)) in locations.iter().zip(positions) {
        sources[loc] = (passes[p], s);
    }
}

fn record_layers(tape: &mut Tape<'_>, layers: &[LayerHandle], mut x: NodeId) -> Result<NodeId> {
    for layer in layers {
        x = match layer {
            LayerHandle::Conv(c) => tape.conv1d(x, *c)?,
            LayerHandle::Pool(w) => tape.maxpool1d(x, *w)?,
        };
    }
    Ok(x)
}

fn record_block(tape: &mut Tape<'_>, block: &BlockHandles, x: NodeId) -> Result<NodeId> {
    let main = record_layers(tape, &block.layers, x)?;
    match block.skip {
        Some(skip) => {
            let s = tape.conv1d(x, skip)?;
            tape.add(main, s)
        }
        None => Ok(main),
    }
}

/// Returns the seven 1×5 pass outputs.
fn record_subnet(tape: &mut Tape<'_>, h: &SubnetHandles, input: NodeId) -> Result<Vec<NodeId>> {
    let mut r = record_block(tape, &h.block1, input)?;
    let mut outputs = Vec::with_capacity(PASSES);
    for t in 0..PASSES {
        let layer = h.progression[if h.progression.len() == 1 { 0 } else { t }];
        r = tape.conv1d(r, layer)?;
        let y = record_block(tape, &h.block3, r)?;
        outputs.push(record_layers(tape, &h.block4, y)?);
    }
    Ok(outputs)
}

fn record_dense(tape: &mut Tape<'_>, layers: &[DenseParams], mut x: NodeId) -> Result<NodeId> {
    for l in layers {
        x = tape.dense(x, *l)?;
    }
    Ok(x)
}
