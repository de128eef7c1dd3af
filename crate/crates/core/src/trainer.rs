//! Mini-batch Adam training with early stopping, multi-seed repetition and
//! the (α, β) grid.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataio::{assign_group, DiseaseGroup, PairedExam};
use crate::error::{Error, Result};
use crate::models::{Architecture, GroupValues, ModelVariant, Normalization, PassSchedule, ValidationMetrics};
use crate::objective::{held_out_sample_weights, location_weights, sample_weights, LossHyper, VfCoordinates};
use crate::tensor::{Adam, AdamConfig, Gradients, Tape};

/// The (α, β) values searched in each dimension.
pub const GRID_VALUES: [f64; 5] = [0.01, 0.25, 0.5, 0.75, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: LossHyper,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub adam: AdamConfig,
    /// Start the output bias at the training-set mean TD.
    pub init_output_offset: bool,
    /// Stop once training-set pointwise MAE falls below this (dB).
    pub target_train_mae: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: LossHyper::default(),
            max_epochs: 2000,
            patience: 50,
            batch_size: 256,
            seeds: vec![1, 2, 3, 4, 5],
            adam: AdamConfig::default(),
            init_output_offset: true,
            target_train_mae: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.adam.validate()?;
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::config(format!("seeds {:?} are not distinct", self.seeds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: GroupValues,
    pub val_overall_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

/// Targets and normalized inputs of one split.
struct Prepared {
    x: Vec<Vec<f64>>,
    vf: Vec<Vec<f64>>,
    md: Vec<f64>,
    groups: Vec<DiseaseGroup>,
}

impl Prepared {
    fn new(exams: &[PairedExam], norm: &Normalization) -> Result<Self> {
        Ok(Self {
            x: exams.iter().map(|e| norm.apply(&e.rnfl)).collect::<Result<_>>()?,
            vf: exams.iter().map(|e| e.td.clone()).collect(),
            md: exams.iter().map(|e| e.md).collect(),
            groups: exams.iter().map(|e| assign_group(e.md)).collect::<Result<_>>()?,
        })
    }
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Composite loss and error summaries of `model` on a prepared split.
/// A non-finite forward pass during training means the run diverged.
fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Inference(m) => Error::Training(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

fn assess(model: &ModelVariant, data: &Prepared, lambda: &[f64], rho: &[f64]) -> Result<ValidationMetrics> {
    let beta = model.hyper.beta;
    let mut loss = 0.0;
    let mut sums = [[0.0; 2]; 3];
    let mut counts = [0usize; 3];
    let mut overall = 0.0;
    for i in 0..data.x.len() {
        let p = model.forward_normalized(&data.x[i])?;
        let vf_term: f64 = p
            .vf
            .iter()
            .zip(&data.vf[i])
            .zip(rho)
            .map(|((p, t), r)| r * (t - p) * (t - p))
            .sum();
        let md_term = (data.md[i] - p.md) * (data.md[i] - p.md);
        loss += lambda[i] * ((1.0 - beta) * vf_term + beta * md_term);
        let mae = mean_abs(&p.vf, &data.vf[i]);
        let g = data.groups[i].index();
        sums[g][0] += mae;
        sums[g][1] += (data.md[i] - p.md).abs();
        counts[g] += 1;
        overall += mae;
    }
    let mut mae = GroupValues::default();
    let mut md_mae = GroupValues::default();
    for g in DiseaseGroup::ALL {
        let n = counts[g.index()];
        if n > 0 {
            mae.set(g, Some(sums[g.index()][0] / n as f64));
            md_mae.set(g, Some(sums[g.index()][1] / n as f64));
        }
    }
    Ok(ValidationMetrics {
        loss,
        overall_mae: overall / data.x.len() as f64,
        mae,
        md_mae,
    })
}

/// Optimizes the composite loss from `model`'s current parameters, then
/// restores the parameters of the epoch with the lowest validation loss.
///
/// Normalization statistics are refitted on `train`, and `config.hyper`
/// replaces the model's hyperparameters.
pub fn train(
    mut model: ModelVariant,
    train: &[PairedExam],
    val: &[PairedExam],
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelVariant, TrainHistory)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    let hyper = config.hyper;
    model.hyper = hyper;
    model.normalization = Normalization::fit(train.iter().map(|e| e.rnfl.as_slice()))?;
    if config.init_output_offset {
        let mean_td = train.iter().flat_map(|e| &e.td).sum::<f64>() / (train.len() * 52) as f64;
        model.set_output_offset(mean_td);
    }
    let tr = Prepared::new(train, &model.normalization)?;
    let va = Prepared::new(val, &model.normalization)?;
    let rho = location_weights(&VfCoordinates::from_table(&crate::grid::LocationTable::standard()), hyper.gamma)?;
    let lambda = sample_weights(&tr.md, hyper.alpha)?;
    let val_lambda = held_out_sample_weights(&va.md, hyper.alpha)?;

    let n = tr.x.len();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a41);
    let mut adam = Adam::new(config.adam, &model.params);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, crate::tensor::ParameterStore)> = None;
    let mut since_best = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let scale = n as f64 / chunk.len() as f64;
            let mut grads = Gradients::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape = Tape::new(&model.params);
                let nodes = model.record(&mut tape, &tr.x[i])?;
                let w = lambda[i] * scale;
                let vf_w: Vec<f64> = rho.iter().map(|r| (1.0 - hyper.beta) * w * r).collect();
                let vf_term = tape.weighted_squared_error(nodes.vf, &tr.vf[i], &vf_w)?;
                let md_term = tape.weighted_squared_error(nodes.md, &[tr.md[i]], &[hyper.beta * w])?;
                let loss = tape.add(vf_term, md_term)?;
                let value = tape.scalar(loss)?;
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                batch_loss += value / scale;
                grads.accumulate(&tape.backward(loss, 1.0)?);
            }
            train_loss += batch_loss;
            adam.step(&mut model.params, &grads).map_err(|e| match e {
                Error::Training(m) => Error::Training(format!("epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            })?;
        }
        let metrics = assess(&model, &va, &val_lambda, &rho).map_err(|e| diverged(e, epoch))?;
        if !metrics.loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: metrics.loss,
            val_mae: metrics.mae,
            val_overall_mae: metrics.overall_mae,
        });
        if best.as_ref().is_none_or(|(l, _, _)| metrics.loss < *l) {
            best = Some((metrics.loss, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
        if let Some(target) = config.target_train_mae {
            let mae = tr
                .x
                .iter()
                .zip(&tr.vf)
                .map(|(x, y)| model.forward_normalized(x).map(|p| mean_abs(&p.vf, y)))
                .sum::<Result<f64>>()
                .map_err(|e| diverged(e, epoch))?
                / n as f64;
            if mae < target {
                stop_reason = StopReason::TargetReached;
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    let metrics = assess(&model, &va, &val_lambda, &rho)?;
    let history = TrainHistory {
        seed,
        epochs,
        best_epoch,
        best_val_loss,
        stop_reason,
    };
    model.validation = Some(metrics);
    Ok((model, history))
}

/// Evaluates `model` on `exams` with its own hyperparameters, producing the
/// same metrics recorded after training.
pub fn validation_metrics(model: &ModelVariant, exams: &[PairedExam]) -> Result<ValidationMetrics> {
    if exams.is_empty() {
        return Err(Error::data("validation set is empty"));
    }
    let data = Prepared::new(exams, &model.normalization)?;
    let rho = location_weights(
        &VfCoordinates::from_table(&crate::grid::LocationTable::standard()),
        model.hyper.gamma,
    )?;
    let lambda = held_out_sample_weights(&data.md, model.hyper.alpha)?;
    assess(model, &data, &lambda, &rho)
}

/// A finished run: the restored model and its history.
#[derive(Debug, Clone)]
pub struct Run {
    pub model: ModelVariant,
    pub history: TrainHistory,
}

impl Run {
    pub fn val_loss(&self) -> f64 {
        self.model.validation.as_ref().map_or(f64::INFINITY, |m| m.loss)
    }
}

/// Index of the run with the lowest restored validation loss; ties go to
/// the lowest seed.
pub fn select_best_run(runs: &[Run]) -> Result<usize> {
    if runs.is_empty() {
        return Err(Error::usage("select_best_run needs at least one run"));
    }
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let (a, b) = (r.val_loss(), runs[best].val_loss());
        if a < b || (a == b && r.history.seed < runs[best].history.seed) {
            best = i;
        }
    }
    Ok(best)
}

/// Trains one run per seed from fresh initializations and keeps the best.
pub fn train_variant(
    architecture: &Architecture,
    schedule: &PassSchedule,
    train_set: &[PairedExam],
    val_set: &[PairedExam],
    config: &TrainConfig,
) -> Result<(Run, Vec<TrainHistory>)> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let model = ModelVariant::build(architecture.clone(), schedule.clone(), seed)?;
        let (model, history) = train(model, train_set, val_set, config, seed)?;
        runs.push(Run { model, history });
    }
    let best = select_best_run(&runs)?;
    let histories = runs.iter().map(|r| r.history.clone()).collect();
    Ok((runs.swap_remove(best), histories))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: String,
    pub hyper: LossHyper,
    pub seeds: Vec<u64>,
    pub best_seed: u64,
    pub metrics: ValidationMetrics,
    /// Checkpoint file name within the registry directory.
    pub file: String,
    pub sha256: String,
}

/// Trained variants with their validation metrics.
#[derive(Debug, Clone)]
pub struct Registry {
    pub entries: Vec<RegistryEntry>,
    pub models: Vec<ModelVariant>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryIndex {
    schema_version: u32,
    variants: Vec<RegistryEntry>,
}

pub fn variant_id(h: &LossHyper) -> String {
    format!("a{:.2}_b{:.2}_g{}", h.alpha, h.beta, h.gamma)
}

impl Registry {
    pub fn get(&self, id: &str) -> Option<(&RegistryEntry, &ModelVariant)> {
        self.entries
            .iter()
            .position(|e| e.id == id)
            .map(|i| (&self.entries[i], &self.models[i]))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one checkpoint per variant plus `index.json`.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, model) in self.entries.iter_mut().zip(&self.models) {
            entry.file = format!("{}.ckpt", entry.id);
            entry.sha256 = checkpoint::save(model, &dir.join(&entry.file))?;
        }
        let index = RegistryIndex {
            schema_version: 1,
            variants: self.entries.clone(),
        };
        let path = dir.join("index.json");
        let text = serde_json::to_string_pretty(&index)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a registry directory, verifying each checkpoint's hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: RegistryIndex = serde_json::from_str(&text)?;
        let mut models = Vec::with_capacity(index.variants.len());
        for e in &index.variants {
            let p: PathBuf = dir.join(&e.file);
            let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
            if checkpoint::sha256_hex(&bytes) != e.sha256 {
                return Err(Error::Checkpoint(format!("{} does not match its registry hash", e.file)));
            }
            models.push(checkpoint::from_bytes(&bytes)?);
        }
        Ok(Self {
            entries: index.variants,
            models,
        })
    }
}

/// The full G × G grid.
pub fn full_grid() -> Vec<(f64, f64)> {
    GRID_VALUES
        .iter()
        .flat_map(|&a| GRID_VALUES.iter().map(move |&b| (a, b)))
        .collect()
}

/// Trains every grid point (`workers` at a time) and collects the winners
/// into a registry, in grid order.
pub fn run_grid(
    grid: &[(f64, f64)],
    gamma: f64,
    architecture: &Architecture,
    schedule: &PassSchedule,
    train_set: &[PairedExam],
    val_set: &[PairedExam],
    base: &TrainConfig,
    workers: usize,
) -> Result<Registry> {
    if grid.is_empty() {
        return Err(Error::usage("grid is empty"));
    }
    let job = |&(alpha, beta): &(f64, f64)| -> Result<(RegistryEntry, ModelVariant)> {
        let config = TrainConfig {
            hyper: LossHyper::new(alpha, beta, gamma)?,
            ..base.clone()
        };
        let (run, _) = train_variant(architecture, schedule, train_set, val_set, &config)?;
        let entry = RegistryEntry {
            id: variant_id(&config.hyper),
            hyper: config.hyper,
            seeds: config.seeds.clone(),
            best_seed: run.history.seed,
            metrics: run.model.validation.clone().expect("trained models carry metrics"),
            file: String::new(),
            sha256: String::new(),
        };
        Ok((entry, run.model))
    };
    let results: Vec<Result<(RegistryEntry, ModelVariant)>> = if workers <= 1 {
        grid.iter().map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(e.to_string()))?;
        pool.install(|| grid.par_iter().map(job).collect())
    };
    let mut entries = Vec::with_capacity(grid.len());
    let mut models = Vec::with_capacity(grid.len());
    for r in results {
        let (e, m) = r?;
        entries.push(e);
        models.push(m);
    }
    Ok(Registry { entries, models })
}
