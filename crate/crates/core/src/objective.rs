//! The weighted multi-task loss.
//!
//! L = (1−β)·L_VF + β·L_MD with
//! L_VF = Σ_i λ_i Σ_j ρ_j (y_ij − ŷ_ij)² and L_MD = Σ_i λ_i (z_i − ẑ_i)².
//! Sample weights λ_i = (1−α)/N + α/(4·N_i) boost under-represented MD
//! intervals; location weights ρ_j ∝ exp(−d_j²/2γ²) favour central points.

use serde::{Deserialize, Serialize};

use crate::dataio::{assign_interval, MdInterval};
use crate::error::{Error, Result};
use crate::grid::{LocationTable, NUM_LOCATIONS};

/// Loss hyperparameters of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 5.0,
        }
    }
}

impl LossHyper {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let h = Self { alpha, beta, gamma };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config(format!("gamma {} must be positive", self.gamma)));
        }
        Ok(())
    }

    /// The unweighted variant, α = β = 0.
    pub fn is_basic(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// Grid coordinates in location units and distance from the field centre.
#[derive(Debug, Clone, PartialEq)]
pub struct VfCoordinates {
    pub points: Vec<(f64, f64)>,
    pub distances: Vec<f64>,
}

impl VfCoordinates {
    pub fn from_table(table: &LocationTable) -> Self {
        let points = table.unit_coordinates();
        let distances = points.iter().map(|(x, y)| (x * x + y * y).sqrt()).collect();
        Self { points, distances }
    }

    pub fn standard() -> Self {
        Self::from_table(&LocationTable::standard())
    }
}

/// λ per sample given each sample's interval and the interval counts.
pub fn sample_weights_from_intervals(intervals: &[MdInterval], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut counts = [0usize; 4];
    for i in intervals {
        counts[i.index()] += 1;
    }
    let n = intervals.len();
    if n == 0 {
        return Err(Error::config("sample weights need at least one sample"));
    }
    if alpha > 0.0 {
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::config(format!(
                "MD interval {} has no samples; alpha {alpha} > 0 would divide by zero",
                empty + 1
            )));
        }
    }
    Ok(intervals
        .iter()
        .map(|i| {
            let ni = counts[i.index()] as f64;
            let boost = if alpha > 0.0 { alpha / (4.0 * ni) } else { 0.0 };
            (1.0 - alpha) / n as f64 + boost
        })
        .collect())
}

/// λ per sample from MD values.
pub fn sample_weights(md_values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let intervals = md_values
        .iter()
        .map(|&m| assign_interval(m))
        .collect::<Result<Vec<_>>>()?;
    sample_weights_from_intervals(&intervals, alpha)
}

/// λ for a held-out set that may miss some intervals. Present intervals
/// get the usual weights; the missing ones simply contribute nothing.
pub fn held_out_sample_weights(md_values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let intervals = md_values
        .iter()
        .map(|&m| assign_interval(m))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = [0usize; 4];
    for i in &intervals {
        counts[i.index()] += 1;
    }
    let n = intervals.len() as f64;
    Ok(intervals
        .iter()
        .map(|i| (1.0 - alpha) / n + alpha / (4.0 * counts[i.index()] as f64))
        .collect())
}

/// ρ_j = softmax(−d_j²/2γ²).
pub fn location_weights(coords: &VfCoordinates, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::config(format!("gamma {gamma} must be positive and finite")));
    }
    let logits: Vec<f64> = coords
        .distances
        .iter()
        .map(|d| -d * d / (2.0 * gamma * gamma))
        .collect();
    Ok(crate::tensor::softmax(&logits))
}

fn check_rows(preds: &[Vec<f64>], targets: &[Vec<f64>], lambda: &[f64]) -> Result<()> {
    if preds.len() != targets.len() || preds.len() != lambda.len() {
        return Err(Error::Shape {
            op: "loss",
            detail: format!(
                "{} predictions, {} targets, {} weights",
                preds.len(),
                targets.len(),
                lambda.len()
            ),
        });
    }
    Ok(())
}

pub fn vf_loss(preds: &[Vec<f64>], targets: &[Vec<f64>], lambda: &[f64], rho: &[f64]) -> Result<f64> {
    check_rows(preds, targets, lambda)?;
    let mut total = 0.0;
    for ((p, t), l) in preds.iter().zip(targets).zip(lambda) {
        if p.len() != rho.len() || t.len() != rho.len() {
            return Err(Error::Shape {
                op: "vf_loss",
                detail: format!("rows of {} / {} values for {} location weights", p.len(), t.len(), rho.len()),
            });
        }
        let row: f64 = p
            .iter()
            .zip(t)
            .zip(rho)
            .map(|((p, t), r)| r * (t - p) * (t - p))
            .sum();
        total += l * row;
    }
    Ok(total)
}

pub fn md_loss(md_preds: &[f64], md_true: &[f64], lambda: &[f64]) -> Result<f64> {
    if md_preds.len() != md_true.len() || md_preds.len() != lambda.len() {
        return Err(Error::Shape {
            op: "md_loss",
            detail: format!(
                "{} predictions, {} targets, {} weights",
                md_preds.len(),
                md_true.len(),
                lambda.len()
            ),
        });
    }
    Ok(md_preds
        .iter()
        .zip(md_true)
        .zip(lambda)
        .map(|((p, z), l)| l * (z - p) * (z - p))
        .sum())
}

pub fn total_loss(l_vf: f64, l_md: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config(format!("beta {beta} outside [0, 1]")));
    }
    Ok((1.0 - beta) * l_vf + beta * l_md)
}

/// Precomputed weights for one dataset and hyperparameter setting.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub hyper: LossHyper,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
}

impl LossWeights {
    pub fn new(md_values: &[f64], hyper: LossHyper, coords: &VfCoordinates) -> Result<Self> {
        hyper.validate()?;
        let rho = location_weights(coords, hyper.gamma)?;
        if rho.len() != NUM_LOCATIONS {
            return Err(Error::config("coordinate table must have 52 locations"));
        }
        Ok(Self {
            hyper,
            lambda: sample_weights(md_values, hyper.alpha)?,
            rho,
        })
    }

    /// Composite loss over the full dataset.
    pub fn evaluate(&self, preds: &[Vec<f64>], md_preds: &[f64], targets: &[Vec<f64>], md_true: &[f64]) -> Result<f64> {
        let l_vf = vf_loss(preds, targets, &self.lambda, &self.rho)?;
        let l_md = md_loss(md_preds, md_true, &self.lambda)?;
        total_loss(l_vf, l_md, self.hyper.beta)
    }
}
