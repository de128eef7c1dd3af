//! Routed ensemble of loss variants.
//!
//! A router variant estimates MD, the estimate picks an evaluation group,
//! and that group's expert variant produces the final field.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{assign_group, DiseaseGroup};
use crate::error::{Error, Result};
use crate::evalkit::Estimator;
use crate::models::{GroupValues, ModelVariant, Prediction};
use crate::trainer::{Registry, RegistryEntry};

pub const SPEC_SCHEMA_VERSION: u32 = 1;

/// Expert variant id per evaluation group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupExperts {
    pub early: String,
    pub moderate: String,
    pub advanced: String,
}

impl GroupExperts {
    pub fn get(&self, g: DiseaseGroup) -> &str {
        match g {
            DiseaseGroup::Early => &self.early,
            DiseaseGroup::Moderate => &self.moderate,
            DiseaseGroup::Advanced => &self.advanced,
        }
    }
}

/// Validation metrics behind each choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEvidence {
    pub id: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mae: GroupValues,
    pub md_mae: GroupValues,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub schema_version: u32,
    pub router: String,
    pub experts: GroupExperts,
    pub provenance: Vec<VariantEvidence>,
}

fn candidates(entries: &[RegistryEntry]) -> Result<Vec<&RegistryEntry>> {
    if entries.is_empty() {
        return Err(Error::usage("registry is empty"));
    }
    let c: Vec<&RegistryEntry> = entries.iter().filter(|e| !e.hyper.is_basic()).collect();
    if c.is_empty() {
        return Err(Error::usage("registry holds only the basic variant"));
    }
    Ok(c)
}

/// Lowest score wins; ties go to the smallest (α, β).
fn argmin<'a>(scored: impl Iterator<Item = (&'a RegistryEntry, f64)>) -> Option<&'a RegistryEntry> {
    let mut best: Option<(&RegistryEntry, f64)> = None;
    for (e, s) in scored {
        if s.is_nan() {
            continue;
        }
        best = match best {
            None => Some((e, s)),
            Some((b, bs)) => {
                let key = |x: &RegistryEntry| (x.hyper.alpha, x.hyper.beta);
                let better = match s.partial_cmp(&bs).expect("not NaN") {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => key(e).partial_cmp(&key(b)) == Some(Ordering::Less),
                };
                Some(if better { (e, s) } else { (b, bs) })
            }
        };
    }
    best.map(|(e, _)| e)
}

/// Variant with the lowest MD error averaged over the evaluation groups.
pub fn pick_router(entries: &[RegistryEntry]) -> Result<String> {
    let c = candidates(entries)?;
    argmin(c.into_iter().filter_map(|e| e.metrics.md_mae.mean_present().map(|m| (e, m))))
        .map(|e| e.id.clone())
        .ok_or_else(|| Error::usage("no variant has MD validation metrics"))
}

/// Variant with the lowest within-group pointwise MAE, per group.
pub fn pick_group_experts(entries: &[RegistryEntry]) -> Result<GroupExperts> {
    let c = candidates(entries)?;
    let pick = |g: DiseaseGroup| -> Result<String> {
        argmin(c.iter().filter_map(|e| e.metrics.mae.get(g).map(|m| (*e, m))))
            .map(|e| e.id.clone())
            .ok_or_else(|| Error::usage(format!("no validation metrics for the {} group", g.as_str())))
    };
    Ok(GroupExperts {
        early: pick(DiseaseGroup::Early)?,
        moderate: pick(DiseaseGroup::Moderate)?,
        advanced: pick(DiseaseGroup::Advanced)?,
    })
}

impl EnsembleSpec {
    pub fn build(entries: &[RegistryEntry]) -> Result<Self> {
        let router = pick_router(entries)?;
        let experts = pick_group_experts(entries)?;
        let provenance = entries
            .iter()
            .map(|e| VariantEvidence {
                id: e.id.clone(),
                alpha: e.hyper.alpha,
                beta: e.hyper.beta,
                gamma: e.hyper.gamma,
                mae: e.metrics.mae,
                md_mae: e.metrics.md_mae,
                sha256: e.sha256.clone(),
            })
            .collect();
        Ok(Self {
            schema_version: SPEC_SCHEMA_VERSION,
            router,
            experts,
            provenance,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        if spec.schema_version != SPEC_SCHEMA_VERSION {
            return Err(Error::data(format!("unsupported ensemble schema version {}", spec.schema_version)));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Group implied by the router's MD estimate.
pub fn route(router: &ModelVariant, rnfl: &[f64]) -> Result<DiseaseGroup> {
    let md = router.predict(rnfl)?.md;
    route_md(md)
}

pub fn route_md(md: f64) -> Result<DiseaseGroup> {
    if !md.is_finite() {
        return Err(Error::Inference(format!("router produced a non-finite MD ({md})")));
    }
    assign_group(md)
}

/// A spec with its models resolved.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    router: ModelVariant,
    experts: [ModelVariant; 3],
}

impl Ensemble {
    /// Resolves every referenced variant in `registry`, checking that the
    /// checkpoint hashes match the ones recorded in the spec.
    pub fn from_registry(spec: EnsembleSpec, registry: &Registry) -> Result<Self> {
        let fetch = |id: &str| -> Result<ModelVariant> {
            let (entry, model) = registry
                .get(id)
                .ok_or_else(|| Error::data(format!("variant `{id}` is not in the registry")))?;
            if let Some(ev) = spec.provenance.iter().find(|p| p.id == id) {
                if ev.sha256 != entry.sha256 {
                    return Err(Error::Checkpoint(format!("variant `{id}` changed since the ensemble was built")));
                }
            }
            Ok(model.clone())
        };
        let router = fetch(&spec.router)?;
        let experts = [
            fetch(&spec.experts.early)?,
            fetch(&spec.experts.moderate)?,
            fetch(&spec.experts.advanced)?,
        ];
        Ok(Self { spec, router, experts })
    }

    pub fn expert(&self, g: DiseaseGroup) -> &ModelVariant {
        &self.experts[g.index()]
    }

    pub fn route(&self, rnfl: &[f64]) -> Result<DiseaseGroup> {
        route(&self.router, rnfl)
    }

    /// Routed estimate along with the group it was routed to.
    pub fn predict_routed(&self, rnfl: &[f64]) -> Result<(DiseaseGroup, Prediction)> {
        let g = self.route(rnfl)?;
        Ok((g, self.expert(g).predict(rnfl)?))
    }
}

impl Estimator for Ensemble {
    fn estimate(&self, rnfl: &[f64]) -> Result<Prediction> {
        Ok(self.predict_routed(rnfl)?.1)
    }
}

/// Routed estimate for one RNFL profile.
pub fn ensemble_predict(ensemble: &Ensemble, rnfl: &[f64]) -> Result<Prediction> {
    ensemble.estimate(rnfl)
}
