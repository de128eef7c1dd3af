use serde::{Deserialize, Serialize};

use super::{Gradients, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one array per parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| vec![0.0; e.values.len()])
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        Self {
            config,
            state: AdamState::new(store),
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        adam_step(store, grads, &mut self.state, &self.config)
    }
}

/// One Adam update. Fails, leaving `store` untouched, if any gradient is
/// non-finite.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Training(format!(
            "gradient/state layout ({} / {} entries) does not match store ({})",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for (name, g) in grads.iter() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter `{name}` at element {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (idx, entry) in (0..store.len()).map(|i| (i, super::ParamId(i))) {
        let g = grads.get(entry);
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let p = store.values_mut(entry);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    if let Some(bad) = store
        .entries()
        .iter()
        .find(|e| e.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Training(format!(
            "parameter `{}` became non-finite",
            bad.name
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add_with_values("p", &[values.len()], values.to_vec())
            .unwrap();
        s
    }

    fn grads_for(store: &ParameterStore, g: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        grads.get_mut(super::super::ParamId(0)).copy_from_slice(g);
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = store_with(&[0.3, -1.2]);
        let grads = grads_for(&store, &[0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("p").unwrap(), &[0.3, -1.2]);
        assert_eq!(opt.state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = store_with(&[0.0]);
        let grads = grads_for(&store, &[1.0]);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &store);
        opt.step(&mut store, &grads).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((store.get("p").unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_parameters_update_identically() {
        let mut store = store_with(&[0.7, 0.7]);
        let grads = grads_for(&store, &[-0.4, -0.4]);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            opt.step(&mut store, &grads).unwrap();
        }
        let p = store.get("p").unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = store_with(&[0.0]);
        let grads = grads_for(&store, &[f64::NAN]);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        let err = opt.step(&mut store, &grads).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains("`p`")), "{err}");
        assert_eq!(store.get("p").unwrap(), &[0.0]);
    }
}
