use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |(name, t): (&str, &super::Tensor)| (name.to_string(), vec![0.0; t.len()]);
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// then zeroed.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if params.is_empty() {
        return Err(Error::InvalidState("adam step on an empty parameter store".into()));
    }
    for (name, value, grad) in params.iter_mut() {
        if grad.data().iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite gradient for `{name}`")));
        }
        let m = state.first.get(name).map(Vec::len);
        if m != Some(value.len()) {
            return Err(Error::InvalidState(format!("no matching moments for `{name}`")));
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, value, grad) in params.iter_mut() {
        let m = state.first.get_mut(name).expect("checked above");
        let v = state.second.get_mut(name).expect("checked above");
        for (((p, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * *g;
            *v = beta2 * *v + (1.0 - beta2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_update_matches_hand_value() {
        let mut s = scalar_store(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        s.grad_mut("w").unwrap()[0] = 1.0;
        adam_step(&mut s, &mut st).unwrap();
        // m̂ = v̂ = 1 → Δ = -lr / (1 + ε)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((s.get("w").unwrap().item() - expected).abs() < 1e-18);
        assert!((s.get("w").unwrap().item() + 0.000999999).abs() < 1e-9);
        assert_eq!(st.step_count(), 1);
        assert_eq!(s.grad("w").unwrap().item(), 0.0);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut s = scalar_store(0.25);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        for _ in 0..5 {
            adam_step(&mut s, &mut st).unwrap();
        }
        assert_eq!(s.get("w").unwrap().item(), 0.25);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn invalid_states() {
        let mut empty = ParamStore::new();
        let mut st = AdamState::new(AdamConfig::default(), &empty);
        assert!(adam_step(&mut empty, &mut st).is_err());

        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        s.grad_mut("w").unwrap()[0] = f64::NAN;
        assert!(matches!(adam_step(&mut s, &mut st), Err(Error::InvalidState(_))));
        assert_eq!(st.step_count(), 0);
    }
}
