//! Named parameter sets with adaptive-moment updates.

use crate::tensor::Tensor;
use crate::var::{Grads, Var};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("gradient shape mismatch for {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone)]
struct ParamEntry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Parameters plus first/second moment buffers and the shared step count.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        let prior = self.entries.insert(name.to_string(), ParamEntry { value, m, v });
        assert!(prior.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        let e = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(e.value.shape(), value.shape());
        e.value = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k, &e.value))
    }

    /// Standard adaptive-moment update with bias correction. The step count
    /// increments once per call; zero-gradient parameters stay put.
    pub fn adam_step(
        &mut self,
        grads: &[(String, Tensor)],
        cfg: &AdamConfig,
    ) -> Result<(), OptimError> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient(name.clone()));
            }
            if !self.entries.contains_key(name) {
                return Err(OptimError::UnknownParameter(name.clone()));
            }
            if self.entries[name].value.shape() != g.shape() {
                return Err(OptimError::ShapeMismatch(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (name, g) in grads {
            let e = self.entries.get_mut(name).expect("validated above");
            let md = e.m.data_mut();
            let vd = e.v.data_mut();
            let xd = e.value.data_mut();
            for ((x, (m, v)), &gi) in xd
                .iter_mut()
                .zip(md.iter_mut().zip(vd.iter_mut()))
                .zip(g.data())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Per-step bridge between a ParamSet and graph leaves. Re-requesting a name
/// returns the same leaf so shared parameters accumulate gradients.
pub struct Binder<'p> {
    params: &'p ParamSet,
    bound: BTreeMap<String, Var>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p ParamSet) -> Binder<'p> {
        Binder { params, bound: BTreeMap::new() }
    }

    pub fn leaf(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return v.clone();
        }
        let v = Var::leaf(self.params.get(name).clone());
        self.bound.insert(name.to_string(), v.clone());
        v
    }

    /// Collect named gradients after a backward pass.
    pub fn collect(&self, grads: &Grads) -> Vec<(String, Tensor)> {
        self.bound
            .iter()
            .filter_map(|(name, var)| grads.get(var).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::{backward, mul, square, sum_all, Var};

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::from_vec(&[2], vec![0.5, -0.25]));
        let before = ps.get("w").clone();
        let g = vec![("w".to_string(), Tensor::zeros(&[2]))];
        ps.adam_step(&g, &AdamConfig::default()).unwrap();
        assert_eq!(ps.get("w"), &before);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // With g = 1 at t = 1: mhat = 1, vhat = 1, update = -lr / (1 + eps).
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::scalar(2.0));
        ps.adam_step(&[("x".to_string(), Tensor::scalar(1.0))], &cfg).unwrap();
        let expect = 2.0 - cfg.lr * 1.0 / (1.0 + cfg.eps);
        assert!((ps.get("x").data()[0] - expect).abs() < 1e-7);
        assert_eq!(ps.step_count(), 1);
    }

    #[test]
    fn quadratic_converges() {
        // Minimize f(x) = x^2 from x = 1.
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::scalar(1.0));
        for _ in 0..500 {
            let mut binder = Binder::new(&ps);
            let x = binder.leaf("x");
            let loss = sum_all(&square(&x));
            let grads = backward(&loss);
            ps.adam_step(&binder.collect(&grads), &cfg).unwrap();
        }
        assert!(ps.get("x").data()[0].abs() < 1e-3, "x = {}", ps.get("x").data()[0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::scalar(1.0));
        let err = ps
            .adam_step(&[("x".to_string(), Tensor::scalar(f32::NAN))], &AdamConfig::default())
            .unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient("x".into()));
    }

    #[test]
    fn shared_leaf_accumulates_gradient() {
        // f(x) = x * x via two uses of the same leaf; df/dx = 2x.
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::scalar(3.0));
        let mut binder = Binder::new(&ps);
        let a = binder.leaf("x");
        let b = binder.leaf("x");
        let loss = sum_all(&mul(&a, &b));
        let grads = backward(&loss);
        let collected = binder.collect(&grads);
        assert_eq!(collected.len(), 1);
        assert!((collected[0].1.data()[0] - 6.0).abs() < 1e-6);
        let _ = Var::leaf(Tensor::scalar(0.0));
    }
}
