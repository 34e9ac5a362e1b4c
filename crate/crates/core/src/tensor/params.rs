use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Named dense parameters plus their Adam moment estimates.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            m: DMatrix::zeros(r, c),
            v: DMatrix::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    /// Mutable access to a parameter's value. Shapes must not change.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn moments(&self, id: ParamId) -> (&Matrix, &Matrix) {
        let p = &self.params[id.0];
        (&p.m, &p.v)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Overwrites a parameter from a serialized block, checking its shape.
    pub fn load_value(&mut self, name: &str, value: Matrix) -> Result<(), String> {
        let id = self
            .find(name)
            .ok_or_else(|| format!("unknown parameter block `{name}`"))?;
        let expected = self.params[id.0].value.shape();
        if value.shape() != expected {
            return Err(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                value.shape(),
                expected
            ));
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamReport {
    /// Parameters whose gradient held a non-finite entry and were left untouched.
    pub skipped: Vec<String>,
}

/// One bias-corrected Adam update over every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> AdamReport {
    assert_eq!(grads.grads.len(), store.params.len(), "gradient count mismatch");
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut report = AdamReport::default();
    for (param, g) in store.params.iter_mut().zip(&grads.grads) {
        assert_eq!(param.value.shape(), g.shape(), "gradient shape mismatch for {}", param.name);
        if g.iter().any(|v| !v.is_finite()) {
            report.skipped.push(param.name.clone());
            continue;
        }
        let n = g.len();
        let (value, m, v) = (
            param.value.as_mut_slice(),
            param.m.as_mut_slice(),
            param.v.as_mut_slice(),
        );
        let g = g.as_slice();
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_of(values: &[Matrix]) -> Gradients {
        Gradients {
            grads: values.to_vec(),
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut store = ParamStore::new();
        let p = store.add("p", Matrix::from_row_slice(1, 2, &[1.0, -1.0]));
        let cfg = AdamConfig::default();
        adam_step(&mut store, &grads_of(&[Matrix::from_row_slice(1, 2, &[0.5, 0.5])]), &cfg);
        let after_first = store.value(p).clone();
        let (m1, v1) = {
            let (m, v) = store.moments(p);
            (m.clone(), v.clone())
        };
        adam_step(&mut store, &grads_of(&[Matrix::zeros(1, 2)]), &cfg);
        let (m2, v2) = store.moments(p);
        assert!((m2 - &m1 * cfg.beta1).norm() < 1e-15);
        assert!((v2 - &v1 * cfg.beta2).norm() < 1e-15);
        // the decayed first moment still moves the parameter; the pure zero-gradient case below does not
        let mut fresh = ParamStore::new();
        let q = fresh.add("q", Matrix::from_row_slice(1, 2, &[1.0, -1.0]));
        adam_step(&mut fresh, &grads_of(&[Matrix::zeros(1, 2)]), &cfg);
        assert_eq!(fresh.value(q).as_slice(), &[1.0, -1.0]);
        assert_eq!(fresh.step_count(), 1);
        assert_ne!(store.value(p), &after_first);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.3, -2.0, 1e-3, 0.0];
        let mut store = ParamStore::new();
        let p = store.add("p", Matrix::from_row_slice(1, 4, &[0.0; 4]));
        let cfg = AdamConfig::default();
        adam_step(&mut store, &grads_of(&[Matrix::from_row_slice(1, 4, &g)]), &cfg);
        for (i, gi) in g.iter().enumerate() {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((store.value(p)[(0, i)] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut store = ParamStore::new();
        let p = store.add("p", Matrix::from_element(1, 1, 0.0));
        let cfg = AdamConfig::default();
        let grad = grads_of(&[Matrix::from_element(1, 1, 0.25)]);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..5000 {
            adam_step(&mut store, &grad, &cfg);
            let now = store.value(p)[(0, 0)];
            last_delta = now - prev;
            assert!(last_delta < 0.0);
            prev = now;
        }
        assert!((last_delta + cfg.lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_skips_that_array() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::from_element(1, 1, 1.0));
        let b = store.add("b", Matrix::from_element(1, 1, 1.0));
        let report = adam_step(
            &mut store,
            &grads_of(&[Matrix::from_element(1, 1, f64::NAN), Matrix::from_element(1, 1, 1.0)]),
            &AdamConfig::default(),
        );
        assert_eq!(report.skipped, vec!["a".to_string()]);
        assert_eq!(store.value(a)[(0, 0)], 1.0);
        assert!(store.value(b)[(0, 0)] < 1.0);
        assert!(store.all_finite());
    }
}
