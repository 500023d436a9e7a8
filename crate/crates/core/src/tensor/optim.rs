use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::Tensor;
use super::tape::{Gradients, Tape, Var};
use crate::error::{invalid, GeoError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Named parameters with their Adam moment buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
    step: u64,
}

/// Tape leaves created for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    /// Leaf for `name`. Panics on an unknown name: parameter names are fixed
    /// by model construction, so a miss is a programming error.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` was never registered"),
        }
    }

    /// Per-parameter gradients, zero-filled for parameters the loss never reached.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), grads.get(*v))).collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; re-registering a name is rejected.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(invalid(format!("parameter `{name}` registered twice")));
        }
        let [r, c] = value.shape();
        self.first_moment.insert(name.clone(), Tensor::zeros(r, c));
        self.second_moment.insert(name.clone(), Tensor::zeros(r, c));
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Creates a leaf on `tape` for every parameter.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self.params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        Binding { vars }
    }

    /// One Adam update with bias correction.
    ///
    /// Every gradient is validated before any parameter moves, so a NaN
    /// leaves the store untouched.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, p) in &self.params {
            let g = grads.get(name).ok_or_else(|| invalid(format!("missing gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(GeoError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("`{name}`: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
            if !g.is_finite() {
                return Err(GeoError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            let m = self.first_moment.get_mut(name).expect("moments track params");
            let v = self.second_moment.get_mut(name).expect("moments track params");
            for (((pi, mi), vi), gi) in
                p.values_mut().iter_mut().zip(m.values_mut()).zip(v.values_mut()).zip(g.values())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_json(&self) -> String {
        let map: BTreeMap<&str, CheckpointEntry> = self
            .params
            .iter()
            .map(|(k, v)| {
                let [r, c] = v.shape();
                (k.as_str(), CheckpointEntry { shape: vec![r, c], values: v.values().to_vec() })
            })
            .collect();
        serde_json::to_string(&map).expect("checkpoint serialization cannot fail")
    }

    /// Restores parameters from a checkpoint; moments and step start fresh.
    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, CheckpointEntry> = serde_json::from_str(text)?;
        let mut store = Self::new();
        for (name, e) in map {
            let (r, c) = match e.shape.as_slice() {
                [r, c] => (*r, *c),
                [n] => (1, *n),
                _ => return Err(invalid(format!("`{name}`: only 1-D and 2-D shapes are supported"))),
            };
            store.insert(name, Tensor::new(r, c, e.values)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(value)).unwrap();
        s
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(0.5);
        s.adam_step(&grad(0.0), 0.01).unwrap();
        assert_eq!(s.get("w").unwrap().item(), 0.5);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 → Δ = lr / (1 + eps)
        let mut s = single(1.0);
        s.adam_step(&grad(1.0), 0.001).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + ADAM_EPS);
        assert!((s.get("w").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::scalar(0.3)).unwrap();
        s.insert("b", Tensor::scalar(0.3)).unwrap();
        let g = BTreeMap::from([("a".to_string(), Tensor::scalar(-0.7)), ("b".to_string(), Tensor::scalar(-0.7))]);
        for _ in 0..5 {
            s.adam_step(&g, 0.01).unwrap();
        }
        assert_eq!(s.get("a"), s.get("b"));
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = single(1.0);
        match s.adam_step(&grad(f64::NAN), 0.01) {
            Err(GeoError::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.step(), 0);
        assert_eq!(s.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParamStore::new();
        s.insert("layer.w", Tensor::new(2, 2, vec![0.1, -0.2, 1.0 / 3.0, 4.0]).unwrap()).unwrap();
        s.insert("layer.b", Tensor::new(1, 2, vec![0.0, 1e-300]).unwrap()).unwrap();
        let back = ParamStore::from_checkpoint_json(&s.to_checkpoint_json()).unwrap();
        for (name, t) in s.iter() {
            assert_eq!(back.get(name).unwrap(), t);
        }
    }
}
