//! Named parameter storage, initialization distributions, and Adam. Names are
//! namespaced with `/` (e.g. `head/agg_0`, `tree/emb`, `mlp/w1`) so the head
//! encoder, tail encoder, tree encoder, and prediction head never collide.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Map of parameter name → tensor. Shapes are fixed at insertion; updates go
/// through `values_mut` which can only rewrite entries in place.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.tensors
            .get_mut(name)
            .map(|t| t.data_mut())
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Total scalar entries across all tensors.
    pub fn n_entries(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }
}

/// Uniform(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))) for weight
/// matrices.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(rows, cols, data)
}

/// N(0, std²) entries, for embedding tables and attention vectors.
pub fn normal_init(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let dist = Normal::new(0.0, std)
        .map_err(|e| Error::Config(format!("normal init: {e}")))?;
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(rows, cols, data)
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub(crate) fn parts(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>, u64) {
        (&self.m, &self.v, self.t)
    }

    pub(crate) fn from_parts(
        m: BTreeMap<String, Tensor>,
        v: BTreeMap<String, Tensor>,
        t: u64,
    ) -> Self {
        AdamState { m, v, t }
    }
}

/// One Adam update over every parameter. Gradients must be keyed exactly like
/// the parameter set.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Train(format!("learning rate {lr} must be positive")));
    }
    let names: Vec<String> = params.names().cloned().collect();
    if grads.len() != names.len() || names.iter().any(|n| !grads.contains_key(n)) {
        return Err(Error::Train("gradient keys do not match parameter keys".to_string()));
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for name in &names {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("state keyed like params").data_mut();
        let v = state.v.get_mut(name).expect("state keyed like params").data_mut();
        let p = params.values_mut(name)?;
        if g.len() != p.len() {
            return Err(Error::Train(format!("gradient shape mismatch for {name}")));
        }
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            if !p[i].is_finite() {
                return Err(Error::Train(format!("non-finite update in {name}")));
            }
        }
    }
    Ok(())
}
