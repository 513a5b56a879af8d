//! Reverse-mode automatic differentiation on a Wengert tape. A forward pass
//! appends nodes (op kind, input ids, cached value); `backward` replays the
//! tape in reverse and accumulates gradients into the leaves. Tapes are
//! single-owner: build, run backward, drop.

use std::collections::BTreeMap;

use crate::params::ParameterSet;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec { w: usize, x: usize },
    Add { a: usize, b: usize },
    Neg { x: usize },
    AddScalar { x: usize },
    ScalarMul { x: usize, c: f64 },
    Concat { xs: Vec<usize> },
    Tanh { x: usize },
    Relu { x: usize },
    LeakyRelu { x: usize, slope: f64 },
    Sigmoid { x: usize },
    Exp { x: usize },
    Log { x: usize },
    Sum { x: usize },
    Mean { x: usize },
    Softmax { x: usize },
    Dot { a: usize, b: usize },
    L2Norm { x: usize },
    Cosine { a: usize, b: usize },
    Index { x: usize, i: usize },
    Row { x: usize, i: usize },
    WeightedSum { w: usize, xs: Vec<usize> },
    Clamp { x: usize, lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Denominator floor for cosine similarity and norms.
pub(crate) const NORM_EPS: f64 = 1e-12;

/// Growable arena of tape nodes plus a cache of parameter bindings so each
/// named parameter appears as exactly one leaf.
pub struct Tape {
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), bound: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a constant; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Result<Var> {
        Ok(self.constant(Tensor::scalar(x)?))
    }

    /// Leaf bound to a named parameter. Binding the same name twice returns
    /// the same node so gradients accumulate in one place.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = params.get(name)?.clone();
        let v = self.push(Op::Leaf, value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// y = W·x for a matrix W (r×c) and column vector x (c×1).
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wr, wc) = self.nodes[w.0].value.shape();
        let xv = &self.nodes[x.0].value;
        if !xv.is_vector() || xv.rows() != wc {
            return Err(Error::shape(
                "matvec",
                format!("{} times {}", self.nodes[w.0].value.shape_str(), xv.shape_str()),
            ));
        }
        let wd = self.nodes[w.0].value.data();
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; wr];
        for r in 0..wr {
            let row = &wd[r * wc..(r + 1) * wc];
            out[r] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        let value = Tensor::new(wr, 1, out)?;
        Ok(self.push(Op::MatVec { w: w.0, x: x.0 }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "add",
                format!("{} plus {}", av.shape_str(), bv.shape_str()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.rows(), av.cols(), data)?;
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, value))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let value = Tensor::new(xv.rows(), xv.cols(), xv.data().iter().map(|v| -v).collect())?;
        Ok(self.push(Op::Neg { x: x.0 }, value))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let value = Tensor::new(xv.rows(), xv.cols(), xv.data().iter().map(|v| v + c).collect())?;
        Ok(self.push(Op::AddScalar { x: x.0 }, value))
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::domain("scalar_mul", format!("non-finite factor {c}")));
        }
        let xv = &self.nodes[x.0].value;
        let value = Tensor::new(xv.rows(), xv.cols(), xv.data().iter().map(|v| v * c).collect())?;
        Ok(self.push(Op::ScalarMul { x: x.0, c }, value))
    }

    /// Stack column vectors into one column vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let mut data = Vec::new();
        for &x in xs {
            let xv = &self.nodes[x.0].value;
            if !xv.is_vector() {
                return Err(Error::shape("concat", format!("input {}", xv.shape_str())));
            }
            data.extend_from_slice(xv.data());
        }
        let value = Tensor::vector(data)?;
        Ok(self.push(Op::Concat { xs: xs.iter().map(|v| v.0).collect() }, value))
    }

    fn unary(&mut self, x: Var, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let xv = &self.nodes[x.0].value;
        Tensor::new(xv.rows(), xv.cols(), xv.data().iter().map(|&v| f(v)).collect())
            .map_err(|_| Error::domain(op, "produced non-finite output".to_string()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, "tanh", f64::tanh)?;
        Ok(self.push(Op::Tanh { x: x.0 }, value))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, "relu", |v| v.max(0.0))?;
        Ok(self.push(Op::Relu { x: x.0 }, value))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.unary(x, "leaky_relu", |v| if v > 0.0 { v } else { slope * v })?;
        Ok(self.push(Op::LeakyRelu { x: x.0, slope }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, "sigmoid", |v| 1.0 / (1.0 + (-v).exp()))?;
        Ok(self.push(Op::Sigmoid { x: x.0 }, value))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, "exp", f64::exp)?;
        Ok(self.push(Op::Exp { x: x.0 }, value))
    }

    /// Natural log; inputs must be strictly positive (callers clamp).
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[x.0].value.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain("log", format!("non-positive input {bad}")));
        }
        let value = self.unary(x, "log", f64::ln)?;
        Ok(self.push(Op::Log { x: x.0 }, value))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        let value = Tensor::scalar(s)?;
        Ok(self.push(Op::Sum { x: x.0 }, value))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.is_empty() {
            return Err(Error::shape("mean", "empty input".to_string()));
        }
        let s: f64 = xv.data().iter().sum();
        let value = Tensor::scalar(s / xv.len() as f64)?;
        Ok(self.push(Op::Mean { x: x.0 }, value))
    }

    /// Softmax over a column vector, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if !xv.is_vector() || xv.is_empty() {
            return Err(Error::shape("softmax", format!("got {}", xv.shape_str())));
        }
        let m = xv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.data().iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let value = Tensor::vector(exps.iter().map(|e| e / z).collect())?;
        Ok(self.push(Op::Softmax { x: x.0 }, value))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !av.is_vector() || av.shape() != bv.shape() {
            return Err(Error::shape(
                "dot",
                format!("{} dot {}", av.shape_str(), bv.shape_str()),
            ));
        }
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let value = Tensor::scalar(s)?;
        Ok(self.push(Op::Dot { a: a.0, b: b.0 }, value))
    }

    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.nodes[x.0].value.l2_norm())?;
        Ok(self.push(Op::L2Norm { x: x.0 }, value))
    }

    /// Cosine similarity of two vectors; denominators floored at 1e-12.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !av.is_vector() || av.shape() != bv.shape() {
            return Err(Error::shape(
                "cosine",
                format!("{} vs {}", av.shape_str(), bv.shape_str()),
            ));
        }
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let denom = av.l2_norm().max(NORM_EPS) * bv.l2_norm().max(NORM_EPS);
        let value = Tensor::scalar(s / denom)?;
        Ok(self.push(Op::Cosine { a: a.0, b: b.0 }, value))
    }

    /// Element i of a column vector, as a scalar node.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if !xv.is_vector() || i >= xv.rows() {
            return Err(Error::shape(
                "index",
                format!("index {} of {}", i, xv.shape_str()),
            ));
        }
        let value = Tensor::scalar(xv.data()[i])?;
        Ok(self.push(Op::Index { x: x.0, i }, value))
    }

    /// Row i of a matrix as a column vector; the gradient scatters back into
    /// that row, which is how embedding-table lookups train.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let value = self.nodes[x.0].value.row(i)?;
        Ok(self.push(Op::Row { x: x.0, i }, value))
    }

    /// y = Σ_i w_i·x_i for a weight vector w (k×1) and k equal-length vectors.
    pub fn weighted_sum(&mut self, w: Var, xs: &[Var]) -> Result<Var> {
        let wv = &self.nodes[w.0].value;
        if !wv.is_vector() || wv.rows() != xs.len() || xs.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} vectors", wv.rows(), xs.len()),
            ));
        }
        let dim = self.nodes[xs[0].0].value.rows();
        let mut out = vec![0.0; dim];
        for (k, &x) in xs.iter().enumerate() {
            let xv = &self.nodes[x.0].value;
            if !xv.is_vector() || xv.rows() != dim {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("input {} is {}", k, xv.shape_str()),
                ));
            }
            let wk = self.nodes[w.0].value.data()[k];
            for (o, v) in out.iter_mut().zip(xv.data()) {
                *o += wk * v;
            }
        }
        let value = Tensor::vector(out)?;
        Ok(self.push(Op::WeightedSum { w: w.0, xs: xs.iter().map(|v| v.0).collect() }, value))
    }

    /// Clamp entries into [lo, hi]; gradient passes only strictly inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::domain("clamp", format!("bad bounds [{lo}, {hi}]")));
        }
        let value = self.unary(x, "clamp", |v| v.clamp(lo, hi))?;
        Ok(self.push(Op::Clamp { x: x.0, lo, hi }, value))
    }

    /// InfoNCE: −log exp(cos(a,p)/τ) / Σ_k exp(cos(a,k)/τ) with the
    /// denominator running over {positive} ∪ negatives. Empty negatives give
    /// a loss of exactly zero (softmax over a singleton).
    pub fn info_nce(&mut self, anchor: Var, positive: Var, negatives: &[Var], tau: f64) -> Result<Var> {
        if tau <= 0.0 {
            return Err(Error::domain("info_nce", format!("tau {tau} must be positive")));
        }
        let dim = self.nodes[anchor.0].value.rows();
        if dim == 0 {
            return Err(Error::shape("info_nce", "zero-length anchor".to_string()));
        }
        for &v in [anchor, positive].iter().chain(negatives) {
            let t = &self.nodes[v.0].value;
            if !t.is_vector() || t.rows() != dim {
                return Err(Error::shape(
                    "info_nce",
                    format!("expected {dim}-vectors, got {}", t.shape_str()),
                ));
            }
            if t.l2_norm() < NORM_EPS {
                return Err(Error::domain("info_nce", "zero-norm embedding".to_string()));
            }
        }
        let mut scores = Vec::with_capacity(1 + negatives.len());
        scores.push(self.cosine(anchor, positive)?);
        for &n in negatives {
            scores.push(self.cosine(anchor, n)?);
        }
        let stacked = self.concat(&scores)?;
        let scaled = self.scalar_mul(stacked, 1.0 / tau)?;
        let probs = self.softmax(scaled)?;
        let p_pos = self.index(probs, 0)?;
        let log_p = self.log(p_pos)?;
        self.neg(log_p)
    }

    /// Backward pass from a scalar loss. Returns a gradient per parameter in
    /// `params`; parameters the loss never touched get zero tensors.
    pub fn backward(&self, loss: Var, params: &ParameterSet) -> Result<BTreeMap<String, Tensor>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", self.nodes[loss.0].value.shape_str()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0).expect("finite"));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_inputs(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = BTreeMap::new();
        for (name, t) in params.iter() {
            let grad = self
                .bound
                .get(name)
                .and_then(|v| grads[v.0].clone())
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
            if grad.shape() != t.shape() {
                return Err(Error::shape(
                    "backward",
                    format!("gradient for {name} is {}, parameter is {}", grad.shape_str(), t.shape_str()),
                ));
            }
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }

    fn accumulate_inputs(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], idx: usize, delta: &[f64]| {
            let t = &self.nodes[idx].value;
            let slot = grads[idx].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols()));
            for (s, d) in slot.data_mut().iter_mut().zip(delta) {
                *s += d;
            }
        };
        let gd = g.data();
        let val = |idx: usize| self.nodes[idx].value.data();

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatVec { w, x } => {
                let (wr, wc) = self.nodes[*w].value.shape();
                let xd = val(*x);
                let mut dw = vec![0.0; wr * wc];
                for r in 0..wr {
                    for c in 0..wc {
                        dw[r * wc + c] = gd[r] * xd[c];
                    }
                }
                add_to(grads, *w, &dw);
                let wd = val(*w);
                let mut dx = vec![0.0; wc];
                for r in 0..wr {
                    for (c, slot) in dx.iter_mut().enumerate() {
                        *slot += wd[r * wc + c] * gd[r];
                    }
                }
                add_to(grads, *x, &dx);
            }
            Op::Add { a, b } => {
                add_to(grads, *a, gd);
                add_to(grads, *b, gd);
            }
            Op::Neg { x } => {
                let dx: Vec<f64> = gd.iter().map(|v| -v).collect();
                add_to(grads, *x, &dx);
            }
            Op::AddScalar { x } => add_to(grads, *x, gd),
            Op::ScalarMul { x, c } => {
                let dx: Vec<f64> = gd.iter().map(|v| c * v).collect();
                add_to(grads, *x, &dx);
            }
            Op::Concat { xs } => {
                let mut off = 0;
                for &x in xs {
                    let n = self.nodes[x].value.len();
                    add_to(grads, x, &gd[off..off + n]);
                    off += n;
                }
            }
            Op::Tanh { x } => {
                let y = self.nodes[i].value.data();
                let dx: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                add_to(grads, *x, &dx);
            }
            Op::Relu { x } => {
                let xd = val(*x);
                let dx: Vec<f64> = gd.iter().zip(xd).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                add_to(grads, *x, &dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xd = val(*x);
                let dx: Vec<f64> =
                    gd.iter().zip(xd).map(|(g, x)| if *x > 0.0 { *g } else { slope * g }).collect();
                add_to(grads, *x, &dx);
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[i].value.data();
                let dx: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                add_to(grads, *x, &dx);
            }
            Op::Exp { x } => {
                let y = self.nodes[i].value.data();
                let dx: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                add_to(grads, *x, &dx);
            }
            Op::Log { x } => {
                let xd = val(*x);
                let dx: Vec<f64> = gd.iter().zip(xd).map(|(g, x)| g / x).collect();
                add_to(grads, *x, &dx);
            }
            Op::Sum { x } => {
                let dx = vec![gd[0]; self.nodes[*x].value.len()];
                add_to(grads, *x, &dx);
            }
            Op::Mean { x } => {
                let n = self.nodes[*x].value.len() as f64;
                let dx = vec![gd[0] / n; self.nodes[*x].value.len()];
                add_to(grads, *x, &dx);
            }
            Op::Softmax { x } => {
                let y = self.nodes[i].value.data();
                let inner: f64 = gd.iter().zip(y).map(|(g, y)| g * y).sum();
                let dx: Vec<f64> = gd.iter().zip(y).map(|(g, y)| y * (g - inner)).collect();
                add_to(grads, *x, &dx);
            }
            Op::Dot { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                let da: Vec<f64> = bd.iter().map(|v| gd[0] * v).collect();
                let db: Vec<f64> = ad.iter().map(|v| gd[0] * v).collect();
                add_to(grads, *a, &da);
                add_to(grads, *b, &db);
            }
            Op::L2Norm { x } => {
                let xd = val(*x);
                let norm = self.nodes[i].value.data()[0].max(NORM_EPS);
                let dx: Vec<f64> = xd.iter().map(|v| gd[0] * v / norm).collect();
                add_to(grads, *x, &dx);
            }
            Op::Cosine { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                let na = self.nodes[*a].value.l2_norm().max(NORM_EPS);
                let nb = self.nodes[*b].value.l2_norm().max(NORM_EPS);
                let cos = self.nodes[i].value.data()[0];
                let da: Vec<f64> = ad
                    .iter()
                    .zip(bd)
                    .map(|(av, bv)| gd[0] * (bv / (na * nb) - cos * av / (na * na)))
                    .collect();
                let db: Vec<f64> = ad
                    .iter()
                    .zip(bd)
                    .map(|(av, bv)| gd[0] * (av / (na * nb) - cos * bv / (nb * nb)))
                    .collect();
                add_to(grads, *a, &da);
                add_to(grads, *b, &db);
            }
            Op::Index { x, i: idx } => {
                let mut dx = vec![0.0; self.nodes[*x].value.len()];
                dx[*idx] = gd[0];
                add_to(grads, *x, &dx);
            }
            Op::Row { x, i: r } => {
                let cols = self.nodes[*x].value.cols();
                let mut dx = vec![0.0; self.nodes[*x].value.len()];
                dx[r * cols..(r + 1) * cols].copy_from_slice(gd);
                add_to(grads, *x, &dx);
            }
            Op::WeightedSum { w, xs } => {
                let wd = val(*w);
                let mut dw = vec![0.0; xs.len()];
                for (k, &x) in xs.iter().enumerate() {
                    let xd = val(x);
                    dw[k] = gd.iter().zip(xd).map(|(g, v)| g * v).sum();
                    let dx: Vec<f64> = gd.iter().map(|g| wd[k] * g).collect();
                    add_to(grads, x, &dx);
                }
                add_to(grads, *w, &dw);
            }
            Op::Clamp { x, lo, hi } => {
                let xd = val(*x);
                let dx: Vec<f64> = gd
                    .iter()
                    .zip(xd)
                    .map(|(g, x)| if *x > *lo && *x < *hi { *g } else { 0.0 })
                    .collect();
                add_to(grads, *x, &dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterSet;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn vec_var(tape: &mut Tape, data: &[f64]) -> Var {
        tape.constant(Tensor::vector(data.to_vec()).unwrap())
    }

    #[test]
    fn cosine_self_is_one_and_orthogonal_is_zero() {
        let mut tape = Tape::new();
        let v = vec_var(&mut tape, &[3.0, 4.0]);
        let c = tape.cosine(v, v).unwrap();
        assert_close(tape.value(c).as_scalar().unwrap(), 1.0, 1e-12);

        let a = vec_var(&mut tape, &[1.0, 0.0]);
        let b = vec_var(&mut tape, &[0.0, 1.0]);
        let c = tape.cosine(a, b).unwrap();
        assert_close(tape.value(c).as_scalar().unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn elementwise_basics() {
        let mut tape = Tape::new();
        let z = vec_var(&mut tape, &[0.0, 0.0]);
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(t).data(), &[0.0, 0.0]);

        let x = vec_var(&mut tape, &[-1.0, 2.0]);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn info_nce_no_negatives_is_zero() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 2.0]);
        let p = vec_var(&mut tape, &[2.0, 1.0]);
        let loss = tape.info_nce(a, p, &[], 0.1).unwrap();
        assert_eq!(tape.value(loss).as_scalar().unwrap(), 0.0);
    }

    #[test]
    fn info_nce_matches_hand_computed_values() {
        // anchor = positive = (1,0), negative = (-1,0), tau = 1:
        // -log(e / (e + e^-1)) = 0.126928...
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 0.0]);
        let n = vec_var(&mut tape, &[-1.0, 0.0]);
        let loss = tape.info_nce(a, a, &[n], 1.0).unwrap();
        assert_close(tape.value(loss).as_scalar().unwrap(), 0.126928011042972, 1e-12);

        // positive and negative both orthogonal to the anchor: scores tie,
        // softmax is uniform over two entries.
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 0.0, 0.0]);
        let p = vec_var(&mut tape, &[0.0, 1.0, 0.0]);
        let n = vec_var(&mut tape, &[0.0, 0.0, 1.0]);
        let loss = tape.info_nce(a, p, &[n], 0.1).unwrap();
        assert_close(tape.value(loss).as_scalar().unwrap(), std::f64::consts::LN_2, 1e-12);
    }

    #[test]
    fn info_nce_rejects_bad_inputs() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 0.0]);
        let z = vec_var(&mut tape, &[0.0, 0.0]);
        assert!(tape.info_nce(a, z, &[], 0.1).is_err());
        assert!(tape.info_nce(a, a, &[], 0.0).is_err());
        assert!(tape.info_nce(a, a, &[], -1.0).is_err());
    }

    #[test]
    fn info_nce_is_scale_invariant() {
        let mut base = Tape::new();
        let a = vec_var(&mut base, &[0.3, -1.2, 0.7]);
        let p = vec_var(&mut base, &[1.1, 0.2, -0.4]);
        let n = vec_var(&mut base, &[-0.5, 0.9, 0.1]);
        let l0 = base.info_nce(a, p, &[n], 0.1).unwrap();

        let mut scaled = Tape::new();
        let c = 37.5;
        let a = vec_var(&mut scaled, &[0.3 * c, -1.2 * c, 0.7 * c]);
        let p = vec_var(&mut scaled, &[1.1 * c, 0.2 * c, -0.4 * c]);
        let n = vec_var(&mut scaled, &[-0.5 * c, 0.9 * c, 0.1 * c]);
        let l1 = scaled.info_nce(a, p, &[n], 0.1).unwrap();

        assert_close(
            base.value(l0).as_scalar().unwrap(),
            scaled.value(l1).as_scalar().unwrap(),
            1e-10,
        );
    }

    #[test]
    fn backward_of_sum_matvec_is_outer_product() {
        // loss = sum(W x): dW[r][c] = x[c], dx = column sums of W.
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let x = vec_var(&mut tape, &[2.0, -1.0, 4.0]);
        let y = tape.matvec(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads["w"].data(), &[2.0, -1.0, 4.0, 2.0, -1.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut params = ParameterSet::new();
        params.insert("used", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        params.insert("unused", Tensor::vector(vec![5.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let u = tape.param(&params, "used").unwrap();
        let loss = tape.sum(u).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads["used"].data(), &[1.0, 1.0]);
        assert_eq!(grads["unused"].data(), &[0.0]);
    }

    #[test]
    fn cosine_gradient_vanishes_at_identical_inputs() {
        let mut params = ParameterSet::new();
        params.insert("a", Tensor::vector(vec![0.6, -0.8]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&params, "a").unwrap();
        let b = vec_var(&mut tape, &[0.6, -0.8]);
        let c = tape.cosine(a, b).unwrap();
        let grads = tape.backward(c, &params).unwrap();
        for g in grads["a"].data() {
            assert_close(*g, 0.0, 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let params = ParameterSet::new();
        let mut tape = Tape::new();
        let v = vec_var(&mut tape, &[1.0, 2.0]);
        assert!(tape.backward(v, &params).is_err());
    }

    #[test]
    fn repeated_param_binding_reuses_one_leaf() {
        let mut params = ParameterSet::new();
        params.insert("p", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&params, "p").unwrap();
        let b = tape.param(&params, "p").unwrap();
        assert_eq!(a, b);
        // loss = p + p so the gradient accumulates to 2.
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads["p"].data(), &[2.0]);
    }

    #[test]
    fn forward_values_are_bit_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let a = vec_var(&mut tape, &[0.1, 0.2, 0.3]);
            let p = vec_var(&mut tape, &[0.3, 0.1, 0.2]);
            let n = vec_var(&mut tape, &[-0.2, 0.5, 0.1]);
            let loss = tape.info_nce(a, p, &[n], 0.1).unwrap();
            tape.value(loss).as_scalar().unwrap()
        };
        assert_eq!(build().to_bits(), build().to_bits());
    }
}
