//! Contrastive training of the encoder.
//!
//! Each epoch draws two edge-dropped views of the graph, encodes the first
//! with the online encoder and the second with its EMA copy, and minimizes
//! InfoNCE with in-batch negatives. Only the online encoder receives
//! gradients; the EMA copy follows it through [`momentum_update`].

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::lcat::{Lcat, LcatDims, LcatParameters, LambdaOverride, Neighborhoods};
use crate::rng::{item_stream, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Edge-drop ratio of the online view.
    pub perturb1: f64,
    /// Edge-drop ratio of the momentum view.
    pub perturb2: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// EMA coefficient of the momentum encoder.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Use every entity as a negative instead of in-batch negatives.
    pub full_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            perturb1: 0.2,
            perturb2: 0.3,
            tau: 0.08,
            momentum: 0.999,
            batch_size: 1024,
            epochs: 800,
            learning_rate: 1e-3,
            full_negatives: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("perturb1", self.perturb1), ("perturb2", self.perturb2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Drops `floor(ratio · |T|)` triples chosen uniformly without replacement.
pub fn augment_graph<R: Rng + ?Sized>(g: &KnowledgeGraph, ratio: f64, rng: &mut R) -> KnowledgeGraph {
    let total = g.num_triples();
    let drop = ((ratio.clamp(0.0, 1.0) * total as f64).floor() as usize).min(total);
    let mut dropped = vec![false; total];
    for idx in rand::seq::index::sample(rng, total, drop) {
        dropped[idx] = true;
    }
    g.with_triples(g.triples().iter().zip(&dropped).filter(|(_, &d)| !d).map(|(t, _)| *t))
}

#[derive(Debug, Clone)]
pub struct InfoNce {
    pub loss: f64,
    pub grad_u: Array2<f64>,
    pub grad_v: Array2<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric-denominator InfoNCE summed over rows. Row `i` of `u` and `v`
/// are the two views of the same entity; every other row is a negative in
/// both directions.
pub fn infonce_loss(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, tau: f64) -> Result<InfoNce> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if u.dim() != v.dim() {
        return Err(Error::Shape(format!("views {:?} and {:?} differ", u.dim(), v.dim())));
    }
    let n = u.nrows();
    let z = u.dot(&v.t()) / tau;
    let mut dz = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    for i in 0..n {
        let row = z.row(i);
        let col = z.column(i);
        let others = col.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &x)| x);
        let lse = log_sum_exp(row.iter().copied().chain(others));
        loss += lse - z[[i, i]];
        for k in 0..n {
            dz[[i, k]] += (z[[i, k]] - lse).exp();
            if k != i {
                dz[[k, i]] += (z[[k, i]] - lse).exp();
            }
        }
        dz[[i, i]] -= 1.0;
    }
    let grad_u = dz.dot(&v) / tau;
    let grad_v = dz.t().dot(&u) / tau;
    Ok(InfoNce { loss, grad_u, grad_v })
}

/// `θ_mom ← m·θ_mom + (1 − m)·θ_online` for every scalar.
pub fn momentum_update(online: &LcatParameters, target: &mut LcatParameters, m: f64) -> Result<()> {
    if !online.same_shape(target) {
        return Err(Error::Shape("momentum encoder and online encoder differ in shape".into()));
    }
    for ((_, src), (_, dst)) in online.tensors().into_iter().zip(target.tensors_mut()) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = m * *d + (1.0 - m) * s;
        }
    }
    Ok(())
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at index {pos}")));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub online: LcatParameters,
    pub momentum_copy: LcatParameters,
    pub adam: Adam,
    pub epoch_losses: Vec<f64>,
    pub log: Vec<EpochLog>,
}

/// Epoch-by-epoch trainer. State only changes once an epoch has produced a
/// finite loss and finite gradients, so after an error `state` still holds
/// the last good parameters.
pub struct Trainer<'a> {
    pub state: TrainState,
    graph: &'a KnowledgeGraph,
    features: ArrayView2<'a, f64>,
    config: TrainConfig,
    seed: u64,
    frozen: LambdaOverride,
}

impl<'a> Trainer<'a> {
    pub fn new(
        graph: &'a KnowledgeGraph,
        features: ArrayView2<'a, f64>,
        dims: LcatDims,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if features.nrows() != graph.num_entities() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} entities",
                features.nrows(),
                graph.num_entities()
            )));
        }
        let online = LcatParameters::init(dims, &mut stream(seed, Stream::Init))?;
        let momentum_copy = online.clone();
        let adam = Adam::new(online.len());
        Ok(Self {
            state: TrainState { online, momentum_copy, adam, epoch_losses: Vec::new(), log: Vec::new() },
            graph,
            features,
            config,
            seed,
            frozen: [None; 3],
        })
    }

    pub fn with_frozen_lambdas(mut self, frozen: LambdaOverride) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn online_encoder(&self) -> Lcat {
        Lcat { params: self.state.online.clone(), frozen: self.frozen }
    }

    /// Runs one epoch and returns its mean per-entity loss.
    pub fn epoch(&mut self) -> Result<f64> {
        let started = Instant::now();
        let epoch = self.state.epoch_losses.len();
        let n = self.graph.num_entities();
        if n == 0 {
            return Err(Error::Shape("cannot train on an empty graph".into()));
        }
        let mut rng = item_stream(self.seed, Stream::Augment, epoch as u64);
        let view1 = augment_graph(self.graph, self.config.perturb1, &mut rng);
        let view2 = augment_graph(self.graph, self.config.perturb2, &mut rng);

        let online = Lcat { params: self.state.online.clone(), frozen: self.frozen };
        let target = Lcat { params: self.state.momentum_copy.clone(), frozen: self.frozen };
        let out_u = online.forward(self.features, &Neighborhoods::from_graph(&view1))?;
        let out_v = target.forward(self.features, &Neighborhoods::from_graph(&view2))?.detach();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let batch = if self.config.full_negatives { n } else { self.config.batch_size };
        let mut total = 0.0;
        let mut grad = Array2::<f64>::zeros(out_u.e_tilde.dim());
        for idx in order.chunks(batch) {
            let u = out_u.e_tilde.select(Axis(0), idx);
            let v = out_v.e_tilde.select(Axis(0), idx);
            let res = infonce_loss(u.view(), v.view(), self.config.tau)?;
            total += res.loss;
            for (row, &i) in res.grad_u.rows().into_iter().zip(idx) {
                grad.row_mut(i).assign(&row);
            }
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss} at epoch {epoch}")));
        }
        grad /= n as f64;
        let grads = online.backward(&out_u, grad.view())?;

        let mut flat = self.state.online.to_flat();
        let mut adam = self.state.adam.clone();
        adam.update(&mut flat, &grads.to_flat(), self.config.learning_rate)?;
        let mut updated = self.state.online.clone();
        updated.set_flat(&flat)?;
        if !updated.is_finite() {
            return Err(Error::Numerical(format!("parameters became non-finite at epoch {epoch}")));
        }
        self.state.online = updated;
        self.state.adam = adam;
        momentum_update(&self.state.online, &mut self.state.momentum_copy, self.config.momentum)?;

        let lambdas = self.online_encoder().lambdas();
        self.state.epoch_losses.push(loss);
        self.state.log.push(EpochLog {
            epoch,
            loss,
            wall_ms: started.elapsed().as_millis() as u64,
            lambda1: lambdas[0],
            lambda2: lambdas[1],
            lambda3: lambdas[2],
        });
        log::debug!("epoch {epoch}: loss {loss:.6}");
        Ok(loss)
    }

    pub fn run(mut self) -> Result<TrainState> {
        for _ in 0..self.config.epochs {
            self.epoch()?;
        }
        Ok(self.state)
    }
}

/// Trains from a fresh initialization for `config.epochs` epochs.
pub fn train(
    graph: &KnowledgeGraph,
    features: ArrayView2<'_, f64>,
    dims: LcatDims,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainState> {
    Trainer::new(graph, features, dims, *config, seed)?.run()
}
