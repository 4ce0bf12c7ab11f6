//! The learning rules of the hierarchy: local training on clients, size-weighted
//! averaging at the edge, divergence-penalised weighting at the cloud, and
//! refinement of cluster models toward the global model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{label_histogram, LabeledDataset};
use crate::error::{check_dim, Error, Result};
use crate::model::{self, Model, SgdConfig};
use crate::numerics::{cosine_similarity, squared_l2_distance, Histogram, SeededRng, Vec64};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub model: Model,
    /// Label histogram of the training shard.
    pub histogram: Histogram,
    pub cluster_id: Option<usize>,
    /// Ground-truth group for synthetic data, used only for diagnostics.
    pub ground_truth: Option<usize>,
}

impl ClientState {
    pub fn new(id: usize, train: LabeledDataset, validation: LabeledDataset, model: Model) -> Result<Self> {
        let histogram = label_histogram(&train, model.spec().num_classes)?;
        label_histogram(&validation, model.spec().num_classes)?;
        Ok(Self { id, train, validation, model, histogram, cluster_id: None, ground_truth: None })
    }

    pub fn data_size(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub id: usize,
    pub members: BTreeSet<usize>,
    pub model: Model,
    /// Sum of member training-set sizes.
    pub data_size: usize,
    /// Validation accuracy of `model` on its members, in `[0, 1]`.
    pub val_accuracy: f64,
}

impl ClusterState {
    pub fn new(id: usize, members: BTreeSet<usize>, model: Model, data_size: usize) -> Self {
        Self { id, members, model, data_size, val_accuracy: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub model: Model,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Base strength of the pull toward the global model.
    pub lambda0: f64,
    pub refine_lr: f64,
    pub refine_steps: usize,
    pub batch_size: usize,
    /// Weight on the data term; 1 in normal use.
    pub loss_weight: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { lambda0: 0.1, refine_lr: 0.01, refine_steps: 20, batch_size: 32, loss_weight: 1.0 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0) || !(self.refine_lr > 0.0) || self.batch_size == 0 || !(self.loss_weight >= 0.0) {
            return Err(Error::Config("invalid refinement settings".into()));
        }
        Ok(())
    }
}

/// Proximal anchor `mu * ||w - anchor||^2` added to the local loss.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub anchor: &'a Model,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean mini-batch loss over all steps; `None` when no step ran.
    pub mean_loss: Option<f64>,
}

/// `epochs` passes of mini-batch SGD over a seeded shuffle of the training shard.
///
/// The momentum buffer starts at zero on every call.
pub fn local_train(
    c: &mut ClientState,
    epochs: usize,
    batch_size: usize,
    sgd: &SgdConfig,
    lr: f64,
    proximal: Option<Proximal<'_>>,
    rng: &mut SeededRng,
) -> Result<TrainReport> {
    if c.train.is_empty() {
        return Err(Error::Empty("client training shard"));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if let Some(p) = proximal {
        c.model.ensure_compatible(p.anchor)?;
    }
    let mut velocity = Vec64::zeros(c.model.params().len());
    let mut order: Vec<usize> = (0..c.train.len()).collect();
    let (mut steps, mut total) = (0usize, 0.0);
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(batch_size) {
            total += model::batch_loss(&c.model, &c.train, batch)?;
            let mut g = model::grad(&c.model, &c.train, batch)?;
            if let Some(p) = proximal {
                let diff = c.model.params().sub(p.anchor.params())?;
                g.axpy(2.0 * p.mu, &diff)?;
            }
            model::sgd_step(&mut c.model, &g, sgd, lr, &mut velocity)?;
            steps += 1;
        }
    }
    Ok(TrainReport { steps, mean_loss: (steps > 0).then(|| total / steps as f64) })
}

/// `sum_k weights[k] * models[k]`, accumulated in the given order.
pub fn weighted_average(models: &[&Model], weights: &[f64]) -> Result<Model> {
    let (first, rest) = models.split_first().ok_or(Error::Empty("models to average"))?;
    check_dim(models.len(), weights.len())?;
    for m in rest {
        first.ensure_compatible(m)?;
    }
    let mut acc = first.params().clone();
    acc.scale(weights[0]);
    for (m, &w) in rest.iter().zip(&weights[1..]) {
        acc.axpy(w, m.params())?;
    }
    acc.ensure_finite("weighted_average")?;
    Model::from_params(first.spec(), acc)
}

/// Edge aggregation: members weighted by `|D_i| / |D_k|`.
pub fn edge_aggregate(members: &[&ClientState]) -> Result<Model> {
    if members.is_empty() {
        return Err(Error::Empty("cluster members"));
    }
    let total: usize = members.iter().map(|c| c.data_size()).sum();
    if total == 0 {
        return Err(Error::Empty("member training data"));
    }
    let weights: Vec<f64> = members.iter().map(|c| c.data_size() as f64 / total as f64).collect();
    let models: Vec<&Model> = members.iter().map(|c| &c.model).collect();
    weighted_average(&models, &weights)
}

fn size_weights(clusters: &[&ClusterState]) -> Result<Vec<f64>> {
    if clusters.is_empty() {
        return Err(Error::Empty("clusters"));
    }
    let total: usize = clusters.iter().map(|c| c.data_size).sum();
    if total == 0 {
        return Err(Error::Empty("cluster data"));
    }
    Ok(clusters.iter().map(|c| c.data_size as f64 / total as f64).collect())
}

/// Plain FedAvg over cluster models, weighted by `|D_k| / |D|`.
pub fn cloud_aggregate_naive(clusters: &[&ClusterState]) -> Result<Model> {
    let weights = size_weights(clusters)?;
    let models: Vec<&Model> = clusters.iter().map(|c| &c.model).collect();
    weighted_average(&models, &weights)
}

/// Dynamic cloud weights
/// `rho_k ∝ |D_k| * alpha_k * exp(-lambda * ||w_{e,k} - w_g||^2)`,
/// measured against the previous global model.
pub fn compute_rho(clusters: &[&ClusterState], prev_global: &Model, lambda: f64) -> Result<Vec<f64>> {
    if clusters.is_empty() {
        return Err(Error::Empty("clusters"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config("rho lambda must be non-negative".into()));
    }
    let mut log_terms = Vec::with_capacity(clusters.len());
    let mut numerators = Vec::with_capacity(clusters.len());
    for c in clusters {
        c.model.ensure_compatible(prev_global)?;
        let d2 = squared_l2_distance(c.model.params(), prev_global.params())?;
        let alpha = c.val_accuracy;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("cluster {} accuracy {alpha} outside [0,1]", c.id)));
        }
        numerators.push(c.data_size as f64 * alpha * (-lambda * d2).exp());
        log_terms.push((c.data_size as f64 * alpha).ln() - lambda * d2);
    }
    let total: f64 = numerators.iter().sum();
    if total > 0.0 {
        return Ok(numerators.into_iter().map(|n| n / total).collect());
    }
    if log_terms.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::DegenerateWeights);
    }
    // Every exponential underflowed; normalise in log space instead.
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    Ok(scaled.into_iter().map(|s| s / total).collect())
}

/// `w_g = sum_k rho_k * w_{e,k}`.
pub fn cloud_aggregate_dynamic(clusters: &[&ClusterState], rho: &[f64]) -> Result<Model> {
    if clusters.is_empty() {
        return Err(Error::Empty("clusters"));
    }
    check_dim(clusters.len(), rho.len())?;
    let sum: f64 = rho.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || rho.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!("rho must be a probability vector (sums to {sum})")));
    }
    let models: Vec<&Model> = clusters.iter().map(|c| &c.model).collect();
    weighted_average(&models, rho)
}

/// `lambda_k = lambda0 / (1 + (1 - cos(w_{e,k}, w_g)))`.
pub fn divergence_aware_lambda(cluster_model: &Model, global: &Model, lambda0: f64) -> Result<f64> {
    let cos = cosine_similarity(cluster_model.params(), global.params())?;
    Ok(lambda0 / (1.0 + (1.0 - cos)))
}

/// `loss_weight * L(w; batch) + lambda_k * ||w - w_g||^2`.
pub fn refinement_objective(
    w: &Model,
    global: &Model,
    lambda_k: f64,
    loss_weight: f64,
    data: &LabeledDataset,
    batch: &[usize],
) -> Result<f64> {
    let data_term = if loss_weight == 0.0 { 0.0 } else { loss_weight * model::batch_loss(w, data, batch)? };
    Ok(data_term + lambda_k * squared_l2_distance(w.params(), global.params())?)
}

/// Gradient of [`refinement_objective`]; the penalty contributes `2 lambda_k (w - w_g)`.
pub fn refinement_gradient(
    w: &Model,
    global: &Model,
    lambda_k: f64,
    loss_weight: f64,
    data: &LabeledDataset,
    batch: &[usize],
) -> Result<Vec64> {
    w.ensure_compatible(global)?;
    let mut g = if loss_weight == 0.0 {
        Vec64::zeros(w.params().len())
    } else {
        let mut g = model::grad(w, data, batch)?;
        g.scale(loss_weight);
        g
    };
    let diff = w.params().sub(global.params())?;
    g.axpy(2.0 * lambda_k, &diff)?;
    Ok(g)
}

/// Fine-tunes a cluster model by plain gradient descent on the regularised
/// objective, drawing a fresh batch from the pooled member data every step.
/// `lambda_k` is fixed from the divergence between the starting model and `w_g`.
pub fn refine_cluster(
    cluster: &ClusterState,
    global: &Model,
    cfg: &RefineConfig,
    member_data: &[&LabeledDataset],
    rng: &mut SeededRng,
) -> Result<Model> {
    cfg.validate()?;
    cluster.model.ensure_compatible(global)?;
    if cfg.refine_steps == 0 {
        return Ok(cluster.model.clone());
    }
    let pooled = LabeledDataset::concat(member_data.iter().copied(), cluster.model.spec().input_dim)?;
    if pooled.is_empty() && cfg.loss_weight != 0.0 {
        return Err(Error::Empty("cluster refinement data"));
    }
    let lambda_k = divergence_aware_lambda(&cluster.model, global, cfg.lambda0)?;
    let mut w = cluster.model.clone();
    for _ in 0..cfg.refine_steps {
        let batch = rng.sample_indices(pooled.len(), cfg.batch_size);
        let g = refinement_gradient(&w, global, lambda_k, cfg.loss_weight, &pooled, &batch)?;
        w.params_mut().axpy(-cfg.refine_lr, &g)?;
        w.params().ensure_finite("refine_cluster")?;
    }
    Ok(w)
}
