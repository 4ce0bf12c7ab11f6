//! Synthetic datasets, Dirichlet label-skew partitioning, drift injection and
//! label histograms.
//!
//! The synthetic task family is a Gaussian mixture per ground-truth cluster:
//! one mean per class, isotropic noise, and a per-cluster random rotation of
//! the class-mean constellation. `separation` blends between a shared
//! constellation (0) and fully independent rotations (1).

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fedcore::ClientState;
use crate::model::ModelSpec;
use crate::numerics::{Histogram, SeededRng};

/// Feature matrix (row-major) with one class label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
}

impl LabeledDataset {
    pub fn new(input_dim: usize, features: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        check_dim(labels.len() * input_dim, features.len())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LabeledDataset::new"));
        }
        Ok(Self { input_dim, features, labels })
    }

    pub fn empty(input_dim: usize) -> Self {
        Self { input_dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    fn push(&mut self, row: &[f64], label: u32) {
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.input_dim);
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    /// Rows of every dataset in order. All parts must share `input_dim`.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledDataset>, input_dim: usize) -> Result<Self> {
        let mut out = Self::empty(input_dim);
        for part in parts {
            check_dim(input_dim, part.input_dim)?;
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
        }
        Ok(out)
    }

    pub fn map_labels(&self, f: impl Fn(u32) -> u32) -> Self {
        Self {
            input_dim: self.input_dim,
            features: self.features.clone(),
            labels: self.labels.iter().map(|&l| f(l)).collect(),
        }
    }

    pub fn shift_features(&self, shift: &[f64]) -> Result<Self> {
        check_dim(self.input_dim, shift.len())?;
        let features = self
            .features
            .chunks(self.input_dim)
            .flat_map(|row| row.iter().zip(shift).map(|(x, s)| x + s))
            .collect();
        Ok(Self { input_dim: self.input_dim, features, labels: self.labels.clone() })
    }
}

/// Per-class label counts of `d`.
pub fn label_histogram(d: &LabeledDataset, num_classes: usize) -> Result<Histogram> {
    let mut bins = vec![0u64; num_classes];
    for &label in &d.labels {
        let slot = bins
            .get_mut(label as usize)
            .ok_or(Error::LabelOutOfRange { label, num_classes })?;
        *slot += 1;
    }
    Histogram::new(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub num_clusters: usize,
    /// 0 = every cluster shares one class-mean layout, 1 = independent rotations.
    pub separation: f64,
    /// Norm of each class mean.
    pub class_spread: f64,
    pub noise_std: f64,
    /// Number of disjoint class subsets. Cluster `g` draws only classes `c`
    /// with `c % label_groups == g % label_groups` and shares its feature
    /// rotation with every cluster of equal `g / label_groups`.
    pub label_groups: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { num_clusters: 4, separation: 1.0, class_spread: 3.0, noise_std: 1.0, label_groups: 2 }
    }
}

/// One ground-truth cluster's generative distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTask {
    pub class_means: Vec<Vec<f64>>,
    pub noise_std: f64,
    /// Classes this cluster generates.
    pub labels: Vec<u32>,
}

impl ClusterTask {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.class_means[0].len()
    }

    pub fn sample_row(&self, label: u32, rng: &mut SeededRng) -> Vec<f64> {
        self.class_means[label as usize]
            .iter()
            .map(|m| m + self.noise_std * rng.normal())
            .collect()
    }

    /// Class-balanced pool with `per_class` rows of every class the cluster
    /// generates, further restricted to `labels` when given.
    pub fn sample_pool(&self, per_class: usize, labels: Option<&[u32]>, rng: &mut SeededRng) -> LabeledDataset {
        let labels: Vec<u32> = match labels {
            Some(keep) => self.labels.iter().copied().filter(|l| keep.contains(l)).collect(),
            None => self.labels.clone(),
        };
        let mut out = LabeledDataset::empty(self.input_dim());
        for _ in 0..per_class {
            for &label in &labels {
                let row = self.sample_row(label, rng);
                out.push(&row, label);
            }
        }
        out
    }
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random orthogonal matrix (rows orthonormal) by Gram-Schmidt.
fn random_rotation(dim: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = random_unit(dim, rng);
        for r in &rows {
            let proj: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows
}

/// `cfg.num_clusters` Gaussian-mixture tasks sharing a base constellation of
/// class means, each rotated by its own random orthogonal map.
pub fn generate_cluster_tasks(cfg: &TaskConfig, spec: &ModelSpec, rng: &mut SeededRng) -> Result<Vec<ClusterTask>> {
    if cfg.num_clusters == 0 {
        return Err(Error::Config("num_clusters must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.separation) || cfg.class_spread <= 0.0 || cfg.noise_std <= 0.0 {
        return Err(Error::Config("task separation must be in [0,1], spread and noise positive".into()));
    }
    if cfg.label_groups == 0 || cfg.label_groups > spec.num_classes {
        return Err(Error::Config("label_groups must be in [1, num_classes]".into()));
    }
    let dim = spec.input_dim;
    let base: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| random_unit(dim, rng).into_iter().map(|x| x * cfg.class_spread).collect())
        .collect();
    let angle = cfg.separation * std::f64::consts::FRAC_PI_2;
    let (keep, turn) = (angle.cos(), angle.sin());
    let rotations: Vec<Vec<Vec<f64>>> =
        (0..cfg.num_clusters.div_ceil(cfg.label_groups)).map(|_| random_rotation(dim, rng)).collect();
    let tasks = (0..cfg.num_clusters)
        .map(|g| {
            let rot = &rotations[g / cfg.label_groups];
            let class_means = base
                .iter()
                .map(|m| {
                    (0..dim)
                        .map(|r| keep * m[r] + turn * rot[r].iter().zip(m).map(|(a, b)| a * b).sum::<f64>())
                        .collect()
                })
                .collect();
            let labels = (0..spec.num_classes as u32).filter(|c| *c as usize % cfg.label_groups == g % cfg.label_groups).collect();
            ClusterTask { class_means, noise_std: cfg.noise_std, labels }
        })
        .collect();
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub samples_min: usize,
    pub samples_max: usize,
    pub validation_fraction: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            dirichlet_alpha: 0.5,
            samples_min: 50,
            samples_max: 200,
            validation_fraction: 0.1,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be at least 1".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::Config("dirichlet_alpha must be positive".into()));
        }
        if self.samples_min < 2 || self.samples_max < self.samples_min {
            return Err(Error::Config("need 2 <= samples_min <= samples_max".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::Config("validation_fraction must be in (0, 0.5]".into()));
        }
        Ok(())
    }
}

/// One client's slice of a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    /// Pool rows owned by this client (train and validation together).
    pub pool_indices: Vec<usize>,
}

/// Splits `pool` into disjoint per-client shards with Dirichlet(alpha) label
/// proportions.
///
/// Each client draws proportions `q ~ Dir(alpha)` and a size in
/// `[samples_min, samples_max]`, then takes rows one at a time from the
/// classes it favours. Classes that run dry are dropped from `q`; if `q` has
/// no mass left on any remaining class, the client draws from what remains in
/// proportion to availability.
pub fn dirichlet_partition(pool: &LabeledDataset, cfg: &PartitionConfig, rng: &mut SeededRng) -> Result<Vec<ClientShard>> {
    cfg.validate()?;
    if pool.len() < cfg.num_clients * cfg.samples_min {
        return Err(Error::Partition(format!(
            "pool of {} rows cannot give {} clients {} rows each",
            pool.len(),
            cfg.num_clients,
            cfg.samples_min
        )));
    }
    let num_classes = pool.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in pool.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for bucket in &mut by_class {
        rng.shuffle(bucket);
    }

    let mut shards = Vec::with_capacity(cfg.num_clients);
    for client in 0..cfg.num_clients {
        let q = rng.dirichlet(cfg.dirichlet_alpha, num_classes);
        let size = cfg.samples_min + rng.below(cfg.samples_max - cfg.samples_min + 1);
        let mut owned = Vec::with_capacity(size);
        for _ in 0..size {
            let mut weights: Vec<f64> = q
                .iter()
                .zip(&by_class)
                .map(|(&p, b)| if b.is_empty() { 0.0 } else { p })
                .collect();
            if weights.iter().all(|&w| w == 0.0) {
                weights = by_class.iter().map(|b| b.len() as f64).collect();
            }
            if weights.iter().all(|&w| w == 0.0) {
                return Err(Error::Partition(format!("pool exhausted while filling client {client}")));
            }
            let class = rng.categorical(&weights);
            owned.push(by_class[class].pop().expect("non-empty bucket"));
        }
        rng.shuffle(&mut owned);
        let n_val = ((cfg.validation_fraction * size as f64).round() as usize).clamp(1, size - 1);
        let validation = pool.subset(&owned[..n_val]);
        let train = pool.subset(&owned[n_val..]);
        shards.push(ClientShard { train, validation, pool_indices: owned });
    }
    Ok(shards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftKind {
    /// Label `l` becomes `mapping[l]`.
    LabelPermutation { mapping: Vec<u32> },
    /// Label `from[i]` becomes `to[i]`; other labels are untouched.
    LabelSubsetSwitch { from: Vec<u32>, to: Vec<u32> },
    /// Additive shift of every feature row.
    FeatureShift { shift: Vec<f64> },
}

impl DriftKind {
    pub fn validate(&self, num_classes: usize, input_dim: usize) -> Result<()> {
        match self {
            DriftKind::LabelPermutation { mapping } => {
                let distinct: BTreeSet<u32> = mapping.iter().copied().collect();
                if mapping.len() != num_classes || distinct.len() != num_classes || mapping.iter().any(|&m| m as usize >= num_classes) {
                    return Err(Error::Config("label permutation must be a permutation of all classes".into()));
                }
            }
            DriftKind::LabelSubsetSwitch { from, to } => {
                if from.len() != to.len() || from.iter().chain(to).any(|&m| m as usize >= num_classes) {
                    return Err(Error::Config("subset switch needs equal-length in-range label lists".into()));
                }
            }
            DriftKind::FeatureShift { shift } => check_dim(input_dim, shift.len())?,
        }
        Ok(())
    }

    fn relabel(&self, label: u32) -> u32 {
        match self {
            DriftKind::LabelPermutation { mapping } => mapping[label as usize],
            DriftKind::LabelSubsetSwitch { from, to } => from
                .iter()
                .position(|&f| f == label)
                .map_or(label, |i| to[i]),
            DriftKind::FeatureShift { .. } => label,
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            DriftKind::LabelPermutation { mapping } => mapping.iter().enumerate().all(|(i, &m)| i as u32 == m),
            DriftKind::LabelSubsetSwitch { from, to } => from == to,
            DriftKind::FeatureShift { shift } => shift.iter().all(|&s| s == 0.0),
        }
    }

    pub fn apply(&self, d: &LabeledDataset) -> Result<LabeledDataset> {
        match self {
            DriftKind::FeatureShift { shift } => d.shift_features(shift),
            _ => Ok(d.map_labels(|l| self.relabel(l))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub round: usize,
    pub kind: DriftKind,
    pub affected_clients: BTreeSet<usize>,
}

impl DriftEvent {
    pub fn new(round: usize, kind: DriftKind, affected_clients: BTreeSet<usize>) -> Result<Self> {
        if round == 0 {
            return Err(Error::Config("drift round must be at least 1".into()));
        }
        if affected_clients.is_empty() {
            return Err(Error::Config("drift event must affect at least one client".into()));
        }
        Ok(Self { round, kind, affected_clients })
    }
}

/// Client after `event`: both shards transformed, histogram recomputed.
pub fn apply_drift(client: &ClientState, event: &DriftEvent) -> Result<ClientState> {
    if !event.affected_clients.contains(&client.id) {
        return Err(Error::NotTargeted(client.id));
    }
    let num_classes = client.histogram.num_classes();
    let mut out = client.clone();
    out.train = event.kind.apply(&client.train)?;
    out.validation = event.kind.apply(&client.validation)?;
    out.histogram = label_histogram(&out.train, num_classes)?;
    Ok(out)
}

const DATASET_MAGIC: &[u8; 4] = b"CFLD";
const DATASET_VERSION: u32 = 1;

/// Columnar binary layout: magic, version, row count (u64), column count
/// (u32), features row-major as little-endian f64, labels as little-endian u32.
pub fn write_dataset(d: &LabeledDataset, mut w: impl Write) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(d.len() as u64).to_le_bytes())?;
    w.write_all(&(d.input_dim as u32).to_le_bytes())?;
    for v in &d.features {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in &d.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(mut r: impl Read) -> Result<LabeledDataset> {
    let bad = |reason: &str| Error::Format { what: "dataset file", reason: reason.into() };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DATASET_VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut features = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut b8)?;
        features.push(f64::from_le_bytes(b8));
    }
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        r.read_exact(&mut b4)?;
        labels.push(u32::from_le_bytes(b4));
    }
    LabeledDataset::new(cols, features, labels)
}
