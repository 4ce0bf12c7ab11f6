//! Federated dynamic clustering: a hybrid label/model distance between clients,
//! ranking by row norm, sorted threshold clustering in affinity-row space, a
//! variance constraint on clusters, and JSD-based drift detection.
//!
//! The affinity score is a distance, `gamma * JSD + (1 - gamma) * (1 - cos) / 2`,
//! so both terms grow as clients become less alike. Each client is embedded as
//! its row of the affinity matrix, and distances between rows are root mean
//! square differences, which keeps `delta` on the same `[0, 1]` scale as the
//! scores regardless of population size.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::ClientState;
use crate::numerics::{cosine_similarity, jsd, Histogram, ParamVector};

/// Which parameter vector feeds the model term of the affinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSignal {
    /// The client's last-known model parameters.
    Params,
    /// The client's last local update, parameters after training minus before.
    Update,
    /// The client's parameters minus the current global model.
    #[default]
    GlobalOffset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdcConfig {
    /// Weight of the label-distribution term against the model term.
    pub gamma: f64,
    /// Assignment threshold on row distance.
    pub delta: f64,
    /// Drift threshold on the JSD between successive label histograms.
    pub phi: f64,
    /// Rounds between full reclusterings; 0 disables scheduled reclustering.
    pub recluster_every: usize,
    pub model_signal: ModelSignal,
}

impl Default for FdcConfig {
    fn default() -> Self {
        Self { gamma: 0.5, delta: 0.08, phi: 0.5, recluster_every: 10, model_signal: ModelSignal::GlobalOffset }
    }
}

impl FdcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta {} must be positive", self.delta)));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::Config(format!("phi {} outside (0,1)", self.phi)));
        }
        Ok(())
    }
}

/// Distance-oriented hybrid score between two clients' label histograms and parameters.
pub fn pair_affinity(hi: &Histogram, wi: &ParamVector, hj: &Histogram, wj: &ParamVector, gamma: f64) -> Result<f64> {
    let label_term = jsd(hi, hj)?;
    let model_term = (1.0 - cosine_similarity(wi, wj)?) / 2.0;
    Ok(gamma * label_term + (1.0 - gamma) * model_term)
}

pub fn affinity(ci: &ClientState, cj: &ClientState, gamma: f64) -> Result<f64> {
    pair_affinity(&ci.histogram, ci.model.params(), &cj.histogram, cj.model.params(), gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffinityMatrix {
    client_ids: Vec<usize>,
    scores: Vec<f64>,
}

impl AffinityMatrix {
    /// Builds a matrix from raw row-major scores. Rows must be symmetric.
    pub fn from_scores(client_ids: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        let n = client_ids.len();
        if n == 0 {
            return Err(Error::Empty("affinity matrix"));
        }
        if scores.len() != n * n {
            return Err(Error::Dimension { expected: n * n, found: scores.len() });
        }
        if client_ids.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(Error::Config("duplicate client ids in affinity matrix".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("affinity matrix"));
        }
        for i in 0..n {
            for j in 0..i {
                if (scores[i * n + j] - scores[j * n + i]).abs() > 1e-12 {
                    return Err(Error::Config(format!("affinity matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { client_ids, scores })
    }

    pub fn size(&self) -> usize {
        self.client_ids.len()
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.size() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.scores[i * n..(i + 1) * n]
    }

    /// Position of `client_id` in the matrix ordering.
    pub fn index_of(&self, client_id: usize) -> Option<usize> {
        self.client_ids.iter().position(|&c| c == client_id)
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn row_of(&self, client_id: usize) -> &[f64] {
        self.row(self.index_of(client_id).expect("client id present in matrix"))
    }

    fn mean_row(&self, members: &[usize]) -> Vec<f64> {
        let mut mean = vec![0.0; self.size()];
        for &c in members {
            for (m, x) in mean.iter_mut().zip(self.row_of(c)) {
                *m += x;
            }
        }
        let k = members.len() as f64;
        mean.iter_mut().for_each(|m| *m /= k);
        mean
    }

    fn sum_sq_to(&self, members: &[usize], centroid: &[f64]) -> f64 {
        members.iter().map(|&c| row_distance_sq(self.row_of(c), centroid)).sum()
    }
}

/// Root-mean-square distance between two affinity rows.
pub fn row_distance(a: &[f64], b: &[f64]) -> f64 {
    row_distance_sq(a, b).sqrt()
}

fn row_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.len() as f64
}

/// Pairwise scores over `clients`, each unordered pair evaluated once. The
/// diagonal is zero since every client is at distance zero from itself.
pub fn build_affinity_matrix(clients: &[&ClientState], gamma: f64) -> Result<AffinityMatrix> {
    let hist: Vec<&Histogram> = clients.iter().map(|c| &c.histogram).collect();
    let params: Vec<&ParamVector> = clients.iter().map(|c| c.model.params()).collect();
    let ids = clients.iter().map(|c| c.id).collect();
    build_affinity_from_parts(ids, &hist, &params, gamma)
}

pub fn build_affinity_from_parts(
    client_ids: Vec<usize>,
    histograms: &[&Histogram],
    params: &[&ParamVector],
    gamma: f64,
) -> Result<AffinityMatrix> {
    let n = client_ids.len();
    if n == 0 {
        return Err(Error::Empty("clients for affinity"));
    }
    if histograms.len() != n || params.len() != n {
        return Err(Error::Dimension { expected: n, found: histograms.len().min(params.len()) });
    }
    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let a = pair_affinity(histograms[i], params[i], histograms[j], params[j], gamma)?;
            scores[i * n + j] = a;
            scores[j * n + i] = a;
        }
    }
    AffinityMatrix::from_scores(client_ids, scores)
}

/// Client ids by descending row norm, ties by ascending id.
pub fn rank_clients(a: &AffinityMatrix) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = (0..a.size()).map(|i| (a.row_norm(i), a.client_ids()[i])).collect();
    keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    keyed.into_iter().map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    /// Client id to cluster id.
    pub labels: BTreeMap<usize, usize>,
    /// Mean affinity row per cluster.
    pub centroids: BTreeMap<usize, Vec<f64>>,
    pub wcss: f64,
}

impl ClusterAssignment {
    /// Builds an assignment from explicit groups, numbering clusters in the given order.
    pub fn from_groups(groups: &[Vec<usize>], a: &AffinityMatrix) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Empty("cluster"));
            }
            for &c in g {
                if a.index_of(c).is_none() {
                    return Err(Error::Config(format!("client {c} absent from affinity matrix")));
                }
                if labels.insert(c, k).is_some() {
                    return Err(Error::Config(format!("client {c} assigned twice")));
                }
            }
        }
        if labels.len() != a.size() {
            return Err(Error::Config("assignment does not cover every client".into()));
        }
        Ok(Self::from_labels(labels, a))
    }

    /// Builds an assignment from an explicit client-to-cluster map covering the matrix.
    pub fn from_label_map(labels: BTreeMap<usize, usize>, a: &AffinityMatrix) -> Result<Self> {
        let covered: BTreeSet<usize> = labels.keys().copied().collect();
        let ids: BTreeSet<usize> = a.client_ids().iter().copied().collect();
        if covered != ids {
            return Err(Error::Config("label map does not match the matrix clients".into()));
        }
        Ok(Self::from_labels(labels, a))
    }

    fn from_labels(labels: BTreeMap<usize, usize>, a: &AffinityMatrix) -> Self {
        let mut out = Self { labels, centroids: BTreeMap::new(), wcss: 0.0 };
        out.refresh(a);
        out
    }

    fn refresh(&mut self, a: &AffinityMatrix) {
        let groups = self.clusters();
        self.centroids = groups.iter().map(|(&k, m)| (k, a.mean_row(m))).collect();
        self.wcss = groups.iter().map(|(k, m)| a.sum_sq_to(m, &self.centroids[k])).sum();
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_of(&self, client_id: usize) -> Option<usize> {
        self.labels.get(&client_id).copied()
    }

    /// Cluster id to ascending member ids.
    pub fn clusters(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&c, &k) in &self.labels {
            out.entry(k).or_default().push(c);
        }
        out
    }

    pub fn members(&self, cluster_id: usize) -> Vec<usize> {
        self.labels.iter().filter(|(_, &k)| k == cluster_id).map(|(&c, _)| c).collect()
    }

    /// Renumbers clusters 0.. in order of their smallest member id.
    pub fn canonical(&self, a: &AffinityMatrix) -> Self {
        let groups: Vec<Vec<usize>> = {
            let mut g: Vec<Vec<usize>> = self.clusters().into_values().collect();
            g.sort_by_key(|m| m[0]);
            g
        };
        Self::from_groups(&groups, a).expect("regrouping a valid assignment")
    }
}

fn check_order(a: &AffinityMatrix, order: &[usize]) -> Result<()> {
    let ids: BTreeSet<usize> = a.client_ids().iter().copied().collect();
    let given: BTreeSet<usize> = order.iter().copied().collect();
    if order.len() != a.size() || ids != given {
        return Err(Error::Config("order is not a permutation of the matrix client ids".into()));
    }
    Ok(())
}

/// Sorted threshold clustering over the clients in `order`.
///
/// Clients need not cover the whole matrix, which lets a single cluster be
/// re-split; every call sees the full row of each client.
fn threshold_groups(a: &AffinityMatrix, order: &[usize], delta: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut centroids: Vec<Vec<f64>> = Vec::new();
    for &c in order {
        let row = a.row_of(c);
        let nearest = centroids
            .iter()
            .enumerate()
            .map(|(k, mu)| (row_distance(row, mu), k))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        match nearest {
            Some((d, k)) if d <= delta => {
                let size = groups[k].len() as f64 + 1.0;
                for (m, x) in centroids[k].iter_mut().zip(row) {
                    *m += (x - *m) / size;
                }
                groups[k].push(c);
            }
            _ => {
                groups.push(vec![c]);
                centroids.push(row.to_vec());
            }
        }
    }
    groups
}

/// Each client joins the nearest running-mean centroid within `delta` or
/// seeds a new cluster. Cluster ids follow seeding order.
pub fn threshold_cluster(a: &AffinityMatrix, order: &[usize], delta: f64) -> Result<ClusterAssignment> {
    check_order(a, order)?;
    if !(delta > 0.0) {
        return Err(Error::Config("delta must be positive".into()));
    }
    ClusterAssignment::from_groups(&threshold_groups(a, order, delta), a)
}

/// Sum over clusters of squared row distances to the cluster mean.
pub fn wcss(assign: &ClusterAssignment, a: &AffinityMatrix) -> f64 {
    assign.clusters().values().map(|m| a.sum_sq_to(m, &a.mean_row(m))).sum()
}

/// Mean squared row distance of `members` to their mean row.
pub fn cluster_variance(members: &[usize], a: &AffinityMatrix) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    a.sum_sq_to(members, &a.mean_row(members)) / members.len() as f64
}

/// Splits every cluster whose variance exceeds `delta^2` by re-running
/// threshold clustering on its members, then greedily merges the pair with the
/// smallest merged variance while that variance stays within `delta^2`.
pub fn enforce_variance(assign: &ClusterAssignment, a: &AffinityMatrix, delta: f64) -> Result<ClusterAssignment> {
    if !(delta > 0.0) {
        return Err(Error::Config("delta must be positive".into()));
    }
    let limit = delta * delta;
    let rank: BTreeMap<usize, usize> = rank_clients(a).into_iter().enumerate().map(|(r, c)| (c, r)).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut changed = false;
    for members in assign.clusters().into_values() {
        if cluster_variance(&members, a) > limit {
            let mut order = members.clone();
            order.sort_by_key(|c| rank[c]);
            let parts = threshold_groups(a, &order, delta);
            changed |= parts.len() > 1;
            groups.extend(parts.into_iter().map(|mut p| {
                p.sort_unstable();
                p
            }));
        } else {
            groups.push(members);
        }
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let merged: Vec<usize> = groups[i].iter().chain(&groups[j]).copied().collect();
                let v = cluster_variance(&merged, a);
                if v <= limit && best.map_or(true, |(bv, _, _)| v < bv) {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let tail = groups.remove(j);
        groups[i].extend(tail);
        groups[i].sort_unstable();
        changed = true;
    }
    if !changed {
        return Ok(assign.clone());
    }
    groups.sort_by_key(|g| g[0]);
    ClusterAssignment::from_groups(&groups, a)
}

/// Full clustering pass: rank, threshold-cluster, enforce the variance constraint.
pub fn cluster_clients(a: &AffinityMatrix, delta: f64) -> Result<ClusterAssignment> {
    let order = rank_clients(a);
    let raw = threshold_cluster(a, &order, delta)?;
    Ok(enforce_variance(&raw, a, delta)?.canonical(a))
}

/// True iff the label distribution moved by strictly more than `phi` in JSD.
pub fn detect_drift(old: &Histogram, new: &Histogram, phi: f64) -> Result<bool> {
    Ok(jsd(old, new)? > phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reassignment {
    pub assignment: ClusterAssignment,
    pub destination: usize,
    /// True when the client was placed in a fresh singleton cluster.
    pub created: bool,
}

/// Moves one client to the nearest centroid within `delta` of its row, with
/// centroids recomputed without it; otherwise opens a new cluster. The caller
/// swaps the client's model for the destination cluster model.
pub fn reassign_client(
    client_id: usize,
    assign: &ClusterAssignment,
    a: &AffinityMatrix,
    delta: f64,
) -> Result<Reassignment> {
    let idx = a.index_of(client_id).ok_or_else(|| Error::Config(format!("client {client_id} absent from affinity matrix")))?;
    if !assign.labels.contains_key(&client_id) {
        return Err(Error::Config(format!("client {client_id} absent from assignment")));
    }
    let mut labels = assign.labels.clone();
    labels.remove(&client_id);
    let mut without: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&c, &k) in &labels {
        without.entry(k).or_default().push(c);
    }
    let row = a.row(idx);
    let nearest = without
        .iter()
        .map(|(&k, m)| (row_distance(row, &a.mean_row(m)), k))
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let original = assign.labels[&client_id];
    let (destination, created) = match nearest {
        Some((d, k)) if d <= delta => (k, false),
        // Already alone and nothing is close enough: stay put.
        _ if !without.contains_key(&original) => (original, false),
        _ => (assign.labels.values().max().map_or(0, |m| m + 1), true),
    };
    labels.insert(client_id, destination);
    Ok(Reassignment { assignment: ClusterAssignment::from_labels(labels, a), destination, created })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;
    use crate::model::{Model, ModelSpec};
    use crate::numerics::{SeededRng, Vec64};

    fn client(id: usize, labels: Vec<u32>, params: Vec<f64>) -> ClientState {
        let spec = ModelSpec::new(1, 2, 0).unwrap();
        let n = labels.len();
        let d = LabeledDataset::new(1, vec![0.0; n], labels).unwrap();
        let m = Model::from_params(spec, Vec64::new(params).unwrap()).unwrap();
        ClientState::new(id, d.clone(), d, m).unwrap()
    }

    /// Pairwise RMS distances between points, which is a valid symmetric matrix.
    fn matrix_from_rows(rows: &[Vec<f64>]) -> AffinityMatrix {
        let n = rows.len();
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = row_distance(&rows[i], &rows[j]);
            }
        }
        AffinityMatrix::from_scores((0..n).collect(), s).unwrap()
    }

    fn random_matrix(rng: &mut SeededRng, n: usize) -> AffinityMatrix {
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.uniform();
                s[i * n + j] = v;
                s[j * n + i] = v;
            }
        }
        AffinityMatrix::from_scores((0..n).collect(), s).unwrap()
    }

    #[test]
    fn affinity_examples() {
        let a = client(0, vec![0, 0, 1], vec![1.0, 2.0, 0.5, -0.5]);
        assert_eq!(affinity(&a, &a, 0.5).unwrap(), 0.0);

        let p = client(0, vec![0, 0], vec![1.0, 2.0, 3.0, 4.0]);
        let q = client(1, vec![1, 1], vec![-1.0, -2.0, -3.0, -4.0]);
        let jsd_pq = jsd(&p.histogram, &q.histogram).unwrap();
        let expect = 0.5 * jsd_pq + 0.5 * 1.0;
        assert!((affinity(&p, &q, 0.5).unwrap() - expect).abs() < 1e-12);
        assert!((affinity(&p, &q, 0.5).unwrap() - 1.0).abs() < 1e-8);

        assert!((affinity(&p, &q, 1.0).unwrap() - jsd_pq).abs() < 1e-15);
        assert!((affinity(&p, &q, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let zero = client(2, vec![0], vec![0.0; 4]);
        assert!(affinity(&p, &zero, 0.5).is_err());
    }

    #[test]
    fn matrix_matches_pairwise_oracle() {
        let mut rng = SeededRng::new(3);
        let clients: Vec<ClientState> = (0..5)
            .map(|i| {
                let labels = (0..6).map(|_| rng.below(2) as u32).collect();
                client(i * 3, labels, (0..4).map(|_| rng.normal()).collect())
            })
            .collect();
        let refs: Vec<&ClientState> = clients.iter().collect();
        let m = build_affinity_matrix(&refs, 0.3).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 0.0 } else { affinity(&clients[i], &clients[j], 0.3).unwrap() };
                assert!((m.get(i, j) - expect).abs() < 1e-15);
                assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
            }
        }
        assert_eq!(m.client_ids(), &[0, 3, 6, 9, 12]);
        let one = build_affinity_matrix(&refs[..1], 0.3).unwrap();
        assert_eq!(one.size(), 1);
    }

    #[test]
    fn rank_examples() {
        let same = AffinityMatrix::from_scores(vec![4, 2, 7], vec![0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(rank_clients(&same), vec![2, 4, 7]);

        let s = vec![0.0, 0.1, 0.9, 0.1, 0.0, 0.4, 0.9, 0.4, 0.0];
        let m = AffinityMatrix::from_scores(vec![0, 1, 2], s.clone()).unwrap();
        let norms: Vec<f64> = (0..3).map(|i| (0..3).map(|j| s[i * 3 + j] * s[i * 3 + j]).sum::<f64>().sqrt()).collect();
        let mut oracle: Vec<usize> = vec![0, 1, 2];
        oracle.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());
        assert_eq!(rank_clients(&m), oracle);
        assert_eq!(rank_clients(&m), vec![2, 0, 1]);

        let relabeled = AffinityMatrix::from_scores(vec![10, 11, 12], s).unwrap();
        assert_eq!(rank_clients(&relabeled), vec![12, 10, 11]);
    }

    #[test]
    fn threshold_extremes() {
        let m = random_matrix(&mut SeededRng::new(5), 8);
        let order = rank_clients(&m);
        assert_eq!(threshold_cluster(&m, &order, 1e9).unwrap().num_clusters(), 1);
        assert_eq!(threshold_cluster(&m, &order, 1e-9).unwrap().num_clusters(), 8);
        assert!(threshold_cluster(&m, &order[1..], 0.5).is_err());
    }

    #[test]
    fn threshold_recovers_two_groups() {
        let delta = 0.2;
        // Rows of a distance matrix between two point groups; the groups'
        // rows end up more than 10 delta apart and rows within a group
        // well under 0.1 delta apart.
        let points: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![if i < 3 { 0.0 } else { 10.0 * delta }, 0.01 * delta * (i % 3) as f64])
            .collect();
        let m = matrix_from_rows(&points);
        let (a, b) = (m.row(0), m.row(4));
        assert!(row_distance(a, b) > 5.0 * delta);
        assert!(row_distance(m.row(0), m.row(2)) < 0.1 * delta);
        let out = cluster_clients(&m, delta).unwrap();
        assert_eq!(out.clusters().into_values().collect::<Vec<_>>(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn wcss_examples() {
        let m = random_matrix(&mut SeededRng::new(6), 5);
        let singles = ClusterAssignment::from_groups(&(0..5).map(|i| vec![i]).collect::<Vec<_>>(), &m).unwrap();
        assert_eq!(wcss(&singles, &m), 0.0);
        let flat = AffinityMatrix::from_scores(vec![0, 1], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let one = ClusterAssignment::from_groups(&[vec![0, 1]], &flat).unwrap();
        assert_eq!(wcss(&one, &flat), 0.0);
    }

    #[test]
    fn wcss_bound_over_random_populations() {
        for seed in 0..100u64 {
            let mut rng = SeededRng::new(seed);
            let n = 2 + rng.below(49);
            let m = random_matrix(&mut rng, n);
            let delta = rng.uniform_range(0.05, 0.6);
            let out = threshold_cluster(&m, &rank_clients(&m), delta).unwrap();
            let bound = delta * delta * (n - out.num_clusters()) as f64;
            assert!(wcss(&out, &m) <= bound, "seed {seed}");
            assert!((out.wcss - wcss(&out, &m)).abs() < 1e-12);
        }
    }

    #[test]
    fn enforce_variance_examples() {
        // Two tight pairs far apart, forced into one cluster.
        let rows = vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![1.0, 1.0], vec![1.01, 1.0]];
        let m = matrix_from_rows(&rows);
        let lumped = ClusterAssignment::from_groups(&[vec![0, 1, 2, 3]], &m).unwrap();
        let delta = 0.1;
        assert!(cluster_variance(&[0, 1, 2, 3], &m) > delta * delta);
        let fixed = enforce_variance(&lumped, &m, delta).unwrap();
        assert_eq!(fixed.clusters().into_values().collect::<Vec<_>>(), vec![vec![0, 1], vec![2, 3]]);
        for members in fixed.clusters().values() {
            assert!(cluster_variance(members, &m) <= delta * delta);
        }

        // Adjacent singletons are merged.
        let split = ClusterAssignment::from_groups(&[vec![0], vec![1], vec![2, 3]], &m).unwrap();
        let merged = enforce_variance(&split, &m, delta).unwrap();
        assert_eq!(merged.num_clusters(), 2);

        // A valid assignment with nothing to merge comes back unchanged.
        let settled = enforce_variance(&merged, &m, delta).unwrap();
        assert_eq!(settled, merged);
    }

    #[test]
    fn drift_detector_examples() {
        let h = Histogram::new(vec![3, 1, 0]).unwrap();
        assert!(!detect_drift(&h, &h, 0.01).unwrap());
        let p = Histogram::new(vec![5, 0]).unwrap();
        let q = Histogram::new(vec![0, 5]).unwrap();
        assert!(detect_drift(&p, &q, 0.5).unwrap());
        let r = Histogram::new(vec![1, 3]).unwrap();
        let exact = jsd(&p, &r).unwrap();
        assert!(!detect_drift(&p, &r, exact).unwrap());
    }

    #[test]
    fn reassign_examples() {
        let rows = vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![1.0, 1.0], vec![1.01, 1.0]];
        let m = matrix_from_rows(&rows);
        let assign = cluster_clients(&m, 0.1).unwrap();
        let r = reassign_client(1, &assign, &m, 0.1).unwrap();
        assert_eq!(r.assignment.labels, assign.labels);
        assert!(!r.created);

        let r = reassign_client(1, &assign, &m, 1e-6).unwrap();
        assert!(r.created);
        assert_eq!(r.assignment.num_clusters(), 3);
        assert_eq!(r.assignment.members(r.destination), vec![1]);
    }

    #[test]
    fn reassign_moves_drifted_client() {
        let rows = vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![1.0, 1.0], vec![1.01, 1.0]];
        let before = matrix_from_rows(&rows);
        let assign = cluster_clients(&before, 0.1).unwrap();
        let mut moved = rows.clone();
        moved[1] = vec![1.005, 1.0];
        let after = matrix_from_rows(&moved);
        let r = reassign_client(1, &assign, &after, 0.1).unwrap();
        assert_eq!(r.destination, assign.cluster_of(2).unwrap());
        assert_eq!(r.assignment.members(r.destination), vec![1, 2, 3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn clustering_invariants(seed in any::<u64>(), n in 1usize..40, delta in 0.02f64..0.8) {
                let m = random_matrix(&mut SeededRng::new(seed), n);
                let raw = threshold_cluster(&m, &rank_clients(&m), delta).unwrap();
                prop_assert!(raw.wcss <= delta * delta * (n - raw.num_clusters()) as f64);
                let out = cluster_clients(&m, delta).unwrap();
                prop_assert!(out.num_clusters() >= 1 && out.num_clusters() <= n);
                prop_assert_eq!(out.labels.len(), n);
                for members in out.clusters().values() {
                    prop_assert!(cluster_variance(members, &m) <= delta * delta);
                }
                prop_assert_eq!(cluster_clients(&m, delta).unwrap(), out);
            }

            #[test]
            fn rank_is_equivariant(seed in any::<u64>(), n in 2usize..12, shift in 1usize..1000) {
                let m = random_matrix(&mut SeededRng::new(seed), n);
                let ids: Vec<usize> = (0..n).map(|i| i + shift).collect();
                let moved = AffinityMatrix::from_scores(ids, (0..n * n).map(|k| m.get(k / n, k % n)).collect()).unwrap();
                let base = rank_clients(&m);
                let expect: Vec<usize> = base.iter().map(|i| i + shift).collect();
                prop_assert_eq!(rank_clients(&moved), expect);
            }
        }
    }
}
