//! Per-round evaluation: accuracies, the edge/cloud/clustering objectives,
//! divergence diagnostics, client similarity heatmaps and CSV output.

use std::io::Write;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fedcore::ClientState;
use crate::model::{self, Model};
use crate::numerics::{cosine_similarity, squared_l2_distance};

/// Number of rows whose argmax prediction equals the label.
pub fn correct_count(model: &Model, data: &LabeledDataset) -> Result<usize> {
    let mut correct = 0;
    for i in 0..data.len() {
        if model::predict(model, data.row(i))? == data.label(i) as usize {
            correct += 1;
        }
    }
    Ok(correct)
}

pub fn eval_accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    Ok(correct_count(model, data)? as f64 / data.len() as f64)
}

/// A cluster model together with its member clients.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub model: &'a Model,
    pub members: &'a [&'a ClientState],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Objectives {
    pub p_edge: f64,
    /// Absent when the method keeps no global model.
    pub p_cloud: Option<f64>,
    pub h: f64,
}

fn mean_member_loss(view: &ClusterView<'_>) -> Result<f64> {
    if view.members.is_empty() {
        return Err(Error::Empty("cluster members"));
    }
    let mut total = 0.0;
    for c in view.members {
        total += model::loss(view.model, &c.train)?;
    }
    Ok(total / view.members.len() as f64)
}

/// `P_edge`: per cluster, mean over members of the cluster model's loss on the
/// member's training data, summed over clusters.
/// `P_cloud`: mean over all clients of the global model's loss.
/// `H`: per cluster, mean over members of `||w_i - w_{e,k}||^2`, summed over clusters.
pub fn objectives(clusters: &[ClusterView<'_>], clients: &[&ClientState], global: Option<&Model>) -> Result<Objectives> {
    let mut p_edge = 0.0;
    let mut h = 0.0;
    for view in clusters {
        p_edge += mean_member_loss(view)?;
        let mut spread = 0.0;
        for c in view.members {
            spread += squared_l2_distance(c.model.params(), view.model.params())?;
        }
        h += spread / view.members.len() as f64;
    }
    let p_cloud = match global {
        Some(g) => {
            if clients.is_empty() {
                return Err(Error::Empty("clients"));
            }
            let mut total = 0.0;
            for c in clients {
                total += model::loss(g, &c.train)?;
            }
            Some(total / clients.len() as f64)
        }
        None => None,
    };
    Ok(Objectives { p_edge, p_cloud, h })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceDiagnostics {
    /// `||w_{e,j} - w_{e,k}||^2` for every pair of clusters.
    pub pairwise: Vec<Vec<f64>>,
    /// `sum_k p_k (P_k - E[P])^2` with `p_k = |D_k| / |D|`.
    pub var_p: f64,
}

pub fn divergence_diagnostics(clusters: &[ClusterView<'_>]) -> Result<DivergenceDiagnostics> {
    if clusters.is_empty() {
        return Err(Error::Empty("clusters"));
    }
    let k = clusters.len();
    let mut pairwise = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = squared_l2_distance(clusters[i].model.params(), clusters[j].model.params())?;
            pairwise[i][j] = d;
            pairwise[j][i] = d;
        }
    }
    let sizes: Vec<f64> =
        clusters.iter().map(|v| v.members.iter().map(|c| c.data_size()).sum::<usize>() as f64).collect();
    let total: f64 = sizes.iter().sum();
    if total == 0.0 {
        return Err(Error::Empty("cluster data"));
    }
    let losses = clusters.iter().map(mean_member_loss).collect::<Result<Vec<f64>>>()?;
    let mean: f64 = sizes.iter().zip(&losses).map(|(s, l)| s / total * l).sum();
    let var_p = sizes.iter().zip(&losses).map(|(s, l)| s / total * (l - mean) * (l - mean)).sum();
    Ok(DivergenceDiagnostics { pairwise, var_p })
}

/// Cosine similarity between every pair of client models, unit diagonal.
pub fn similarity_heatmap(clients: &[&ClientState]) -> Result<Vec<Vec<f64>>> {
    let n = clients.len();
    let mut out = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_similarity(clients[i].model.params(), clients[j].model.params())?;
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    Ok(out)
}

pub fn write_heatmap_csv(ids: &[usize], matrix: &[Vec<f64>], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["client".to_string()];
    header.extend(ids.iter().map(|i| i.to_string()));
    wr.write_record(&header).map_err(csv_err)?;
    for (id, row) in ids.iter().zip(matrix) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Fraction of clients outside the best one-to-one matching between predicted
/// clusters and ground-truth groups.
pub fn misclustering_rate(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension { expected: truth.len(), found: predicted.len() });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("cluster labels"));
    }
    let index = |xs: &[usize]| {
        let mut u: Vec<usize> = xs.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    };
    let (p_ids, t_ids) = (index(predicted), index(truth));
    let size = p_ids.len().max(t_ids.len());
    let mut confusion = Matrix::new(size, size, 0i64);
    for (p, t) in predicted.iter().zip(truth) {
        let r = p_ids.binary_search(p).expect("label indexed");
        let c = t_ids.binary_search(t).expect("label indexed");
        confusion[(r, c)] += 1;
    }
    let (matched, _) = kuhn_munkres(&confusion);
    Ok(1.0 - matched as f64 / predicted.len() as f64)
}

/// One row of `metrics.csv`. Quantities a method does not produce are `None`
/// and written as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub method: String,
    pub global_acc: Option<f64>,
    pub mean_cluster_acc: Option<f64>,
    pub cluster_accs: Vec<f64>,
    pub p_edge: Option<f64>,
    pub p_cloud: Option<f64>,
    pub h: Option<f64>,
    pub wcss: Option<f64>,
    pub n_clusters: Option<usize>,
    /// Cumulative bytes on the client-edge link.
    pub comm_client_edge: u64,
    /// Cumulative bytes on the edge-cloud link.
    pub comm_edge_cloud: u64,
    pub var_p: Option<f64>,
    pub misclustering: Option<f64>,
    #[serde(skip)]
    pub divergence: Vec<Vec<f64>>,
}

pub const METRICS_COLUMNS: [&str; 15] = [
    "round",
    "method",
    "global_acc",
    "mean_cluster_acc",
    "cluster_accs",
    "P_edge",
    "P_cloud",
    "H",
    "wcss",
    "n_clusters",
    "comm_client_edge",
    "comm_edge_cloud",
    "var_p",
    "misclustering",
    "max_divergence",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format { what: "csv", reason: e.to_string() }
}

impl RoundMetrics {
    fn record(&self) -> Vec<String> {
        let accs: Vec<String> = self.cluster_accs.iter().map(|a| a.to_string()).collect();
        let max_div = self.divergence.iter().flatten().cloned().reduce(f64::max);
        vec![
            self.round.to_string(),
            self.method.clone(),
            opt(self.global_acc),
            opt(self.mean_cluster_acc),
            accs.join(";"),
            opt(self.p_edge),
            opt(self.p_cloud),
            opt(self.h),
            opt(self.wcss),
            opt(self.n_clusters),
            self.comm_client_edge.to_string(),
            self.comm_edge_cloud.to_string(),
            opt(self.var_p),
            opt(self.misclustering),
            opt(max_div),
        ]
    }
}

/// Writes the header and one row per round. Floats use Rust's shortest
/// round-trip formatting, so values parse back bit-exactly.
pub fn write_metrics_csv(rows: &[RoundMetrics], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        wr.write_record(r.record()).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::numerics::{SeededRng, Vec64};

    fn spec() -> ModelSpec {
        ModelSpec::new(2, 2, 0).unwrap()
    }

    fn model(p: [f64; 6]) -> Model {
        Model::from_params(spec(), Vec64::new(p.to_vec()).unwrap()).unwrap()
    }

    fn client(id: usize, rows: &[([f64; 2], u32)], m: Model) -> ClientState {
        let f = rows.iter().flat_map(|(x, _)| x.to_vec()).collect();
        let l = rows.iter().map(|(_, y)| *y).collect();
        let d = LabeledDataset::new(2, f, l).unwrap();
        ClientState::new(id, d.clone(), d, m).unwrap()
    }

    /// Softmax cross-entropy of a 2-class linear model, written out by hand.
    fn ce(p: &[f64; 6], x: [f64; 2], y: u32) -> f64 {
        let z0 = p[0] * x[0] + p[1] * x[1] + p[4];
        let z1 = p[2] * x[0] + p[3] * x[1] + p[5];
        let zy = if y == 0 { z0 } else { z1 };
        (z0.exp() + z1.exp()).ln() - zy
    }

    #[test]
    fn accuracy_examples() {
        let always_one = model([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let c = client(0, &[([1.0, 2.0], 1), ([3.0, -1.0], 1)], always_one.clone());
        assert_eq!(eval_accuracy(&always_one, &c.train).unwrap(), 1.0);
        assert!(eval_accuracy(&always_one, &LabeledDataset::empty(2)).is_err());

        let mut rng = SeededRng::new(1);
        let spec = ModelSpec::new(10, 10, 0).unwrap();
        let m = Model::init(spec, &mut rng);
        let f = (0..10_000).map(|_| rng.normal()).collect();
        let l = (0..1000).map(|_| rng.below(10) as u32).collect();
        let d = LabeledDataset::new(10, f, l).unwrap();
        assert!((eval_accuracy(&m, &d).unwrap() - 0.1).abs() < 0.05);

        let self_labels = (0..1000).map(|i| model::predict(&m, d.row(i)).unwrap() as u32).collect();
        let relabeled = LabeledDataset::new(10, d.features().to_vec(), self_labels).unwrap();
        assert_eq!(eval_accuracy(&m, &relabeled).unwrap(), 1.0);
    }

    #[test]
    fn objectives_match_scalar_oracle() {
        let pe = [0.1, -0.2, 0.3, 0.4, 0.0, 0.1];
        let pg = [0.5, 0.1, -0.1, 0.2, 0.2, -0.3];
        let p1 = [0.2, -0.1, 0.3, 0.5, 0.0, 0.0];
        let p2 = [0.0, -0.3, 0.1, 0.4, 0.1, 0.2];
        let d1 = [([1.0, 0.5], 0u32), ([-1.0, 2.0], 1)];
        let d2 = [([0.3, -0.7], 1u32)];
        let a = client(0, &d1, model(p1));
        let b = client(1, &d2, model(p2));
        let we = model(pe);
        let wg = model(pg);
        let members = [&a, &b];
        let view = ClusterView { model: &we, members: &members };
        let o = objectives(&[view], &members, Some(&wg)).unwrap();

        let loss = |p: &[f64; 6], d: &[([f64; 2], u32)]| d.iter().map(|(x, y)| ce(p, *x, *y)).sum::<f64>() / d.len() as f64;
        let sq = |u: &[f64; 6], v: &[f64; 6]| u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let p_edge = (loss(&pe, &d1) + loss(&pe, &d2)) / 2.0;
        let p_cloud = (loss(&pg, &d1) + loss(&pg, &d2)) / 2.0;
        let h = (sq(&p1, &pe) + sq(&p2, &pe)) / 2.0;
        assert!((o.p_edge - p_edge).abs() < 1e-10);
        assert!((o.p_cloud.unwrap() - p_cloud).abs() < 1e-10);
        assert!((o.h - h).abs() < 1e-10);

        let same = client(0, &d1, we.clone());
        let solo = [&same];
        let o = objectives(&[ClusterView { model: &we, members: &solo }], &solo, Some(&same.model)).unwrap();
        assert_eq!(o.h, 0.0);
        assert!((o.p_cloud.unwrap() - model::loss(&same.model, &same.train).unwrap()).abs() < 1e-15);

        let none: [&ClientState; 0] = [];
        assert!(objectives(&[ClusterView { model: &we, members: &none }], &solo, None).is_err());
    }

    #[test]
    fn divergence_examples() {
        let m = model([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let c = client(0, &[([1.0, 0.0], 0)], m.clone());
        let members = [&c];
        let v = ClusterView { model: &m, members: &members };
        let d = divergence_diagnostics(&[v, v]).unwrap();
        assert_eq!(d.pairwise, vec![vec![0.0; 2]; 2]);
        assert_eq!(divergence_diagnostics(&[v]).unwrap().var_p, 0.0);

        let ms = [
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let data: [&[([f64; 2], u32)]; 3] =
            [&[([1.0, 1.0], 0)], &[([1.0, 1.0], 1), ([0.0, 1.0], 0)], &[([2.0, -1.0], 1), ([0.0, 0.0], 1), ([1.0, 0.0], 0)]];
        let clients: Vec<ClientState> = (0..3).map(|k| client(k, data[k], model(ms[k]))).collect();
        let models: Vec<Model> = ms.iter().map(|p| model(*p)).collect();
        let member_lists: Vec<[&ClientState; 1]> = clients.iter().map(|c| [c]).collect();
        let views: Vec<ClusterView> = (0..3).map(|k| ClusterView { model: &models[k], members: &member_lists[k] }).collect();
        let d = divergence_diagnostics(&views).unwrap();
        assert_eq!(d.pairwise[0][1], 1.0);
        assert_eq!(d.pairwise[0][2], 5.0);
        assert_eq!(d.pairwise[1][2], 6.0);
        let loss = |p: &[f64; 6], d: &[([f64; 2], u32)]| d.iter().map(|(x, y)| ce(p, *x, *y)).sum::<f64>() / d.len() as f64;
        let pk: Vec<f64> = (0..3).map(|k| loss(&ms[k], data[k])).collect();
        let wk = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        let mean: f64 = (0..3).map(|k| wk[k] * pk[k]).sum();
        let var: f64 = (0..3).map(|k| wk[k] * (pk[k] - mean).powi(2)).sum();
        assert!((d.var_p - var).abs() < 1e-10);
    }

    #[test]
    fn heatmap_examples() {
        let m = model([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let cs: Vec<ClientState> = (0..3).map(|i| client(i, &[([1.0, 0.0], 0)], m.clone())).collect();
        let refs: Vec<&ClientState> = cs.iter().collect();
        let h = similarity_heatmap(&refs).unwrap();
        for row in &h {
            for v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        let mut other = cs.clone();
        other[1].model = model([-0.3, 0.2, 0.0, 1.0, 0.0, 0.2]);
        let refs: Vec<&ClientState> = other.iter().collect();
        let h = similarity_heatmap(&refs).unwrap();
        for i in 0..3 {
            assert_eq!(h[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(h[i][j].to_bits(), h[j][i].to_bits());
            }
        }
        let mut buf = Vec::new();
        write_heatmap_csv(&[0, 1, 2], &h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn misclustering_examples() {
        assert_eq!(misclustering_rate(&[5, 5, 7, 7], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(misclustering_rate(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(misclustering_rate(&[0, 1, 2, 3], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(misclustering_rate(&[1, 1, 0, 0, 0], &[0, 0, 1, 1, 1]).unwrap(), 0.0);
        assert!((misclustering_rate(&[0, 0, 1, 1, 1], &[0, 0, 0, 1, 1]).unwrap() - 0.2).abs() < 1e-15);
        assert!(misclustering_rate(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn metrics_csv_shape() {
        let row = RoundMetrics {
            round: 3,
            method: "fedavg".into(),
            global_acc: Some(0.1 + 0.2),
            mean_cluster_acc: Some(0.5),
            cluster_accs: vec![0.25, 0.75],
            p_edge: None,
            p_cloud: Some(1.5),
            h: None,
            wcss: None,
            n_clusters: Some(2),
            comm_client_edge: 100,
            comm_edge_cloud: 0,
            var_p: None,
            misclustering: None,
            divergence: vec![],
        };
        let mut buf = Vec::new();
        write_metrics_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), METRICS_COLUMNS.len());
        assert_eq!(lines[1], "3,fedavg,0.30000000000000004,0.5,0.25;0.75,,1.5,,,2,100,0,,,");
        let parsed: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, 0.1 + 0.2);
    }
}
