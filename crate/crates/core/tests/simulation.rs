use std::collections::BTreeSet;

use cflhkd_core::data::{DriftKind, TaskConfig};
use cflhkd_core::fedcore::local_train;
use cflhkd_core::model::Model;
use cflhkd_core::numerics::SeededRng;
use cflhkd_core::report::{similarity_heatmap, write_metrics_csv, METRICS_COLUMNS};
use cflhkd_core::sim::{
    self, build_clients, drift_metrics, read_final_models, run, sample_participants, streams, write_outputs, DriftSpec,
    Link, Method, ModelRole, SimConfig, Transfer,
};

fn small(method: Method, clients: usize, rounds: usize) -> SimConfig {
    let mut cfg = SimConfig { method, rounds, ..SimConfig::default() };
    cfg.data.partition.num_clients = clients;
    cfg.data.partition.samples_min = 30;
    cfg.data.partition.samples_max = 60;
    cfg.local_epochs = 2;
    cfg
}

fn metrics_bytes(a: &sim::RunArtifacts) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&a.metrics, &mut buf).unwrap();
    buf
}

#[test]
fn zero_rounds_returns_initial_state() {
    for method in Method::ALL {
        let a = run(&small(method, 12, 0)).unwrap();
        assert!(a.metrics.is_empty(), "{method}");
        assert_eq!(a.clients.len(), 12);
    }
}

#[test]
fn single_client_run_matches_direct_training() {
    let mut cfg = small(Method::Cflhkd, 1, 12);
    cfg.data.task = TaskConfig { num_clusters: 1, label_groups: 1, ..TaskConfig::default() };
    cfg.refine.refine_steps = 0;
    cfg.edge_every = Some(2);
    cfg.cloud_every = Some(4);
    cfg.fdc.recluster_every = 3;
    let a = run(&cfg).unwrap();

    let init = Model::init(cfg.model, &mut SeededRng::derive(cfg.seed, &[streams::INIT]));
    let mut c = build_clients(&cfg, &init).unwrap().remove(0);
    let mut rng = SeededRng::derive(cfg.seed, &[streams::WARMUP, 0]);
    local_train(&mut c, cfg.local_epochs, cfg.batch_size, &cfg.sgd, cfg.sgd.lr_at(1), None, &mut rng).unwrap();
    for t in 1..=cfg.rounds {
        let mut rng = SeededRng::derive(cfg.seed, &[streams::TRAIN, t as u64, 0]);
        local_train(&mut c, cfg.local_epochs, cfg.batch_size, &cfg.sgd, cfg.sgd.lr_at(t), None, &mut rng).unwrap();
    }
    assert_eq!(a.clients[0].model, c.model);
    assert_eq!(a.cluster_models.len(), 1);
    assert_eq!(a.cluster_models.values().next().unwrap(), &c.model);
    assert_eq!(a.global.as_ref().unwrap(), &c.model);
}

#[test]
fn identical_seeds_give_identical_metrics() {
    for method in [Method::Cflhkd, Method::Hierfavg, Method::Fedprox] {
        let cfg = small(method, 16, 12);
        assert_eq!(metrics_bytes(&run(&cfg).unwrap()), metrics_bytes(&run(&cfg).unwrap()), "{method}");
    }
    let a = run(&small(Method::Cflhkd, 16, 6)).unwrap();
    let b = run(&SimConfig { seed: 9, ..small(Method::Cflhkd, 16, 6) }).unwrap();
    assert_ne!(metrics_bytes(&a), metrics_bytes(&b));
}

#[test]
fn participant_sampling() {
    let mut rng = SeededRng::new(0);
    assert_eq!(sample_participants(7, 1.0, &mut rng), (0..7).collect::<Vec<_>>());
    let ids = sample_participants(100, 0.3, &mut rng);
    assert_eq!(ids.len(), 30);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    let subsets: BTreeSet<Vec<usize>> =
        (0..20).map(|s| sample_participants(100, 0.3, &mut SeededRng::new(s))).collect();
    assert_eq!(subsets.len(), 20);
}

#[test]
fn traffic_matches_closed_form() {
    let mut cfg = small(Method::Fedavg, 10, 5);
    cfg.participation_fraction = 1.0;
    let a = run(&cfg).unwrap();
    let size = a.comm.model_bytes;
    // clients x model size x rounds x aggregations per round
    assert_eq!(a.comm.directional_bytes(Transfer::Upload, Link::ClientEdge), 10 * size * 5);
    assert_eq!(a.comm.directional_bytes(Transfer::Download, Link::ClientEdge), 10 * size * 5);
    assert_eq!(a.comm.bytes(Link::EdgeCloud), 0);

    let mut cfg = small(Method::Hierfavg, 12, 12);
    cfg.participation_fraction = 1.0;
    cfg.initial_clusters = 3;
    cfg.edge_every = Some(2);
    cfg.cloud_every = Some(4);
    let a = run(&cfg).unwrap();
    let size = a.comm.model_bytes;
    assert_eq!(a.comm.directional_bytes(Transfer::Upload, Link::ClientEdge), 12 * size * 12 / 2);
    assert_eq!(a.comm.directional_bytes(Transfer::Upload, Link::EdgeCloud), 3 * size * 12 / 4);
    assert_eq!(a.comm.directional_bytes(Transfer::Download, Link::EdgeCloud), 3 * size * 12 / 4);
    let per_round: u64 = a.comm.rounds.iter().map(|r| r.link_units(Link::EdgeCloud)).sum();
    assert_eq!(per_round * size, a.comm.bytes(Link::EdgeCloud));
}

#[test]
fn clustered_baseline_without_cloud_sends_nothing_upward() {
    let a = run(&small(Method::StaticCfl, 20, 15)).unwrap();
    assert_eq!(a.comm.bytes(Link::EdgeCloud), 0);
    assert!(a.global.is_none());
    assert!(a.metrics.iter().all(|m| m.global_acc.is_none() && m.p_cloud.is_none()));
}

#[test]
fn overwrite_sync_leaves_every_cluster_at_the_global_model() {
    let mut cfg = small(Method::Hierfavg, 20, 20);
    cfg.edge_every = Some(5);
    cfg.cloud_every = Some(10);
    let a = run(&cfg).unwrap();
    let g = a.global.as_ref().unwrap();
    assert_eq!(a.cluster_models.len(), 4);
    assert!(a.cluster_models.values().all(|m| m == g));
}

#[test]
fn single_client_fedavg_tracks_standalone() {
    let mut fed = small(Method::Fedavg, 1, 8);
    fed.data.task = TaskConfig { num_clusters: 1, label_groups: 1, ..TaskConfig::default() };
    let solo = SimConfig { method: Method::Standalone, ..fed.clone() };
    let a = run(&fed).unwrap();
    let b = run(&solo).unwrap();
    assert_eq!(a.clients[0].model, b.clients[0].model);
    let acc = |r: &sim::RunArtifacts| r.metrics.iter().map(|m| m.mean_cluster_acc).collect::<Vec<_>>();
    assert_eq!(acc(&a), acc(&b));
}

#[test]
fn every_method_reports_its_metrics() {
    for method in Method::ALL {
        let a = run(&small(method, 16, 10)).unwrap();
        assert_eq!(a.metrics.len(), 10);
        let last = a.final_metrics().unwrap();
        let acc = last.mean_cluster_acc.unwrap();
        assert!((0.0..=1.0).contains(&acc), "{method}");
        assert_eq!(last.global_acc.is_some(), matches!(method, Method::Cflhkd | Method::Hierfavg | Method::Fedavg | Method::Fedprox));
        assert_eq!(last.n_clusters.is_some(), method != Method::Standalone);
        let comm: Vec<u64> = a.metrics.iter().map(|m| m.comm_client_edge).collect();
        assert!(comm.windows(2).all(|w| w[0] <= w[1]), "{method}: traffic is cumulative");
    }
}

#[test]
fn frozen_training_after_drift_never_recovers() {
    let mut cfg = small(Method::Fedavg, 20, 14);
    cfg.drift.push(DriftSpec {
        round: 8,
        kind: DriftKind::LabelSubsetSwitch { from: vec![0, 1, 2, 3, 4], to: vec![5, 6, 7, 8, 9] },
        clients: Some((0..20).collect()),
        fraction: None,
    });
    cfg.overrides.freeze_training_from = Some(8);
    let (a, m) = sim::drift_scenario(&cfg).unwrap();
    assert!(m.drop_pp > 0.0);
    assert_eq!(m.recovery_rounds, None);
    let series = a.accuracy_series();
    assert!(series[7..].windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn identity_drift_with_frozen_models_changes_nothing() {
    let mut cfg = small(Method::Cflhkd, 16, 6);
    cfg.drift.push(DriftSpec {
        round: 2,
        kind: DriftKind::LabelPermutation { mapping: (0..10).collect() },
        clients: None,
        fraction: Some(0.5),
    });
    cfg.overrides.freeze_training_from = Some(2);
    let a = run(&cfg).unwrap();
    let m = drift_metrics(&a.accuracy_series(), 2).unwrap();
    assert_eq!(m.drop_pp, 0.0);
    assert_eq!(m.recovery_rounds, Some(0));
}

#[test]
fn client_models_show_group_block_structure() {
    let cfg = small(Method::Standalone, 24, 10);
    let a = run(&cfg).unwrap();
    let refs: Vec<_> = a.clients.iter().collect();
    let heat = similarity_heatmap(&refs).unwrap();
    let (mut intra, mut inter, mut ni, mut no) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..refs.len() {
        for j in i + 1..refs.len() {
            if refs[i].ground_truth == refs[j].ground_truth {
                intra += heat[i][j];
                ni += 1.0;
            } else {
                inter += heat[i][j];
                no += 1.0;
            }
        }
    }
    assert!(intra / ni - inter / no > 0.05, "intra {} inter {}", intra / ni, inter / no);
}

#[test]
fn outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(&small(Method::Cflhkd, 16, 10)).unwrap();
    write_outputs(&a, dir.path()).unwrap();

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
    assert_eq!(lines.count(), 10);

    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["event"].is_string());
    }
    assert!(events.lines().next().unwrap().contains("\"clustering\""));

    let records = read_final_models(std::fs::File::open(dir.path().join("final_models.bin")).unwrap()).unwrap();
    assert_eq!(records.iter().filter(|r| r.role == ModelRole::Global).count(), 1);
    assert_eq!(records.iter().filter(|r| r.role == ModelRole::Client).count(), 16);
    assert_eq!(records.iter().filter(|r| r.role == ModelRole::Cluster).count(), a.cluster_models.len());

    let config = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(SimConfig::from_toml_str(&config).unwrap(), a.config);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "cflhkd");
    assert_eq!(std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap().lines().count(), 17);
}
