use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::data::{apply_drift, dirichlet_partition, generate_cluster_tasks, DriftEvent, PartitionConfig};
use crate::error::{Error, Result};
use crate::fdc::{
    build_affinity_from_parts, build_affinity_matrix, cluster_clients, detect_drift, reassign_client, AffinityMatrix,
    ClusterAssignment, ModelSignal,
};
use crate::fedcore::{
    cloud_aggregate_dynamic, cloud_aggregate_naive, compute_rho, edge_aggregate, local_train, refine_cluster,
    weighted_average, ClientState, ClusterState, Proximal,
};
use crate::model::{serialized_len, Model};
use crate::numerics::{jsd, Histogram, ParamVector, SeededRng};
use crate::report::{
    correct_count, divergence_diagnostics, misclustering_rate, objectives, ClusterView, RoundMetrics,
};

use super::comm::{CommLedger, Link, Transfer};
use super::config::{CloudWeights, Clustering, GlobalSync, Protocol, SimConfig};
use super::streams;

/// Entries of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Clustering { round: usize, n_clusters: usize, wcss: f64, members: BTreeMap<usize, Vec<usize>> },
    DriftApplied { round: usize, clients: Vec<usize> },
    DriftDetected { round: usize, client: usize, jsd: f64, from: usize, to: usize, new_cluster: bool },
    CloudAggregation { round: usize, clusters: Vec<usize>, weights: Vec<f64> },
    WeightFallback { round: usize, reason: String },
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: SimConfig,
    pub metrics: Vec<RoundMetrics>,
    pub events: Vec<Event>,
    pub global: Option<Model>,
    /// Final cluster models by cluster id.
    pub cluster_models: BTreeMap<usize, Model>,
    pub clients: Vec<ClientState>,
    pub comm: CommLedger,
}

impl RunArtifacts {
    /// Mean cluster accuracy per round, or global accuracy where no cluster
    /// accuracy exists.
    pub fn accuracy_series(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.mean_cluster_acc.or(m.global_acc).unwrap_or(f64::NAN)).collect()
    }

    pub fn final_metrics(&self) -> Option<&RoundMetrics> {
        self.metrics.last()
    }
}

/// `ceil(fraction * n)` distinct client ids in ascending order.
pub fn sample_participants(n: usize, fraction: f64, rng: &mut SeededRng) -> Vec<usize> {
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut ids = rng.sample_indices(n, k);
    ids.sort_unstable();
    ids
}

/// Synthetic clients: client `i` belongs to ground-truth group `i % G`, and
/// each group's clients split a pool drawn from that group's task.
pub fn build_clients(cfg: &SimConfig, init: &Model) -> Result<Vec<ClientState>> {
    let n = cfg.num_clients();
    let groups = cfg.data.task.num_clusters;
    let mut rng = SeededRng::derive(cfg.seed, &[streams::DATA, 0]);
    let tasks = generate_cluster_tasks(&cfg.data.task, &cfg.model, &mut rng)?;
    let mut slots: Vec<Option<ClientState>> = vec![None; n];
    for (g, task) in tasks.iter().enumerate() {
        let ids: Vec<usize> = (g..n).step_by(groups).collect();
        let rows = ids.len() as f64 * cfg.data.partition.samples_max as f64 * cfg.data.pool_factor;
        let initial = cfg.data.initial_labels.as_deref();
        let classes = task.labels.iter().filter(|l| initial.is_none_or(|keep| keep.contains(l))).count();
        if classes == 0 {
            return Err(Error::Config(format!("ground-truth group {g} has no classes left after initial_labels")));
        }
        let per_class = (rows / classes as f64).ceil() as usize;
        let pool = task.sample_pool(per_class, initial, &mut SeededRng::derive(cfg.seed, &[streams::DATA, 1, g as u64]));
        let part = PartitionConfig { num_clients: ids.len(), ..cfg.data.partition.clone() };
        let shards = dirichlet_partition(&pool, &part, &mut SeededRng::derive(cfg.seed, &[streams::DATA, 2, g as u64]))?;
        for (id, shard) in ids.into_iter().zip(shards) {
            let mut c = ClientState::new(id, shard.train, shard.validation, init.clone())?;
            c.ground_truth = Some(g);
            slots[id] = Some(c);
        }
    }
    Ok(slots.into_iter().map(|c| c.expect("every client placed")).collect())
}

struct Edge {
    state: ClusterState,
    /// Bumped whenever the edge model changes, so clients know when to pull.
    version: u64,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    proto: Protocol,
    edge_every: usize,
    cloud_every: usize,
    clients: Vec<ClientState>,
    synced: Vec<Option<(usize, u64)>>,
    fresh: BTreeSet<usize>,
    /// Each client's most recent local update.
    updates: Vec<Option<ParamVector>>,
    edges: BTreeMap<usize, Edge>,
    next_edge_id: usize,
    global: Option<Model>,
    /// Stand-in for the global model where the method has none.
    init: Model,
    wcss: Option<f64>,
    reference: Vec<Histogram>,
    drift: Vec<DriftEvent>,
    ledger: CommLedger,
    events: Vec<Event>,
    metrics: Vec<RoundMetrics>,
}

/// Runs the configured method for `cfg.rounds` rounds.
pub fn run(cfg: &SimConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let init = Model::init(cfg.model, &mut SeededRng::derive(cfg.seed, &[streams::INIT]));
    let clients = build_clients(cfg, &init)?;
    let (edge_every, cloud_every) = cfg.intervals();
    let proto = cfg.protocol();
    let mut engine = Engine {
        cfg,
        proto,
        edge_every,
        cloud_every,
        synced: vec![None; clients.len()],
        reference: clients.iter().map(|c| c.histogram.clone()).collect(),
        clients,
        fresh: BTreeSet::new(),
        updates: vec![None; cfg.num_clients()],
        edges: BTreeMap::new(),
        next_edge_id: 0,
        global: proto.has_cloud().then(|| init.clone()),
        init: init.clone(),
        wcss: None,
        drift: cfg.drift_events()?,
        ledger: CommLedger::new(serialized_len(cfg.model) as u64)?,
        events: Vec::new(),
        metrics: Vec::new(),
    };
    engine.initialise(&init)?;
    for t in 1..=cfg.rounds {
        engine.round(t)?;
    }
    Ok(engine.finish())
}

/// Runs a baseline; identical to [`run`] but refuses the proposed method.
pub fn run_baseline(cfg: &SimConfig) -> Result<RunArtifacts> {
    if cfg.method == super::config::Method::Cflhkd {
        return Err(Error::Config("run_baseline needs a baseline method".into()));
    }
    run(cfg)
}

impl Engine<'_> {
    fn initialise(&mut self, init: &Model) -> Result<()> {
        let n = self.clients.len();
        match self.proto.clustering {
            Clustering::None => {}
            Clustering::Single => {
                self.install_fresh(vec![(0..n).collect()], vec![init.clone()]);
            }
            Clustering::FixedRandom => {
                let mut perm: Vec<usize> = (0..n).collect();
                SeededRng::derive(self.cfg.seed, &[streams::SPLIT]).shuffle(&mut perm);
                let k = self.cfg.initial_clusters;
                let groups: Vec<Vec<usize>> = (0..k)
                    .map(|g| {
                        let mut m = perm[g * n / k..(g + 1) * n / k].to_vec();
                        m.sort_unstable();
                        m
                    })
                    .collect();
                let models = vec![init.clone(); k];
                self.install_fresh(groups, models);
            }
            Clustering::Dynamic | Clustering::StaticFdc => {
                for i in 0..n {
                    self.ledger.account(0, Transfer::Download, Link::ClientEdge);
                    let mut rng = SeededRng::derive(self.cfg.seed, &[streams::WARMUP, i as u64]);
                    self.train(i, self.cfg.sgd.lr_at(1), None, &mut rng)?;
                    self.ledger.account(0, Transfer::Upload, Link::ClientEdge);
                }
                let a = self.affinity()?;
                let assign = cluster_clients(&a, self.cfg.fdc.delta)?;
                let groups: Vec<Vec<usize>> = assign.clusters().into_values().collect();
                let models = groups
                    .iter()
                    .map(|g| edge_aggregate(&g.iter().map(|&i| &self.clients[i]).collect::<Vec<_>>()))
                    .collect::<Result<Vec<_>>>()?;
                self.install_fresh(groups, models);
                self.wcss = Some(assign.wcss);
                self.log_clustering(0);
            }
        }
        Ok(())
    }

    fn train(&mut self, i: usize, lr: f64, prox: Option<Proximal>, rng: &mut SeededRng) -> Result<()> {
        let before = self.clients[i].model.params().clone();
        let c = &mut self.clients[i];
        local_train(c, self.cfg.local_epochs, self.cfg.batch_size, &self.cfg.sgd, lr, prox, rng)?;
        self.updates[i] = Some(c.model.params().sub(&before)?);
        Ok(())
    }

    /// Affinity over all clients with the configured model signal. Under
    /// `Update`, a client that has never trained falls back to its parameters.
    fn affinity(&self) -> Result<AffinityMatrix> {
        let refs: Vec<&ClientState> = self.clients.iter().collect();
        let signal: Vec<ParamVector> = match self.cfg.fdc.model_signal {
            ModelSignal::Params => return build_affinity_matrix(&refs, self.cfg.fdc.gamma),
            ModelSignal::Update => refs
                .iter()
                .zip(&self.updates)
                .map(|(c, u)| u.clone().unwrap_or_else(|| c.model.params().clone()))
                .collect(),
            ModelSignal::GlobalOffset => {
                let reference = self.global.as_ref().unwrap_or(&self.init).params();
                refs.iter().map(|c| c.model.params().sub(reference)).collect::<Result<_>>()?
            }
        };
        let hist: Vec<&Histogram> = refs.iter().map(|c| &c.histogram).collect();
        let params: Vec<&ParamVector> = signal.iter().collect();
        build_affinity_from_parts(refs.iter().map(|c| c.id).collect(), &hist, &params, self.cfg.fdc.gamma)
    }

    /// Replaces all edges with new ones holding `models`.
    fn install_fresh(&mut self, groups: Vec<Vec<usize>>, models: Vec<Model>) {
        self.edges.clear();
        for (members, model) in groups.into_iter().zip(models) {
            let id = self.next_edge_id;
            self.next_edge_id += 1;
            for &i in &members {
                self.clients[i].cluster_id = Some(id);
            }
            let size = members.iter().map(|&i| self.clients[i].data_size()).sum();
            let state = ClusterState::new(id, members.into_iter().collect(), model, size);
            self.edges.insert(id, Edge { state, version: 0 });
        }
    }

    fn log_clustering(&mut self, round: usize) {
        let members = self.edges.iter().map(|(&k, e)| (k, e.state.members.iter().copied().collect())).collect();
        self.events.push(Event::Clustering {
            round,
            n_clusters: self.edges.len(),
            wcss: self.wcss.unwrap_or(0.0),
            members,
        });
    }

    fn round(&mut self, t: usize) -> Result<()> {
        self.apply_drift(t)?;
        if self.proto.clustering == Clustering::Dynamic {
            self.detect_and_reassign(t)?;
        }
        let frozen = self.cfg.overrides.freeze_training_from.is_some_and(|r| t >= r);
        if !frozen {
            let mut rng = SeededRng::derive(self.cfg.seed, &[streams::SAMPLE, t as u64]);
            let participants = sample_participants(self.clients.len(), self.cfg.participation_fraction, &mut rng);
            self.local_phase(t, &participants)?;
            if self.proto.clustering != Clustering::None && t % self.edge_every == 0 {
                self.edge_phase(t)?;
            }
            if self.proto.has_cloud() && t % self.cloud_every == 0 {
                self.cloud_phase(t)?;
            }
            let every = self.cfg.fdc.recluster_every;
            if self.proto.clustering == Clustering::Dynamic && every > 0 && t % every == 0 {
                self.recluster(t)?;
            }
        }
        let m = self.measure(t)?;
        self.metrics.push(m);
        Ok(())
    }

    fn apply_drift(&mut self, t: usize) -> Result<()> {
        let due: Vec<DriftEvent> = self.drift.iter().filter(|d| d.round == t).cloned().collect();
        for event in due {
            for &i in &event.affected_clients {
                self.clients[i] = apply_drift(&self.clients[i], &event)?;
            }
            self.events.push(Event::DriftApplied { round: t, clients: event.affected_clients.iter().copied().collect() });
        }
        Ok(())
    }

    fn current_labels(&self) -> BTreeMap<usize, usize> {
        self.clients.iter().map(|c| (c.id, c.cluster_id.expect("clustered client"))).collect()
    }

    fn refresh_edge(&mut self, k: usize) {
        let size = self.edges[&k].state.members.iter().map(|&i| self.clients[i].data_size()).sum();
        self.edges.get_mut(&k).expect("edge").state.data_size = size;
    }

    fn detect_and_reassign(&mut self, t: usize) -> Result<()> {
        let mut flagged = Vec::new();
        for (i, c) in self.clients.iter().enumerate() {
            if detect_drift(&self.reference[i], &c.histogram, self.cfg.fdc.phi)? {
                flagged.push((i, jsd(&self.reference[i], &c.histogram)?));
            }
        }
        if flagged.is_empty() {
            return Ok(());
        }
        let a = self.affinity()?;
        let mut assign = ClusterAssignment::from_label_map(self.current_labels(), &a)?;
        for (i, divergence) in flagged {
            let from = self.clients[i].cluster_id.expect("clustered client");
            let r = reassign_client(i, &assign, &a, self.cfg.fdc.delta)?;
            let mut labels = r.assignment.labels.clone();
            let to = if r.created {
                let id = self.next_edge_id;
                self.next_edge_id += 1;
                labels.insert(i, id);
                let model = self.clients[i].model.clone();
                let state = ClusterState::new(id, BTreeSet::new(), model, 0);
                self.edges.insert(id, Edge { state, version: 0 });
                id
            } else {
                r.destination
            };
            if to != from {
                let old = self.edges.get_mut(&from).expect("edge");
                old.state.members.remove(&i);
                if old.state.members.is_empty() {
                    self.edges.remove(&from);
                } else {
                    self.refresh_edge(from);
                }
                self.edges.get_mut(&to).expect("edge").state.members.insert(i);
                self.refresh_edge(to);
                let dest = &self.edges[&to];
                self.clients[i].model = dest.state.model.clone();
                self.clients[i].cluster_id = Some(to);
                self.synced[i] = Some((to, dest.version));
                self.fresh.remove(&i);
                self.ledger.account(t, Transfer::Download, Link::ClientEdge);
            }
            self.reference[i] = self.clients[i].histogram.clone();
            assign = ClusterAssignment::from_label_map(labels, &a)?;
            self.events.push(Event::DriftDetected { round: t, client: i, jsd: divergence, from, to, new_cluster: r.created });
        }
        self.wcss = Some(assign.wcss);
        Ok(())
    }

    fn local_phase(&mut self, t: usize, participants: &[usize]) -> Result<()> {
        let lr = self.cfg.sgd.lr_at(t);
        for &i in participants {
            let mut rng = SeededRng::derive(self.cfg.seed, &[streams::TRAIN, t as u64, i as u64]);
            let anchor = match self.clients[i].cluster_id {
                Some(k) => {
                    let edge = &self.edges[&k];
                    if self.synced[i] != Some((k, edge.version)) {
                        self.clients[i].model = edge.state.model.clone();
                        self.synced[i] = Some((k, edge.version));
                        self.ledger.account(t, Transfer::Download, Link::ClientEdge);
                    }
                    self.proto.proximal.then(|| edge.state.model.clone())
                }
                None => None,
            };
            let prox = anchor.as_ref().map(|m| Proximal { anchor: m, mu: self.cfg.prox_mu });
            self.train(i, lr, prox, &mut rng)?;
            self.fresh.insert(i);
        }
        Ok(())
    }

    fn edge_phase(&mut self, t: usize) -> Result<()> {
        let fresh = std::mem::take(&mut self.fresh);
        for edge in self.edges.values_mut() {
            let members: Vec<&ClientState> =
                edge.state.members.iter().filter(|i| fresh.contains(i)).map(|&i| &self.clients[i]).collect();
            if members.is_empty() {
                continue;
            }
            edge.state.model = edge_aggregate(&members)?;
            edge.version += 1;
            self.ledger.account_many(t, Transfer::Upload, Link::ClientEdge, members.len() as u64);
        }
        Ok(())
    }

    fn member_accuracy(&self, model: &Model, members: &BTreeSet<usize>) -> Result<(usize, usize)> {
        let mut correct = 0;
        let mut total = 0;
        for &i in members {
            correct += correct_count(model, &self.clients[i].validation)?;
            total += self.clients[i].validation.len();
        }
        Ok((correct, total))
    }

    fn cloud_phase(&mut self, t: usize) -> Result<()> {
        if self.edges.is_empty() {
            return Ok(());
        }
        let ids: Vec<usize> = self.edges.keys().copied().collect();
        for &k in &ids {
            let alpha = if self.proto.unit_alpha {
                1.0
            } else {
                let e = &self.edges[&k];
                let (c, n) = self.member_accuracy(&e.state.model, &e.state.members)?;
                if n == 0 { 0.0 } else { c as f64 / n as f64 }
            };
            self.edges.get_mut(&k).expect("edge").state.val_accuracy = alpha;
            self.ledger.account(t, Transfer::Upload, Link::EdgeCloud);
        }
        let states: Vec<&ClusterState> = self.edges.values().map(|e| &e.state).collect();
        let prev = self.global.as_ref().expect("cloud tier has a global model");
        let (global, weights) = match self.proto.cloud_weights {
            CloudWeights::Naive => {
                let total: usize = states.iter().map(|s| s.data_size).sum();
                let w = states.iter().map(|s| s.data_size as f64 / total as f64).collect();
                (cloud_aggregate_naive(&states)?, w)
            }
            CloudWeights::Dynamic => match compute_rho(&states, prev, self.cfg.rho_lambda) {
                Ok(rho) => (cloud_aggregate_dynamic(&states, &rho)?, rho),
                Err(Error::DegenerateWeights) => {
                    self.events.push(Event::WeightFallback {
                        round: t,
                        reason: "every cluster had zero validation accuracy; used size weights".into(),
                    });
                    let total: usize = states.iter().map(|s| s.data_size).sum();
                    let w = states.iter().map(|s| s.data_size as f64 / total as f64).collect();
                    (cloud_aggregate_naive(&states)?, w)
                }
                Err(e) => return Err(e),
            },
        };
        self.events.push(Event::CloudAggregation { round: t, clusters: ids.clone(), weights });
        for &k in &ids {
            let new_model = match self.proto.global_sync {
                GlobalSync::Refine => {
                    let e = &self.edges[&k];
                    let data: Vec<_> = e.state.members.iter().map(|&i| &self.clients[i].train).collect();
                    let mut rng = SeededRng::derive(self.cfg.seed, &[streams::REFINE, t as u64, k as u64]);
                    refine_cluster(&e.state, &global, &self.cfg.refine, &data, &mut rng)?
                }
                GlobalSync::Overwrite => global.clone(),
                GlobalSync::None => unreachable!("cloud phase only runs with a cloud tier"),
            };
            let e = self.edges.get_mut(&k).expect("edge");
            e.state.model = new_model;
            e.version += 1;
            self.ledger.account(t, Transfer::Download, Link::EdgeCloud);
        }
        self.global = Some(global);
        Ok(())
    }

    /// Rebuilds clusters from scratch. A cluster whose member set survives
    /// keeps its id and model; any other cluster starts from the data-weighted
    /// mean of its members' previous cluster models.
    fn recluster(&mut self, t: usize) -> Result<()> {
        let a = self.affinity()?;
        let assign = cluster_clients(&a, self.cfg.fdc.delta)?;
        let mut old = std::mem::take(&mut self.edges);
        let by_members: BTreeMap<Vec<usize>, usize> =
            old.iter().map(|(&k, e)| (e.state.members.iter().copied().collect(), k)).collect();
        let mut kept = BTreeMap::new();
        let mut created = Vec::new();
        for members in assign.clusters().into_values() {
            match by_members.get(&members) {
                Some(&k) => {
                    kept.insert(k, ());
                }
                None => {
                    let total: usize = members.iter().map(|&i| self.clients[i].data_size()).sum();
                    let models: Vec<&Model> = members
                        .iter()
                        .map(|&i| &old[&self.clients[i].cluster_id.expect("clustered client")].state.model)
                        .collect();
                    let weights: Vec<f64> =
                        members.iter().map(|&i| self.clients[i].data_size() as f64 / total as f64).collect();
                    created.push((members.clone(), weighted_average(&models, &weights)?));
                }
            }
        }
        for k in kept.keys() {
            let e = old.remove(k).expect("kept edge");
            self.edges.insert(*k, e);
        }
        for (members, model) in created {
            let id = self.next_edge_id;
            self.next_edge_id += 1;
            for &i in &members {
                self.clients[i].cluster_id = Some(id);
            }
            let size = members.iter().map(|&i| self.clients[i].data_size()).sum();
            self.edges.insert(id, Edge { state: ClusterState::new(id, members.into_iter().collect(), model, size), version: 0 });
        }
        for (i, c) in self.clients.iter().enumerate() {
            self.reference[i] = c.histogram.clone();
        }
        self.wcss = Some(assign.wcss);
        self.log_clustering(t);
        Ok(())
    }

    fn measure(&self, t: usize) -> Result<RoundMetrics> {
        let all: Vec<&ClientState> = self.clients.iter().collect();
        let mut m = RoundMetrics {
            round: t,
            method: self.cfg.method.name().to_string(),
            global_acc: None,
            mean_cluster_acc: None,
            cluster_accs: Vec::new(),
            p_edge: None,
            p_cloud: None,
            h: None,
            wcss: self.wcss,
            n_clusters: None,
            comm_client_edge: self.ledger.bytes(Link::ClientEdge),
            comm_edge_cloud: self.ledger.bytes(Link::EdgeCloud),
            var_p: None,
            misclustering: None,
            divergence: Vec::new(),
        };
        if self.edges.is_empty() {
            let (mut correct, mut total) = (0, 0);
            for c in &self.clients {
                correct += correct_count(&c.model, &c.validation)?;
                total += c.validation.len();
            }
            m.mean_cluster_acc = Some(correct as f64 / total as f64);
            return Ok(m);
        }
        let global = match (&self.global, self.proto.clustering) {
            (Some(g), _) => Some(g),
            (None, Clustering::Single) => self.edges.values().next().map(|e| &e.state.model),
            _ => None,
        };
        let (mut correct, mut total) = (0, 0);
        for e in self.edges.values() {
            let (c, n) = self.member_accuracy(&e.state.model, &e.state.members)?;
            m.cluster_accs.push(c as f64 / n as f64);
            correct += c;
            total += n;
        }
        m.mean_cluster_acc = Some(correct as f64 / total as f64);
        if let Some(g) = global {
            let (mut c, mut n) = (0, 0);
            for client in &self.clients {
                c += correct_count(g, &client.validation)?;
                n += client.validation.len();
            }
            m.global_acc = Some(c as f64 / n as f64);
        }
        let member_lists: Vec<Vec<&ClientState>> =
            self.edges.values().map(|e| e.state.members.iter().map(|&i| &self.clients[i]).collect()).collect();
        let views: Vec<ClusterView> = self
            .edges
            .values()
            .zip(&member_lists)
            .map(|(e, members)| ClusterView { model: &e.state.model, members })
            .collect();
        let o = objectives(&views, &all, global)?;
        m.p_edge = Some(o.p_edge);
        m.p_cloud = o.p_cloud;
        m.h = Some(o.h);
        let d = divergence_diagnostics(&views)?;
        m.var_p = Some(d.var_p);
        m.divergence = d.pairwise;
        m.n_clusters = Some(self.edges.len());
        if let Some(truth) = self.clients.iter().map(|c| c.ground_truth).collect::<Option<Vec<usize>>>() {
            let predicted: Vec<usize> = self.clients.iter().map(|c| c.cluster_id.expect("clustered client")).collect();
            m.misclustering = Some(misclustering_rate(&predicted, &truth)?);
        }
        Ok(m)
    }

    fn finish(self) -> RunArtifacts {
        RunArtifacts {
            config: self.cfg.clone(),
            metrics: self.metrics,
            events: self.events,
            global: self.global,
            cluster_models: self.edges.into_iter().map(|(k, e)| (k, e.state.model)).collect(),
            clients: self.clients,
            comm: self.ledger,
        }
    }
}
