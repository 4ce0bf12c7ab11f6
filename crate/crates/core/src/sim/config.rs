use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DriftEvent, DriftKind, PartitionConfig, TaskConfig};
use crate::error::{Error, Result};
use crate::fdc::FdcConfig;
use crate::fedcore::RefineConfig;
use crate::model::{ModelSpec, SgdConfig};
use crate::numerics::SeededRng;

use super::streams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cflhkd,
    Fedavg,
    Fedprox,
    Hierfavg,
    StaticCfl,
    Standalone,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Cflhkd, Method::Fedavg, Method::Fedprox, Method::Hierfavg, Method::StaticCfl, Method::Standalone];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cflhkd => "cflhkd",
            Method::Fedavg => "fedavg",
            Method::Fedprox => "fedprox",
            Method::Hierfavg => "hierfavg",
            Method::StaticCfl => "static_cfl",
            Method::Standalone => "standalone",
        }
    }

    /// Edge and cloud aggregation intervals used when the config leaves them unset.
    pub fn default_intervals(self) -> (usize, usize) {
        match self {
            Method::Cflhkd | Method::StaticCfl => (10, 30),
            Method::Hierfavg => (5, 20),
            Method::Fedavg | Method::Fedprox | Method::Standalone => (1, 1),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', ' '], "_");
        let m = match key.as_str() {
            "cflhkd" => Method::Cflhkd,
            "fedavg" => Method::Fedavg,
            "fedprox" | "fedprox_like" => Method::Fedprox,
            "hierfavg" => Method::Hierfavg,
            "static_cfl" | "staticcfl" => Method::StaticCfl,
            "standalone" => Method::Standalone,
            _ => return Err(Error::Config(format!("unknown method '{s}'"))),
        };
        Ok(m)
    }
}

/// How clients are grouped into clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clustering {
    /// Clustering after a warm-up pass, rescheduled and drift-triggered updates.
    Dynamic,
    /// Clustering after a warm-up pass, then frozen.
    StaticFdc,
    /// Seeded random split into `initial_clusters` groups, frozen.
    FixedRandom,
    /// One cluster holding every client.
    Single,
    /// No clusters; every client keeps its own model.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudWeights {
    Dynamic,
    Naive,
}

/// What happens to cluster models after a cloud aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalSync {
    Refine,
    Overwrite,
    /// No cloud tier at all.
    None,
}

/// Protocol knobs a method fixes. Overrides replace individual entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub clustering: Clustering,
    pub cloud_weights: CloudWeights,
    pub global_sync: GlobalSync,
    pub proximal: bool,
    pub unit_alpha: bool,
}

impl Protocol {
    pub fn has_cloud(&self) -> bool {
        self.global_sync != GlobalSync::None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub clustering: Option<Clustering>,
    pub cloud_weights: Option<CloudWeights>,
    pub global_sync: Option<GlobalSync>,
    /// Treat every cluster's validation accuracy as 1 in the cloud weights.
    pub unit_alpha: bool,
    /// Stop all training from this round on (inclusive); metrics keep being recorded.
    pub freeze_training_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub task: TaskConfig,
    pub partition: PartitionConfig,
    /// Labels present before any drift; all classes when unset.
    pub initial_labels: Option<Vec<u32>>,
    /// Pool rows per client slot, relative to `samples_max`.
    pub pool_factor: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { task: TaskConfig::default(), partition: PartitionConfig::default(), initial_labels: None, pool_factor: 1.5 }
    }
}

/// A drift event as written in a config file. Affected clients are listed
/// explicitly or drawn as a seeded fraction of the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub round: usize,
    #[serde(flatten)]
    pub kind: DriftKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub rounds: usize,
    pub method: Method,
    /// Number of clusters for methods that start from a random split.
    pub initial_clusters: usize,
    pub participation_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub edge_every: Option<usize>,
    pub cloud_every: Option<usize>,
    /// Distance penalty inside the dynamic cloud weights.
    pub rho_lambda: f64,
    /// Proximal strength for the FedProx-like baseline.
    pub prox_mu: f64,
    /// Accuracy at which rounds-to-target is reported.
    pub target_accuracy: Option<f64>,
    pub model: ModelSpec,
    pub sgd: SgdConfig,
    pub refine: RefineConfig,
    pub fdc: FdcConfig,
    pub data: DataConfig,
    pub drift: Vec<DriftSpec>,
    pub overrides: Overrides,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            rounds: 100,
            method: Method::Cflhkd,
            initial_clusters: 4,
            participation_fraction: 0.3,
            local_epochs: 5,
            batch_size: 32,
            edge_every: None,
            cloud_every: None,
            rho_lambda: 0.005,
            prox_mu: 0.01,
            target_accuracy: None,
            model: ModelSpec { input_dim: 10, num_classes: 10, hidden_dim: 0 },
            sgd: SgdConfig::default(),
            refine: RefineConfig::default(),
            fdc: FdcConfig::default(),
            data: DataConfig::default(),
            drift: Vec::new(),
            overrides: Overrides::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with one dotted-path entry replaced, e.g. `refine.lambda0 = 0.5`.
    /// `raw` is read as a TOML value, falling back to a bare string.
    pub fn with_param(&self, path: &str, raw: &str) -> Result<Self> {
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for key in path.split('.') {
            let table = slot.as_table_mut().ok_or_else(|| Error::Config(format!("'{path}' does not name a setting")))?;
            slot = table.entry(key.to_string()).or_insert(toml::Value::Table(toml::Table::new()));
        }
        *slot = value;
        let cfg: SimConfig = root.try_into().map_err(|e| Error::Config(format!("setting {path}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_clients(&self) -> usize {
        self.data.partition.num_clients
    }

    pub fn intervals(&self) -> (usize, usize) {
        let (e, c) = self.method.default_intervals();
        (self.edge_every.unwrap_or(e), self.cloud_every.unwrap_or(c))
    }

    pub fn protocol(&self) -> Protocol {
        use Clustering as C;
        use GlobalSync as G;
        let (clustering, cloud_weights, global_sync) = match self.method {
            Method::Cflhkd => (C::Dynamic, CloudWeights::Dynamic, G::Refine),
            Method::Hierfavg => (C::FixedRandom, CloudWeights::Naive, G::Overwrite),
            Method::StaticCfl => (C::StaticFdc, CloudWeights::Naive, G::None),
            Method::Fedavg | Method::Fedprox => (C::Single, CloudWeights::Naive, G::None),
            Method::Standalone => (C::None, CloudWeights::Naive, G::None),
        };
        let o = &self.overrides;
        Protocol {
            clustering: o.clustering.unwrap_or(clustering),
            cloud_weights: o.cloud_weights.unwrap_or(cloud_weights),
            global_sync: o.global_sync.unwrap_or(global_sync),
            proximal: self.method == Method::Fedprox,
            unit_alpha: o.unit_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        self.sgd.validate()?;
        self.refine.validate()?;
        self.fdc.validate()?;
        self.data.partition.validate()?;
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::Config("participation_fraction must be in (0,1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (e, c) = self.intervals();
        if e == 0 || c == 0 {
            return Err(Error::Config("aggregation intervals must be at least 1".into()));
        }
        let random_split = self.protocol().clustering == Clustering::FixedRandom;
        if random_split && (self.initial_clusters == 0 || self.initial_clusters > self.num_clients()) {
            return Err(Error::Config("initial_clusters must be in [1, clients]".into()));
        }
        if self.data.task.num_clusters > self.num_clients() {
            return Err(Error::Config("more ground-truth groups than clients".into()));
        }
        if !(self.rho_lambda >= 0.0) || !(self.prox_mu >= 0.0) {
            return Err(Error::Config("rho_lambda and prox_mu must be non-negative".into()));
        }
        if !(self.data.pool_factor >= 1.0) {
            return Err(Error::Config("pool_factor must be at least 1".into()));
        }
        if let Some(labels) = &self.data.initial_labels {
            if labels.is_empty() || labels.iter().any(|&l| l as usize >= self.model.num_classes) {
                return Err(Error::Config("initial_labels must be non-empty and in range".into()));
            }
        }
        if self.data.task.num_clusters == 0 {
            return Err(Error::Config("task needs at least one ground-truth group".into()));
        }
        for d in &self.drift {
            d.kind.validate(self.model.num_classes, self.model.input_dim)?;
            if d.round == 0 {
                return Err(Error::Config("drift round must be at least 1".into()));
            }
            match (&d.clients, d.fraction) {
                (Some(c), None) if c.iter().all(|&i| i < self.num_clients()) && !c.is_empty() => {}
                (None, Some(f)) if f > 0.0 && f <= 1.0 => {}
                _ => return Err(Error::Config("drift needs either a non-empty in-range client list or a fraction in (0,1]".into())),
            }
        }
        Ok(())
    }

    /// Drift schedule with affected clients resolved.
    pub fn drift_events(&self) -> Result<Vec<DriftEvent>> {
        let n = self.num_clients();
        self.drift
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let clients: BTreeSet<usize> = match (&d.clients, d.fraction) {
                    (Some(c), _) => c.iter().copied().collect(),
                    (None, Some(f)) => {
                        let k = ((f * n as f64).ceil() as usize).clamp(1, n);
                        let mut rng = SeededRng::derive(self.seed, &[streams::DRIFT, i as u64]);
                        rng.sample_indices(n, k).into_iter().collect()
                    }
                    (None, None) => return Err(Error::Config("drift without clients".into())),
                };
                DriftEvent::new(d.round, d.kind.clone(), clients)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = SimConfig::from_toml_str("schema_version = 1\nseed = 9\nmethod = \"hierfavg\"\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.intervals(), (5, 20));
        assert_eq!(cfg.protocol().clustering, Clustering::FixedRandom);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SimConfig::from_toml_str("schema_version = 2\n").is_err());
        assert!(SimConfig::from_toml_str("schema_version = 1\nparticipation_fraction = 0.0\n").is_err());
        assert!(SimConfig::from_toml_str("schema_version = 1\nedge_every = 0\n").is_err());
        assert!(SimConfig::from_toml_str("schema_version = 1\nbogus = 3\n").is_err());
    }

    #[test]
    fn drift_spec_parses() {
        let text = r#"
schema_version = 1
[[drift]]
round = 50
kind = "label_subset_switch"
from = [0, 1]
to = [5, 6]
fraction = 0.3
"#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        let events = cfg.drift_events().unwrap();
        assert_eq!(events[0].affected_clients.len(), 30);
        assert_eq!(events, cfg.drift_events().unwrap());
    }

    #[test]
    fn with_param_sets_nested_values() {
        let cfg = SimConfig::default();
        let c = cfg.with_param("refine.lambda0", "0.5").unwrap();
        assert_eq!(c.refine.lambda0, 0.5);
        let c = cfg.with_param("refine.lambda0", "0").unwrap();
        assert_eq!(c.refine.lambda0, 0.0);
        let c = cfg.with_param("method", "fedavg").unwrap();
        assert_eq!(c.method, Method::Fedavg);
        let c = cfg.with_param("edge_every", "3").unwrap();
        assert_eq!(c.intervals().0, 3);
        assert!(cfg.with_param("fdc.nonsense", "1").is_err());
        assert!(cfg.with_param("fdc.gamma", "2.0").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("fedsgd".parse::<Method>().is_err());
    }
}
