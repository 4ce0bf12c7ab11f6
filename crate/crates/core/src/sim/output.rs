use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::report::{similarity_heatmap, write_heatmap_csv, write_metrics_csv};

use super::comm::Link;
use super::engine::RunArtifacts;
use super::{drift_metrics, rounds_to_target, DriftMetrics};

const MODELS_MAGIC: &[u8; 4] = b"CFLF";
const MODELS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Global,
    Cluster,
    Client,
}

impl ModelRole {
    fn tag(self) -> u8 {
        match self {
            ModelRole::Global => 0,
            ModelRole::Cluster => 1,
            ModelRole::Client => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelRole::Global),
            1 => Ok(ModelRole::Cluster),
            2 => Ok(ModelRole::Client),
            _ => Err(Error::Format { what: "model bundle", reason: format!("unknown role tag {tag}") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub role: ModelRole,
    pub id: u64,
    pub model: Model,
}

/// Bundle layout: magic, version (u32), record count (u32), then per record a
/// role tag (u8), an id (u64) and one serialized model. Integers are little-endian.
pub fn write_final_models(records: &[ModelRecord], mut w: impl Write) -> Result<()> {
    w.write_all(MODELS_MAGIC)?;
    w.write_all(&MODELS_VERSION.to_le_bytes())?;
    let count = u32::try_from(records.len())
        .map_err(|_| Error::Format { what: "model bundle", reason: "too many records".into() })?;
    w.write_all(&count.to_le_bytes())?;
    for r in records {
        w.write_all(&[r.role.tag()])?;
        w.write_all(&r.id.to_le_bytes())?;
        w.write_all(&r.model.to_bytes())?;
    }
    Ok(())
}

pub fn read_final_models(mut r: impl Read) -> Result<Vec<ModelRecord>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |reason: &str| Error::Format { what: "model bundle", reason: reason.into() };
    if bytes.len() < 12 || &bytes[..4] != MODELS_MAGIC {
        return Err(bad("missing header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != MODELS_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let mut pos = 12;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if bytes.len() < pos + 9 {
            return Err(bad("truncated record header"));
        }
        let role = ModelRole::from_tag(bytes[pos])?;
        let id = u64::from_le_bytes(bytes[pos + 1..pos + 9].try_into().expect("8 bytes"));
        let (model, used) = Model::from_bytes(&bytes[pos + 9..])?;
        pos += 9 + used;
        out.push(ModelRecord { role, id, model });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

/// Headline numbers of a run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_global_acc: Option<f64>,
    pub final_mean_cluster_acc: Option<f64>,
    pub final_clusters: Option<usize>,
    pub comm_client_edge_bytes: u64,
    pub comm_edge_cloud_bytes: u64,
    pub rounds_to_target: Option<usize>,
    pub drift: Option<DriftMetrics>,
}

impl RunSummary {
    pub fn from_artifacts(a: &RunArtifacts) -> Self {
        let last = a.final_metrics();
        let series = a.accuracy_series();
        let first_drift = a.config.drift.iter().map(|d| d.round).min();
        Self {
            method: a.config.method.name().to_string(),
            seed: a.config.seed,
            rounds: a.config.rounds,
            final_global_acc: last.and_then(|m| m.global_acc),
            final_mean_cluster_acc: last.and_then(|m| m.mean_cluster_acc),
            final_clusters: last.and_then(|m| m.n_clusters),
            comm_client_edge_bytes: a.comm.bytes(Link::ClientEdge),
            comm_edge_cloud_bytes: a.comm.bytes(Link::EdgeCloud),
            rounds_to_target: a.config.target_accuracy.and_then(|t| rounds_to_target(&series, t)),
            drift: first_drift.and_then(|r| drift_metrics(&series, r).ok()),
        }
    }
}

fn model_records(a: &RunArtifacts) -> Vec<ModelRecord> {
    let mut out = Vec::new();
    if let Some(g) = &a.global {
        out.push(ModelRecord { role: ModelRole::Global, id: 0, model: g.clone() });
    }
    for (&k, m) in &a.cluster_models {
        out.push(ModelRecord { role: ModelRole::Cluster, id: k as u64, model: m.clone() });
    }
    for c in &a.clients {
        out.push(ModelRecord { role: ModelRole::Client, id: c.id as u64, model: c.model.clone() });
    }
    out
}

/// Writes `metrics.csv`, `events.jsonl`, `final_models.bin`, `heatmap.csv`,
/// `summary.json` and the resolved `config.toml` into `dir`.
pub fn write_outputs(a: &RunArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(&a.metrics, BufWriter::new(File::create(dir.join("metrics.csv"))?))?;

    let mut events = BufWriter::new(File::create(dir.join("events.jsonl"))?);
    for e in &a.events {
        serde_json::to_writer(&mut events, e)?;
        events.write_all(b"\n")?;
    }
    events.flush()?;

    let mut models = BufWriter::new(File::create(dir.join("final_models.bin"))?);
    write_final_models(&model_records(a), &mut models)?;
    models.flush()?;

    let refs: Vec<_> = a.clients.iter().collect();
    let ids: Vec<usize> = a.clients.iter().map(|c| c.id).collect();
    let heat = similarity_heatmap(&refs)?;
    write_heatmap_csv(&ids, &heat, BufWriter::new(File::create(dir.join("heatmap.csv"))?))?;

    let summary = RunSummary::from_artifacts(a);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(dir.join("config.toml"), a.config.to_toml_string()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::numerics::SeededRng;

    #[test]
    fn bundle_round_trip() {
        let mut rng = SeededRng::new(1);
        let spec = ModelSpec::new(3, 2, 4).unwrap();
        let records: Vec<ModelRecord> = [ModelRole::Global, ModelRole::Cluster, ModelRole::Client]
            .into_iter()
            .enumerate()
            .map(|(i, role)| ModelRecord { role, id: i as u64 * 7, model: Model::init(spec, &mut rng) })
            .collect();
        let mut buf = Vec::new();
        write_final_models(&records, &mut buf).unwrap();
        assert_eq!(read_final_models(&buf[..]).unwrap(), records);

        buf.push(0);
        assert!(read_final_models(&buf[..]).is_err());
        assert!(read_final_models(&b"CFLX"[..]).is_err());
    }
}
