use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    ClientEdge,
    EdgeCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    Upload,
    Download,
}

/// Model transfers in one round, in model units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RoundTraffic {
    pub client_edge_up: u64,
    pub client_edge_down: u64,
    pub edge_cloud_up: u64,
    pub edge_cloud_down: u64,
}

impl RoundTraffic {
    fn slot(&mut self, transfer: Transfer, link: Link) -> &mut u64 {
        match (link, transfer) {
            (Link::ClientEdge, Transfer::Upload) => &mut self.client_edge_up,
            (Link::ClientEdge, Transfer::Download) => &mut self.client_edge_down,
            (Link::EdgeCloud, Transfer::Upload) => &mut self.edge_cloud_up,
            (Link::EdgeCloud, Transfer::Download) => &mut self.edge_cloud_down,
        }
    }

    pub fn link_units(&self, link: Link) -> u64 {
        match link {
            Link::ClientEdge => self.client_edge_up + self.client_edge_down,
            Link::EdgeCloud => self.edge_cloud_up + self.edge_cloud_down,
        }
    }
}

/// Every model transfer of a run, per round and in total. One unit is one
/// serialized model of `model_bytes` bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommLedger {
    pub model_bytes: u64,
    /// Index 0 holds set-up traffic before the first round.
    pub rounds: Vec<RoundTraffic>,
    pub total: RoundTraffic,
}

impl CommLedger {
    pub fn new(model_bytes: u64) -> Result<Self> {
        if model_bytes == 0 {
            return Err(Error::Config("model size must be positive".into()));
        }
        Ok(Self { model_bytes, rounds: vec![RoundTraffic::default()], total: RoundTraffic::default() })
    }

    /// Books one transfer of a model on `link` during `round`.
    pub fn account(&mut self, round: usize, transfer: Transfer, link: Link) {
        if self.rounds.len() <= round {
            self.rounds.resize(round + 1, RoundTraffic::default());
        }
        *self.rounds[round].slot(transfer, link) += 1;
        *self.total.slot(transfer, link) += 1;
    }

    pub fn account_many(&mut self, round: usize, transfer: Transfer, link: Link, count: u64) {
        for _ in 0..count {
            self.account(round, transfer, link);
        }
    }

    pub fn units(&self, link: Link) -> u64 {
        self.total.link_units(link)
    }

    pub fn bytes(&self, link: Link) -> u64 {
        self.units(link) * self.model_bytes
    }

    pub fn directional_bytes(&self, transfer: Transfer, link: Link) -> u64 {
        let mut t = self.total;
        *t.slot(transfer, link) * self.model_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn account_adds_exactly_one_model() {
        let mut l = CommLedger::new(440).unwrap();
        l.account(3, Transfer::Upload, Link::ClientEdge);
        assert_eq!(l.bytes(Link::ClientEdge), 440);
        assert_eq!(l.bytes(Link::EdgeCloud), 0);
        l.account(3, Transfer::Download, Link::EdgeCloud);
        assert_eq!(l.bytes(Link::EdgeCloud), 440);
        assert_eq!(l.rounds.len(), 4);
        assert_eq!(l.directional_bytes(Transfer::Upload, Link::ClientEdge), 440);
        assert!(CommLedger::new(0).is_err());
    }

    #[test]
    fn totals_never_decrease() {
        let mut l = CommLedger::new(8).unwrap();
        let mut last = 0;
        for r in 0..20 {
            l.account_many(r, Transfer::Upload, Link::ClientEdge, (r % 3) as u64);
            let now = l.bytes(Link::ClientEdge);
            assert!(now >= last);
            last = now;
        }
    }
}
