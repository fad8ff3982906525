use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::protocol::Party;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Unlearn,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Unlearn => "unlearn",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyCounters {
    pub compute_units: u64,
    pub epochs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeRecord {
    pub phase: Phase,
    pub party: Party,
    pub compute_units: u64,
    pub epochs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub phase: Phase,
    pub from: Party,
    pub to: Party,
    pub bytes: u64,
}

/// Serialized form of a [`CostLedger`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecords {
    pub compute: Vec<ComputeRecord>,
    pub links: Vec<LinkRecord>,
}

/// Per-party compute (MACs) and epochs, per-link bytes, each keyed by phase.
/// Totals are sums over phases, so sub-totals always add up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    compute: BTreeMap<(Phase, Party), PartyCounters>,
    links: BTreeMap<(Phase, Party, Party), u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_compute(&mut self, phase: Phase, party: Party, units: u64) {
        self.compute.entry((phase, party)).or_default().compute_units += units;
    }

    pub fn add_epochs(&mut self, phase: Phase, party: Party, epochs: u64) {
        self.compute.entry((phase, party)).or_default().epochs += epochs;
    }

    pub fn add_bytes(&mut self, phase: Phase, from: Party, to: Party, bytes: u64) {
        *self.links.entry((phase, from, to)).or_default() += bytes;
    }

    pub fn counters_in(&self, phase: Phase, party: Party) -> PartyCounters {
        self.compute.get(&(phase, party)).copied().unwrap_or_default()
    }

    pub fn compute_units_in(&self, phase: Phase, party: Party) -> u64 {
        self.counters_in(phase, party).compute_units
    }

    pub fn compute_units(&self, party: Party) -> u64 {
        self.sum_compute(|&(_, p)| p == party, |c| c.compute_units)
    }

    pub fn epochs(&self, party: Party) -> u64 {
        self.sum_compute(|&(_, p)| p == party, |c| c.epochs)
    }

    pub fn epochs_in(&self, phase: Phase, party: Party) -> u64 {
        self.counters_in(phase, party).epochs
    }

    /// Compute units over every client in `phase`.
    pub fn client_compute_in(&self, phase: Phase) -> u64 {
        self.sum_compute(|&(ph, p)| ph == phase && p.is_client(), |c| c.compute_units)
    }

    fn sum_compute(&self, keep: impl Fn(&(Phase, Party)) -> bool, f: impl Fn(&PartyCounters) -> u64) -> u64 {
        self.compute.iter().filter(|(k, _)| keep(k)).map(|(_, c)| f(c)).sum()
    }

    pub fn bytes_in(&self, phase: Phase, from: Party, to: Party) -> u64 {
        self.links.get(&(phase, from, to)).copied().unwrap_or(0)
    }

    pub fn bytes(&self, from: Party, to: Party) -> u64 {
        self.sum_links(|&(_, f, t)| f == from && t == to)
    }

    pub fn bytes_sent(&self, party: Party) -> u64 {
        self.sum_links(|&(_, f, _)| f == party)
    }

    pub fn bytes_received(&self, party: Party) -> u64 {
        self.sum_links(|&(_, _, t)| t == party)
    }

    pub fn bytes_sent_in(&self, phase: Phase, party: Party) -> u64 {
        self.sum_links(|&(ph, f, _)| ph == phase && f == party)
    }

    pub fn bytes_received_in(&self, phase: Phase, party: Party) -> u64 {
        self.sum_links(|&(ph, _, t)| ph == phase && t == party)
    }

    pub fn total_bytes_in(&self, phase: Phase) -> u64 {
        self.sum_links(|&(ph, _, _)| ph == phase)
    }

    pub fn total_bytes(&self) -> u64 {
        self.links.values().sum()
    }

    fn sum_links(&self, keep: impl Fn(&(Phase, Party, Party)) -> bool) -> u64 {
        self.links.iter().filter(|(k, _)| keep(k)).map(|(_, b)| b).sum()
    }

    /// Every party that appears anywhere in the ledger.
    pub fn parties(&self) -> BTreeSet<Party> {
        let mut s: BTreeSet<Party> = self.compute.keys().map(|&(_, p)| p).collect();
        for &(_, f, t) in self.links.keys() {
            s.insert(f);
            s.insert(t);
        }
        s
    }

    /// Compute and byte activity attributable to `party` in `phase`
    /// (compute units, epochs, bytes sent, bytes received).
    pub fn activity_in(&self, phase: Phase, party: Party) -> (u64, u64, u64, u64) {
        let c = self.counters_in(phase, party);
        (c.compute_units, c.epochs, self.bytes_sent_in(phase, party), self.bytes_received_in(phase, party))
    }

    /// `self - earlier`, counter by counter. `earlier` must be a prefix of
    /// this ledger's history; counters never decrease.
    pub fn delta_since(&self, earlier: &CostLedger) -> CostLedger {
        let mut out = CostLedger::new();
        for (k, c) in &self.compute {
            let before = earlier.compute.get(k).copied().unwrap_or_default();
            let d = PartyCounters {
                compute_units: c.compute_units - before.compute_units,
                epochs: c.epochs - before.epochs,
            };
            if d != PartyCounters::default() {
                out.compute.insert(*k, d);
            }
        }
        for (k, b) in &self.links {
            let d = b - earlier.links.get(k).copied().unwrap_or(0);
            if d != 0 {
                out.links.insert(*k, d);
            }
        }
        out
    }

    /// True when every counter is at least its value in `earlier`.
    pub fn dominates(&self, earlier: &CostLedger) -> bool {
        earlier.compute.iter().all(|(k, c)| {
            self.compute.get(k).is_some_and(|n| n.compute_units >= c.compute_units && n.epochs >= c.epochs)
        }) && earlier.links.iter().all(|(k, b)| self.links.get(k).is_some_and(|n| n >= b))
    }

    pub fn to_records(&self) -> LedgerRecords {
        LedgerRecords {
            compute: self
                .compute
                .iter()
                .map(|(&(phase, party), c)| ComputeRecord {
                    phase,
                    party,
                    compute_units: c.compute_units,
                    epochs: c.epochs,
                })
                .collect(),
            links: self
                .links
                .iter()
                .map(|(&(phase, from, to), &bytes)| LinkRecord { phase, from, to, bytes })
                .collect(),
        }
    }

    pub fn from_records(records: &LedgerRecords) -> Self {
        let mut l = CostLedger::new();
        for r in &records.compute {
            l.add_compute(r.phase, r.party, r.compute_units);
            l.add_epochs(r.phase, r.party, r.epochs);
        }
        for r in &records.links {
            l.add_bytes(r.phase, r.from, r.to, r.bytes);
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_subtotals_sum_to_totals() {
        let mut l = CostLedger::new();
        let c0 = Party::Client(0);
        l.add_compute(Phase::Train, c0, 10);
        l.add_compute(Phase::Unlearn, c0, 5);
        l.add_bytes(Phase::Train, c0, Party::Server, 100);
        l.add_bytes(Phase::Unlearn, c0, Party::Server, 7);
        assert_eq!(l.compute_units(c0), 15);
        assert_eq!(
            l.bytes(c0, Party::Server),
            l.bytes_in(Phase::Train, c0, Party::Server) + l.bytes_in(Phase::Unlearn, c0, Party::Server)
        );
        assert_eq!(l.total_bytes(), l.total_bytes_in(Phase::Train) + l.total_bytes_in(Phase::Unlearn));
    }

    #[test]
    fn delta_and_records_round_trip() {
        let mut l = CostLedger::new();
        l.add_compute(Phase::Train, Party::Server, 3);
        let snap = l.clone();
        l.add_compute(Phase::Unlearn, Party::Server, 4);
        l.add_bytes(Phase::Unlearn, Party::Server, Party::Client(1), 9);
        assert!(l.dominates(&snap));
        let d = l.delta_since(&snap);
        assert_eq!(d.compute_units(Party::Server), 4);
        assert_eq!(d.compute_units_in(Phase::Train, Party::Server), 0);
        assert_eq!(CostLedger::from_records(&l.to_records()), l);
        let json = serde_json::to_string(&l.to_records()).unwrap();
        assert!(json.contains("\"client:1\""));
    }
}
