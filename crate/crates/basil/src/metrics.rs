//! Run summaries derived from the history log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::history::{Event, HistoryLog};
use crate::sim::SimConfig;
use crate::types::{Decision, NodeId, Timestamp};

/// Raw counts the simulator collects outside the history log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub messages: BTreeMap<String, u64>,
    pub dropped: u64,
    pub events: u64,
    pub signatures_made: u64,
    pub signature_checks: u64,
}

impl Counters {
    pub fn count_message(&mut self, kind: &str) {
        *self.messages.entry(kind.to_string()).or_default() += 1;
    }

    pub fn total_messages(&self) -> u64 {
        self.messages.values().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub count: usize,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl Latency {
    pub fn of(mut samples: Vec<u64>) -> Self {
        if samples.is_empty() {
            return Latency::default();
        }
        samples.sort_unstable();
        let pct = |p: f64| samples[((samples.len() - 1) as f64 * p).round() as usize];
        Latency {
            count: samples.len(),
            mean: samples.iter().sum::<u64>() as f64 / samples.len() as f64,
            p50: pct(0.5),
            p90: pct(0.9),
            p99: pct(0.99),
            max: *samples.last().expect("non-empty"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Distinct transactions begun (retries excluded).
    pub admitted: u64,
    pub attempts: u64,
    pub committed: u64,
    pub aborted: u64,
    pub local_aborts: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub correct: ClassStats,
    pub byzantine: ClassStats,
    /// Correct-client commits per 1000 ticks of `duration`.
    pub throughput: f64,
    /// Begin of the first attempt to commit, correct clients.
    pub commit_latency: Latency,
    /// Stage-1 send to commit, correct clients.
    pub prepare_latency: Latency,
    /// Fraction of correct commits decided on the fast path.
    pub fast_fraction: f64,
    pub in_flight_at_end: u64,
    pub recoveries: u64,
    pub fallbacks: u64,
    pub elections: u64,
    pub view_changes: u64,
    pub misbehavior: u64,
    pub invariant_violations: u64,
    pub counters: Counters,
}

impl Metrics {
    pub fn from_log(log: &HistoryLog, cfg: &SimConfig, counters: &Counters) -> Self {
        let roster = log.header.as_ref().map(|h| h.roster.clone());
        let is_byz = |c: u64| roster.as_ref().is_some_and(|r| r.is_byz(NodeId::Client(c)));
        let mut m = Metrics { counters: counters.clone(), ..Metrics::default() };
        let mut lat = Vec::new();
        let mut prep = Vec::new();
        let mut fast = 0u64;
        // Attempts without an outcome yet, keyed by (client, ts).
        let mut open: BTreeSet<(u64, Timestamp)> = BTreeSet::new();
        for ev in log.events() {
            match ev {
                Event::TxnBegin { client, ts, attempt } => {
                    let class = if is_byz(*client) { &mut m.byzantine } else { &mut m.correct };
                    class.attempts += 1;
                    if *attempt == 0 {
                        class.admitted += 1;
                    }
                    open.insert((*client, *ts));
                }
                Event::DecisionReported { client, ts, decision, fast: f, latency, prepare_latency, .. } => {
                    open.remove(&(*client, *ts));
                    let byz = is_byz(*client);
                    let class = if byz { &mut m.byzantine } else { &mut m.correct };
                    match decision {
                        Decision::Commit => {
                            class.committed += 1;
                            if !byz {
                                lat.push(*latency);
                                prep.push(*prepare_latency);
                                fast += u64::from(*f);
                            }
                        }
                        Decision::Abort => class.aborted += 1,
                    }
                }
                Event::LocalAbort { client, ts, .. } => {
                    open.remove(&(*client, *ts));
                    let class = if is_byz(*client) { &mut m.byzantine } else { &mut m.correct };
                    class.local_aborts += 1;
                }
                Event::RecoveryStarted { .. } => m.recoveries += 1,
                Event::FallbackInvoked { .. } => m.fallbacks += 1,
                Event::ElectionWon { .. } => m.elections += 1,
                Event::ViewChanged { .. } => m.view_changes += 1,
                Event::Misbehavior { .. } => m.misbehavior += 1,
                Event::InvariantViolation { .. } => m.invariant_violations += 1,
                _ => {}
            }
        }
        m.in_flight_at_end = open.iter().filter(|(c, _)| !is_byz(*c)).count() as u64;
        if m.correct.committed > 0 {
            m.fast_fraction = fast as f64 / m.correct.committed as f64;
        }
        if cfg.duration > 0 {
            m.throughput = m.correct.committed as f64 * 1000.0 / cfg.duration as f64;
        }
        m.commit_latency = Latency::of(lat);
        m.prepare_latency = Latency::of(prep);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_nearest_rank() {
        let l = Latency::of((1..=100).collect());
        assert_eq!(l.count, 100);
        assert_eq!(l.p50, 51);
        assert_eq!(l.p90, 90);
        assert_eq!(l.p99, 99);
        assert_eq!(l.max, 100);
        assert!((l.mean - 50.5).abs() < 1e-9);
        assert_eq!(Latency::of(vec![]), Latency::default());
    }
}
