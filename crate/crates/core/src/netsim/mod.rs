//! Seeded discrete-event simulation of a linear roadside chain.
//!
//! Nodes sit on a line and talk to their neighbors over directed links with
//! Bernoulli loss, serialization delay driven by bandwidth, and fixed
//! propagation latency. Routing is semi-fixed: traffic follows the chain, and
//! when a link goes down the upstream node re-targets the node one position
//! further using the scenario's long-link parameters. Time is integer
//! microseconds so identical seeds replay identical event logs on any
//! platform.

mod transfer;

pub use transfer::{TransferCoding, TransferOutcome, TransferParams, TransferRecord};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chain position, 0-based. Positions strictly increase with index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Simulation clock in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: Self = Self(0);

    pub fn from_ms(ms: f64) -> Self {
        Self((ms * 1000.0).round() as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn as_us(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: Self) -> Self {
        Self(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    Up,
    Down,
}

/// Directed link between adjacent chain nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub src: NodeId,
    pub dst: NodeId,
    pub loss_prob: f64,
    pub bandwidth_mbps: f64,
    pub latency_ms: f64,
    #[serde(default = "default_status")]
    pub status: LinkStatus,
}

fn default_status() -> LinkStatus {
    LinkStatus::Up
}

impl LinkState {
    pub fn validate(&self) -> Result<(), NetsimError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(NetsimError::BadLink(format!(
                "loss_prob {} outside [0, 1]",
                self.loss_prob
            )));
        }
        if self.bandwidth_mbps <= 0.0 {
            return Err(NetsimError::BadLink(format!(
                "bandwidth {} must be positive",
                self.bandwidth_mbps
            )));
        }
        if self.latency_ms < 0.0 {
            return Err(NetsimError::BadLink(format!(
                "latency {} must be nonnegative",
                self.latency_ms
            )));
        }
        Ok(())
    }
}

/// Parameters of the longer-reach link a node falls back to after a failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipLinkParams {
    pub bandwidth_mbps: f64,
    pub loss_prob: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetsimError {
    #[error("invalid link: {0}")]
    BadLink(String),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("no route from {src} to {dst}")]
    Unreachable { src: NodeId, dst: NodeId },
    #[error("chain partitioned at link {src}->{dst}: no further node to recover through")]
    Partition { src: NodeId, dst: NodeId },
    #[error("link {src}->{dst} is not part of the chain")]
    NoSuchLink { src: NodeId, dst: NodeId },
    #[error("transfer parameter error: {0}")]
    BadTransfer(String),
}

/// Static description of one chain.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    pub nodes: usize,
    /// Directed adjacent links keyed by (src, dst) index.
    pub links: BTreeMap<(usize, usize), LinkState>,
    /// Fallback parameters for skip links; None disables recovery.
    pub skip: Option<SkipLinkParams>,
    /// Fixed per-packet framing bytes added to every serialization.
    pub header_bytes: usize,
}

impl ChainSpec {
    /// A chain of `nodes` with identical bidirectional links.
    pub fn uniform(nodes: usize, bandwidth_mbps: f64, loss_prob: f64, latency_ms: f64) -> Self {
        let mut links = BTreeMap::new();
        for i in 0..nodes.saturating_sub(1) {
            for (s, d) in [(i, i + 1), (i + 1, i)] {
                links.insert(
                    (s, d),
                    LinkState {
                        src: NodeId(s),
                        dst: NodeId(d),
                        loss_prob,
                        bandwidth_mbps,
                        latency_ms,
                        status: LinkStatus::Up,
                    },
                );
            }
        }
        Self {
            nodes,
            links,
            skip: None,
            header_bytes: 0,
        }
    }

    pub fn with_skip(mut self, skip: SkipLinkParams) -> Self {
        self.skip = Some(skip);
        self
    }

    pub fn with_header_bytes(mut self, header_bytes: usize) -> Self {
        self.header_bytes = header_bytes;
        self
    }

    pub fn validate(&self) -> Result<(), NetsimError> {
        for link in self.links.values() {
            link.validate()?;
            if link.src.0 >= self.nodes {
                return Err(NetsimError::UnknownNode(link.src));
            }
            if link.dst.0 >= self.nodes {
                return Err(NetsimError::UnknownNode(link.dst));
            }
        }
        Ok(())
    }

    fn link_up(&self, src: usize, dst: usize) -> bool {
        self.links
            .get(&(src, dst))
            .map(|l| l.status == LinkStatus::Up)
            .unwrap_or(false)
    }
}

/// Effective transmission parameters for one hop, covering both direct and
/// skip links.
#[derive(Debug, Clone, Copy)]
pub struct HopParams {
    pub bandwidth_mbps: f64,
    pub loss_prob: f64,
    pub latency_ms: f64,
}

/// Per-node next hop toward every destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteTable {
    next: Vec<Vec<Option<usize>>>,
    /// How far a node reaches past a failed neighbor.
    pub hop_reach: usize,
}

impl RouteTable {
    /// Shortest-path routing over direct up links plus skip edges bridging a
    /// single failed neighbor link.
    pub fn build(spec: &ChainSpec) -> Self {
        let n = spec.nodes;
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for u in 0..n {
            for v in [u.wrapping_sub(1), u + 1] {
                if v < n && spec.link_up(u, v) {
                    adjacency[u].push(v);
                }
            }
            // the upstream node of a failed link re-targets one position
            // further; the resulting radio link works in both directions
            if spec.skip.is_some() && u + 2 < n && !spec.link_up(u, u + 1) {
                adjacency[u].push(u + 2);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        // skip edges are symmetric radio links; mirror them
        for u in 0..n {
            let peers: Vec<usize> = adjacency[u].clone();
            for v in peers {
                if !adjacency[v].contains(&u) {
                    adjacency[v].push(u);
                    adjacency[v].sort_unstable();
                }
            }
        }

        let mut next = vec![vec![None; n]; n];
        for dst in 0..n {
            // BFS from the destination; parent pointers give next hops
            let mut dist = vec![usize::MAX; n];
            let mut queue = std::collections::VecDeque::new();
            dist[dst] = 0;
            queue.push_back(dst);
            while let Some(u) = queue.pop_front() {
                for &v in &adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            for u in 0..n {
                if u == dst || dist[u] == usize::MAX {
                    continue;
                }
                // first neighbor strictly closer to dst, lowest index on ties
                next[u][dst] = adjacency[u]
                    .iter()
                    .copied()
                    .find(|&v| dist[v] + 1 == dist[u]);
            }
        }
        Self { next, hop_reach: 2 }
    }

    pub fn next_hop(&self, from: NodeId, dst: NodeId) -> Option<NodeId> {
        if from == dst {
            return Some(dst);
        }
        self.next
            .get(from.0)
            .and_then(|row| row.get(dst.0))
            .and_then(|&n| n.map(NodeId))
    }

    /// Full hop sequence from src to dst, excluding src itself.
    pub fn path(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let mut path = Vec::new();
        let mut cur = src;
        while cur != dst {
            let next = self.next_hop(cur, dst)?;
            path.push(next);
            cur = next;
            if path.len() > self.next.len() {
                return None; // routing loop guard
            }
        }
        Some(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Transmit,
    Deliver,
    Drop,
    LinkChange,
    Timer,
}

impl EventKind {
    fn label(self) -> &'static str {
        match self {
            EventKind::Transmit => "transmit",
            EventKind::Deliver => "deliver",
            EventKind::Drop => "drop",
            EventKind::LinkChange => "link_change",
            EventKind::Timer => "timer",
        }
    }
}

/// One line of the simulation trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    pub kind: EventKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: usize,
    pub outcome: String,
}

impl SimEvent {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.time.as_us(),
            self.kind.label(),
            self.src,
            self.dst,
            self.bytes,
            self.outcome
        )
    }
}

/// Where a packet ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendOutcome {
    Delivered { at: SimTime },
    DroppedAtHop { src: NodeId, dst: NodeId, at: SimTime },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: usize,
    pub sent_at: SimTime,
    pub outcome: SendOutcome,
}

/// One simulation instance: a chain, its route table, and a private RNG.
/// Strictly single-threaded; run many instances for parallel experiments.
pub struct ChainSim {
    spec: ChainSpec,
    route: RouteTable,
    rng: ChaCha8Rng,
    trace: Option<Vec<SimEvent>>,
    last_event_seq: u64,
}

impl ChainSim {
    pub fn new(spec: ChainSpec, seed: u64) -> Result<Self, NetsimError> {
        spec.validate()?;
        let route = RouteTable::build(&spec);
        Ok(Self {
            spec,
            route,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: None,
            last_event_seq: 0,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<SimEvent> {
        self.trace.take().unwrap_or_default()
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn route_table(&self) -> &RouteTable {
        &self.route
    }

    fn record(&mut self, event: SimEvent) {
        if let Some(trace) = &mut self.trace {
            trace.push(event);
        }
        self.last_event_seq += 1;
    }

    /// Effective hop parameters between two routed nodes. Adjacent pairs use
    /// the configured link; pairs two apart use the skip-link parameters.
    pub fn hop_params(&self, src: NodeId, dst: NodeId) -> Result<HopParams, NetsimError> {
        if let Some(link) = self.spec.links.get(&(src.0, dst.0)) {
            if link.status == LinkStatus::Up {
                return Ok(HopParams {
                    bandwidth_mbps: link.bandwidth_mbps,
                    loss_prob: link.loss_prob,
                    latency_ms: link.latency_ms,
                });
            }
        }
        if src.0.abs_diff(dst.0) == 2 {
            if let Some(skip) = self.spec.skip {
                return Ok(HopParams {
                    bandwidth_mbps: skip.bandwidth_mbps,
                    loss_prob: skip.loss_prob,
                    latency_ms: skip.latency_ms,
                });
            }
        }
        Err(NetsimError::NoSuchLink { src, dst })
    }

    /// Serialization time of `payload_bytes` plus framing on a link,
    /// in microseconds (Mbps is exactly bits per microsecond).
    pub fn serialization_us(&self, params: HopParams, payload_bytes: usize) -> u64 {
        let bits = ((payload_bytes + self.spec.header_bytes) * 8) as f64;
        (bits / params.bandwidth_mbps).round().max(1.0) as u64
    }

    fn latency_us(params: HopParams) -> u64 {
        (params.latency_ms * 1000.0).round() as u64
    }

    fn draw_loss(&mut self, loss_prob: f64) -> bool {
        self.rng.gen::<f64>() < loss_prob
    }

    /// Walk one packet along the route. Each hop serializes, waits the link
    /// latency, then survives with probability 1 - loss.
    pub fn send(
        &mut self,
        src: NodeId,
        dst: NodeId,
        bytes: usize,
        at: SimTime,
    ) -> Result<DeliveryRecord, NetsimError> {
        if src.0 >= self.spec.nodes {
            return Err(NetsimError::UnknownNode(src));
        }
        if dst.0 >= self.spec.nodes {
            return Err(NetsimError::UnknownNode(dst));
        }
        if src == dst {
            return Ok(DeliveryRecord {
                src,
                dst,
                bytes,
                sent_at: at,
                outcome: SendOutcome::Delivered { at },
            });
        }
        let path = self
            .route
            .path(src, dst)
            .ok_or(NetsimError::Unreachable { src, dst })?;
        let mut now = at;
        let mut from = src;
        for to in path {
            let hop = self.hop_params(from, to)?;
            let ser = self.serialization_us(hop, bytes);
            let arrive = SimTime(now.0 + ser + Self::latency_us(hop));
            self.record(SimEvent {
                time: now,
                kind: EventKind::Transmit,
                src: from,
                dst: to,
                bytes,
                outcome: "queued".into(),
            });
            if self.draw_loss(hop.loss_prob) {
                self.record(SimEvent {
                    time: arrive,
                    kind: EventKind::Drop,
                    src: from,
                    dst: to,
                    bytes,
                    outcome: "lost".into(),
                });
                return Ok(DeliveryRecord {
                    src,
                    dst,
                    bytes,
                    sent_at: at,
                    outcome: SendOutcome::DroppedAtHop { src: from, dst: to, at: arrive },
                });
            }
            self.record(SimEvent {
                time: arrive,
                kind: EventKind::Deliver,
                src: from,
                dst: to,
                bytes,
                outcome: "ok".into(),
            });
            now = arrive;
            from = to;
        }
        Ok(DeliveryRecord {
            src,
            dst,
            bytes,
            sent_at: at,
            outcome: SendOutcome::Delivered { at: now },
        })
    }

    /// Mark a link down (both directions) and rebuild the routes. Reports a
    /// partition when no further node exists to recover through.
    pub fn fail_link(&mut self, src: NodeId, dst: NodeId) -> Result<&RouteTable, NetsimError> {
        if src.0.abs_diff(dst.0) != 1 {
            return Err(NetsimError::NoSuchLink { src, dst });
        }
        let mut touched = false;
        for key in [(src.0, dst.0), (dst.0, src.0)] {
            if let Some(link) = self.spec.links.get_mut(&key) {
                link.status = LinkStatus::Down;
                touched = true;
            }
        }
        if !touched {
            return Err(NetsimError::NoSuchLink { src, dst });
        }
        self.record(SimEvent {
            time: SimTime::ZERO,
            kind: EventKind::LinkChange,
            src,
            dst,
            bytes: 0,
            outcome: "down".into(),
        });
        self.route = RouteTable::build(&self.spec);
        // the upstream node needs a node one position further to reach
        let lo = src.0.min(dst.0);
        let recoverable = self.spec.skip.is_some() && lo + 2 < self.spec.nodes;
        if !recoverable {
            return Err(NetsimError::Partition { src, dst });
        }
        Ok(&self.route)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_arithmetic_matches_hand_computation() {
        // 1,250,000 bytes at 100 Mbps with zero latency arrive 100 ms later
        let spec = ChainSpec::uniform(2, 100.0, 0.0, 0.0);
        let mut sim = ChainSim::new(spec, 1).unwrap();
        let rec = sim
            .send(NodeId(0), NodeId(1), 1_250_000, SimTime::from_ms(5.0))
            .unwrap();
        match rec.outcome {
            SendOutcome::Delivered { at } => assert_eq!(at, SimTime::from_ms(105.0)),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn self_send_is_degenerate_delivery() {
        let spec = ChainSpec::uniform(3, 100.0, 0.0, 0.0);
        let mut sim = ChainSim::new(spec, 1).unwrap();
        let rec = sim.send(NodeId(1), NodeId(1), 100, SimTime(77)).unwrap();
        assert_eq!(rec.outcome, SendOutcome::Delivered { at: SimTime(77) });
    }

    #[test]
    fn ten_hop_delivery_matches_survival_product() {
        let spec = ChainSpec::uniform(11, 1000.0, 0.1, 0.0);
        let mut sim = ChainSim::new(spec, 0xC0FFEE).unwrap();
        let trials = 100_000;
        let mut delivered = 0;
        for i in 0..trials {
            let rec = sim
                .send(NodeId(0), NodeId(10), 100, SimTime(i as u64))
                .unwrap();
            if matches!(rec.outcome, SendOutcome::Delivered { .. }) {
                delivered += 1;
            }
        }
        let observed = delivered as f64 / trials as f64;
        let expected = 0.9f64.powi(10);
        assert!(
            (observed - expected).abs() < 0.01,
            "observed {observed}, expected {expected}"
        );
    }

    #[test]
    fn per_link_loss_within_binomial_bounds() {
        let loss = 0.08;
        let spec = ChainSpec::uniform(2, 1000.0, loss, 0.0);
        let mut sim = ChainSim::new(spec, 42).unwrap();
        let trials = 100_000u32;
        let mut dropped = 0;
        for i in 0..trials {
            let rec = sim.send(NodeId(0), NodeId(1), 64, SimTime(i as u64)).unwrap();
            if matches!(rec.outcome, SendOutcome::DroppedAtHop { .. }) {
                dropped += 1;
            }
        }
        let observed = dropped as f64 / trials as f64;
        let sigma = (loss * (1.0 - loss) / trials as f64).sqrt();
        assert!(
            (observed - loss).abs() <= 3.0 * sigma,
            "observed {observed}, expected {loss} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn down_link_without_recovery_is_unreachable() {
        let mut spec = ChainSpec::uniform(10, 100.0, 0.0, 0.0);
        spec.links.get_mut(&(4, 5)).unwrap().status = LinkStatus::Down;
        spec.links.get_mut(&(5, 4)).unwrap().status = LinkStatus::Down;
        let mut sim = ChainSim::new(spec, 1).unwrap();
        let err = sim.send(NodeId(0), NodeId(9), 100, SimTime::ZERO).unwrap_err();
        assert_eq!(
            err,
            NetsimError::Unreachable { src: NodeId(0), dst: NodeId(9) }
        );
    }

    #[test]
    fn failed_interior_link_recovers_through_skip() {
        let spec = ChainSpec::uniform(10, 100.0, 0.0, 0.0).with_skip(SkipLinkParams {
            bandwidth_mbps: 50.0,
            loss_prob: 0.0,
            latency_ms: 0.0,
        });
        let mut sim = ChainSim::new(spec, 1).unwrap();
        let route = sim.fail_link(NodeId(4), NodeId(5)).unwrap();
        assert_eq!(route.next_hop(NodeId(4), NodeId(9)), Some(NodeId(6)));
        // end-to-end connectivity preserved
        let rec = sim.send(NodeId(0), NodeId(9), 1000, SimTime::ZERO).unwrap();
        assert!(matches!(rec.outcome, SendOutcome::Delivered { .. }));
        // the bypassed node stays reachable the long way around
        let rec = sim.send(NodeId(0), NodeId(5), 1000, SimTime::ZERO).unwrap();
        assert!(matches!(rec.outcome, SendOutcome::Delivered { .. }));
    }

    #[test]
    fn failed_last_link_partitions() {
        let spec = ChainSpec::uniform(4, 100.0, 0.0, 0.0).with_skip(SkipLinkParams {
            bandwidth_mbps: 50.0,
            loss_prob: 0.0,
            latency_ms: 0.0,
        });
        let mut sim = ChainSim::new(spec, 1).unwrap();
        // no node past index 3 exists, and recovery from the left needs one
        let err = sim.fail_link(NodeId(2), NodeId(3)).unwrap_err();
        assert!(matches!(err, NetsimError::Partition { .. }));
    }

    #[test]
    fn identical_seeds_replay_identical_event_logs() {
        let make = || {
            let spec = ChainSpec::uniform(6, 80.0, 0.15, 0.3);
            let mut sim = ChainSim::new(spec, 99).unwrap();
            sim.enable_trace();
            for i in 0..200 {
                let _ = sim.send(NodeId(0), NodeId(5), 512, SimTime(i * 10));
            }
            sim.take_trace()
                .iter()
                .map(SimEvent::to_line)
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn event_times_are_nondecreasing_along_a_path() {
        let spec = ChainSpec::uniform(5, 10.0, 0.0, 1.0);
        let mut sim = ChainSim::new(spec, 7).unwrap();
        sim.enable_trace();
        let _ = sim.send(NodeId(0), NodeId(4), 1000, SimTime::ZERO);
        let trace = sim.take_trace();
        for pair in trace.windows(2) {
            assert!(pair[0].time <= pair[1].time);
        }
    }
}
