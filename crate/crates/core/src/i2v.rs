//! Passive downlink broadcast: per-node channel assignment, rate selection
//! from installation-phase measurements, and the vehicle-side channel
//! switching timeline.
//!
//! Vehicles never associate. They learn the cluster's channel assignments
//! from a control-channel beacon, then retune while driving using a
//! location rule: listen to the nearest in-range node. Every retune costs a
//! short deaf period; the reassociation baseline is the same computation with
//! a much larger cost.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Non-overlapping channels available in the band, one of which is reserved
/// for control traffic.
pub const CHANNEL_COUNT: u8 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum I2vError {
    #[error("no measurements for road environment '{0}'")]
    UnknownEnvironment(String),
    #[error("invalid measurement table: {0}")]
    BadTable(String),
    #[error("cluster of {nodes} nodes cannot get distinct channels ({usable} usable)")]
    ClusterTooLarge { nodes: usize, usable: usize },
    #[error("node {0} has no free channel left")]
    OverConstrained(usize),
    #[error("session on node {node} uses channel {session} but the plan says {plan}")]
    PlanMismatch { node: usize, session: u8, plan: u8 },
    #[error("invalid vehicle trace: {0}")]
    BadTrace(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// One candidate operating point: a PHY rate and the packet loss measured for
/// it during installation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsCandidate {
    pub phy_rate_mbps: f64,
    pub measured_loss: f64,
}

impl McsCandidate {
    pub fn expected_goodput(&self) -> f64 {
        self.phy_rate_mbps * (1.0 - self.measured_loss)
    }
}

/// Measured candidates per road-environment label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    pub environments: BTreeMap<String, Vec<McsCandidate>>,
}

impl McsTable {
    pub fn validate(&self) -> Result<(), I2vError> {
        for (env, candidates) in &self.environments {
            if candidates.is_empty() {
                return Err(I2vError::BadTable(format!("environment '{env}' is empty")));
            }
            for pair in candidates.windows(2) {
                if pair[1].phy_rate_mbps <= pair[0].phy_rate_mbps {
                    return Err(I2vError::BadTable(format!(
                        "environment '{env}': rates must be strictly increasing"
                    )));
                }
            }
            for c in candidates {
                if !(0.0..=1.0).contains(&c.measured_loss) {
                    return Err(I2vError::BadTable(format!(
                        "environment '{env}': loss {} outside [0, 1]",
                        c.measured_loss
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pick the rate with the best expected goodput; ties go to the lower rate.
pub fn select_mcs(table: &McsTable, environment: &str) -> Result<McsCandidate, I2vError> {
    let candidates = table
        .environments
        .get(environment)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| I2vError::UnknownEnvironment(environment.to_string()))?;
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.expected_goodput() > best.expected_goodput() {
            best = *c;
        }
    }
    Ok(best)
}

/// Channel per node within one cluster, all distinct and never the control
/// channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    pub assignments: BTreeMap<usize, u8>,
    pub control_channel: u8,
}

impl ChannelPlan {
    pub fn channel_of(&self, node: usize) -> Option<u8> {
        self.assignments.get(&node).copied()
    }
}

/// Assign distinct channels in input order, skipping the control channel and
/// each node's blocked set. Deterministic: every node takes the lowest free
/// channel it can use.
pub fn assign_channels(
    cluster: &[usize],
    blocked: &BTreeMap<usize, BTreeSet<u8>>,
    control_channel: u8,
) -> Result<ChannelPlan, I2vError> {
    let usable = CHANNEL_COUNT as usize - 1;
    if cluster.len() > usable {
        return Err(I2vError::ClusterTooLarge {
            nodes: cluster.len(),
            usable,
        });
    }
    let mut taken: BTreeSet<u8> = BTreeSet::new();
    taken.insert(control_channel);
    let mut assignments = BTreeMap::new();
    for &node in cluster {
        let node_blocked = blocked.get(&node);
        let chosen = (0..CHANNEL_COUNT).find(|ch| {
            !taken.contains(ch) && node_blocked.map_or(true, |b| !b.contains(ch))
        });
        let Some(ch) = chosen else {
            return Err(I2vError::OverConstrained(node));
        };
        taken.insert(ch);
        assignments.insert(node, ch);
    }
    Ok(ChannelPlan {
        assignments,
        control_channel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceWaypoint {
    pub time_ms: f64,
    pub position_m: f64,
}

/// Piecewise-linear vehicle motion along the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrace {
    pub waypoints: Vec<TraceWaypoint>,
}

impl VehicleTrace {
    /// Straight drive at constant speed.
    pub fn constant_speed(start_m: f64, end_m: f64, speed_kmh: f64) -> Result<Self, I2vError> {
        if speed_kmh <= 0.0 {
            return Err(I2vError::BadParameter("speed must be positive".into()));
        }
        let meters_per_ms = speed_kmh / 3.6 / 1000.0;
        let duration_ms = (end_m - start_m).abs() / meters_per_ms;
        Ok(Self {
            waypoints: vec![
                TraceWaypoint { time_ms: 0.0, position_m: start_m },
                TraceWaypoint { time_ms: duration_ms, position_m: end_m },
            ],
        })
    }

    pub fn validate(&self) -> Result<(), I2vError> {
        if self.waypoints.len() < 2 {
            return Err(I2vError::BadTrace("need at least two waypoints".into()));
        }
        for pair in self.waypoints.windows(2) {
            if pair[1].time_ms <= pair[0].time_ms {
                return Err(I2vError::BadTrace("times must strictly increase".into()));
            }
        }
        let ascending = self.waypoints.last().unwrap().position_m
            >= self.waypoints.first().unwrap().position_m;
        for pair in self.waypoints.windows(2) {
            let step_ok = if ascending {
                pair[1].position_m >= pair[0].position_m
            } else {
                pair[1].position_m <= pair[0].position_m
            };
            if !step_ok {
                return Err(I2vError::BadTrace("positions must be monotone".into()));
            }
        }
        Ok(())
    }

    pub fn start_ms(&self) -> f64 {
        self.waypoints.first().map_or(0.0, |w| w.time_ms)
    }

    pub fn end_ms(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.time_ms)
    }

    pub fn position_at(&self, t_ms: f64) -> f64 {
        let first = self.waypoints.first().unwrap();
        let last = self.waypoints.last().unwrap();
        if t_ms <= first.time_ms {
            return first.position_m;
        }
        if t_ms >= last.time_ms {
            return last.position_m;
        }
        for pair in self.waypoints.windows(2) {
            if t_ms <= pair[1].time_ms {
                let f = (t_ms - pair[0].time_ms) / (pair[1].time_ms - pair[0].time_ms);
                return pair[0].position_m + f * (pair[1].position_m - pair[0].position_m);
            }
        }
        last.position_m
    }
}

/// One node's downlink broadcast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastSession {
    pub node: usize,
    pub node_position_m: f64,
    pub channel: u8,
    /// Expected goodput of the configured rate.
    pub goodput_mbps: f64,
    /// Application offered load.
    pub app_rate_mbps: f64,
    pub range_m: f64,
    /// Per-packet loss of the configured rate.
    pub packet_loss: f64,
}

impl BroadcastSession {
    /// What a tuned, in-range vehicle actually collects.
    pub fn delivery_rate_mbps(&self) -> f64 {
        self.goodput_mbps.min(self.app_rate_mbps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams {
    /// Deaf time per retune.
    pub switch_cost_ms: f64,
    /// Wait for one control-channel beacon when entering coverage.
    pub beacon_period_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    Receiving,
    Deaf,
    OutOfRange,
}

impl IntervalKind {
    pub fn label(self) -> &'static str {
        match self {
            IntervalKind::Receiving => "receiving",
            IntervalKind::Deaf => "deaf",
            IntervalKind::OutOfRange => "out_of_range",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionInterval {
    pub start_ms: f64,
    pub end_ms: f64,
    pub node: Option<usize>,
    pub kind: IntervalKind,
    pub mbits: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReceptionTimeline {
    pub intervals: Vec<ReceptionInterval>,
    /// Retune instants, excluding the first tune after entering coverage.
    pub switches: Vec<f64>,
    /// Switch deafness over total drive time.
    pub switch_overhead_fraction: f64,
    pub beacon_wait_ms: f64,
    pub total_mbits: f64,
    pub duration_ms: f64,
}

impl ReceptionTimeline {
    /// Delimiter-separated export, one row per interval.
    pub fn to_rows(&self) -> Vec<String> {
        self.intervals
            .iter()
            .map(|iv| {
                format!(
                    "{:.3},{:.3},{},{},{:.6}",
                    iv.start_ms,
                    iv.end_ms,
                    iv.node.map_or_else(|| "-".to_string(), |n| n.to_string()),
                    iv.kind.label(),
                    iv.mbits
                )
            })
            .collect()
    }
}

/// Vehicle-side drive simulation under the location-based tuning rule.
pub fn simulate_drive(
    trace: &VehicleTrace,
    plan: &ChannelPlan,
    sessions: &[BroadcastSession],
    params: &DriveParams,
) -> Result<ReceptionTimeline, I2vError> {
    trace.validate()?;
    for s in sessions {
        match plan.channel_of(s.node) {
            Some(ch) if ch == s.channel => {}
            Some(ch) => {
                return Err(I2vError::PlanMismatch {
                    node: s.node,
                    session: s.channel,
                    plan: ch,
                })
            }
            None => {
                return Err(I2vError::PlanMismatch {
                    node: s.node,
                    session: s.channel,
                    plan: plan.control_channel,
                })
            }
        }
    }

    let start = trace.start_ms();
    let end = trace.end_ms();
    let duration = end - start;

    // breakpoints: waypoints plus every range edge and every midpoint
    // crossing between session positions
    let mut cuts: Vec<f64> = trace.waypoints.iter().map(|w| w.time_ms).collect();
    for pair in trace.waypoints.windows(2) {
        let (t0, p0) = (pair[0].time_ms, pair[0].position_m);
        let (t1, p1) = (pair[1].time_ms, pair[1].position_m);
        if (p1 - p0).abs() < f64::EPSILON {
            continue;
        }
        let time_of = |pos: f64| t0 + (pos - p0) / (p1 - p0) * (t1 - t0);
        let mut push_pos = |pos: f64| {
            let t = time_of(pos);
            if t > t0 + 1e-9 && t < t1 - 1e-9 {
                cuts.push(t);
            }
        };
        for s in sessions {
            push_pos(s.node_position_m - s.range_m);
            push_pos(s.node_position_m + s.range_m);
        }
        for (i, a) in sessions.iter().enumerate() {
            for b in sessions.iter().skip(i + 1) {
                push_pos((a.node_position_m + b.node_position_m) / 2.0);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    // pass 1: chosen session per sub-interval
    let mut segments: Vec<(f64, f64, Option<usize>)> = Vec::new();
    for pair in cuts.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        let pos = trace.position_at((t0 + t1) / 2.0);
        let chosen = sessions
            .iter()
            .enumerate()
            .filter(|(_, s)| (pos - s.node_position_m).abs() <= s.range_m)
            .min_by(|(_, a), (_, b)| {
                let da = (pos - a.node_position_m).abs();
                let db = (pos - b.node_position_m).abs();
                da.total_cmp(&db).then(a.node.cmp(&b.node))
            })
            .map(|(i, _)| i);
        segments.push((t0, t1, chosen));
    }

    // pass 2: tune events and their deaf windows
    let mut deaf_windows: Vec<(f64, f64, bool)> = Vec::new(); // (start, end, is_beacon)
    let mut switches = Vec::new();
    let mut beacon_wait_ms = 0.0;
    let mut current: Option<usize> = None;
    for &(t0, _, chosen) in &segments {
        if chosen == current {
            continue;
        }
        if let Some(_next) = chosen {
            if current.is_none() {
                // entering coverage: wait for one beacon before the first tune
                if params.beacon_period_ms > 0.0 {
                    deaf_windows.push((t0, t0 + params.beacon_period_ms, true));
                    beacon_wait_ms += params.beacon_period_ms;
                }
            } else {
                // retune between nodes
                switches.push(t0);
                if params.switch_cost_ms > 0.0 {
                    deaf_windows.push((t0, t0 + params.switch_cost_ms, false));
                }
            }
        }
        current = chosen;
    }

    let deaf_at = |t: f64| -> Option<bool> {
        // later windows supersede earlier ones
        deaf_windows
            .iter()
            .rev()
            .find(|&&(s, e, _)| t >= s - 1e-9 && t < e - 1e-9)
            .map(|&(_, _, is_beacon)| is_beacon)
    };

    // pass 3: merge deaf windows into the segment timeline
    let mut all_cuts: Vec<f64> = cuts.clone();
    for &(s, e, _) in &deaf_windows {
        all_cuts.push(s);
        all_cuts.push(e);
    }
    all_cuts.retain(|&t| t >= start - 1e-9 && t <= end + 1e-9);
    all_cuts.sort_by(f64::total_cmp);
    all_cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let chosen_at = |t: f64| -> Option<usize> {
        segments
            .iter()
            .find(|&&(s, e, _)| t >= s - 1e-9 && t < e + 1e-9)
            .and_then(|&(_, _, c)| c)
    };

    let mut intervals = Vec::new();
    let mut total_mbits = 0.0;
    let mut switch_deaf_ms = 0.0;
    for pair in all_cuts.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        if t1 - t0 < 1e-9 {
            continue;
        }
        let mid = (t0 + t1) / 2.0;
        let chosen = chosen_at(mid);
        let (kind, node, mbits) = match chosen {
            None => (IntervalKind::OutOfRange, None, 0.0),
            Some(idx) => {
                let s = &sessions[idx];
                match deaf_at(mid) {
                    Some(is_beacon) => {
                        if !is_beacon {
                            switch_deaf_ms += t1 - t0;
                        }
                        (IntervalKind::Deaf, Some(s.node), 0.0)
                    }
                    None => {
                        let mbits = s.delivery_rate_mbps() * (t1 - t0) / 1000.0;
                        (IntervalKind::Receiving, Some(s.node), mbits)
                    }
                }
            }
        };
        total_mbits += mbits;
        intervals.push(ReceptionInterval {
            start_ms: t0,
            end_ms: t1,
            node,
            kind,
            mbits,
        });
    }

    Ok(ReceptionTimeline {
        intervals,
        switches,
        switch_overhead_fraction: if duration > 0.0 {
            switch_deaf_ms / duration
        } else {
            0.0
        },
        beacon_wait_ms,
        total_mbits,
        duration_ms: duration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BroadcastMode {
    /// Injector-sniffer downlink at the measured rate; no per-vehicle state.
    Passive,
    /// Airtime divided across associated vehicles.
    Unicast,
    /// Legacy broadcast pinned at the basic rate.
    PlainBroadcast,
}

/// Per-vehicle throughput for a cluster of sessions under one of the serving
/// modes. Passive and plain broadcast do not depend on the vehicle count.
pub fn broadcast_throughput(
    sessions: &[BroadcastSession],
    vehicles: usize,
    mode: BroadcastMode,
    basic_rate_mbps: f64,
) -> Result<f64, I2vError> {
    if vehicles == 0 {
        return Err(I2vError::BadParameter("need at least one vehicle".into()));
    }
    if sessions.is_empty() {
        return Err(I2vError::BadParameter("need at least one session".into()));
    }
    let mean_goodput =
        sessions.iter().map(|s| s.goodput_mbps).sum::<f64>() / sessions.len() as f64;
    Ok(match mode {
        BroadcastMode::Passive => mean_goodput,
        BroadcastMode::Unicast => mean_goodput / vehicles as f64,
        BroadcastMode::PlainBroadcast => basic_rate_mbps,
    })
}
