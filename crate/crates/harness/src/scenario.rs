//! Scenario files: a versioned TOML format with named sections for nodes,
//! links, tasks, measurement tables, vehicles, coding parameters, policies,
//! and seeds. Loading validates referential integrity and computes a digest
//! of the effective configuration for reproducibility.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use roadsim_core::i2v::{McsCandidate, McsTable};

/// Format version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("scenario is invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub chain: Option<ChainDecl>,
    #[serde(default)]
    pub nodes: Vec<NodeDecl>,
    #[serde(default)]
    pub links: Vec<LinkDecl>,
    #[serde(default)]
    pub skip_link: Option<SkipDecl>,
    #[serde(default)]
    pub tasks: Vec<TaskDecl>,
    #[serde(default)]
    pub mcs: BTreeMap<String, McsEnvDecl>,
    #[serde(default)]
    pub vehicles: Vec<VehicleDecl>,
    #[serde(default)]
    pub i2v: I2vDecl,
    #[serde(default)]
    pub coding: CodingDecl,
    #[serde(default)]
    pub sim: SimDecl,
    #[serde(default)]
    pub policy: PolicyDecl,
    pub seeds: SeedsDecl,
    #[serde(default)]
    pub transfer_bench: Option<TransferBenchDecl>,
    #[serde(default)]
    pub ecc_bench: Option<EccBenchDecl>,
    #[serde(default)]
    pub deadline_derivation: Option<DeadlineDerivationDecl>,
}

/// Shorthand that generates a uniform chain instead of explicit node and
/// link lists.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChainDecl {
    pub nodes: usize,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    pub bandwidth_mbps: f64,
    pub loss_prob: f64,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
    #[serde(default = "default_range")]
    pub sensing_range_m: f64,
    #[serde(default = "default_environment")]
    pub environment: String,
    #[serde(default = "default_first_id")]
    pub first_id: usize,
}

fn default_spacing() -> f64 {
    35.0
}
fn default_latency() -> f64 {
    0.5
}
fn default_range() -> f64 {
    50.0
}
fn default_environment() -> String {
    "campus".to_string()
}
fn default_first_id() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeDecl {
    pub id: usize,
    pub position_m: f64,
    #[serde(default = "default_range")]
    pub sensing_range_m: f64,
    #[serde(default = "default_environment")]
    pub environment: String,
    #[serde(default)]
    pub blocked_channels: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkDecl {
    pub src: usize,
    pub dst: usize,
    pub bandwidth_mbps: f64,
    pub loss_prob: f64,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
    /// Mirror to dst -> src unless an explicit reverse entry exists.
    #[serde(default = "default_true")]
    pub symmetric: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SkipDecl {
    pub bandwidth_mbps: f64,
    pub loss_prob: f64,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskDecl {
    pub name: String,
    pub source_node: usize,
    pub priority_rank: usize,
    pub period_ms: f64,
    pub deadline_ms: f64,
    pub input_mbits: f64,
    pub result_mbits: f64,
    pub sensor_ms: f64,
    pub pre_ms: f64,
    pub inference_ms: f64,
    pub post_ms: f64,
    pub lite_inference_ms: f64,
    pub accuracy: f64,
    pub lite_accuracy: f64,
}

impl TaskDecl {
    pub fn total_exec_ms(&self) -> f64 {
        self.sensor_ms + self.pre_ms + self.inference_ms + self.post_ms
    }

    pub fn lite_total_exec_ms(&self) -> f64 {
        self.sensor_ms + self.pre_ms + self.lite_inference_ms + self.post_ms
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McsEnvDecl {
    pub candidates: Vec<McsCandidateDecl>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct McsCandidateDecl {
    pub rate_mbps: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VehicleDecl {
    /// Pairs of (time_ms, position_m).
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct I2vDecl {
    #[serde(default)]
    pub control_channel: u8,
    #[serde(default = "default_beacon")]
    pub beacon_period_ms: f64,
    #[serde(default = "default_switch_cost")]
    pub switch_cost_ms: f64,
    #[serde(default = "default_reassociation")]
    pub reassociation_cost_ms: f64,
    #[serde(default = "default_basic_rate")]
    pub basic_broadcast_rate_mbps: f64,
    #[serde(default = "default_app_rate")]
    pub app_rate_mbps: f64,
    /// Fixed receivers parked in range of every node.
    #[serde(default)]
    pub pseudo_vehicles: usize,
}

impl Default for I2vDecl {
    fn default() -> Self {
        Self {
            control_channel: 0,
            beacon_period_ms: default_beacon(),
            switch_cost_ms: default_switch_cost(),
            reassociation_cost_ms: default_reassociation(),
            basic_broadcast_rate_mbps: default_basic_rate(),
            app_rate_mbps: default_app_rate(),
            pseudo_vehicles: 0,
        }
    }
}

fn default_beacon() -> f64 {
    100.0
}
fn default_switch_cost() -> f64 {
    5.0
}
fn default_reassociation() -> f64 {
    500.0
}
fn default_basic_rate() -> f64 {
    6.0
}
fn default_app_rate() -> f64 {
    30.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct CodingDecl {
    #[serde(default)]
    pub bats: BatsDecl,
    #[serde(default)]
    pub ecc: EccDecl,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatsDecl {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_batch_size")]
    pub recode_output_count: usize,
    #[serde(default = "default_packet_len")]
    pub packet_len: usize,
    #[serde(default = "default_degree_mode")]
    pub degree_mode: DegreeMode,
    #[serde(default = "default_soliton_c")]
    pub soliton_c: f64,
    #[serde(default = "default_soliton_delta")]
    pub soliton_delta: f64,
    #[serde(default = "default_degree_cap")]
    pub degree_cap: usize,
    #[serde(default = "default_budget_factor")]
    pub batch_budget_factor: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DegreeMode {
    /// Robust soliton over the block size, capped.
    Plain,
    /// Robust soliton over batch slots, scaled by the batch size.
    Batched,
}

impl Default for BatsDecl {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            recode_output_count: default_batch_size(),
            packet_len: default_packet_len(),
            degree_mode: default_degree_mode(),
            soliton_c: default_soliton_c(),
            soliton_delta: default_soliton_delta(),
            degree_cap: default_degree_cap(),
            batch_budget_factor: default_budget_factor(),
        }
    }
}

fn default_batch_size() -> usize {
    8
}
fn default_packet_len() -> usize {
    1500
}
fn default_degree_mode() -> DegreeMode {
    DegreeMode::Batched
}
fn default_soliton_c() -> f64 {
    0.1
}
fn default_soliton_delta() -> f64 {
    0.5
}
fn default_degree_cap() -> usize {
    64
}
fn default_budget_factor() -> f64 {
    6.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EccDecl {
    #[serde(default = "default_block_packets")]
    pub block_packets: usize,
    #[serde(default = "default_redundancy")]
    pub redundancy_ratio: f64,
    #[serde(default = "default_ecc_packet_len")]
    pub packet_len: usize,
}

impl Default for EccDecl {
    fn default() -> Self {
        Self {
            block_packets: default_block_packets(),
            redundancy_ratio: default_redundancy(),
            packet_len: default_ecc_packet_len(),
        }
    }
}

fn default_block_packets() -> usize {
    32
}
fn default_redundancy() -> f64 {
    0.5
}
fn default_ecc_packet_len() -> usize {
    1200
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimDecl {
    #[serde(default = "default_horizon")]
    pub horizon_ms: f64,
    #[serde(default = "default_header_bytes")]
    pub header_bytes: usize,
    #[serde(default = "default_arq_window")]
    pub arq_window: usize,
    #[serde(default = "default_rto_factor")]
    pub rto_factor: f64,
    #[serde(default)]
    pub blocking_sigma: f64,
    #[serde(default = "default_cap")]
    pub utilization_cap: f64,
}

impl Default for SimDecl {
    fn default() -> Self {
        Self {
            horizon_ms: default_horizon(),
            header_bytes: default_header_bytes(),
            arq_window: default_arq_window(),
            rto_factor: default_rto_factor(),
            blocking_sigma: 0.0,
            utilization_cap: default_cap(),
        }
    }
}

fn default_horizon() -> f64 {
    60_000.0
}
fn default_header_bytes() -> usize {
    32
}
fn default_arq_window() -> usize {
    32
}
fn default_rto_factor() -> f64 {
    1.5
}
fn default_cap() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyDecl {
    #[serde(default = "default_queue")]
    pub queue: QueueDecl,
    #[serde(default = "default_true")]
    pub lite_enabled: bool,
    #[serde(default = "default_dispatch_mode")]
    pub dispatch: DispatchModeDecl,
}

impl Default for PolicyDecl {
    fn default() -> Self {
        Self {
            queue: default_queue(),
            lite_enabled: true,
            dispatch: default_dispatch_mode(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum QueueDecl {
    LatestDeadline,
    Edf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DispatchModeDecl {
    /// Cluster-level dispatch with per-node opportunistic scheduling.
    Cluster,
    /// Every task runs on its source node.
    Local,
}

fn default_queue() -> QueueDecl {
    QueueDecl::LatestDeadline
}
fn default_dispatch_mode() -> DispatchModeDecl {
    DispatchModeDecl::Cluster
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct SeedsDecl {
    pub master: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransferBenchDecl {
    /// Defaults to the first node of the chain.
    #[serde(default)]
    pub src: Option<usize>,
    /// Defaults to the last node of the chain.
    #[serde(default)]
    pub dst: Option<usize>,
    #[serde(default = "default_bench_packets")]
    pub block_packets: usize,
    #[serde(default = "default_codings")]
    pub codings: Vec<CodingName>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CodingName {
    None,
    Bats,
    Arq,
}

fn default_bench_packets() -> usize {
    256
}
fn default_codings() -> Vec<CodingName> {
    vec![CodingName::Bats, CodingName::Arq]
}
fn default_repeats() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EccBenchDecl {
    pub points: Vec<EccPointDecl>,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EccPointDecl {
    pub app_rate_mbps: f64,
    pub erasure: f64,
}

fn default_blocks() -> usize {
    500
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DeadlineDerivationDecl {
    pub sensing_range_m: f64,
    pub coverage_fraction: f64,
    pub speed_kmh: f64,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let mut config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.expand_chain();
        config.validate()?;
        Ok(config)
    }

    /// Materialize the `[chain]` shorthand into explicit nodes and links.
    fn expand_chain(&mut self) {
        let Some(chain) = &self.chain else { return };
        if !self.nodes.is_empty() || !self.links.is_empty() {
            return; // validation will reject the mix
        }
        for i in 0..chain.nodes {
            self.nodes.push(NodeDecl {
                id: chain.first_id + i,
                position_m: i as f64 * chain.spacing_m,
                sensing_range_m: chain.sensing_range_m,
                environment: chain.environment.clone(),
                blocked_channels: Vec::new(),
            });
        }
        for i in 0..chain.nodes.saturating_sub(1) {
            self.links.push(LinkDecl {
                src: chain.first_id + i,
                dst: chain.first_id + i + 1,
                bandwidth_mbps: chain.bandwidth_mbps,
                loss_prob: chain.loss_prob,
                latency_ms: chain.latency_ms,
                symmetric: true,
            });
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        let mut err = |msg: String| errors.push(msg);

        if self.version != SCHEMA_VERSION {
            err(format!(
                "version: expected {SCHEMA_VERSION}, found {}",
                self.version
            ));
        }
        if self.chain.is_some() && self.links.iter().any(|l| l.symmetric != default_true()) {
            // unreachable with expand_chain, kept for clarity of intent
        }
        if self.nodes.is_empty() {
            err("nodes: empty node list".to_string());
        }
        let mut ids = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if ids.insert(node.id, i).is_some() {
                err(format!("nodes[{i}]: duplicate node id {}", node.id));
            }
            if i > 0 && node.position_m <= self.nodes[i - 1].position_m {
                err(format!(
                    "nodes[{i}] (id {}): positions must strictly increase along the chain",
                    node.id
                ));
            }
            for &ch in &node.blocked_channels {
                if ch >= roadsim_core::i2v::CHANNEL_COUNT {
                    err(format!("nodes[{i}] (id {}): blocked channel {ch} out of range", node.id));
                }
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            for end in [link.src, link.dst] {
                if !ids.contains_key(&end) {
                    err(format!("links[{i}]: node {end} not declared"));
                }
            }
            if ids.contains_key(&link.src) && ids.contains_key(&link.dst) {
                let (a, b) = (ids[&link.src], ids[&link.dst]);
                if a.abs_diff(b) != 1 {
                    err(format!(
                        "links[{i}]: {} -> {} is not between chain neighbors",
                        link.src, link.dst
                    ));
                }
            }
            if !(0.0..=1.0).contains(&link.loss_prob) {
                err(format!("links[{i}]: loss_prob {} outside [0, 1]", link.loss_prob));
            }
            if link.bandwidth_mbps <= 0.0 {
                err(format!("links[{i}]: bandwidth must be positive"));
            }
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if !ids.contains_key(&task.source_node) {
                err(format!(
                    "tasks[{i}] ({}): source node {} not declared",
                    task.name, task.source_node
                ));
            }
            if task.period_ms <= 0.0 {
                err(format!("tasks[{i}] ({}): period must be positive", task.name));
            }
            if task.deadline_ms < task.period_ms {
                err(format!(
                    "tasks[{i}] ({}): deadline {} below period {}",
                    task.name, task.deadline_ms, task.period_ms
                ));
            }
            if task.lite_inference_ms > task.inference_ms {
                err(format!(
                    "tasks[{i}] ({}): lite inference exceeds the original",
                    task.name
                ));
            }
            if task.lite_accuracy > task.accuracy {
                err(format!(
                    "tasks[{i}] ({}): lite accuracy exceeds the original",
                    task.name
                ));
            }
            for (label, v) in [
                ("sensor_ms", task.sensor_ms),
                ("pre_ms", task.pre_ms),
                ("inference_ms", task.inference_ms),
                ("post_ms", task.post_ms),
                ("lite_inference_ms", task.lite_inference_ms),
            ] {
                if v <= 0.0 {
                    err(format!("tasks[{i}] ({}): {label} must be positive", task.name));
                }
            }
        }
        // every environment a node names must have measurements when the
        // downlink is in play
        let downlink_used = !self.tasks.is_empty() || !self.vehicles.is_empty();
        if downlink_used {
            for (i, node) in self.nodes.iter().enumerate() {
                if !self.mcs.contains_key(&node.environment) {
                    err(format!(
                        "nodes[{i}] (id {}): no mcs table for environment '{}'",
                        node.id, node.environment
                    ));
                }
            }
        }
        for (env, table) in &self.mcs {
            if table.candidates.is_empty() {
                err(format!("mcs.{env}: candidate list is empty"));
            }
            for pair in table.candidates.windows(2) {
                if pair[1].rate_mbps <= pair[0].rate_mbps {
                    err(format!("mcs.{env}: rates must strictly increase"));
                }
            }
            for c in &table.candidates {
                if !(0.0..=1.0).contains(&c.loss) {
                    err(format!("mcs.{env}: loss {} outside [0, 1]", c.loss));
                }
            }
        }
        for (i, vehicle) in self.vehicles.iter().enumerate() {
            if vehicle.waypoints.len() < 2 {
                err(format!("vehicles[{i}]: need at least two waypoints"));
            }
            for pair in vehicle.waypoints.windows(2) {
                if pair[1][0] <= pair[0][0] {
                    err(format!("vehicles[{i}]: waypoint times must strictly increase"));
                }
            }
        }
        if self.coding.bats.batch_size == 0 {
            err("coding.bats.batch_size: must be at least 1".to_string());
        }
        if self.coding.bats.recode_output_count == 0 {
            err("coding.bats.recode_output_count: must be at least 1".to_string());
        }
        if self.coding.ecc.block_packets == 0 {
            err("coding.ecc.block_packets: must be at least 1".to_string());
        }
        if self.coding.ecc.redundancy_ratio < 0.0 {
            err("coding.ecc.redundancy_ratio: must be nonnegative".to_string());
        }
        if let Some(bench) = &self.transfer_bench {
            for end in [bench.src, bench.dst] {
                if !ids.contains_key(&end) {
                    err(format!("transfer_bench: node {end} not declared"));
                }
            }
            if bench.src == bench.dst {
                err("transfer_bench: src and dst must differ".to_string());
            }
        }
        if let Some(bench) = &self.ecc_bench {
            for (i, p) in bench.points.iter().enumerate() {
                if !(0.0..=1.0).contains(&p.erasure) {
                    err(format!("ecc_bench.points[{i}]: erasure {} outside [0, 1]", p.erasure));
                }
            }
        }
        if let Some(d) = &self.deadline_derivation {
            if d.speed_kmh <= 0.0 {
                err("deadline_derivation: speed must be positive".to_string());
            }
            if !(0.0 < d.coverage_fraction && d.coverage_fraction <= 1.0) {
                err("deadline_derivation: coverage fraction must be in (0, 1]".to_string());
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(errors))
        }
    }

    /// Digest of the effective configuration after chain expansion and
    /// defaulting. Two configs with one digest run identically under one
    /// seed.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mcs_table(&self) -> McsTable {
        let mut table = McsTable::default();
        for (env, decl) in &self.mcs {
            table.environments.insert(
                env.clone(),
                decl.candidates
                    .iter()
                    .map(|c| McsCandidate {
                        phy_rate_mbps: c.rate_mbps,
                        measured_loss: c.loss,
                    })
                    .collect(),
            );
        }
        table
    }
}

/// Exact time budget for covering the tail of a sensing range, in
/// milliseconds: a vehicle at `speed_kmh` may travel the uncovered
/// `(1 - coverage_fraction)` share of `sensing_range_m` before the data
/// arrives.
pub fn derive_deadline_ms(
    sensing_range_m: f64,
    coverage_fraction: f64,
    speed_kmh: f64,
) -> Result<f64, ScenarioError> {
    if speed_kmh <= 0.0 {
        return Err(ScenarioError::Validation(vec![
            "derive_deadline: speed must be positive".to_string(),
        ]));
    }
    if !(0.0 < coverage_fraction && coverage_fraction <= 1.0) {
        return Err(ScenarioError::Validation(vec![
            "derive_deadline: coverage fraction must be in (0, 1]".to_string(),
        ]));
    }
    let budget_m = (1.0 - coverage_fraction) * sensing_range_m;
    let speed_m_per_s = speed_kmh / 3.6;
    Ok(budget_m / speed_m_per_s * 1000.0)
}

/// Deadlines are configured in 50 ms tiers; this is the tier a derived
/// budget conventionally rounds to.
pub fn deadline_tier_ms(exact_ms: f64) -> f64 {
    (exact_ms / 50.0).round() * 50.0
}
