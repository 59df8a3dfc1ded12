//! One full experiment: dispatch the task pool, schedule every node over the
//! horizon, move inputs across the chain under batched coding, deliver
//! results to in-range receivers over the erasure-coded downlink, and account
//! for every task instance exactly once.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use roadsim_core::bats::{BatsParams, DegreeDistribution, SourceBlock};
use roadsim_core::dispatch::{
    self, Assignment, DispatchProblem, ModelProfile, NodeRecord, TaskSpec,
};
use roadsim_core::ecc::{self, EccBlockParams};
use roadsim_core::i2v::{
    assign_channels, select_mcs, simulate_drive, BroadcastSession, ChannelPlan, DriveParams,
    I2vError, TraceWaypoint, VehicleTrace,
};
use roadsim_core::netsim::{
    ChainSim, ChainSpec, LinkState, LinkStatus, NetsimError, NodeId, SimTime, SkipLinkParams,
    TransferCoding, TransferParams,
};
use roadsim_core::sched::{
    self, Outcome, QueuePolicy, SchedPolicy, StageTimes, TaskProfile, VariantProfile, WorkloadTask,
};

use crate::scenario::{
    deadline_tier_ms, derive_deadline_ms, CodingName, DegreeMode, DispatchModeDecl, QueueDecl,
    ScenarioConfig,
};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("network model: {0}")]
    Netsim(#[from] NetsimError),
    #[error("dispatch: {0}")]
    Dispatch(#[from] dispatch::DispatchError),
    #[error("scheduler: {0}")]
    Sched(#[from] sched::SchedError),
    #[error("downlink: {0}")]
    I2v(#[from] I2vError),
    #[error("coding: {0}")]
    Coding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Compute,
    Transmit,
}

impl Leg {
    pub fn label(self) -> &'static str {
        match self {
            Leg::Compute => "compute",
            Leg::Transmit => "transmit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cause {
    Dropped,
    DeadlineExceeded,
    DeliveryMissed,
}

impl Cause {
    pub fn label(self) -> &'static str {
        match self {
            Cause::Dropped => "dropped",
            Cause::DeadlineExceeded => "deadline_exceeded",
            Cause::DeliveryMissed => "delivery_missed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssignmentRow {
    pub task: String,
    pub node: Option<usize>,
    pub e2e_ms: f64,
    pub weight: u64,
}

#[derive(Debug, Clone)]
pub struct NodeFailureRow {
    pub node: usize,
    pub launched: u64,
    pub failed: u64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TaskMetricRow {
    pub node: Option<usize>,
    pub task: String,
    pub released: u64,
    pub dropped: u64,
    pub exceeded: u64,
    pub drop_ratio: f64,
    pub exceed_ratio: f64,
    pub mean_e2e_ms: f64,
    pub mean_acc_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FailureRow {
    pub task: String,
    pub instance: u64,
    pub leg: Leg,
    pub cause: Cause,
}

#[derive(Debug, Clone)]
pub struct LinkThroughputRow {
    pub src: usize,
    pub dst: usize,
    pub bucket_s: u64,
    pub mbits: f64,
}

#[derive(Debug, Clone)]
pub struct TimelineRow {
    pub vehicle: usize,
    pub start_ms: f64,
    pub end_ms: f64,
    pub node: Option<usize>,
    pub kind: &'static str,
    pub mbits: f64,
}

#[derive(Debug, Clone)]
pub struct TransferBenchRow {
    pub coding: &'static str,
    pub repeat: usize,
    pub goodput_mbps: f64,
    pub elapsed_ms: f64,
    pub delivered_fraction: f64,
    pub batches_sent: usize,
}

#[derive(Debug, Clone)]
pub struct EccBenchRow {
    pub app_rate_mbps: f64,
    pub erasure: f64,
    pub pdr_with_ecc: f64,
    pub pdr_without_ecc: f64,
    pub block_decode_rate: f64,
}

#[derive(Debug, Clone)]
pub struct DeadlineRow {
    pub sensing_range_m: f64,
    pub coverage_fraction: f64,
    pub speed_kmh: f64,
    pub exact_ms: f64,
    /// Conventional 50 ms tier the exact figure rounds to.
    pub tier_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub assignment: Vec<AssignmentRow>,
    pub node_failures: Vec<NodeFailureRow>,
    pub task_metrics: Vec<TaskMetricRow>,
    pub failures: Vec<FailureRow>,
    pub link_throughput: Vec<LinkThroughputRow>,
    pub i2v_timelines: Vec<TimelineRow>,
    pub transfer_bench: Vec<TransferBenchRow>,
    pub ecc_bench: Vec<EccBenchRow>,
    pub deadline_note: Option<DeadlineRow>,
    pub events: Vec<String>,
    pub avg_failure_rate: f64,
    pub worst_failure_rate: f64,
}

/// Chain-index topology derived from the scenario's node list.
struct Topology {
    ids: Vec<usize>,
    index_of: BTreeMap<usize, usize>,
    positions: Vec<f64>,
    ranges: Vec<f64>,
    environments: Vec<String>,
}

impl Topology {
    fn build(config: &ScenarioConfig) -> Self {
        let ids: Vec<usize> = config.nodes.iter().map(|n| n.id).collect();
        let index_of = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self {
            ids,
            index_of,
            positions: config.nodes.iter().map(|n| n.position_m).collect(),
            ranges: config.nodes.iter().map(|n| n.sensing_range_m).collect(),
            environments: config.nodes.iter().map(|n| n.environment.clone()).collect(),
        }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

fn chain_spec(config: &ScenarioConfig, topo: &Topology, lossless: bool) -> ChainSpec {
    let mut links = BTreeMap::new();
    for link in &config.links {
        let s = topo.index_of[&link.src];
        let d = topo.index_of[&link.dst];
        let loss = if lossless { 0.0 } else { link.loss_prob };
        let state = LinkState {
            src: NodeId(s),
            dst: NodeId(d),
            loss_prob: loss,
            bandwidth_mbps: link.bandwidth_mbps,
            latency_ms: link.latency_ms,
            status: LinkStatus::Up,
        };
        links.insert((s, d), state.clone());
        if link.symmetric {
            links.entry((d, s)).or_insert(LinkState {
                src: NodeId(d),
                dst: NodeId(s),
                ..state
            });
        }
    }
    ChainSpec {
        nodes: topo.len(),
        links,
        skip: config.skip_link.map(|s| SkipLinkParams {
            bandwidth_mbps: s.bandwidth_mbps,
            loss_prob: if lossless { 0.0 } else { s.loss_prob },
            latency_ms: s.latency_ms,
        }),
        header_bytes: config.sim.header_bytes,
    }
}

fn bats_params(config: &ScenarioConfig, k: usize) -> Result<BatsParams, RunError> {
    let decl = &config.coding.bats;
    let distribution = match decl.degree_mode {
        DegreeMode::Plain => DegreeDistribution::robust_soliton(
            k,
            decl.soliton_c,
            decl.soliton_delta,
            k.min(decl.degree_cap),
        ),
        DegreeMode::Batched => DegreeDistribution::batched_robust_soliton(
            k,
            decl.batch_size,
            decl.soliton_c,
            decl.soliton_delta,
        ),
    }
    .map_err(|e| RunError::Coding(e.to_string()))?;
    Ok(BatsParams {
        batch_size: decl.batch_size,
        degree_distribution: distribution,
        recode_output_count: decl.recode_output_count,
    })
}

fn transfer_params(config: &ScenarioConfig, k: usize) -> Result<TransferParams, RunError> {
    let bats = bats_params(config, k)?;
    let budget = ((config.coding.bats.batch_budget_factor * k as f64
        / bats.batch_size as f64)
        .ceil() as usize)
        .max(8);
    Ok(TransferParams {
        packet_len: config.coding.bats.packet_len,
        bats,
        batch_budget: budget,
        arq_window: config.sim.arq_window,
        rto_factor: config.sim.rto_factor,
    })
}

fn probe_block(config: &ScenarioConfig, packets: usize, seed: u64) -> SourceBlock {
    let len = config.coding.bats.packet_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..packets * len).map(|_| rng.gen()).collect();
    SourceBlock::from_bytes(&data, len).expect("probe block is non-empty")
}

/// Effective chain rates between node pairs. The narrowest-link bandwidth is
/// scaled by the ratio of coded goodput on the real chain to coded goodput on
/// its lossless twin, so loss slows transfers down while lossless paths keep
/// the plain bandwidth model exactly.
struct RateModel {
    rates: BTreeMap<(usize, usize), f64>,
}

impl RateModel {
    fn new() -> Self {
        Self { rates: BTreeMap::new() }
    }

    #[allow(clippy::too_many_arguments)]
    fn rate(
        &mut self,
        src: usize,
        dst: usize,
        config: &ScenarioConfig,
        topo: &Topology,
        problem: &DispatchProblem,
        master: u64,
        events: &mut Vec<String>,
        trace: bool,
    ) -> Result<f64, RunError> {
        if src == dst {
            return Ok(f64::INFINITY);
        }
        if let Some(&r) = self.rates.get(&(src, dst)) {
            return Ok(r);
        }
        let Some(min_bw) = problem.path_min_bandwidth(src, dst) else {
            self.rates.insert((src, dst), 0.0);
            return Ok(0.0);
        };
        const PROBE_PACKETS: usize = 64;
        let params = transfer_params(config, PROBE_PACKETS)?;
        let block = probe_block(config, PROBE_PACKETS, derive_seed(master, "probe-block", &[]));
        let mut run_one = |lossless: bool, label: &str| -> Result<f64, RunError> {
            let spec = chain_spec(config, topo, lossless);
            let seed = derive_seed(master, label, &[src as u64, dst as u64]);
            let mut sim = ChainSim::new(spec, seed)?;
            if trace {
                sim.enable_trace();
            }
            let rec = sim.run_transfer(
                NodeId(src),
                NodeId(dst),
                &block,
                TransferCoding::Bats,
                &params,
                SimTime::ZERO,
            )?;
            if trace {
                for ev in sim.take_trace() {
                    events.push(format!("{label} {}->{} {}", topo.ids[src], topo.ids[dst], ev.to_line()));
                }
            }
            Ok(rec.goodput_mbps)
        };
        let actual = run_one(false, "transfer")?;
        let ideal = run_one(true, "transfer-ideal")?;
        let rate = if actual <= 0.0 || ideal <= 0.0 {
            0.0
        } else {
            min_bw * (actual / ideal).min(1.0)
        };
        self.rates.insert((src, dst), rate);
        Ok(rate)
    }
}

fn queue_policy(decl: QueueDecl) -> QueuePolicy {
    match decl {
        QueueDecl::LatestDeadline => QueuePolicy::LatestDeadline,
        QueueDecl::Edf => QueuePolicy::EarliestDeadline,
    }
}

fn task_profile(decl: &crate::scenario::TaskDecl) -> TaskProfile {
    TaskProfile {
        original: VariantProfile {
            stages: StageTimes {
                sensor_ms: decl.sensor_ms,
                pre_ms: decl.pre_ms,
                inference_ms: decl.inference_ms,
                post_ms: decl.post_ms,
            },
            accuracy: decl.accuracy,
        },
        lite: VariantProfile {
            stages: StageTimes {
                sensor_ms: decl.sensor_ms,
                pre_ms: decl.pre_ms,
                inference_ms: decl.lite_inference_ms,
                post_ms: decl.post_ms,
            },
            accuracy: decl.lite_accuracy,
        },
    }
}

fn build_problem(config: &ScenarioConfig, topo: &Topology) -> DispatchProblem {
    let tasks: Vec<TaskSpec> = config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| TaskSpec {
            id: i,
            name: t.name.clone(),
            priority_rank: t.priority_rank,
            period_ms: t.period_ms,
            deadline_ms: t.deadline_ms,
            source_node: topo.index_of[&t.source_node],
            input_mbits: t.input_mbits,
            original: ModelProfile {
                total_exec_ms: t.total_exec_ms(),
                accuracy: t.accuracy,
            },
            lite: ModelProfile {
                total_exec_ms: t.lite_total_exec_ms(),
                accuracy: t.lite_accuracy,
            },
        })
        .collect();
    let nodes: Vec<NodeRecord> = topo
        .ids
        .iter()
        .enumerate()
        .map(|(i, &id)| NodeRecord { id, position_m: topo.positions[i] })
        .collect();
    let mut problem = DispatchProblem::new(tasks, nodes);
    problem.utilization_cap = config.sim.utilization_cap;
    for link in &config.links {
        let s = topo.index_of[&link.src];
        let d = topo.index_of[&link.dst];
        problem.link_bandwidth_mbps.insert((s, d), link.bandwidth_mbps);
        if link.symmetric {
            problem.link_bandwidth_mbps.entry((d, s)).or_insert(link.bandwidth_mbps);
        }
    }
    problem
}

/// Build the per-node downlink sessions from the channel plan and the
/// measured rate tables.
fn build_sessions(
    config: &ScenarioConfig,
    topo: &Topology,
) -> Result<(ChannelPlan, Vec<BroadcastSession>), RunError> {
    let cluster: Vec<usize> = (0..topo.len()).collect();
    let mut blocked: BTreeMap<usize, BTreeSet<u8>> = BTreeMap::new();
    for (i, node) in config.nodes.iter().enumerate() {
        if !node.blocked_channels.is_empty() {
            blocked.insert(i, node.blocked_channels.iter().copied().collect());
        }
    }
    let plan = assign_channels(&cluster, &blocked, config.i2v.control_channel)?;
    let table = config.mcs_table();
    let mut sessions = Vec::with_capacity(topo.len());
    for i in 0..topo.len() {
        let choice = select_mcs(&table, &topo.environments[i])?;
        sessions.push(BroadcastSession {
            node: i,
            node_position_m: topo.positions[i],
            channel: plan.channel_of(i).expect("plan covers the cluster"),
            goodput_mbps: choice.expected_goodput(),
            app_rate_mbps: config.i2v.app_rate_mbps,
            range_m: topo.ranges[i],
            packet_loss: choice.measured_loss,
        });
    }
    Ok((plan, sessions))
}

pub fn run(config: &ScenarioConfig, seed: u64, trace: bool) -> Result<RunReport, RunError> {
    let topo = Topology::build(config);
    let mut report = RunReport {
        scenario: config.name.clone(),
        seed,
        config_digest: config.digest(),
        ..Default::default()
    };
    let master = seed;
    let mut events: Vec<String> = Vec::new();

    let problem = build_problem(config, &topo);
    let downlink_needed = !config.tasks.is_empty() || !config.vehicles.is_empty();
    let sessions = if downlink_needed {
        Some(build_sessions(config, &topo)?)
    } else {
        None
    };

    if !config.tasks.is_empty() {
        run_task_experiment(
            config, &topo, &problem, sessions.as_ref(), master, trace, &mut events, &mut report,
        )?;
    }

    if let Some((plan, sessions)) = &sessions {
        for (v, decl) in config.vehicles.iter().enumerate() {
            let trace_v = VehicleTrace {
                waypoints: decl
                    .waypoints
                    .iter()
                    .map(|w| TraceWaypoint { time_ms: w[0], position_m: w[1] })
                    .collect(),
            };
            let timeline = simulate_drive(
                &trace_v,
                plan,
                sessions,
                &DriveParams {
                    switch_cost_ms: config.i2v.switch_cost_ms,
                    beacon_period_ms: config.i2v.beacon_period_ms,
                },
            )?;
            for iv in &timeline.intervals {
                report.i2v_timelines.push(TimelineRow {
                    vehicle: v,
                    start_ms: iv.start_ms,
                    end_ms: iv.end_ms,
                    node: iv.node.map(|n| topo.ids[n]),
                    kind: iv.kind.label(),
                    mbits: iv.mbits,
                });
            }
        }
    }

    if let Some(bench) = &config.transfer_bench {
        let src = topo.index_of[&bench.src];
        let dst = topo.index_of[&bench.dst];
        let params = transfer_params(config, bench.block_packets)?;
        let block = probe_block(config, bench.block_packets, derive_seed(master, "bench-block", &[]));
        for (ci, coding) in bench.codings.iter().enumerate() {
            let coding = match coding {
                CodingName::None => TransferCoding::None,
                CodingName::Bats => TransferCoding::Bats,
                CodingName::Arq => TransferCoding::Arq,
            };
            for rep in 0..bench.repeats {
                let spec = chain_spec(config, &topo, false);
                let mut sim =
                    ChainSim::new(spec, derive_seed(master, "bench", &[ci as u64, rep as u64]))?;
                if trace {
                    sim.enable_trace();
                }
                let rec = sim.run_transfer(
                    NodeId(src),
                    NodeId(dst),
                    &block,
                    coding,
                    &params,
                    SimTime::ZERO,
                )?;
                if trace {
                    for ev in sim.take_trace() {
                        events.push(format!("bench {} rep{rep} {}", rec.coding.label(), ev.to_line()));
                    }
                }
                report.transfer_bench.push(TransferBenchRow {
                    coding: rec.coding.label(),
                    repeat: rep,
                    goodput_mbps: rec.goodput_mbps,
                    elapsed_ms: rec.elapsed.as_ms(),
                    delivered_fraction: rec.delivered_fraction,
                    batches_sent: rec.batches_sent,
                });
            }
        }
    }

    if let Some(bench) = &config.ecc_bench {
        let k = config.coding.ecc.block_packets;
        let r = (config.coding.ecc.redundancy_ratio * k as f64).round() as usize;
        for (pi, point) in bench.points.iter().enumerate() {
            let mut loss_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(master, "ecc-bench-loss", &[pi as u64]));
            let mut recovered = 0u64;
            let mut survived_plain = 0u64;
            let mut decoded_blocks = 0u64;
            for trial in 0..bench.blocks {
                let params = EccBlockParams {
                    k,
                    r,
                    coefficient_seed: derive_seed(master, "ecc-bench", &[pi as u64, trial as u64]),
                };
                let mut received = Vec::new();
                let mut sys_survivors = 0u64;
                for idx in 0..k + r {
                    if loss_rng.gen::<f64>() >= point.erasure {
                        received.push(idx);
                        if idx < k {
                            sys_survivors += 1;
                        }
                    }
                }
                survived_plain += sys_survivors;
                if ecc::decodable(&received, &params) {
                    recovered += k as u64;
                    decoded_blocks += 1;
                } else {
                    recovered += sys_survivors;
                }
            }
            let denom = (bench.blocks * k) as f64;
            report.ecc_bench.push(EccBenchRow {
                app_rate_mbps: point.app_rate_mbps,
                erasure: point.erasure,
                pdr_with_ecc: recovered as f64 / denom,
                pdr_without_ecc: survived_plain as f64 / denom,
                block_decode_rate: decoded_blocks as f64 / bench.blocks as f64,
            });
        }
    }

    if let Some(d) = &config.deadline_derivation {
        let exact = derive_deadline_ms(d.sensing_range_m, d.coverage_fraction, d.speed_kmh)
            .map_err(|e| RunError::Coding(e.to_string()))?;
        report.deadline_note = Some(DeadlineRow {
            sensing_range_m: d.sensing_range_m,
            coverage_fraction: d.coverage_fraction,
            speed_kmh: d.speed_kmh,
            exact_ms: exact,
            tier_ms: deadline_tier_ms(exact),
        });
    }

    if trace {
        report.events = events;
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_task_experiment(
    config: &ScenarioConfig,
    topo: &Topology,
    problem: &DispatchProblem,
    sessions: Option<&(ChannelPlan, Vec<BroadcastSession>)>,
    master: u64,
    trace: bool,
    events: &mut Vec<String>,
    report: &mut RunReport,
) -> Result<(), RunError> {
    let weights = dispatch::order_and_weight(&problem.tasks)?;
    let assignment = match config.policy.dispatch {
        DispatchModeDecl::Cluster => {
            let a = dispatch::dispatch(problem)?;
            dispatch::validate_assignment(&a, problem)?;
            a
        }
        DispatchModeDecl::Local => {
            let mut a = Assignment::undeployed(problem.tasks.len());
            for (t, task) in problem.tasks.iter().enumerate() {
                a.node_of[t] = Some(task.source_node);
                a.e2e_ms[t] = dispatch::estimate_e2e(task, task.source_node, problem);
            }
            a
        }
    };

    for (t, task) in problem.tasks.iter().enumerate() {
        report.assignment.push(AssignmentRow {
            task: task.name.clone(),
            node: assignment.node_of[t].map(|n| topo.ids[n]),
            e2e_ms: assignment.e2e_ms[t],
            weight: weights.weight_of[t],
        });
    }

    // input and result transfer rates for every pair the assignment uses
    let mut rates = RateModel::new();
    let mut input_delay = vec![0.0f64; problem.tasks.len()];
    let mut return_delay = vec![0.0f64; problem.tasks.len()];
    for (t, task) in problem.tasks.iter().enumerate() {
        let Some(node) = assignment.node_of[t] else { continue };
        if node == task.source_node {
            continue;
        }
        let fwd = rates.rate(task.source_node, node, config, topo, problem, master, events, trace)?;
        let back = rates.rate(node, task.source_node, config, topo, problem, master, events, trace)?;
        input_delay[t] = if fwd > 0.0 { task.input_mbits / fwd * 1000.0 } else { f64::INFINITY };
        let result_mbits = config.tasks[t].result_mbits;
        return_delay[t] = if back > 0.0 { result_mbits / back * 1000.0 } else { f64::INFINITY };
    }

    // per-node scheduling
    let horizon = config.sim.horizon_ms;
    let policy = SchedPolicy {
        queue: queue_policy(config.policy.queue),
        lite_enabled: config.policy.lite_enabled,
        blocking_sigma: config.sim.blocking_sigma,
    };
    let receivers_present = config.i2v.pseudo_vehicles > 0 || !config.vehicles.is_empty();
    let ecc_k = config.coding.ecc.block_packets;
    let ecc_r = (config.coding.ecc.redundancy_ratio * ecc_k as f64).round() as usize;

    struct InstanceCount {
        launched: u64,
        failed: u64,
    }
    let mut per_source: BTreeMap<usize, InstanceCount> = BTreeMap::new();
    let count_instance = |source: usize, failed: bool, per_source: &mut BTreeMap<usize, InstanceCount>| {
        let entry = per_source.entry(source).or_insert(InstanceCount { launched: 0, failed: 0 });
        entry.launched += 1;
        if failed {
            entry.failed += 1;
        }
    };

    let mut node_tasks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (t, node) in assignment.node_of.iter().enumerate() {
        if let Some(node) = node {
            node_tasks.entry(*node).or_default().push(t);
        }
    }

    // undeployed tasks fail every instance on the compute leg
    for (t, task) in problem.tasks.iter().enumerate() {
        if assignment.node_of[t].is_some() {
            continue;
        }
        let instances = (horizon / task.period_ms).ceil() as u64;
        for i in 0..instances {
            report.failures.push(FailureRow {
                task: task.name.clone(),
                instance: i,
                leg: Leg::Compute,
                cause: Cause::Dropped,
            });
            count_instance(task.source_node, true, &mut per_source);
        }
        report.task_metrics.push(TaskMetricRow {
            node: None,
            task: task.name.clone(),
            released: instances,
            dropped: instances,
            exceeded: 0,
            drop_ratio: 1.0,
            exceed_ratio: 0.0,
            mean_e2e_ms: 0.0,
            mean_acc_loss: 0.0,
        });
    }

    for (&node, tasks_here) in &node_tasks {
        let workload: Vec<WorkloadTask> = tasks_here
            .iter()
            .map(|&t| WorkloadTask {
                name: problem.tasks[t].name.clone(),
                period_ms: problem.tasks[t].period_ms,
                deadline_ms: problem.tasks[t].deadline_ms,
                release_delay_ms: input_delay[t],
                profile: task_profile(&config.tasks[t]),
            })
            .collect();
        let sched_seed = derive_seed(master, "sched", &[node as u64]);
        let metrics = sched::run_node(&workload, horizon, &policy, sched_seed)?;

        for (local, &t) in tasks_here.iter().enumerate() {
            let tm = &metrics.per_task[local];
            report.task_metrics.push(TaskMetricRow {
                node: Some(topo.ids[node]),
                task: tm.name.clone(),
                released: tm.released,
                dropped: tm.dropped,
                exceeded: tm.exceeded,
                drop_ratio: tm.drop_ratio,
                exceed_ratio: tm.exceed_ratio,
                mean_e2e_ms: tm.mean_e2e_ms,
                mean_acc_loss: tm.mean_acc_loss,
            });
            let _ = t;
        }

        // transmit leg: results return to the source node and ride its
        // downlink inside the same deadline budget
        let mut i2v_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(master, "i2v-loss", &[node as u64]));
        for outcome in &metrics.outcomes {
            let t = tasks_here[outcome.task];
            let task = &problem.tasks[t];
            let deadline_at = outcome.release_ms + task.deadline_ms;
            match outcome.outcome {
                Outcome::Dropped { .. } => {
                    report.failures.push(FailureRow {
                        task: task.name.clone(),
                        instance: outcome.instance,
                        leg: Leg::Compute,
                        cause: Cause::Dropped,
                    });
                    count_instance(task.source_node, true, &mut per_source);
                }
                Outcome::Completed { done_ms, on_time, .. } => {
                    if !on_time {
                        report.failures.push(FailureRow {
                            task: task.name.clone(),
                            instance: outcome.instance,
                            leg: Leg::Compute,
                            cause: Cause::DeadlineExceeded,
                        });
                        count_instance(task.source_node, true, &mut per_source);
                        continue;
                    }
                    if !receivers_present {
                        count_instance(task.source_node, false, &mut per_source);
                        continue;
                    }
                    let session = &sessions.expect("sessions exist with tasks").1[task.source_node];
                    let result_mbits = config.tasks[t].result_mbits;
                    let expansion = (ecc_k + ecc_r) as f64 / ecc_k as f64;
                    let air_ms = result_mbits * expansion / session.goodput_mbps * 1000.0;
                    let delivered_at = done_ms + return_delay[t] + air_ms;
                    let ecc_params = EccBlockParams {
                        k: ecc_k,
                        r: ecc_r,
                        coefficient_seed: derive_seed(
                            master,
                            "ecc-block",
                            &[node as u64, t as u64, outcome.instance],
                        ),
                    };
                    let received: Vec<usize> = (0..ecc_k + ecc_r)
                        .filter(|_| i2v_rng.gen::<f64>() >= session.packet_loss)
                        .collect();
                    let delivered = delivered_at <= deadline_at + 1e-9
                        && ecc::decodable(&received, &ecc_params);
                    if !delivered {
                        report.failures.push(FailureRow {
                            task: task.name.clone(),
                            instance: outcome.instance,
                            leg: Leg::Transmit,
                            cause: Cause::DeliveryMissed,
                        });
                    }
                    count_instance(task.source_node, !delivered, &mut per_source);
                }
            }
        }

        // link throughput series: inputs move source -> node per release,
        // results move back per completion
        for &t in tasks_here {
            let task = &problem.tasks[t];
            if task.source_node == node {
                continue;
            }
            let result_mbits = config.tasks[t].result_mbits;
            for outcome in metrics.outcomes.iter().filter(|o| tasks_here[o.task] == t) {
                push_path_throughput(
                    &mut report.link_throughput,
                    topo,
                    task.source_node,
                    node,
                    (outcome.release_ms / 1000.0) as u64,
                    task.input_mbits,
                );
                if let Outcome::Completed { done_ms, .. } = outcome.outcome {
                    push_path_throughput(
                        &mut report.link_throughput,
                        topo,
                        node,
                        task.source_node,
                        (done_ms / 1000.0) as u64,
                        result_mbits,
                    );
                }
            }
        }
    }

    // collapse the link series into sorted unique rows
    let mut series: BTreeMap<(usize, usize, u64), f64> = BTreeMap::new();
    for row in report.link_throughput.drain(..) {
        *series.entry((row.src, row.dst, row.bucket_s)).or_default() += row.mbits;
    }
    report.link_throughput = series
        .into_iter()
        .map(|((src, dst, bucket_s), mbits)| LinkThroughputRow { src, dst, bucket_s, mbits })
        .collect();

    for (node, counts) in &per_source {
        report.node_failures.push(NodeFailureRow {
            node: topo.ids[*node],
            launched: counts.launched,
            failed: counts.failed,
            failure_rate: if counts.launched > 0 {
                counts.failed as f64 / counts.launched as f64
            } else {
                0.0
            },
        });
    }
    let rates_list: Vec<f64> = report.node_failures.iter().map(|r| r.failure_rate).collect();
    if !rates_list.is_empty() {
        report.avg_failure_rate = rates_list.iter().sum::<f64>() / rates_list.len() as f64;
        report.worst_failure_rate = rates_list.iter().cloned().fold(0.0, f64::max);
    }
    Ok(())
}

fn push_path_throughput(
    rows: &mut Vec<LinkThroughputRow>,
    topo: &Topology,
    from: usize,
    to: usize,
    bucket_s: u64,
    mbits: f64,
) {
    let step: isize = if to > from { 1 } else { -1 };
    let mut cur = from as isize;
    while cur != to as isize {
        let next = cur + step;
        rows.push(LinkThroughputRow {
            src: topo.ids[cur as usize],
            dst: topo.ids[next as usize],
            bucket_s,
            mbits,
        });
        cur = next;
    }
}
