//! Reference computations for cross-checking main-path outputs on small
//! instances: exhaustive dispatch search, an independent erasure-decode
//! elimination, and the closed-form multi-hop survival probability. Guarded
//! to sizes where brute force stays exact and fast.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use roadsim_core::dispatch::{
    self, DispatchProblem, ModelProfile, NodeRecord, TaskSpec,
};
use roadsim_core::ecc::{check_matrix, EccBlockParams};
use roadsim_core::galois::{scale_slice, Gf256};

pub const DISPATCH_MAX_NODES: usize = 4;
pub const DISPATCH_MAX_TASKS: usize = 6;
pub const DECODE_MAX_K: usize = 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cannot read instance: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse instance: {0}")]
    Parse(String),
    #[error("instance exceeds oracle guard: {0}")]
    Guard(String),
    #[error("instance is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
struct DispatchInstance {
    #[serde(default = "default_cap")]
    utilization_cap: f64,
    nodes: Vec<DispatchNode>,
    tasks: Vec<DispatchTask>,
    #[serde(default)]
    links: Vec<DispatchLink>,
}

fn default_cap() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
struct DispatchNode {
    id: usize,
    position_m: f64,
}

#[derive(Debug, Deserialize)]
struct DispatchTask {
    name: String,
    #[serde(default)]
    priority_rank: usize,
    period_ms: f64,
    deadline_ms: f64,
    source_node: usize,
    #[serde(default)]
    input_mbits: f64,
    exec_ms: f64,
}

#[derive(Debug, Deserialize)]
struct DispatchLink {
    src: usize,
    dst: usize,
    bandwidth_mbps: f64,
}

/// Exhaustive dispatch search. Prints the optimal assignment and compares
/// the greedy heuristic against it.
pub fn dispatch_oracle(instance_path: &Path) -> Result<String, OracleError> {
    let text = std::fs::read_to_string(instance_path)?;
    let instance: DispatchInstance =
        toml::from_str(&text).map_err(|e| OracleError::Parse(e.to_string()))?;
    if instance.nodes.len() > DISPATCH_MAX_NODES || instance.tasks.len() > DISPATCH_MAX_TASKS {
        return Err(OracleError::Guard(format!(
            "dispatch oracle accepts at most {DISPATCH_MAX_NODES} nodes x {DISPATCH_MAX_TASKS} tasks, got {} x {}",
            instance.nodes.len(),
            instance.tasks.len()
        )));
    }
    let index_of: BTreeMap<usize, usize> = instance
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id, i))
        .collect();
    let tasks: Vec<TaskSpec> = instance
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let source = *index_of.get(&t.source_node).ok_or_else(|| {
                OracleError::Invalid(format!("task '{}' references node {}", t.name, t.source_node))
            })?;
            Ok(TaskSpec {
                id: i,
                name: t.name.clone(),
                priority_rank: t.priority_rank,
                period_ms: t.period_ms,
                deadline_ms: t.deadline_ms,
                source_node: source,
                input_mbits: t.input_mbits,
                original: ModelProfile { total_exec_ms: t.exec_ms, accuracy: 1.0 },
                lite: ModelProfile { total_exec_ms: t.exec_ms, accuracy: 1.0 },
            })
        })
        .collect::<Result<_, OracleError>>()?;
    let nodes: Vec<NodeRecord> = instance
        .nodes
        .iter()
        .map(|n| NodeRecord { id: n.id, position_m: n.position_m })
        .collect();
    let mut problem = DispatchProblem::new(tasks, nodes);
    problem.utilization_cap = instance.utilization_cap;
    for link in &instance.links {
        let (Some(&s), Some(&d)) = (index_of.get(&link.src), index_of.get(&link.dst)) else {
            return Err(OracleError::Invalid(format!(
                "link {} -> {} references unknown nodes",
                link.src, link.dst
            )));
        };
        problem.link_bandwidth_mbps.insert((s, d), link.bandwidth_mbps);
        problem.link_bandwidth_mbps.insert((d, s), link.bandwidth_mbps);
    }

    let weights = dispatch::order_and_weight(&problem.tasks)
        .map_err(|e| OracleError::Invalid(e.to_string()))?;
    let (best, best_score) = dispatch::exhaustive_optimum(&problem)
        .map_err(|e| OracleError::Invalid(e.to_string()))?;
    let heuristic = dispatch::dispatch(&problem).map_err(|e| OracleError::Invalid(e.to_string()))?;
    let heuristic_score = dispatch::objective(&heuristic, &weights);

    let mut out = String::new();
    out.push_str("task,optimal_node,heuristic_node,weight\n");
    for (t, task) in problem.tasks.iter().enumerate() {
        let fmt = |n: Option<usize>| n.map_or_else(|| "-".to_string(), |i| instance.nodes[i].id.to_string());
        out.push_str(&format!(
            "{},{},{},{}\n",
            task.name,
            fmt(best.node_of[t]),
            fmt(heuristic.node_of[t]),
            weights.weight_of[t]
        ));
    }
    out.push_str(&format!("optimal_objective={best_score}\n"));
    out.push_str(&format!("heuristic_objective={heuristic_score}\n"));
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct DecodeInstance {
    k: usize,
    r: usize,
    seed: u64,
    received: Vec<ReceivedPacket>,
}

#[derive(Debug, Deserialize)]
struct ReceivedPacket {
    index: usize,
    payload: String,
}

/// Independent erasure decode: stack every received packet as a row of the
/// full systematic generator and run a fresh Gauss-Jordan elimination. Does
/// not share the production decoder's restricted-system shortcut.
pub fn decode_oracle(instance_path: &Path) -> Result<String, OracleError> {
    let text = std::fs::read_to_string(instance_path)?;
    let instance: DecodeInstance =
        toml::from_str(&text).map_err(|e| OracleError::Parse(e.to_string()))?;
    if instance.k > DECODE_MAX_K {
        return Err(OracleError::Guard(format!(
            "decode oracle accepts blocks of k <= {DECODE_MAX_K}, got {}",
            instance.k
        )));
    }
    let params = EccBlockParams {
        k: instance.k,
        r: instance.r,
        coefficient_seed: instance.seed,
    };
    params.validate().map_err(|e| OracleError::Invalid(e.to_string()))?;
    let coeffs = check_matrix(&params);

    let mut rows: Vec<Vec<Gf256>> = Vec::new();
    let mut rhs: Vec<Vec<u8>> = Vec::new();
    let mut payload_len = None;
    for pkt in &instance.received {
        if pkt.index >= instance.k + instance.r {
            return Err(OracleError::Invalid(format!("index {} out of range", pkt.index)));
        }
        let bytes = parse_hex(&pkt.payload)
            .ok_or_else(|| OracleError::Invalid(format!("payload of index {} is not hex", pkt.index)))?;
        if *payload_len.get_or_insert(bytes.len()) != bytes.len() {
            return Err(OracleError::Invalid("payload lengths differ".to_string()));
        }
        let mut row = vec![Gf256::ZERO; instance.k];
        if pkt.index < instance.k {
            row[pkt.index] = Gf256::ONE;
        } else {
            for i in 0..instance.k {
                row[i] = coeffs.get(pkt.index - instance.k, i);
            }
        }
        rows.push(row);
        rhs.push(bytes);
    }

    let n = rows.len();
    let mut pivot_rows = Vec::with_capacity(instance.k);
    let mut used = vec![false; n];
    for col in 0..instance.k {
        let Some(p) = (0..n).find(|&rr| !used[rr] && !rows[rr][col].is_zero()) else {
            let rank = pivot_rows.len();
            return Ok(format!("insufficient rank={rank} needed={}\n", instance.k));
        };
        used[p] = true;
        let inv = rows[p][col].inv().expect("pivot nonzero");
        for c in 0..instance.k {
            rows[p][c] = rows[p][c] * inv;
        }
        scale_slice(&mut rhs[p], inv);
        for rr in 0..n {
            if rr == p || rows[rr][col].is_zero() {
                continue;
            }
            let factor = rows[rr][col];
            let prow = rows[p].clone();
            let prhs = rhs[p].clone();
            for c in 0..instance.k {
                rows[rr][c] = rows[rr][c] + factor * prow[c];
            }
            roadsim_core::galois::addmul_slice(&mut rhs[rr], &prhs, factor);
        }
        pivot_rows.push(p);
    }

    let mut out = String::from("index,payload\n");
    for (i, &p) in pivot_rows.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", to_hex(&rhs[p])));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct LossInstance {
    loss_prob: f64,
    hops: u32,
}

/// Closed-form end-to-end survival over independent per-hop losses.
pub fn loss_oracle(instance_path: &Path) -> Result<String, OracleError> {
    let text = std::fs::read_to_string(instance_path)?;
    let instance: LossInstance =
        toml::from_str(&text).map_err(|e| OracleError::Parse(e.to_string()))?;
    if !(0.0..=1.0).contains(&instance.loss_prob) {
        return Err(OracleError::Invalid(format!(
            "loss_prob {} outside [0, 1]",
            instance.loss_prob
        )));
    }
    let survival = (1.0 - instance.loss_prob).powi(instance.hops as i32);
    Ok(format!(
        "loss_prob={}\nhops={}\nsurvival={:.10}\n",
        instance.loss_prob, instance.hops, survival
    ))
}

fn parse_hex(s: &str) -> Option<Vec<u8>> {
    let s = s.trim();
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
