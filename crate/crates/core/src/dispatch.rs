//! Cluster-level task dispatch.
//!
//! Tasks are weighted by deadline urgency on a power-of-2 scale so that
//! deploying one urgent task always outweighs deploying any set of less
//! urgent ones. The dispatcher walks tasks from heaviest to lightest and
//! places each on the feasible node with the lowest utilization, preferring
//! physically closer nodes on ties. Feasibility means the estimated
//! end-to-end delay fits the deadline and the node stays under its
//! utilization cap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("no tasks to order")]
    NoTasks,
    #[error("too many tasks for power-of-2 weights: {0} > 63")]
    TooManyTasks(usize),
    #[error("invalid task '{name}': {reason}")]
    BadTask { name: String, reason: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
}

/// Profiled behavior of one model variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub total_exec_ms: f64,
    pub accuracy: f64,
}

/// A periodic task as the dispatcher sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub name: String,
    /// Input-ordering basis; only breaks exact deadline ties.
    pub priority_rank: usize,
    pub period_ms: f64,
    pub deadline_ms: f64,
    pub source_node: usize,
    pub input_mbits: f64,
    pub original: ModelProfile,
    pub lite: ModelProfile,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), DispatchError> {
        let fail = |reason: &str| {
            Err(DispatchError::BadTask {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.period_ms <= 0.0 {
            return fail("period must be positive");
        }
        if self.deadline_ms < self.period_ms {
            return fail("deadline must be at least the trigger period");
        }
        if self.lite.total_exec_ms > self.original.total_exec_ms {
            return fail("lite execution must not exceed the original");
        }
        if self.lite.accuracy > self.original.accuracy {
            return fail("lite accuracy must not exceed the original");
        }
        Ok(())
    }

    /// Utilization contribution when deployed: execution time over period.
    pub fn laxity(&self) -> f64 {
        self.original.total_exec_ms / self.period_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub position_m: f64,
}

/// One dispatch instance: the task pool, the chain, and the measured
/// per-link bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    pub tasks: Vec<TaskSpec>,
    /// Chain order; positions strictly increase with index.
    pub nodes: Vec<NodeRecord>,
    /// Megabits per second per directed adjacent pair, keyed by node index.
    pub link_bandwidth_mbps: BTreeMap<(usize, usize), f64>,
    /// A node rejects tasks that would push its laxity sum past this.
    pub utilization_cap: f64,
}

impl DispatchProblem {
    pub fn new(tasks: Vec<TaskSpec>, nodes: Vec<NodeRecord>) -> Self {
        Self {
            tasks,
            nodes,
            link_bandwidth_mbps: BTreeMap::new(),
            utilization_cap: 1.0,
        }
    }

    /// Narrowest link on the chain route between two node indexes, walking
    /// consecutive positions. None when any hop is missing.
    pub fn path_min_bandwidth(&self, from: usize, to: usize) -> Option<f64> {
        if from == to {
            return Some(f64::INFINITY);
        }
        let step: isize = if to > from { 1 } else { -1 };
        let mut cur = from as isize;
        let mut min_bw = f64::INFINITY;
        while cur != to as isize {
            let next = cur + step;
            let bw = *self
                .link_bandwidth_mbps
                .get(&(cur as usize, next as usize))?;
            if bw <= 0.0 {
                return None;
            }
            min_bw = min_bw.min(bw);
            cur = next;
        }
        Some(min_bw)
    }

    /// Physical proximity along the chain.
    pub fn chain_distance(&self, a: usize, b: usize) -> f64 {
        (self.nodes[a].position_m - self.nodes[b].position_m).abs()
    }
}

/// Power-of-2 priority weights: position i in ascending urgency order gets
/// weight 2^i, so any task dominates the combined weight of everything below
/// it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityWeights {
    /// Task indexes in ascending weight order.
    pub ascending: Vec<usize>,
    /// Weight per task index.
    pub weight_of: Vec<u64>,
}

/// Sort by ascending 1/deadline (longest deadline first), break exact ties by
/// priority rank and then id, and hand out doubling weights.
pub fn order_and_weight(tasks: &[TaskSpec]) -> Result<PriorityWeights, DispatchError> {
    if tasks.is_empty() {
        return Err(DispatchError::NoTasks);
    }
    if tasks.len() > 63 {
        return Err(DispatchError::TooManyTasks(tasks.len()));
    }
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&tasks[a], &tasks[b]);
        tb.deadline_ms
            .total_cmp(&ta.deadline_ms)
            .then(ta.priority_rank.cmp(&tb.priority_rank))
            .then(ta.id.cmp(&tb.id))
    });
    let mut weight_of = vec![0u64; tasks.len()];
    for (pos, &idx) in order.iter().enumerate() {
        weight_of[idx] = 1u64 << pos;
    }
    Ok(PriorityWeights {
        ascending: order,
        weight_of,
    })
}

/// Launch-to-completion estimate for running `task` on `node`: input
/// transfer over the narrowest link of the route plus the original model's
/// execution time. Infinite when the node cannot be reached.
pub fn estimate_e2e(task: &TaskSpec, node: usize, problem: &DispatchProblem) -> f64 {
    if node == task.source_node {
        return task.original.total_exec_ms;
    }
    match problem.path_min_bandwidth(task.source_node, node) {
        Some(bw) if bw.is_finite() => {
            let comm_ms = task.input_mbits / bw * 1000.0;
            comm_ms + task.original.total_exec_ms
        }
        _ => f64::INFINITY,
    }
}

/// Deployment decision: at most one node per task, plus the estimate that
/// justified it.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub node_of: Vec<Option<usize>>,
    pub e2e_ms: Vec<f64>,
}

impl Assignment {
    pub fn undeployed(tasks: usize) -> Self {
        Self {
            node_of: vec![None; tasks],
            e2e_ms: vec![f64::INFINITY; tasks],
        }
    }

    pub fn deployed_count(&self) -> usize {
        self.node_of.iter().filter(|n| n.is_some()).count()
    }
}

/// Laxity sum of every task currently assigned to `node`.
pub fn utilization(node: usize, assignment: &Assignment, problem: &DispatchProblem) -> f64 {
    assignment
        .node_of
        .iter()
        .enumerate()
        .filter(|(_, n)| **n == Some(node))
        .map(|(t, _)| problem.tasks[t].laxity())
        .sum()
}

/// Weighted count of deployed tasks.
pub fn objective(assignment: &Assignment, weights: &PriorityWeights) -> u64 {
    assignment
        .node_of
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_some())
        .map(|(t, _)| weights.weight_of[t])
        .sum()
}

const FEAS_EPS: f64 = 1e-9;

fn feasible(
    task: &TaskSpec,
    node: usize,
    assignment: &Assignment,
    problem: &DispatchProblem,
) -> Option<f64> {
    let e2e = estimate_e2e(task, node, problem);
    if !e2e.is_finite() || e2e > task.deadline_ms + FEAS_EPS {
        return None;
    }
    let load = utilization(node, assignment, problem);
    if load + task.laxity() > problem.utilization_cap + FEAS_EPS {
        return None;
    }
    Some(e2e)
}

/// Greedy placement from heaviest to lightest task. Candidates are every
/// feasible node; the winner is the one with minimum utilization, with
/// chain distance from the source and then node id breaking ties.
pub fn dispatch(problem: &DispatchProblem) -> Result<Assignment, DispatchError> {
    for task in &problem.tasks {
        task.validate()?;
    }
    let weights = order_and_weight(&problem.tasks)?;
    let mut assignment = Assignment::undeployed(problem.tasks.len());
    for &task_idx in weights.ascending.iter().rev() {
        let task = &problem.tasks[task_idx];
        let mut best: Option<(f64, f64, usize, f64)> = None; // (util, dist, id, e2e)
        for node in 0..problem.nodes.len() {
            let Some(e2e) = feasible(task, node, &assignment, problem) else {
                continue;
            };
            let util = utilization(node, &assignment, problem);
            let dist = problem.chain_distance(task.source_node, node);
            let key = (util, dist, problem.nodes[node].id);
            let better = match &best {
                None => true,
                Some((bu, bd, bi, _)) => {
                    key.0
                        .total_cmp(bu)
                        .then(key.1.total_cmp(bd))
                        .then(key.2.cmp(bi))
                        .is_lt()
                }
            };
            if better {
                best = Some((key.0, key.1, node, e2e));
            }
        }
        if let Some((_, _, node, e2e)) = best {
            assignment.node_of[task_idx] = Some(node);
            assignment.e2e_ms[task_idx] = e2e;
        }
    }
    Ok(assignment)
}

/// Independent constraint check: every deployed task meets its deadline under
/// a fresh estimate, sits on exactly one node, and no node exceeds the
/// utilization cap.
pub fn validate_assignment(
    assignment: &Assignment,
    problem: &DispatchProblem,
) -> Result<(), DispatchError> {
    if assignment.node_of.len() != problem.tasks.len() {
        return Err(DispatchError::Constraint(format!(
            "assignment covers {} tasks, problem has {}",
            assignment.node_of.len(),
            problem.tasks.len()
        )));
    }
    let mut node_load: BTreeMap<usize, f64> = BTreeMap::new();
    for (t, node) in assignment.node_of.iter().enumerate() {
        let Some(node) = node else { continue };
        let task = &problem.tasks[t];
        let e2e = estimate_e2e(task, *node, problem);
        if !e2e.is_finite() || e2e > task.deadline_ms + FEAS_EPS {
            return Err(DispatchError::Constraint(format!(
                "task '{}' on node {node}: estimated {e2e:.3} ms exceeds deadline {:.3} ms",
                task.name, task.deadline_ms
            )));
        }
        *node_load.entry(*node).or_default() += task.laxity();
    }
    for (node, load) in node_load {
        if load > problem.utilization_cap + FEAS_EPS {
            return Err(DispatchError::Constraint(format!(
                "node {node} at utilization {load:.3} exceeds cap {:.3}",
                problem.utilization_cap
            )));
        }
    }
    Ok(())
}

/// Exhaustive search over every (nodes + 1)^tasks placement, used as the
/// reference optimum for small instances. Prunes branches that cannot beat
/// the incumbent.
pub fn exhaustive_optimum(problem: &DispatchProblem) -> Result<(Assignment, u64), DispatchError> {
    let m = problem.tasks.len();
    let n = problem.nodes.len();
    assert!(
        m <= 12 && n <= 8,
        "exhaustive search is guarded to small instances"
    );
    let weights = order_and_weight(&problem.tasks)?;
    // remaining weight below each position, for pruning
    let mut suffix = vec![0u64; m + 1];
    for t in (0..m).rev() {
        suffix[t] = suffix[t + 1] + weights.weight_of[t];
    }
    let mut best = Assignment::undeployed(m);
    let mut best_score = 0u64;
    let mut current = Assignment::undeployed(m);

    fn recurse(
        t: usize,
        score: u64,
        problem: &DispatchProblem,
        weights: &PriorityWeights,
        suffix: &[u64],
        current: &mut Assignment,
        best: &mut Assignment,
        best_score: &mut u64,
    ) {
        if score + suffix[t] <= *best_score && *best_score > 0 {
            return;
        }
        if t == problem.tasks.len() {
            if score > *best_score {
                *best_score = score;
                *best = current.clone();
            }
            return;
        }
        let task = &problem.tasks[t];
        for node in 0..problem.nodes.len() {
            let Some(e2e) = feasible(task, node, current, problem) else {
                continue;
            };
            current.node_of[t] = Some(node);
            current.e2e_ms[t] = e2e;
            recurse(
                t + 1,
                score + weights.weight_of[t],
                problem,
                weights,
                suffix,
                current,
                best,
                best_score,
            );
            current.node_of[t] = None;
            current.e2e_ms[t] = f64::INFINITY;
        }
        // leaving the task undeployed is always allowed
        recurse(t + 1, score, problem, weights, suffix, current, best, best_score);
    }

    recurse(
        0,
        0,
        problem,
        &weights,
        &suffix,
        &mut current,
        &mut best,
        &mut best_score,
    );
    Ok((best, best_score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn task(id: usize, deadline: f64, source: usize, exec: f64) -> TaskSpec {
        TaskSpec {
            id,
            name: format!("t{id}"),
            priority_rank: id,
            period_ms: deadline,
            deadline_ms: deadline,
            source_node: source,
            input_mbits: 2.0,
            original: ModelProfile { total_exec_ms: exec, accuracy: 0.9 },
            lite: ModelProfile { total_exec_ms: exec * 0.9, accuracy: 0.85 },
        }
    }

    fn chain_problem(tasks: Vec<TaskSpec>, nodes: usize, bw: f64) -> DispatchProblem {
        let records = (0..nodes)
            .map(|i| NodeRecord { id: i, position_m: i as f64 * 30.0 })
            .collect();
        let mut problem = DispatchProblem::new(tasks, records);
        for i in 0..nodes.saturating_sub(1) {
            problem.link_bandwidth_mbps.insert((i, i + 1), bw);
            problem.link_bandwidth_mbps.insert((i + 1, i), bw);
        }
        problem
    }

    #[test]
    fn weights_double_with_urgency() {
        let tasks = vec![
            task(0, 400.0, 0, 10.0),
            task(1, 300.0, 0, 10.0),
            task(2, 250.0, 0, 10.0),
        ];
        let w = order_and_weight(&tasks).unwrap();
        assert_eq!(w.weight_of[0], 1); // longest deadline
        assert_eq!(w.weight_of[1], 2);
        assert_eq!(w.weight_of[2], 4); // shortest deadline dominates
    }

    #[test]
    fn single_task_gets_weight_one() {
        let tasks = vec![task(0, 250.0, 0, 10.0)];
        let w = order_and_weight(&tasks).unwrap();
        assert_eq!(w.weight_of[0], 1);
    }

    #[test]
    fn equal_deadlines_give_lower_id_the_lower_weight() {
        let tasks = vec![task(0, 300.0, 0, 10.0), task(1, 300.0, 0, 10.0)];
        let w = order_and_weight(&tasks).unwrap();
        assert!(w.weight_of[0] < w.weight_of[1]);
    }

    #[test]
    fn priority_rank_breaks_deadline_ties_before_id() {
        let mut a = task(0, 300.0, 0, 10.0);
        let mut b = task(1, 300.0, 0, 10.0);
        a.priority_rank = 5;
        b.priority_rank = 2;
        let w = order_and_weight(&[a, b]).unwrap();
        assert!(w.weight_of[1] < w.weight_of[0]);
    }

    #[test]
    fn e2e_on_source_node_is_pure_execution() {
        let t = task(0, 250.0, 1, 128.0);
        let problem = chain_problem(vec![t.clone()], 3, 100.0);
        assert_eq!(estimate_e2e(&t, 1, &problem), 128.0);
    }

    #[test]
    fn e2e_adds_transfer_over_narrowest_link() {
        // 30 megabits over a 100 Mbps hop is 300 ms, plus 128 ms execution
        let mut t = task(0, 500.0, 0, 128.0);
        t.input_mbits = 30.0;
        let problem = chain_problem(vec![t.clone()], 2, 100.0);
        assert_eq!(estimate_e2e(&t, 1, &problem), 428.0);
    }

    #[test]
    fn unreachable_node_estimates_infinite() {
        let t = task(0, 250.0, 0, 10.0);
        let mut problem = chain_problem(vec![t.clone()], 3, 100.0);
        problem.link_bandwidth_mbps.remove(&(1, 2));
        assert!(estimate_e2e(&t, 2, &problem).is_infinite());
    }

    #[test]
    fn utilization_is_additive_laxity() {
        let t0 = task(0, 250.0, 0, 128.0);
        let t1 = task(1, 300.0, 0, 37.2);
        let problem = chain_problem(vec![t0, t1], 2, 100.0);
        let mut a = Assignment::undeployed(2);
        assert_eq!(utilization(0, &a, &problem), 0.0);
        a.node_of[0] = Some(0);
        assert!((utilization(0, &a, &problem) - 0.512).abs() < 1e-12);
        a.node_of[1] = Some(0);
        let expected = 0.512 + 37.2 / 300.0;
        assert!((utilization(0, &a, &problem) - expected).abs() < 1e-12);
    }

    #[test]
    fn one_task_one_node_deploys_at_source() {
        let t = task(0, 250.0, 0, 10.0);
        let problem = chain_problem(vec![t], 1, 100.0);
        let a = dispatch(&problem).unwrap();
        assert_eq!(a.node_of[0], Some(0));
        validate_assignment(&a, &problem).unwrap();
    }

    #[test]
    fn overloaded_source_sheds_to_nearest_idle_node() {
        // two heavy tasks cannot share one node under the cap
        let t0 = task(0, 250.0, 1, 128.0);
        let t1 = task(1, 250.0, 1, 128.0);
        let problem = chain_problem(vec![t0, t1], 3, 100.0);
        let a = dispatch(&problem).unwrap();
        validate_assignment(&a, &problem).unwrap();
        assert_eq!(a.deployed_count(), 2);
        let nodes: Vec<_> = a.node_of.iter().flatten().copied().collect();
        assert_ne!(nodes[0], nodes[1], "the pair must split across nodes");
    }

    #[test]
    fn infeasible_everywhere_stays_undeployed() {
        let mut t = task(0, 250.0, 0, 300.0);
        t.period_ms = 250.0;
        t.deadline_ms = 250.0;
        // execution alone exceeds the deadline on any node
        let problem = chain_problem(vec![t], 3, 100.0);
        let a = dispatch(&problem).unwrap();
        assert_eq!(a.node_of[0], None);
        validate_assignment(&a, &problem).unwrap();
    }

    #[test]
    fn objective_counts_weighted_deployments() {
        let tasks = vec![
            task(0, 400.0, 0, 10.0),
            task(1, 300.0, 0, 10.0),
            task(2, 250.0, 0, 10.0),
        ];
        let problem = chain_problem(tasks, 3, 100.0);
        let w = order_and_weight(&problem.tasks).unwrap();
        let mut a = Assignment::undeployed(3);
        assert_eq!(objective(&a, &w), 0);
        for t in 0..3 {
            a.node_of[t] = Some(t);
        }
        assert_eq!(objective(&a, &w), 7); // 2^3 - 1

        // a single heavy deployment outranks both lighter ones
        let mut heavy = Assignment::undeployed(3);
        heavy.node_of[2] = Some(0);
        let mut light = Assignment::undeployed(3);
        light.node_of[0] = Some(0);
        light.node_of[1] = Some(1);
        assert!(objective(&heavy, &w) > objective(&light, &w));
    }

    #[test]
    fn domination_holds_exhaustively_for_ten_tasks() {
        let tasks: Vec<TaskSpec> = (0..10).map(|i| task(i, 250.0 + i as f64, 0, 1.0)).collect();
        let w = order_and_weight(&tasks).unwrap();
        for i in 0..10 {
            let below: u64 = w
                .ascending
                .iter()
                .take_while(|&&t| w.weight_of[t] < w.weight_of[i])
                .map(|&t| w.weight_of[t])
                .sum();
            assert!(w.weight_of[i] > below);
        }
    }

    #[test]
    fn dispatch_is_deterministic() {
        let tasks = vec![
            task(0, 250.0, 0, 100.0),
            task(1, 300.0, 1, 50.0),
            task(2, 250.0, 2, 128.0),
        ];
        let problem = chain_problem(tasks, 4, 80.0);
        let a = dispatch(&problem).unwrap();
        let b = dispatch(&problem).unwrap();
        assert_eq!(a, b);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> DispatchProblem {
        let n_nodes = rng.gen_range(2..=4);
        let n_tasks = rng.gen_range(2..=6);
        let tasks: Vec<TaskSpec> = (0..n_tasks)
            .map(|i| {
                let deadline = *[250.0, 300.0, 350.0, 400.0].get(rng.gen_range(0..4)).unwrap();
                let mut t = task(i, deadline, rng.gen_range(0..n_nodes), 0.0);
                t.original.total_exec_ms = rng.gen_range(20.0..200.0);
                t.lite.total_exec_ms = t.original.total_exec_ms * 0.9;
                t.input_mbits = rng.gen_range(0.5..8.0);
                t
            })
            .collect();
        let mut problem = chain_problem(tasks, n_nodes, 0.0);
        for i in 0..n_nodes - 1 {
            let bw = rng.gen_range(20.0..200.0);
            problem.link_bandwidth_mbps.insert((i, i + 1), bw);
            problem.link_bandwidth_mbps.insert((i + 1, i), bw);
        }
        problem
    }

    #[test]
    fn heuristic_stays_close_to_exhaustive_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD15);
        let mut near_optimal = 0;
        let trials = 50;
        for _ in 0..trials {
            let problem = random_instance(&mut rng);
            let weights = order_and_weight(&problem.tasks).unwrap();
            let heuristic = dispatch(&problem).unwrap();
            validate_assignment(&heuristic, &problem).unwrap();
            let (_, best) = exhaustive_optimum(&problem).unwrap();
            let score = objective(&heuristic, &weights);
            assert!(score <= best);
            if score as f64 >= 0.9 * best as f64 {
                near_optimal += 1;
            }
        }
        assert!(
            near_optimal * 100 >= trials * 95,
            "only {near_optimal}/{trials} instances near the optimum"
        );
    }

    #[test]
    fn relaxing_bandwidth_and_deadlines_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD16);
        for _ in 0..30 {
            let problem = random_instance(&mut rng);
            let weights = order_and_weight(&problem.tasks).unwrap();
            let before = objective(&dispatch(&problem).unwrap(), &weights);
            let mut relaxed = problem.clone();
            for bw in relaxed.link_bandwidth_mbps.values_mut() {
                *bw *= 2.0;
            }
            for t in &mut relaxed.tasks {
                t.deadline_ms += 100.0;
            }
            // weights depend only on deadline order, which a uniform shift
            // preserves
            let after = objective(&dispatch(&relaxed).unwrap(), &weights);
            assert!(after >= before, "relaxation lowered the objective");
        }
    }
}
