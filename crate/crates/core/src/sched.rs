//! Per-node scheduling of concurrent pipelined tasks.
//!
//! Each job walks sensor read, preprocessing, model inference, and
//! postprocessing. Two lanes model the pipeline: a processing lane for the
//! light stages and an exclusive inference lane, so one task's pre/post work
//! overlaps another task's inference. The inference lane picks jobs by queue
//! policy, drops anything already past its deadline before it runs, and
//! downgrades to the lite model variant when the profiled times say the
//! current or the next inference cannot finish in time. Stage durations are
//! inflated by a seeded lognormal factor standing in for sensor jitter and
//! cross-process blocking.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("unknown task profile '{0}'")]
    UnknownProfile(String),
    #[error("invalid profile for '{name}': {reason}")]
    BadProfile { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SensorRead,
    Preprocess,
    Inference,
    Postprocess,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::SensorRead => "sensor_read",
            Stage::Preprocess => "preprocess",
            Stage::Inference => "inference",
            Stage::Postprocess => "postprocess",
        }
    }

    fn index(self) -> u64 {
        match self {
            Stage::SensorRead => 0,
            Stage::Preprocess => 1,
            Stage::Inference => 2,
            Stage::Postprocess => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Lite,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Lite => "lite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub sensor_ms: f64,
    pub pre_ms: f64,
    pub inference_ms: f64,
    pub post_ms: f64,
}

impl StageTimes {
    pub fn total_ms(&self) -> f64 {
        self.sensor_ms + self.pre_ms + self.inference_ms + self.post_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantProfile {
    pub stages: StageTimes,
    pub accuracy: f64,
}

/// Offline-profiled behavior of one task, both variants preloaded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub original: VariantProfile,
    pub lite: VariantProfile,
}

impl TaskProfile {
    pub fn variant(&self, v: Variant) -> &VariantProfile {
        match v {
            Variant::Original => &self.original,
            Variant::Lite => &self.lite,
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), SchedError> {
        let bad = |reason: &str| {
            Err(SchedError::BadProfile {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        for v in [&self.original, &self.lite] {
            for t in [
                v.stages.sensor_ms,
                v.stages.pre_ms,
                v.stages.inference_ms,
                v.stages.post_ms,
            ] {
                if t <= 0.0 {
                    return bad("stage times must be positive");
                }
            }
        }
        if self.lite.stages.inference_ms > self.original.stages.inference_ms {
            return bad("lite inference must not exceed the original");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    /// Run the queued inference with the latest deadline first.
    LatestDeadline,
    /// Run the queued inference with the earliest deadline first.
    EarliestDeadline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedPolicy {
    pub queue: QueuePolicy,
    pub lite_enabled: bool,
    /// Lognormal sigma of the per-stage blocking inflation; zero disables it.
    pub blocking_sigma: f64,
}

impl Default for SchedPolicy {
    fn default() -> Self {
        Self {
            queue: QueuePolicy::LatestDeadline,
            lite_enabled: true,
            blocking_sigma: 0.0,
        }
    }
}

/// One released task instance moving through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub task: usize,
    pub instance: u64,
    pub release_ms: f64,
    pub abs_deadline_ms: f64,
    pub stage: Stage,
    pub variant: Option<Variant>,
    seq: u64,
}

/// Index of the job to run next under the queue policy. Ties go to the
/// earlier release, then arrival order.
pub fn pick_next(queue: &[Job], policy: QueuePolicy) -> Option<usize> {
    let better = |a: &Job, b: &Job| -> bool {
        let primary = match policy {
            QueuePolicy::LatestDeadline => b.abs_deadline_ms.total_cmp(&a.abs_deadline_ms),
            QueuePolicy::EarliestDeadline => a.abs_deadline_ms.total_cmp(&b.abs_deadline_ms),
        };
        primary
            .then(a.release_ms.total_cmp(&b.release_ms))
            .then(a.seq.cmp(&b.seq))
            .is_lt()
    };
    let mut best: Option<usize> = None;
    for (i, job) in queue.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if better(job, &queue[b]) => best = Some(i),
            _ => {}
        }
    }
    best
}

/// The most urgent other job waiting for the inference lane.
fn most_urgent(queue: &[Job]) -> Option<&Job> {
    queue.iter().min_by(|a, b| {
        a.abs_deadline_ms
            .total_cmp(&b.abs_deadline_ms)
            .then(a.release_ms.total_cmp(&b.release_ms))
            .then(a.seq.cmp(&b.seq))
    })
}

/// Decide which model variant to run, from profiled times. Lite is chosen
/// only when the original cannot meet the current deadline, or when running
/// the original would make the most urgent queued inference miss its own.
pub fn choose_variant(
    current: &Job,
    queue: &[Job],
    now_ms: f64,
    profiles: &[TaskProfile],
) -> Variant {
    let original_ms = profiles[current.task].original.stages.inference_ms;
    if now_ms + original_ms > current.abs_deadline_ms {
        return Variant::Lite;
    }
    if let Some(next) = most_urgent(queue) {
        let next_ms = profiles[next.task].original.stages.inference_ms;
        if now_ms + original_ms + next_ms > next.abs_deadline_ms {
            return Variant::Lite;
        }
    }
    Variant::Original
}

/// Remove every job whose deadline has already passed, preserving order.
pub fn drop_overdue(queue: Vec<Job>, now_ms: f64) -> (Vec<Job>, Vec<Job>) {
    queue
        .into_iter()
        .partition(|job| job.abs_deadline_ms >= now_ms)
}

/// A task as scheduled on one node. `release_delay_ms` models the input
/// transfer before the node can start working on an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadTask {
    pub name: String,
    pub period_ms: f64,
    pub deadline_ms: f64,
    pub release_delay_ms: f64,
    pub profile: TaskProfile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Dropped { stage: Stage },
    Completed { done_ms: f64, variant: Variant, on_time: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub task: usize,
    pub instance: u64,
    pub release_ms: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub name: String,
    pub released: u64,
    pub dropped: u64,
    pub exceeded: u64,
    pub succeeded: u64,
    pub drop_ratio: f64,
    pub exceed_ratio: f64,
    pub success_ratio: f64,
    pub mean_e2e_ms: f64,
    pub mean_acc_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMetrics {
    pub per_task: Vec<TaskMetrics>,
    pub outcomes: Vec<InstanceOutcome>,
    pub released: u64,
    pub miss_rate: f64,
    pub mean_e2e_ms: f64,
    pub mean_acc_loss: f64,
}

/// Seeded blocking inflation, drawn independently per (task, instance,
/// stage) so paired runs under different policies see identical draws.
fn blocking_multiplier(seed: u64, task: usize, instance: u64, stage: Stage, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [task as u64, instance, stage.index()] {
        h ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 27;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let dist = LogNormal::new(0.0, sigma).expect("sigma is positive and finite");
    dist.sample(&mut rng)
}

#[derive(Debug)]
enum Ev {
    Release { task: usize, instance: u64, release_ms: f64 },
    ProcDone { job: Job },
    InfDone { job: Job },
}

struct Queued {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

struct Engine<'a> {
    tasks: &'a [WorkloadTask],
    profiles: Vec<TaskProfile>,
    policy: SchedPolicy,
    seed: u64,
    heap: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    proc_queue: Vec<Job>,
    inf_queue: Vec<Job>,
    proc_busy: bool,
    inf_busy: bool,
    outcomes: Vec<InstanceOutcome>,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse(Queued { time, seq: self.seq, ev }));
    }

    fn duration(&self, job: &Job, stage: Stage) -> f64 {
        let profile = &self.profiles[job.task];
        // variant is only decided at the inference lane; earlier stages run
        // the original profile
        let variant = job.variant.unwrap_or(Variant::Original);
        let stages = &profile.variant(variant).stages;
        let nominal = match stage {
            Stage::SensorRead => stages.sensor_ms,
            Stage::Preprocess => stages.pre_ms,
            Stage::Inference => stages.inference_ms,
            Stage::Postprocess => stages.post_ms,
        };
        nominal
            * blocking_multiplier(self.seed, job.task, job.instance, stage, self.policy.blocking_sigma)
    }

    fn record_drop(&mut self, job: Job) {
        self.outcomes.push(InstanceOutcome {
            task: job.task,
            instance: job.instance,
            release_ms: job.release_ms,
            outcome: Outcome::Dropped { stage: job.stage },
        });
    }

    fn try_start_processing(&mut self, now: f64) {
        if self.proc_busy {
            return;
        }
        loop {
            // earliest deadline first on the light lane, postprocess always
            // allowed to finish
            let Some(idx) = pick_next(&self.proc_queue, QueuePolicy::EarliestDeadline) else {
                return;
            };
            let job = self.proc_queue.swap_remove(idx);
            let overdue = job.abs_deadline_ms < now;
            if overdue && job.stage != Stage::Postprocess {
                self.record_drop(job);
                continue;
            }
            let dur = self.duration(&job, job.stage);
            self.proc_busy = true;
            self.push(now + dur, Ev::ProcDone { job });
            return;
        }
    }

    fn try_start_inference(&mut self, now: f64) {
        if self.inf_busy {
            return;
        }
        let queue = std::mem::take(&mut self.inf_queue);
        let (kept, dropped) = drop_overdue(queue, now);
        self.inf_queue = kept;
        for job in dropped {
            self.record_drop(job);
        }
        let Some(idx) = pick_next(&self.inf_queue, self.policy.queue) else {
            return;
        };
        let mut job = self.inf_queue.swap_remove(idx);
        let variant = if self.policy.lite_enabled {
            choose_variant(&job, &self.inf_queue, now, &self.profiles)
        } else {
            Variant::Original
        };
        job.variant = Some(variant);
        let dur = self.duration(&job, Stage::Inference);
        self.inf_busy = true;
        self.push(now + dur, Ev::InfDone { job });
    }

    fn run(&mut self) {
        while let Some(Reverse(Queued { time: now, ev, .. })) = self.heap.pop() {
            match ev {
                Ev::Release { task, instance, release_ms } => {
                    self.seq += 1;
                    let job = Job {
                        task,
                        instance,
                        release_ms,
                        abs_deadline_ms: release_ms + self.tasks[task].deadline_ms,
                        stage: Stage::SensorRead,
                        variant: None,
                        seq: self.seq,
                    };
                    self.proc_queue.push(job);
                    self.try_start_processing(now);
                }
                Ev::ProcDone { mut job } => {
                    self.proc_busy = false;
                    match job.stage {
                        Stage::SensorRead => {
                            job.stage = Stage::Preprocess;
                            self.proc_queue.push(job);
                        }
                        Stage::Preprocess => {
                            job.stage = Stage::Inference;
                            self.inf_queue.push(job);
                            self.try_start_inference(now);
                        }
                        Stage::Postprocess => {
                            let on_time = now <= job.abs_deadline_ms;
                            self.outcomes.push(InstanceOutcome {
                                task: job.task,
                                instance: job.instance,
                                release_ms: job.release_ms,
                                outcome: Outcome::Completed {
                                    done_ms: now,
                                    variant: job.variant.unwrap_or(Variant::Original),
                                    on_time,
                                },
                            });
                        }
                        Stage::Inference => unreachable!("inference runs on its own lane"),
                    }
                    self.try_start_processing(now);
                }
                Ev::InfDone { mut job } => {
                    self.inf_busy = false;
                    job.stage = Stage::Postprocess;
                    self.proc_queue.push(job);
                    self.try_start_processing(now);
                    self.try_start_inference(now);
                }
            }
        }
    }
}

/// Simulate one node over the horizon: periodic releases per task, pipelined
/// lanes, queue policy, opportunistic variant selection, and strict dropping.
pub fn run_node(
    tasks: &[WorkloadTask],
    horizon_ms: f64,
    policy: &SchedPolicy,
    seed: u64,
) -> Result<NodeMetrics, SchedError> {
    let mut profiles = Vec::with_capacity(tasks.len());
    for t in tasks {
        t.profile.validate(&t.name)?;
        profiles.push(t.profile);
    }
    let mut engine = Engine {
        tasks,
        profiles,
        policy: *policy,
        seed,
        heap: BinaryHeap::new(),
        seq: 0,
        proc_queue: Vec::new(),
        inf_queue: Vec::new(),
        proc_busy: false,
        inf_busy: false,
        outcomes: Vec::new(),
    };
    let mut released = vec![0u64; tasks.len()];
    for (task, spec) in tasks.iter().enumerate() {
        let mut instance = 0u64;
        loop {
            let release_ms = instance as f64 * spec.period_ms;
            if release_ms >= horizon_ms {
                break;
            }
            engine.push(
                release_ms + spec.release_delay_ms,
                Ev::Release { task, instance, release_ms },
            );
            released[task] += 1;
            instance += 1;
        }
    }
    engine.run();

    let mut outcomes = engine.outcomes;
    outcomes.sort_by(|a, b| a.task.cmp(&b.task).then(a.instance.cmp(&b.instance)));

    let mut per_task = Vec::with_capacity(tasks.len());
    for (task, spec) in tasks.iter().enumerate() {
        let mut dropped = 0;
        let mut exceeded = 0;
        let mut succeeded = 0;
        let mut e2e_sum = 0.0;
        let mut acc_loss_sum = 0.0;
        let mut completed = 0u64;
        for o in outcomes.iter().filter(|o| o.task == task) {
            match o.outcome {
                Outcome::Dropped { .. } => dropped += 1,
                Outcome::Completed { done_ms, variant, on_time } => {
                    completed += 1;
                    e2e_sum += done_ms - o.release_ms;
                    acc_loss_sum +=
                        spec.profile.original.accuracy - spec.profile.variant(variant).accuracy;
                    if on_time {
                        succeeded += 1;
                    } else {
                        exceeded += 1;
                    }
                }
            }
        }
        let total = released[task];
        debug_assert_eq!(total, dropped + exceeded + succeeded);
        let ratio = |x: u64| if total > 0 { x as f64 / total as f64 } else { 0.0 };
        per_task.push(TaskMetrics {
            name: spec.name.clone(),
            released: total,
            dropped,
            exceeded,
            succeeded,
            drop_ratio: ratio(dropped),
            exceed_ratio: ratio(exceeded),
            success_ratio: ratio(succeeded),
            mean_e2e_ms: if completed > 0 { e2e_sum / completed as f64 } else { 0.0 },
            mean_acc_loss: if completed > 0 { acc_loss_sum / completed as f64 } else { 0.0 },
        });
    }

    let total_released: u64 = released.iter().sum();
    let total_missed: u64 = per_task.iter().map(|t| t.dropped + t.exceeded).sum();
    let completed_all: Vec<&InstanceOutcome> = outcomes
        .iter()
        .filter(|o| matches!(o.outcome, Outcome::Completed { .. }))
        .collect();
    let mean_e2e_ms = if completed_all.is_empty() {
        0.0
    } else {
        completed_all
            .iter()
            .map(|o| match o.outcome {
                Outcome::Completed { done_ms, .. } => done_ms - o.release_ms,
                _ => 0.0,
            })
            .sum::<f64>()
            / completed_all.len() as f64
    };
    let mean_acc_loss = if completed_all.is_empty() {
        0.0
    } else {
        completed_all
            .iter()
            .map(|o| match o.outcome {
                Outcome::Completed { variant, .. } => {
                    let p = &tasks[o.task].profile;
                    p.original.accuracy - p.variant(variant).accuracy
                }
                _ => 0.0,
            })
            .sum::<f64>()
            / completed_all.len() as f64
    };

    Ok(NodeMetrics {
        per_task,
        outcomes,
        released: total_released,
        miss_rate: if total_released > 0 {
            total_missed as f64 / total_released as f64
        } else {
            0.0
        },
        mean_e2e_ms,
        mean_acc_loss,
    })
}
