//! The coordination plane between rollout producers and trainers. It owns
//! the prompt stream, per-trainer trajectory buffers, and the routing
//! table; rollout instances pull tasks and push finished groups, trainers
//! poll for batches, and the layer keeps the production/consumption
//! accounting that the pool-scaling controller reads.
//!
//! Data passes through three pluggable hooks on the way: a [`Curator`]
//! gates prompts before they become tasks, a [`PostFilter`] gates finished
//! groups before they enter buffers, and a [`BatchComposer`] decides the
//! fresh/replay mix of every training batch.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hooks::{BatchComposer, Curator, FilterDecision, PostFilter};
use crate::model::{
    validate_workflow, PolicyId, RolloutGroup, RolloutTask, TrainingBatch, Trajectory, Version,
    WorkflowSpec,
};
use crate::report::{BalanceWindow, InstanceStatus, LayoutRow};
use crate::seeds::derive_seed;

/// How one producing policy's trajectories reach trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteMode {
    /// Exactly one consuming trainer.
    Exclusive,
    /// One producer fanned out to several trainers.
    Shared,
    /// Part of a many-to-many pattern.
    Mixed,
}

#[derive(Debug, Clone)]
pub struct RouteEntry {
    pub consumers: BTreeSet<PolicyId>,
    pub mode: RouteMode,
}

/// Producing policy → consuming trainers.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    entries: BTreeMap<PolicyId, RouteEntry>,
}

impl RoutingTable {
    /// Each policy feeds exactly the trainer of the same name.
    pub fn exclusive(policies: impl IntoIterator<Item = PolicyId>) -> Self {
        let mut table = RoutingTable::default();
        for policy in policies {
            table.insert(policy.clone(), BTreeSet::from([policy]), RouteMode::Exclusive);
        }
        table
    }

    pub fn insert(&mut self, producer: PolicyId, consumers: BTreeSet<PolicyId>, mode: RouteMode) {
        self.entries.insert(producer, RouteEntry { consumers, mode });
    }

    pub fn consumers_of(&self, producer: &PolicyId) -> impl Iterator<Item = &PolicyId> {
        self.entries
            .get(producer)
            .into_iter()
            .flat_map(|e| e.consumers.iter())
    }

    pub fn routes_to(&self, producer: &PolicyId, consumer: &PolicyId) -> bool {
        self.entries
            .get(producer)
            .is_some_and(|e| e.consumers.contains(consumer))
    }

    pub fn producers(&self) -> BTreeSet<PolicyId> {
        self.entries.keys().cloned().collect()
    }

    /// Checks structural soundness against the declared trainer set: no
    /// empty or dangling consumer sets, exclusive entries have exactly one
    /// consumer, and every trainer is fed by at least one producer.
    pub fn validate(&self, trainers: &BTreeSet<PolicyId>) -> Result<(), DataflowError> {
        let mut fed: BTreeSet<&PolicyId> = BTreeSet::new();
        for (producer, entry) in &self.entries {
            if entry.consumers.is_empty() {
                return Err(DataflowError::InvalidConfig(format!(
                    "producer {producer} routes to no trainer"
                )));
            }
            if entry.mode == RouteMode::Exclusive && entry.consumers.len() != 1 {
                return Err(DataflowError::InvalidConfig(format!(
                    "producer {producer} is exclusive but has {} consumers",
                    entry.consumers.len()
                )));
            }
            for consumer in &entry.consumers {
                if !trainers.contains(consumer) {
                    return Err(DataflowError::InvalidConfig(format!(
                        "producer {producer} routes to unknown trainer {consumer}"
                    )));
                }
                fed.insert(consumer);
            }
        }
        for trainer in trainers {
            if !fed.contains(trainer) {
                return Err(DataflowError::InvalidConfig(format!(
                    "trainer {trainer} consumes from no producer"
                )));
            }
        }
        Ok(())
    }
}

/// A trajectory is usable iff `trainer_version - produced_at_version`
/// does not exceed the gap. Version gaps, not wall-clock age.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StalenessPolicy {
    pub max_version_gap: u64,
}

/// Per-trainer trajectory buffer sizing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferConfig {
    pub capacity: usize,
    /// Fill fraction at which task issuing to producers stops.
    pub backpressure_watermark: f64,
}

impl BufferConfig {
    pub fn for_batch_size(batch_size: usize) -> Self {
        BufferConfig {
            capacity: batch_size.saturating_mul(4).max(1),
            backpressure_watermark: 0.9,
        }
    }

    pub fn validate(&self) -> Result<(), DataflowError> {
        if self.capacity == 0 {
            return Err(DataflowError::InvalidConfig("buffer capacity must be positive".into()));
        }
        if !(self.backpressure_watermark > 0.0 && self.backpressure_watermark <= 1.0) {
            return Err(DataflowError::InvalidConfig(
                "backpressure watermark must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Production/consumption tallies for one rollout instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub produced: u64,
    pub accepted: u64,
    /// Trajectories from this instance drained into batches.
    pub consumed: u64,
    /// Trajectories from this instance dropped as stale.
    pub stale_skipped: u64,
}

/// Result of ingesting one trajectory group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub rejected: usize,
}

/// One completed trainer step, reported back by the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStat {
    /// Version published by this step.
    pub version: Version,
    /// Time spent blocked on batch data before the step.
    pub wait_seconds: f64,
    /// Compute time of the step itself.
    pub step_seconds: f64,
    pub finished_at: f64,
}

/// End-of-run accounting per producing policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProducerTotals {
    pub produced: u64,
    pub accepted: u64,
    pub rejected: u64,
}

/// End-of-run accounting per trainer lane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainerTotals {
    /// Trajectories that entered this lane's buffer.
    pub entered: u64,
    pub consumed: u64,
    pub stale_skipped: u64,
    /// Still sitting in the buffer.
    pub buffered: u64,
    pub steps_completed: u64,
    pub total_wait_seconds: f64,
    pub total_step_seconds: f64,
}

/// Snapshot of every counter family, used for conservation checks:
/// `produced = accepted + rejected` per producer and
/// `entered = consumed + stale_skipped + buffered` per trainer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConservationLedger {
    pub per_producer: BTreeMap<PolicyId, ProducerTotals>,
    pub per_trainer: BTreeMap<PolicyId, TrainerTotals>,
    pub per_instance: BTreeMap<String, FlowCounters>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DataflowError {
    #[error("unknown rollout instance {0:?}")]
    UnknownRaas(String),
    #[error("rollout instance {0:?} already registered")]
    DuplicateRaas(String),
    #[error("unknown trainer {0}")]
    UnknownTrainer(PolicyId),
    #[error("no trainer steps in the window")]
    EmptyWindow,
    #[error("invalid trajectory group: {0}")]
    InvalidGroup(String),
    #[error("invalid dataflow config: {0}")]
    InvalidConfig(String),
}

/// Everything the layer needs besides the trainer lanes.
pub struct DataflowConfig {
    pub workflow_name: String,
    pub workflow: WorkflowSpec,
    pub routing: RoutingTable,
    pub staleness: StalenessPolicy,
    /// Prompt ids, cycled indefinitely.
    pub prompts: Vec<String>,
    pub curator: Box<dyn Curator>,
    pub post_filter: Box<dyn PostFilter>,
    /// Drain buffers newest-first instead of FIFO.
    pub fresher_first: bool,
    /// Root seed; curator and composer streams are derived from it.
    pub seed: u64,
}

/// One consuming trainer and its batch-composition policy.
pub struct TrainerLaneConfig {
    pub policy: PolicyId,
    pub buffer: BufferConfig,
    pub composer: Box<dyn BatchComposer>,
}

struct TrainerLane {
    cfg: BufferConfig,
    composer: Box<dyn BatchComposer>,
    composer_rng: ChaCha8Rng,
    buffer: VecDeque<(Trajectory, Arc<str>)>,
    window_steps: Vec<StepStat>,
    totals: TrainerTotals,
    last_batch_time: f64,
}

struct InstanceEntry {
    gpus: u32,
    available: bool,
    retired: bool,
    reg_seq: u64,
    total: FlowCounters,
    window: FlowCounters,
    last_active: f64,
}

struct Flow {
    workflow_name: String,
    workflow_policies: Vec<PolicyId>,
    routing: RoutingTable,
    staleness: StalenessPolicy,
    fresher_first: bool,
    prompts: Vec<String>,
    prompt_cursor: usize,
    curator: Box<dyn Curator>,
    curator_rng: ChaCha8Rng,
    post_filter: Box<dyn PostFilter>,
    trainers: BTreeMap<PolicyId, TrainerLane>,
    instances: BTreeMap<String, InstanceEntry>,
    producers: BTreeMap<PolicyId, ProducerTotals>,
    latest_versions: BTreeMap<PolicyId, Version>,
    task_seq: u64,
    next_reg_seq: u64,
    window_open_time: f64,
}

/// The shared coordination service. All operations are atomic: one lock
/// guards buffers, counters, and hook state, and no operation blocks on
/// another component (batch polling is non-blocking by design).
pub struct DataflowLayer {
    inner: Mutex<Flow>,
}

impl DataflowLayer {
    pub fn new(
        cfg: DataflowConfig,
        lanes: Vec<TrainerLaneConfig>,
    ) -> Result<Self, DataflowError> {
        if cfg.prompts.is_empty() {
            return Err(DataflowError::InvalidConfig("prompt set is empty".into()));
        }
        let trainer_set: BTreeSet<PolicyId> = lanes.iter().map(|l| l.policy.clone()).collect();
        if trainer_set.len() != lanes.len() {
            return Err(DataflowError::InvalidConfig("duplicate trainer policy".into()));
        }
        cfg.routing.validate(&trainer_set)?;
        let declared = cfg.routing.producers();
        validate_workflow(&cfg.workflow, &declared)
            .map_err(|e| DataflowError::InvalidConfig(e.to_string()))?;

        let mut trainers = BTreeMap::new();
        for lane in lanes {
            lane.buffer.validate()?;
            let stream = derive_seed(cfg.seed, &format!("composer/{}", lane.policy));
            trainers.insert(
                lane.policy,
                TrainerLane {
                    cfg: lane.buffer,
                    composer: lane.composer,
                    composer_rng: ChaCha8Rng::seed_from_u64(stream),
                    buffer: VecDeque::new(),
                    window_steps: Vec::new(),
                    totals: TrainerTotals::default(),
                    last_batch_time: 0.0,
                },
            );
        }
        let workflow_policies = cfg.workflow.policies();
        Ok(DataflowLayer {
            inner: Mutex::new(Flow {
                workflow_name: cfg.workflow_name,
                workflow_policies,
                routing: cfg.routing,
                staleness: cfg.staleness,
                fresher_first: cfg.fresher_first,
                prompts: cfg.prompts,
                prompt_cursor: 0,
                curator: cfg.curator,
                curator_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "curator")),
                post_filter: cfg.post_filter,
                trainers,
                instances: BTreeMap::new(),
                producers: BTreeMap::new(),
                latest_versions: BTreeMap::new(),
                task_seq: 0,
                next_reg_seq: 0,
                window_open_time: 0.0,
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Flow> {
        self.inner.lock().expect("dataflow lock poisoned")
    }

    pub fn register_raas(&self, uid: &str, gpus: u32) -> Result<(), DataflowError> {
        let mut flow = self.lock();
        if flow.instances.contains_key(uid) {
            return Err(DataflowError::DuplicateRaas(uid.to_string()));
        }
        let reg_seq = flow.next_reg_seq;
        flow.next_reg_seq += 1;
        flow.instances.insert(
            uid.to_string(),
            InstanceEntry {
                gpus,
                available: true,
                retired: false,
                reg_seq,
                total: FlowCounters::default(),
                window: FlowCounters::default(),
                last_active: 0.0,
            },
        );
        Ok(())
    }

    pub fn mark_unavailable(&self, uid: &str) -> Result<(), DataflowError> {
        let mut flow = self.lock();
        let entry = flow
            .instances
            .get_mut(uid)
            .ok_or_else(|| DataflowError::UnknownRaas(uid.to_string()))?;
        entry.available = false;
        Ok(())
    }

    pub fn mark_available(&self, uid: &str) -> Result<(), DataflowError> {
        let mut flow = self.lock();
        let entry = flow
            .instances
            .get_mut(uid)
            .ok_or_else(|| DataflowError::UnknownRaas(uid.to_string()))?;
        if !entry.retired {
            entry.available = true;
        }
        Ok(())
    }

    /// Removes the instance from the schedulable fleet. Its in-flight
    /// groups are still ingested and its counters are kept.
    pub fn retire_raas(&self, uid: &str) -> Result<(), DataflowError> {
        let mut flow = self.lock();
        let entry = flow
            .instances
            .get_mut(uid)
            .ok_or_else(|| DataflowError::UnknownRaas(uid.to_string()))?;
        entry.retired = true;
        entry.available = false;
        Ok(())
    }

    /// GPUs across live (non-retired) instances, available or not.
    pub fn total_raas_gpus(&self) -> u32 {
        self.lock()
            .instances
            .values()
            .filter(|e| !e.retired)
            .map(|e| e.gpus)
            .sum()
    }

    pub fn instance_gpus(&self, uid: &str) -> Result<u32, DataflowError> {
        self.lock()
            .instances
            .get(uid)
            .filter(|e| !e.retired)
            .map(|e| e.gpus)
            .ok_or_else(|| DataflowError::UnknownRaas(uid.to_string()))
    }

    pub fn buffer_len(&self, trainer: &PolicyId) -> Result<usize, DataflowError> {
        self.lock()
            .trainers
            .get(trainer)
            .map(|l| l.buffer.len())
            .ok_or_else(|| DataflowError::UnknownTrainer(trainer.clone()))
    }

    pub fn latest_version(&self, policy: &PolicyId) -> Version {
        self.lock().latest_versions.get(policy).copied().unwrap_or(0)
    }

    /// Pulls up to `max_n` rollout tasks for one instance. Empty when the
    /// instance is unavailable or retired, when any destination buffer of
    /// the workflow's policies sits at or above its backpressure
    /// watermark, or when the curator admits nothing in one pass over the
    /// prompt stream.
    pub fn next_rollout_tasks(
        &self,
        raas_uid: &str,
        max_n: usize,
        now: f64,
    ) -> Result<Vec<RolloutTask>, DataflowError> {
        let mut flow = self.lock();
        {
            let entry = flow
                .instances
                .get_mut(raas_uid)
                .ok_or_else(|| DataflowError::UnknownRaas(raas_uid.to_string()))?;
            if !entry.available || entry.retired {
                return Ok(Vec::new());
            }
            entry.last_active = now;
        }
        if max_n == 0 {
            return Ok(Vec::new());
        }
        for policy in flow.workflow_policies.clone() {
            for consumer in flow.routing.consumers_of(&policy) {
                let lane = &flow.trainers[consumer];
                let threshold = lane.cfg.capacity as f64 * lane.cfg.backpressure_watermark;
                if lane.buffer.len() as f64 >= threshold {
                    return Ok(Vec::new());
                }
            }
        }

        let submit_version: BTreeMap<PolicyId, Version> = flow
            .workflow_policies
            .iter()
            .map(|p| (p.clone(), flow.latest_versions.get(p).copied().unwrap_or(0)))
            .collect();

        let flow = &mut *flow;
        let mut tasks = Vec::new();
        // One pass over the prompt stream at most, so a closed-down
        // curator yields an empty pull instead of spinning.
        for _ in 0..flow.prompts.len() {
            if tasks.len() == max_n {
                break;
            }
            let prompt = &flow.prompts[flow.prompt_cursor];
            flow.prompt_cursor = (flow.prompt_cursor + 1) % flow.prompts.len();
            if flow.curator.should_submit(prompt, &mut flow.curator_rng) {
                let task_id = format!("task-{}", flow.task_seq);
                flow.task_seq += 1;
                tasks.push(RolloutTask {
                    task_id,
                    prompt_id: prompt.clone(),
                    workflow: flow.workflow_name.clone(),
                    submit_version: submit_version.clone(),
                    issue_time: now,
                });
            }
        }
        Ok(tasks)
    }

    /// Ingests one finished group from `raas_uid`. The curator observes
    /// every group; the post-filter then decides acceptance; accepted
    /// members are cloned into each routed buffer with room. A group is
    /// rejected when filtered out or when no destination has room.
    pub fn ingest_trajectory_group(
        &self,
        raas_uid: &str,
        group: RolloutGroup,
        now: f64,
    ) -> Result<IngestOutcome, DataflowError> {
        if group.members.is_empty() {
            return Err(DataflowError::InvalidGroup("empty group".into()));
        }
        if let Some(t) = group.members.iter().find(|t| t.meta.producing_policy != group.policy) {
            return Err(DataflowError::InvalidGroup(format!(
                "member {} produced by {}, group claims {}",
                t.traj_id, t.meta.producing_policy, group.policy
            )));
        }
        let mut flow = self.lock();
        if flow.routing.consumers_of(&group.policy).next().is_none() {
            return Err(DataflowError::InvalidGroup(format!(
                "policy {} routes to no trainer",
                group.policy
            )));
        }
        if !flow.instances.contains_key(raas_uid) {
            return Err(DataflowError::UnknownRaas(raas_uid.to_string()));
        }

        let n = group.members.len();
        flow.curator.observe_group(&group);

        let flow = &mut *flow;
        let entry = flow.instances.get_mut(raas_uid).expect("checked above");
        entry.last_active = now;
        entry.total.produced += n as u64;
        entry.window.produced += n as u64;
        let producer = flow.producers.entry(group.policy.clone()).or_default();
        producer.produced += n as u64;

        if flow.post_filter.decide(&group) == FilterDecision::Drop {
            producer.rejected += n as u64;
            return Ok(IngestOutcome { accepted: 0, rejected: n });
        }

        let source: Arc<str> = Arc::from(raas_uid);
        let consumers: Vec<PolicyId> =
            flow.routing.consumers_of(&group.policy).cloned().collect();
        let mut destinations = 0usize;
        for consumer in &consumers {
            let lane = flow.trainers.get_mut(consumer).expect("validated routing");
            if lane.buffer.len() + n <= lane.cfg.capacity {
                for traj in &group.members {
                    lane.buffer.push_back((traj.clone(), source.clone()));
                }
                lane.totals.entered += n as u64;
                destinations += 1;
            }
        }
        if destinations == 0 {
            producer.rejected += n as u64;
            return Ok(IngestOutcome { accepted: 0, rejected: n });
        }
        producer.accepted += n as u64;
        entry.total.accepted += n as u64;
        entry.window.accepted += n as u64;
        Ok(IngestOutcome { accepted: n, rejected: 0 })
    }

    /// Polls for one training batch. Stale buffer entries are discarded
    /// first; the composer then decides the fresh/replay split, with
    /// `None` meaning not ready (the caller keeps accruing wait time).
    /// Fresh members are consumed in ingestion order (or newest-first when
    /// configured) and offered to the composer's replay pool afterwards.
    pub fn next_training_batch(
        &self,
        trainer: &PolicyId,
        batch_size: usize,
        trainer_version: Version,
        now: f64,
    ) -> Result<Option<TrainingBatch>, DataflowError> {
        let mut flow = self.lock();
        let flow = &mut *flow;
        let max_gap = flow.staleness.max_version_gap;
        let lane = flow
            .trainers
            .get_mut(trainer)
            .ok_or_else(|| DataflowError::UnknownTrainer(trainer.clone()))?;
        lane.last_batch_time = now;

        let instances = &mut flow.instances;
        let stale_totals = &mut lane.totals.stale_skipped;
        lane.buffer.retain(|(traj, source)| {
            let keep = trainer_version.saturating_sub(traj.meta.produced_at_version) <= max_gap;
            if !keep {
                *stale_totals += 1;
                if let Some(entry) = instances.get_mut(source.as_ref()) {
                    entry.total.stale_skipped += 1;
                    entry.window.stale_skipped += 1;
                }
            }
            keep
        });

        let plan = match lane.composer.plan(lane.buffer.len(), batch_size, trainer_version) {
            None => return Ok(None),
            Some(plan) => plan,
        };
        let replay =
            lane.composer
                .draw_replay(plan.replay_take, trainer_version, &mut lane.composer_rng);
        debug_assert_eq!(replay.len(), plan.replay_take);

        let mut members = Vec::with_capacity(plan.fresh_take + replay.len());
        for _ in 0..plan.fresh_take {
            let (traj, source) = if flow.fresher_first {
                lane.buffer.pop_back().expect("planned fresh_take exceeds buffer")
            } else {
                lane.buffer.pop_front().expect("planned fresh_take exceeds buffer")
            };
            if let Some(entry) = instances.get_mut(source.as_ref()) {
                entry.total.consumed += 1;
                entry.window.consumed += 1;
            }
            lane.composer.admit_fresh(&traj, trainer_version);
            members.push(traj);
        }
        lane.totals.consumed += plan.fresh_take as u64;

        let fresh_count = plan.fresh_take;
        let replay_count = replay.len();
        members.extend(replay);
        debug_assert!(members
            .iter()
            .all(|t| flow.routing.routes_to(&t.meta.producing_policy, trainer)));
        Ok(Some(TrainingBatch {
            trainer: trainer.clone(),
            members,
            fresh_count,
            replay_count,
            assembled_at_version: trainer_version,
        }))
    }

    /// Reports one completed trainer step; advances the policy's latest
    /// published version for task stamping.
    pub fn record_step(&self, trainer: &PolicyId, stat: StepStat) -> Result<(), DataflowError> {
        let mut flow = self.lock();
        let flow = &mut *flow;
        let lane = flow
            .trainers
            .get_mut(trainer)
            .ok_or_else(|| DataflowError::UnknownTrainer(trainer.clone()))?;
        lane.totals.total_wait_seconds += stat.wait_seconds;
        lane.totals.total_step_seconds += stat.step_seconds;
        lane.totals.steps_completed += 1;
        lane.window_steps.push(stat);
        let latest = flow.latest_versions.entry(trainer.clone()).or_insert(0);
        *latest = (*latest).max(stat.version);
        Ok(())
    }

    /// Summarizes the last `last_n` steps of each trainer plus production
    /// since the window opened. Fails when no step completed yet.
    pub fn window_stats(&self, last_n: u64) -> Result<BalanceWindow, DataflowError> {
        let flow = self.lock();
        let mut wait_sum = 0.0;
        let mut step_sum = 0.0;
        let mut n_steps = 0u64;
        let mut latest_finish = f64::NEG_INFINITY;
        for lane in flow.trainers.values() {
            let tail = lane.window_steps.len().saturating_sub(last_n as usize);
            for stat in &lane.window_steps[tail..] {
                wait_sum += stat.wait_seconds;
                step_sum += stat.step_seconds;
                n_steps += 1;
                latest_finish = latest_finish.max(stat.finished_at);
            }
        }
        if n_steps == 0 {
            return Err(DataflowError::EmptyWindow);
        }
        // The waiting fraction saturates at 1: a trainer can at worst be
        // waiting the whole time, and the growth rule maps w = 1 to the
        // pool ceiling anyway.
        let wait_fraction = if step_sum > 0.0 { (wait_sum / step_sum).min(1.0) } else { 0.0 };

        let mut produced = 0u64;
        let mut entered = 0u64;
        let mut consumed = 0u64;
        let mut stale_skipped = 0u64;
        for entry in flow.instances.values() {
            produced += entry.window.produced;
            entered += entry.window.accepted;
            consumed += entry.window.consumed;
            stale_skipped += entry.window.stale_skipped;
        }

        let mut live: Vec<(&String, &InstanceEntry)> =
            flow.instances.iter().filter(|(_, e)| !e.retired).collect();
        live.sort_by_key(|(_, e)| e.reg_seq);
        let layout = live
            .iter()
            .map(|(uid, e)| {
                let suspect = !e.available || e.window.accepted * 2 < e.window.produced;
                LayoutRow {
                    uid: (*uid).clone(),
                    gpus: e.gpus,
                    produced: e.window.produced,
                    accepted: e.window.accepted,
                    accept_rate: if e.window.produced == 0 {
                        0.0
                    } else {
                        e.window.accepted as f64 / e.window.produced as f64
                    },
                    throughput_per_gpu: if e.gpus == 0 {
                        0.0
                    } else {
                        e.window.accepted as f64 / f64::from(e.gpus)
                    },
                    status: if suspect { InstanceStatus::Suspect } else { InstanceStatus::Healthy },
                }
            })
            .collect();

        Ok(BalanceWindow {
            window_versions: last_n,
            wall_time_sec: (latest_finish - flow.window_open_time).max(0.0),
            eval_time_sec: 0.0,
            training_time_sec: step_sum,
            avg_step_time_sec: step_sum / n_steps as f64,
            avg_batch_wait_sec: wait_sum / n_steps as f64,
            wait_fraction,
            total_raas_gpus: live.iter().map(|(_, e)| e.gpus).sum(),
            produced,
            entered,
            consumed,
            stale_skipped,
            layout,
        })
    }

    /// Opens a fresh report window: clears per-instance window counters
    /// and per-trainer step lists. Cumulative totals are untouched.
    pub fn roll_window(&self, now: f64) {
        let mut flow = self.lock();
        flow.window_open_time = now;
        for entry in flow.instances.values_mut() {
            entry.window = FlowCounters::default();
        }
        for lane in flow.trainers.values_mut() {
            lane.window_steps.clear();
        }
    }

    /// Cumulative counters for conservation checks.
    pub fn ledger(&self) -> ConservationLedger {
        let flow = self.lock();
        let mut per_trainer = BTreeMap::new();
        for (policy, lane) in &flow.trainers {
            let mut totals = lane.totals;
            totals.buffered = lane.buffer.len() as u64;
            per_trainer.insert(policy.clone(), totals);
        }
        ConservationLedger {
            per_producer: flow.producers.clone(),
            per_trainer,
            per_instance: flow
                .instances
                .iter()
                .map(|(uid, e)| (uid.clone(), e.total))
                .collect(),
        }
    }
}
