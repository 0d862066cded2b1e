//! Simulated rollout service instance: a state machine over (ingest
//! finished work) -> (refresh weights when behind) -> (pull tasks) ->
//! (execute). Each wake returns the next time the instance needs to run,
//! so the same code serves the discrete-event engine and the threaded
//! live runner.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rollflow_core::dataflow::DataflowLayer;
use rollflow_core::model::{PolicyId, RolloutGroup, Version};
use rollflow_core::seeds::derive_seed;
use rollflow_core::weights::{
    apply_delta, transfer_time, LinkModel, PullResponse, SyncPolicy, WeightSnapshot, WeightStore,
};

use crate::error::SimError;
use crate::metrics::MetricsSink;
use crate::workload::Workload;

/// Fully-resolved instance parameters (scenario defaults applied).
#[derive(Debug, Clone)]
pub struct ResolvedInstance {
    pub uid: String,
    pub gpus: u32,
    /// Relative throughput in (0, 1]; models power caps and similar
    /// degradation on otherwise identical hardware.
    pub throughput_share: f64,
    pub base_tokens_per_sec_per_gpu: f64,
    /// Engine-reload pause added to every weight refresh.
    pub reload_seconds: f64,
    /// Refresh once the newest published version is at least this far
    /// ahead of the held one.
    pub refresh_every: u64,
    pub tasks_per_pull: usize,
    pub link: LinkModel,
}

impl ResolvedInstance {
    pub fn tokens_per_sec(&self) -> f64 {
        self.gpus as f64 * self.base_tokens_per_sec_per_gpu * self.throughput_share
    }
}

enum Phase {
    Idle,
    Reloading { until: f64 },
    Executing { until: f64, done: Vec<RolloutGroup> },
}

pub struct InstanceSim {
    pub spec: ResolvedInstance,
    workload: Arc<Workload>,
    rng: ChaCha8Rng,
    held: BTreeMap<PolicyId, Version>,
    snapshots: BTreeMap<PolicyId, WeightSnapshot>,
    traj_seq: u64,
    produced_total: u64,
    retired: bool,
    phase: Phase,
    /// Poll interval while idle (no tasks available or backpressured).
    pub idle_poll_seconds: f64,
}

impl InstanceSim {
    pub fn new(spec: ResolvedInstance, workload: Arc<Workload>, root_seed: u64) -> Self {
        let rng =
            ChaCha8Rng::seed_from_u64(derive_seed(root_seed, &format!("raas/{}", spec.uid)));
        InstanceSim {
            spec,
            workload,
            rng,
            held: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            traj_seq: 0,
            produced_total: 0,
            retired: false,
            phase: Phase::Idle,
            idle_poll_seconds: 0.05,
        }
    }

    pub fn uid(&self) -> &str {
        &self.spec.uid
    }

    pub fn held_version(&self, policy: &PolicyId) -> Version {
        self.held.get(policy).copied().unwrap_or(0)
    }

    /// True while a weight refresh (transfer + reload) is in progress.
    pub fn is_reloading(&self, now: f64) -> bool {
        matches!(self.phase, Phase::Reloading { until } if until > now && !self.retired)
    }

    pub fn retire(&mut self) {
        self.retired = true;
    }

    /// Advances the state machine. Returns the next wake time; infinity
    /// means the instance never needs to run again. Early wakes (before a
    /// pending phase completes) are answered with the completion time, so
    /// callers may wake an instance at any moment.
    pub fn wake(
        &mut self,
        now: f64,
        dataflow: &DataflowLayer,
        store: &WeightStore,
        sync: &SyncPolicy,
        metrics: &MetricsSink,
    ) -> Result<f64, SimError> {
        match &mut self.phase {
            Phase::Executing { until, .. } if *until > now => return Ok(*until),
            Phase::Executing { done, .. } => {
                let groups = std::mem::take(done);
                self.phase = Phase::Idle;
                let version = self.held.values().copied().max().unwrap_or(0);
                for group in groups {
                    self.produced_total += group.members.len() as u64;
                    dataflow.ingest_trajectory_group(&self.spec.uid, group, now)?;
                }
                metrics.push(
                    "produced",
                    now,
                    version,
                    &[("uid", &self.spec.uid)],
                    self.produced_total as f64,
                );
            }
            Phase::Reloading { until } if *until > now => return Ok(*until),
            Phase::Reloading { .. } => self.phase = Phase::Idle,
            Phase::Idle => {}
        }
        if self.retired {
            return Ok(f64::INFINITY);
        }

        // Weight refresh before any new work. Downtime is honest: the
        // instance pulls no tasks until transfer and reload are over.
        let mut transfer_total = 0.0;
        let mut refreshed = false;
        for policy in self.workload.workflow.policies() {
            let latest = dataflow.latest_version(&policy);
            let held = self.held_version(&policy);
            if latest.saturating_sub(held) < self.spec.refresh_every {
                continue;
            }
            let response = store.pull_update(&policy, held, sync)?;
            let bytes = response.wire_bytes();
            let mode = match &response {
                PullResponse::UpToDate => continue,
                PullResponse::Deltas(_) => "delta",
                PullResponse::Full(_) => "full",
            };
            match response {
                PullResponse::Deltas(chain) => {
                    let base = self.snapshots.get(&policy).ok_or_else(|| {
                        SimError::Scenario(format!(
                            "instance {} got a delta chain for {policy} without a base snapshot",
                            self.spec.uid
                        ))
                    })?;
                    let mut snap = base.clone();
                    for delta in chain {
                        snap = apply_delta(&snap, &delta)?;
                    }
                    self.held.insert(policy.clone(), snap.version);
                    self.snapshots.insert(policy.clone(), snap);
                }
                PullResponse::Full(snap) => {
                    self.held.insert(policy.clone(), snap.version);
                    self.snapshots.insert(policy.clone(), (*snap).clone());
                }
                PullResponse::UpToDate => unreachable!(),
            }
            let seconds = transfer_time(bytes, &self.spec.link);
            transfer_total += seconds;
            refreshed = true;
            metrics.push(
                "transfer_seconds",
                now,
                self.held_version(&policy),
                &[
                    ("uid", &self.spec.uid),
                    ("policy", policy.as_str()),
                    ("mode", mode),
                    ("from", &held.to_string()),
                ],
                seconds,
            );
        }
        if refreshed {
            let downtime = transfer_total + self.spec.reload_seconds;
            let version = self.held.values().copied().max().unwrap_or(0);
            metrics.push(
                "rollout_downtime",
                now,
                version,
                &[("uid", &self.spec.uid)],
                downtime,
            );
            self.phase = Phase::Reloading { until: now + downtime };
            return Ok(now + downtime);
        }

        let tasks = dataflow.next_rollout_tasks(&self.spec.uid, self.spec.tasks_per_pull, now)?;
        if tasks.is_empty() {
            return Ok(now + self.idle_poll_seconds);
        }
        let rate = self.spec.tokens_per_sec();
        let mut t = now;
        let mut done = Vec::new();
        for task in &tasks {
            let mut run = self.workload.run_task(task, &self.held, 0.0, &mut self.traj_seq, &mut self.rng);
            let finish = t + run.total_tokens as f64 / rate;
            for group in &mut run.groups {
                for member in &mut group.members {
                    member.meta.produced_time = finish;
                }
            }
            done.extend(run.groups);
            t = finish;
        }
        self.phase = Phase::Executing { until: t, done };
        Ok(t)
    }
}
