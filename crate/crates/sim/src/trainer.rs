//! Simulated trainer: polls its batch lane, runs a fixed-cost step over
//! the batch tokens, applies a deterministic sparse mutation to its weight
//! vector, and publishes the new version. Publishing never blocks on
//! rollout pulls — the store hands out updates asynchronously.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rollflow_core::dataflow::{DataflowLayer, StepStat};
use rollflow_core::model::{PolicyId, Version};
use rollflow_core::seeds::derive_seed;
use rollflow_core::weights::{SyncPolicy, WeightSnapshot, WeightStore};

use crate::error::SimError;
use crate::metrics::MetricsSink;

#[derive(Debug, Clone)]
pub struct TrainerParams {
    pub policy: PolicyId,
    pub batch_size: usize,
    pub step_seconds_per_token: f64,
    /// Fraction of elements left untouched by each step's mutation.
    pub target_sparsity: f64,
    pub element_count: usize,
    pub poll_seconds: f64,
    /// A stalled trainer never polls; its lane fills until backpressure.
    pub stalled: bool,
    pub run_versions: u64,
    pub seed: u64,
    /// Policies allowed to appear in this trainer's batches (from the
    /// routing table). Members outside this set are counted as
    /// cross-policy contamination.
    pub allowed_producers: BTreeSet<PolicyId>,
}

/// One completed training step, as the trainer logs it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub version: Version,
    pub wait_seconds: f64,
    pub step_seconds: f64,
    pub fresh_count: usize,
    pub replay_count: usize,
    /// Sparsity of the published delta; `None` for the first publish.
    pub delta_sparsity: Option<f64>,
    pub finished_at: f64,
}

/// Per-version wait series: how long the trainer sat idle before each
/// step's batch arrived.
pub fn downtime_trace(records: &[StepRecord]) -> Vec<(Version, f64)> {
    records.iter().map(|r| (r.version, r.wait_seconds)).collect()
}

enum Phase {
    Waiting,
    Stepping {
        until: f64,
        wait_seconds: f64,
        step_seconds: f64,
        fresh_count: usize,
        replay_count: usize,
    },
}

pub struct TrainerSim {
    pub params: TrainerParams,
    current: Vec<u16>,
    pub version: Version,
    ready_since: f64,
    phase: Phase,
    pub records: Vec<StepRecord>,
    pub cross_policy_members: u64,
    done: bool,
}

impl TrainerSim {
    pub fn new(params: TrainerParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            params.seed,
            &format!("weights/{}/init", params.policy),
        ));
        let current = (0..params.element_count).map(|_| rng.random()).collect();
        TrainerSim {
            params,
            current,
            version: 0,
            ready_since: 0.0,
            phase: Phase::Waiting,
            records: Vec::new(),
            cross_policy_members: 0,
            done: false,
        }
    }

    pub fn done(&self) -> bool {
        self.done || self.params.stalled
    }

    /// Number of elements each step's mutation changes.
    pub fn changes_per_step(&self) -> usize {
        ((1.0 - self.params.target_sparsity) * self.params.element_count as f64).round() as usize
    }

    fn mutate(&mut self, version: Version) {
        let k = self.changes_per_step();
        if k == 0 {
            return;
        }
        let label = format!("mutate/{}/{version}", self.params.policy);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.params.seed, &label));
        let indices = rand::seq::index::sample(&mut rng, self.params.element_count, k);
        for i in indices {
            // XOR with an odd value: the word is guaranteed to change.
            self.current[i] ^= rng.random::<u16>() | 1;
        }
    }

    /// Advances the state machine. `None` means the trainer is finished
    /// (or stalled) and needs no further wakes.
    pub fn wake(
        &mut self,
        now: f64,
        dataflow: &DataflowLayer,
        store: &WeightStore,
        sync: &SyncPolicy,
        metrics: &MetricsSink,
    ) -> Result<Option<f64>, SimError> {
        if self.done() {
            return Ok(None);
        }
        loop {
            match self.phase {
                Phase::Stepping { until, .. } if until > now => return Ok(Some(until)),
                Phase::Stepping { wait_seconds, step_seconds, fresh_count, replay_count, .. } => {
                    let version = self.version + 1;
                    self.mutate(version);
                    let record = store.publish(
                        &self.params.policy,
                        WeightSnapshot {
                            policy: self.params.policy.clone(),
                            version,
                            elements: self.current.clone(),
                        },
                        sync,
                    )?;
                    self.version = version;
                    dataflow.record_step(
                        &self.params.policy,
                        StepStat { version, wait_seconds, step_seconds, finished_at: now },
                    )?;
                    let policy = self.params.policy.as_str();
                    metrics.push(
                        "trainer_wait",
                        now,
                        version,
                        &[("policy", policy)],
                        wait_seconds,
                    );
                    metrics.push(
                        "step_seconds",
                        now,
                        version,
                        &[("policy", policy)],
                        step_seconds,
                    );
                    if let Some(sparsity) = record.delta_sparsity {
                        metrics.push(
                            "delta_sparsity",
                            now,
                            version,
                            &[("policy", policy)],
                            sparsity,
                        );
                    }
                    self.records.push(StepRecord {
                        version,
                        wait_seconds,
                        step_seconds,
                        fresh_count,
                        replay_count,
                        delta_sparsity: record.delta_sparsity,
                        finished_at: now,
                    });
                    self.phase = Phase::Waiting;
                    self.ready_since = now;
                    if version >= self.params.run_versions {
                        self.done = true;
                        return Ok(None);
                    }
                }
                Phase::Waiting => {
                    let batch = dataflow.next_training_batch(
                        &self.params.policy,
                        self.params.batch_size,
                        self.version,
                        now,
                    )?;
                    match batch {
                        None => return Ok(Some(now + self.params.poll_seconds)),
                        Some(batch) => {
                            for member in &batch.members {
                                if !self
                                    .params
                                    .allowed_producers
                                    .contains(&member.meta.producing_policy)
                                {
                                    self.cross_policy_members += 1;
                                }
                            }
                            let tokens: u64 =
                                batch.members.iter().map(|m| m.payload_tokens).sum();
                            let step_seconds =
                                self.params.step_seconds_per_token * tokens as f64;
                            let wait_seconds = now - self.ready_since;
                            self.phase = Phase::Stepping {
                                until: now + step_seconds,
                                wait_seconds,
                                step_seconds,
                                fresh_count: batch.fresh_count,
                                replay_count: batch.replay_count,
                            };
                            return Ok(Some(now + step_seconds));
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use rollflow_core::dataflow::{
        BufferConfig, DataflowConfig, RoutingTable, StalenessPolicy, TrainerLaneConfig,
    };
    use rollflow_core::hooks::{FreshOnlyComposer, KeepAllCurator, KeepAllFilter};
    use rollflow_core::model::{
        RewardStats, RolloutGroup, Trajectory, TrajectoryMeta, WorkflowSpec,
    };

    fn dataflow() -> Arc<DataflowLayer> {
        let workflow = WorkflowSpec {
            roles: vec![("solver".into(), "a".into())],
            max_retries: 0,
            reward_assignment: BTreeMap::new(),
        };
        Arc::new(
            DataflowLayer::new(
                DataflowConfig {
                    workflow_name: "solve".into(),
                    workflow,
                    routing: RoutingTable::exclusive(["a".into()]),
                    staleness: StalenessPolicy { max_version_gap: 100 },
                    prompts: vec!["p0".into()],
                    curator: Box::new(KeepAllCurator),
                    post_filter: Box::new(KeepAllFilter),
                    fresher_first: false,
                    seed: 5,
                },
                vec![TrainerLaneConfig {
                    policy: "a".into(),
                    buffer: BufferConfig { capacity: 1000, backpressure_watermark: 0.9 },
                    composer: Box::new(FreshOnlyComposer),
                }],
            )
            .unwrap(),
        )
    }

    fn group(n: usize, tokens: u64) -> RolloutGroup {
        let members = (0..n)
            .map(|i| Trajectory {
                traj_id: format!("t{i}"),
                task_id: "task".into(),
                prompt_id: "p0".into(),
                meta: TrajectoryMeta {
                    producing_policy: "a".into(),
                    produced_at_version: 0,
                    produced_time: 0.0,
                    task_type: "solver".into(),
                    reward_stats: RewardStats { min: 0.0, max: 1.0, mean: 0.5 },
                },
                reward: (i % 2) as f64,
                payload_tokens: tokens,
            })
            .collect();
        RolloutGroup { prompt_id: "p0".into(), policy: "a".into(), members }
    }

    fn params(n: usize, s: f64) -> TrainerParams {
        TrainerParams {
            policy: "a".into(),
            batch_size: 4,
            step_seconds_per_token: 0.01,
            target_sparsity: s,
            element_count: n,
            poll_seconds: 0.5,
            stalled: false,
            run_versions: 3,
            seed: 5,
            allowed_producers: ["a".into()].into(),
        }
    }

    #[test]
    fn mutation_changes_exactly_the_rounded_count() {
        for (n, s, expected) in [
            (100_000, 0.989, 1_100),
            (1_000, 0.5, 500),
            (4, 0.0, 4),
            (1_000, 0.999, 1),
        ] {
            let trainer = TrainerSim::new(params(n, s));
            assert_eq!(trainer.changes_per_step(), expected, "n={n} s={s}");
            let mut t = TrainerSim::new(params(n, s));
            let before = t.current.clone();
            t.mutate(1);
            let changed = before.iter().zip(&t.current).filter(|(a, b)| a != b).count();
            assert_eq!(changed, expected);
        }
    }

    #[test]
    fn measured_sparsity_matches_target_exactly() {
        let dataflow = dataflow();
        dataflow.register_raas("r", 1).unwrap();
        let store = WeightStore::new();
        let sync = SyncPolicy::default();
        let metrics = MetricsSink::new();
        let mut t = TrainerSim::new(params(100_000, 0.989));

        dataflow.ingest_trajectory_group("r", group(12, 10), 0.0).unwrap();
        let mut now = 0.0;
        while t.records.len() < 3 {
            match t.wake(now, &dataflow, &store, &sync, &metrics).unwrap() {
                Some(next) => now = next.max(now),
                None => break,
            }
        }
        assert_eq!(t.version, 3);
        // First publish has no delta; later ones match 1 - round((1-s)N)/N.
        let expected = 1.0 - t.changes_per_step() as f64 / 100_000.0;
        assert_eq!(t.records[0].delta_sparsity, None);
        for r in &t.records[1..] {
            assert_eq!(r.delta_sparsity, Some(expected));
        }
    }

    #[test]
    fn waits_accrue_while_the_buffer_is_empty() {
        let dataflow = dataflow();
        dataflow.register_raas("r", 1).unwrap();
        let store = WeightStore::new();
        let sync = SyncPolicy::default();
        let metrics = MetricsSink::new();
        let mut t = TrainerSim::new(params(100, 0.5));

        // Nothing buffered: the trainer just re-polls.
        assert_eq!(t.wake(0.0, &dataflow, &store, &sync, &metrics).unwrap(), Some(0.5));
        assert_eq!(t.wake(0.5, &dataflow, &store, &sync, &metrics).unwrap(), Some(1.0));
        // Data arrives; the wait is measured from ready_since (t=0).
        dataflow.ingest_trajectory_group("r", group(4, 25), 1.0).unwrap();
        let next = t.wake(1.0, &dataflow, &store, &sync, &metrics).unwrap();
        // 4 members x 25 tokens x 0.01 s/token = 1 second of step time.
        assert_eq!(next, Some(2.0));
        let end = t.wake(2.0, &dataflow, &store, &sync, &metrics).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].wait_seconds, 1.0);
        assert_eq!(t.records[0].step_seconds, 1.0);
        assert_eq!(t.version, 1);
        // Publish happened without any instance ever pulling.
        assert_eq!(store.latest_version(&"a".into()), Some(1));
        // Still two versions to go.
        assert!(end.is_some());
        assert_eq!(downtime_trace(&t.records), vec![(1, 1.0)]);
    }

    #[test]
    fn stalled_trainer_never_polls() {
        let dataflow = dataflow();
        dataflow.register_raas("r", 1).unwrap();
        dataflow.ingest_trajectory_group("r", group(4, 10), 0.0).unwrap();
        let store = WeightStore::new();
        let metrics = MetricsSink::new();
        let mut p = params(100, 0.5);
        p.stalled = true;
        let mut t = TrainerSim::new(p);
        assert!(t.done());
        assert_eq!(
            t.wake(0.0, &dataflow, &store, &SyncPolicy::default(), &metrics).unwrap(),
            None
        );
        assert_eq!(dataflow.buffer_len(&"a".into()).unwrap(), 4);
    }

    #[test]
    fn cross_policy_members_are_counted() {
        let dataflow = dataflow();
        dataflow.register_raas("r", 1).unwrap();
        dataflow.ingest_trajectory_group("r", group(4, 10), 0.0).unwrap();
        let store = WeightStore::new();
        let metrics = MetricsSink::new();
        let mut p = params(100, 0.5);
        // Pretend this trainer only accepts policy "z" production: every
        // member of the batch is then a violation.
        p.allowed_producers = ["z".into()].into();
        let mut t = TrainerSim::new(p);
        t.wake(0.0, &dataflow, &store, &SyncPolicy::default(), &metrics).unwrap();
        assert_eq!(t.cross_policy_members, 4);
    }
}
