//! Deterministic discrete-event engine. Events are ordered by time, then
//! component kind (instances before trainers before the maintainer), then
//! component key, then insertion order — so two runs of the same scenario
//! with the same seed dispatch the exact same sequence and produce
//! byte-identical metrics.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, BTreeMap};
use std::fmt;
use std::path::Path;

use rollflow_core::dataflow::ConservationLedger;
use rollflow_core::scale::ScalingDecision;

use crate::error::SimError;
use crate::maintain::{render_command, FleetCommand, Maintainer};
use crate::metrics::MetricsSink;
use crate::scenario::Scenario;
use crate::trainer::StepRecord;

const RANK_INSTANCE: u8 = 0;
const RANK_TRAINER: u8 = 1;
const RANK_MAINTAIN: u8 = 2;

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    rank: u8,
    key: String,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.rank.cmp(&other.rank))
            .then_with(|| self.key.cmp(&other.key))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainerRunStats {
    pub versions: u64,
    pub total_wait_seconds: f64,
    pub total_step_seconds: f64,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Simulated wall time at the last dispatched event.
    pub end_time: f64,
    /// Integral of the rollout pool size over simulated time, exact over
    /// the piecewise-constant pool trajectory.
    pub rollout_gpu_seconds: f64,
    pub trainers: BTreeMap<String, TrainerRunStats>,
    pub ledger: ConservationLedger,
    /// Broken conservation identities; empty on a healthy run.
    pub conservation_violations: Vec<String>,
    pub cross_policy_members: u64,
    pub reports: Vec<String>,
    pub decisions: Vec<ScalingDecision>,
    pub shell_commands: Vec<String>,
    pub final_gpus: u32,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "simulated wall time     : {:.2}s", self.end_time)?;
        writeln!(f, "rollout gpu-seconds     : {:.2}", self.rollout_gpu_seconds)?;
        writeln!(f, "final pool size         : {} gpus", self.final_gpus)?;
        for (policy, t) in &self.trainers {
            writeln!(
                f,
                "trainer {policy:<15}: {} versions, {:.2}s stepping, {:.2}s waiting",
                t.versions, t.total_step_seconds, t.total_wait_seconds
            )?;
        }
        for (policy, p) in &self.ledger.per_producer {
            writeln!(
                f,
                "produced by {policy:<11}: {} ({} accepted, {} rejected)",
                p.produced, p.accepted, p.rejected
            )?;
        }
        for (policy, t) in &self.ledger.per_trainer {
            writeln!(
                f,
                "lane {policy:<18}: {} entered = {} consumed + {} stale + {} buffered",
                t.entered, t.consumed, t.stale_skipped, t.buffered
            )?;
        }
        writeln!(f, "balance reports         : {}", self.reports.len())?;
        match self.conservation_violations.len() {
            0 => writeln!(f, "conservation            : ok"),
            n => {
                writeln!(f, "conservation            : {n} violation(s)")?;
                for v in &self.conservation_violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
        }
    }
}

/// Checks the counter identities the dataflow layer promises.
pub fn conservation_violations(
    ledger: &ConservationLedger,
    trainers: &BTreeMap<String, TrainerRunStats>,
) -> Vec<String> {
    let mut violations = Vec::new();
    for (policy, p) in &ledger.per_producer {
        if p.produced != p.accepted + p.rejected {
            violations.push(format!(
                "producer {policy}: produced {} != accepted {} + rejected {}",
                p.produced, p.accepted, p.rejected
            ));
        }
    }
    for (policy, t) in &ledger.per_trainer {
        if t.entered != t.consumed + t.stale_skipped + t.buffered {
            violations.push(format!(
                "lane {policy}: entered {} != consumed {} + stale {} + buffered {}",
                t.entered, t.consumed, t.stale_skipped, t.buffered
            ));
        }
    }
    let by_instance: u64 = ledger.per_instance.values().map(|c| c.produced).sum();
    let by_producer: u64 = ledger.per_producer.values().map(|p| p.produced).sum();
    if by_instance != by_producer {
        violations.push(format!(
            "instances produced {by_instance} != producers produced {by_producer}"
        ));
    }
    for (policy, t) in &ledger.per_trainer {
        if let Some(stats) = trainers.get(policy.as_str()) {
            let fresh: u64 = stats.records.iter().map(|r| r.fresh_count as u64).sum();
            if fresh != t.consumed {
                violations.push(format!(
                    "lane {policy}: consumed {} != fresh batch members {fresh}",
                    t.consumed
                ));
            }
            if stats.versions != t.steps_completed {
                violations.push(format!(
                    "trainer {policy}: {} versions vs {} recorded steps",
                    stats.versions, t.steps_completed
                ));
            }
        }
    }
    violations
}

enum Executor {
    Sim,
    Shell { launch: String, retire: String },
}

/// Runs a scenario to completion in simulated time. When `out_dir` is
/// given, balance reports, metrics files, and a run summary are written
/// there.
pub fn run_scenario(scenario: &Scenario, out_dir: Option<&Path>) -> Result<RunSummary, SimError> {
    let built = scenario.build()?;
    let dataflow = built.dataflow;
    let store = built.store;
    let sync = built.sync;
    let workload = built.workload;
    let mut instances = built.instances;
    let mut trainers = built.trainers;
    for inst in instances.values_mut() {
        inst.idle_poll_seconds = scenario.engine.idle_poll_seconds;
    }
    let metrics = MetricsSink::new();

    let mut maintainer = None;
    let mut executor = Executor::Sim;
    let mut cadence = 0;
    if let Some(auto) = &scenario.autoscale {
        maintainer = Some(Maintainer::new(
            scenario.autoscale_config()?,
            out_dir.map(|d| d.to_path_buf()),
        ));
        cadence = auto.cadence_versions;
        executor = match auto.executor.as_str() {
            "shell" => Executor::Shell {
                launch: auto.launch_command.clone(),
                retire: auto.retire_command.clone(),
            },
            _ => Executor::Sim,
        };
    }
    let driver = scenario.driver_policy();

    let mut heap: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let mut push = |heap: &mut BinaryHeap<Reverse<Event>>, time: f64, rank: u8, key: String| {
        seq += 1;
        heap.push(Reverse(Event { time, rank, key, seq }));
    };
    for uid in instances.keys() {
        push(&mut heap, 0.0, RANK_INSTANCE, uid.clone());
    }
    for (policy, t) in &trainers {
        if !t.done() {
            push(&mut heap, 0.0, RANK_TRAINER, policy.clone());
        }
    }

    metrics.push("pool_size", 0.0, 0, &[], dataflow.total_raas_gpus() as f64);
    let mut gpu_accum = 0.0;
    let mut gpu_last_t = 0.0;
    let mut end_time = 0.0f64;
    let mut launched: u64 = 0;
    let mut shell_commands = Vec::new();

    while let Some(Reverse(event)) = heap.pop() {
        let now = event.time;
        if now > scenario.engine.max_sim_seconds {
            return Err(SimError::Timeout { at: now, event: event.key });
        }
        end_time = end_time.max(now);
        match event.rank {
            RANK_INSTANCE => {
                if let Some(inst) = instances.get_mut(&event.key) {
                    let next = inst.wake(now, &dataflow, &store, &sync, &metrics)?;
                    if next.is_finite() {
                        push(&mut heap, next, RANK_INSTANCE, event.key);
                    }
                }
            }
            RANK_TRAINER => {
                let trainer = trainers
                    .get_mut(&event.key)
                    .expect("trainer events only exist for registered trainers");
                let before = trainer.version;
                let next = trainer.wake(now, &dataflow, &store, &sync, &metrics)?;
                if let Some(next) = next {
                    push(&mut heap, next, RANK_TRAINER, event.key.clone());
                }
                if maintainer.is_some() && event.key == driver.as_str() {
                    for version in before + 1..=trainer.version {
                        if cadence > 0 && version % cadence == 0 {
                            push(&mut heap, now, RANK_MAINTAIN, "maintain".into());
                        }
                    }
                }
                if trainers.values().all(|t| t.done()) {
                    break;
                }
            }
            _ => {
                let m = maintainer.as_mut().expect("maintain event without a maintainer");
                let version = trainers
                    .get(driver.as_str())
                    .map(|t| t.version)
                    .unwrap_or(0);
                let transfer_active =
                    instances.values().any(|i| i.is_reloading(now));
                let commands =
                    m.run_window(version, now, &dataflow, transfer_active, &metrics)?;
                if commands.is_empty() {
                    continue;
                }
                match &executor {
                    Executor::Shell { launch, retire } => {
                        for command in commands {
                            shell_commands.push(match command {
                                FleetCommand::Launch { gpus } => {
                                    launched += 1;
                                    render_command(launch, &format!("auto-{launched}"), gpus)
                                }
                                FleetCommand::Retire { uid } => render_command(retire, &uid, 0),
                            });
                        }
                    }
                    Executor::Sim => {
                        gpu_accum += dataflow.total_raas_gpus() as f64 * (now - gpu_last_t);
                        gpu_last_t = now;
                        for command in commands {
                            match command {
                                FleetCommand::Launch { gpus } => {
                                    launched += 1;
                                    let uid = format!("auto-{launched}");
                                    dataflow.register_raas(&uid, gpus)?;
                                    let spec = scenario.launch_instance(&uid, gpus)?;
                                    let mut sim = crate::raas::InstanceSim::new(
                                        spec,
                                        std::sync::Arc::clone(&workload),
                                        scenario.seed,
                                    );
                                    sim.idle_poll_seconds = scenario.engine.idle_poll_seconds;
                                    instances.insert(uid.clone(), sim);
                                    push(&mut heap, now, RANK_INSTANCE, uid);
                                }
                                FleetCommand::Retire { uid } => {
                                    dataflow.retire_raas(&uid)?;
                                    if let Some(inst) = instances.get_mut(&uid) {
                                        inst.retire();
                                    }
                                }
                            }
                        }
                        metrics.push(
                            "pool_size",
                            now,
                            version,
                            &[],
                            dataflow.total_raas_gpus() as f64,
                        );
                    }
                }
            }
        }
    }

    let final_gpus = dataflow.total_raas_gpus();
    gpu_accum += final_gpus as f64 * (end_time - gpu_last_t);

    let mut trainer_stats = BTreeMap::new();
    let mut cross_policy_members = 0;
    for (policy, t) in &trainers {
        cross_policy_members += t.cross_policy_members;
        trainer_stats.insert(
            policy.clone(),
            TrainerRunStats {
                versions: t.version,
                total_wait_seconds: t.records.iter().map(|r| r.wait_seconds).sum(),
                total_step_seconds: t.records.iter().map(|r| r.step_seconds).sum(),
                records: t.records.clone(),
            },
        );
    }
    let ledger = dataflow.ledger();
    let violations = conservation_violations(&ledger, &trainer_stats);
    let (reports, decisions) = match maintainer {
        Some(m) => (m.reports, m.decisions),
        None => (Vec::new(), Vec::new()),
    };
    let summary = RunSummary {
        end_time,
        rollout_gpu_seconds: gpu_accum,
        trainers: trainer_stats,
        ledger,
        conservation_violations: violations,
        cross_policy_members,
        reports,
        decisions,
        shell_commands,
        final_gpus,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        metrics.write_dir(dir)?;
        std::fs::write(dir.join("summary.txt"), summary.to_string())?;
        if !summary.shell_commands.is_empty() {
            std::fs::write(dir.join("commands.log"), summary.shell_commands.join("\n") + "\n")?;
        }
    }
    Ok(summary)
}
