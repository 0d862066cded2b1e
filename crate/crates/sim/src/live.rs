//! Live mode: the same component state machines as the discrete-event
//! engine, but driven by real threads against a scaled wall clock. Event
//! interleaving depends on the OS scheduler, so live runs are not
//! bit-reproducible — the conservation identities must still hold, and
//! the acceptance checks assert exactly that.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::engine::{conservation_violations, RunSummary, TrainerRunStats};
use crate::error::SimError;
use crate::maintain::{render_command, FleetCommand, Maintainer};
use crate::metrics::MetricsSink;
use crate::scenario::Scenario;

struct Clock {
    start: Instant,
    scale: f64,
}

impl Clock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * self.scale
    }

    /// Sleeps until simulated time `until`, in scaled real time.
    fn sleep_until(&self, until: f64) {
        let gap = until - self.now();
        if gap > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(gap / self.scale));
        }
    }
}

/// Runs a scenario with one thread per component. Fleet mutation is not
/// supported live: scenarios with a sim-executor autoscaler are rejected,
/// a shell-executor one only renders commands.
pub fn run_live(scenario: &Scenario, out_dir: Option<&Path>) -> Result<RunSummary, SimError> {
    if let Some(auto) = &scenario.autoscale {
        if auto.executor == "sim" {
            return Err(SimError::Scenario(
                "live mode cannot mutate the fleet; use autoscale.executor = \"shell\"".into(),
            ));
        }
    }
    let built = scenario.build()?;
    let dataflow = built.dataflow;
    let store = built.store;
    let sync = built.sync;
    let mut instances = built.instances;
    for inst in instances.values_mut() {
        inst.idle_poll_seconds = scenario.engine.idle_poll_seconds;
    }
    let trainers = built.trainers;
    let metrics = Arc::new(MetricsSink::new());
    let clock = Arc::new(Clock { start: Instant::now(), scale: scenario.engine.live_time_scale });
    let done = Arc::new(AtomicBool::new(false));
    let max_sim = scenario.engine.max_sim_seconds;

    let running_trainers = trainers.values().filter(|t| !t.done()).count();
    let finished = Arc::new(AtomicUsize::new(0));

    metrics.push("pool_size", 0.0, 0, &[], dataflow.total_raas_gpus() as f64);

    let mut instance_handles = Vec::new();
    for (_, mut inst) in std::mem::take(&mut instances) {
        let dataflow = Arc::clone(&dataflow);
        let store = Arc::clone(&store);
        let metrics = Arc::clone(&metrics);
        let clock = Arc::clone(&clock);
        let done = Arc::clone(&done);
        instance_handles.push(std::thread::spawn(move || -> Result<(), SimError> {
            while !done.load(Ordering::Acquire) {
                let now = clock.now();
                if now > max_sim {
                    break;
                }
                let next = inst.wake(now, &dataflow, &store, &sync, &metrics)?;
                if !next.is_finite() {
                    break;
                }
                clock.sleep_until(next);
            }
            Ok(())
        }));
    }

    let mut trainer_handles = Vec::new();
    for (policy, mut trainer) in trainers {
        let dataflow = Arc::clone(&dataflow);
        let store = Arc::clone(&store);
        let metrics = Arc::clone(&metrics);
        let clock = Arc::clone(&clock);
        let done = Arc::clone(&done);
        let finished = Arc::clone(&finished);
        let counts_toward_completion = !trainer.done();
        trainer_handles.push(std::thread::spawn(
            move || -> Result<(String, crate::trainer::TrainerSim), SimError> {
                loop {
                    let now = clock.now();
                    if now > max_sim || done.load(Ordering::Acquire) {
                        break;
                    }
                    match trainer.wake(now, &dataflow, &store, &sync, &metrics)? {
                        None => break,
                        Some(next) => clock.sleep_until(next),
                    }
                }
                if counts_toward_completion
                    && finished.fetch_add(1, Ordering::AcqRel) + 1 == running_trainers
                {
                    done.store(true, Ordering::Release);
                }
                Ok((policy, trainer))
            },
        ));
    }

    // Shell-executor maintainer: renders commands, never mutates the fleet.
    let maintain_handle = scenario.autoscale.as_ref().map(|auto| {
        let mut maintainer = Maintainer::new(
            scenario.autoscale_config().expect("validated on load"),
            out_dir.map(|d| d.to_path_buf()),
        );
        let cadence = auto.cadence_versions;
        let launch_tmpl = auto.launch_command.clone();
        let retire_tmpl = auto.retire_command.clone();
        let dataflow = Arc::clone(&dataflow);
        let metrics = Arc::clone(&metrics);
        let clock = Arc::clone(&clock);
        let done = Arc::clone(&done);
        let driver = scenario.driver_policy();
        std::thread::spawn(move || -> Result<(Maintainer, Vec<String>), SimError> {
            let mut commands = Vec::new();
            let mut launched = 0u64;
            let mut next_boundary = cadence;
            loop {
                if done.load(Ordering::Acquire) {
                    break;
                }
                let version = dataflow.latest_version(&driver);
                if version >= next_boundary {
                    let now = clock.now();
                    for command in
                        maintainer.run_window(next_boundary, now, &dataflow, false, &metrics)?
                    {
                        commands.push(match command {
                            FleetCommand::Launch { gpus } => {
                                launched += 1;
                                render_command(&launch_tmpl, &format!("auto-{launched}"), gpus)
                            }
                            FleetCommand::Retire { uid } => render_command(&retire_tmpl, &uid, 0),
                        });
                    }
                    next_boundary += cadence;
                } else {
                    std::thread::sleep(Duration::from_millis(1));
                }
            }
            Ok((maintainer, commands))
        })
    });

    for handle in instance_handles {
        handle
            .join()
            .map_err(|_| SimError::WorkerPanic("rollout instance".into()))??;
    }
    let mut trainer_stats = BTreeMap::new();
    let mut cross_policy_members = 0;
    let mut end_time = 0.0f64;
    for handle in trainer_handles {
        let (policy, t) = handle
            .join()
            .map_err(|_| SimError::WorkerPanic("trainer".into()))??;
        cross_policy_members += t.cross_policy_members;
        end_time = end_time.max(t.records.last().map(|r| r.finished_at).unwrap_or(0.0));
        trainer_stats.insert(
            policy,
            TrainerRunStats {
                versions: t.version,
                total_wait_seconds: t.records.iter().map(|r| r.wait_seconds).sum(),
                total_step_seconds: t.records.iter().map(|r| r.step_seconds).sum(),
                records: t.records,
            },
        );
    }
    let (reports, decisions, shell_commands) = match maintain_handle {
        None => (Vec::new(), Vec::new(), Vec::new()),
        Some(handle) => {
            let (m, commands) =
                handle.join().map_err(|_| SimError::WorkerPanic("maintainer".into()))??;
            (m.reports, m.decisions, commands)
        }
    };

    let final_gpus = dataflow.total_raas_gpus();
    let ledger = dataflow.ledger();
    let violations = conservation_violations(&ledger, &trainer_stats);
    let summary = RunSummary {
        end_time,
        // The live fleet is static, so the integral is a plain product.
        rollout_gpu_seconds: final_gpus as f64 * end_time,
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
