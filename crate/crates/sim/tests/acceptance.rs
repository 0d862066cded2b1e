//! End-to-end acceptance checks. Each test guards one shipped guarantee
//! and prints a `criterion N: PASS` line on success (run with
//! `--nocapture` to see the checklist).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rollflow_core::hooks::{
    compose_batch, greso_should_submit, greso_update, post_filter_zero_adv, replay_admit,
    replay_serve, FilterDecision, GresoBucket, GresoConfig, GresoPromptState, ReplayConfig,
    ReplayPool,
};
use rollflow_core::model::{PolicyId, RewardStats, RolloutGroup, Trajectory, TrajectoryMeta};
use rollflow_core::report::{parse_report, render_report, BalanceWindow, InstanceStatus, LayoutRow};
use rollflow_core::scale::{compute_target, AutoscaleConfig, ScaleBranch, ScalingDecision};
use rollflow_core::weights::{
    transfer_time, LinkModel, PullResponse, SyncPolicy, WeightSnapshot, WeightStore,
};
use rollflow_sim::metrics::parse_metrics_csv;
use rollflow_sim::{load_scenario, run_scenario, RunSummary, Scenario};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).unwrap()
}

fn run(name: &str) -> RunSummary {
    let summary = run_scenario(&load(name), None).unwrap();
    assert!(
        summary.conservation_violations.is_empty(),
        "{name}: {:?}",
        summary.conservation_violations
    );
    summary
}

/// (time, version, labels, value) rows of one metric family from a run
/// output directory.
fn series(dir: &Path, family: &str) -> Vec<(f64, u64, BTreeMap<String, String>, f64)> {
    let text = std::fs::read_to_string(dir.join(format!("{family}.csv"))).unwrap();
    parse_metrics_csv(&text)
        .unwrap()
        .into_iter()
        .map(|(time, version, parsed_family, labels, value)| {
            assert_eq!(parsed_family, family);
            (time, version, labels, value)
        })
        .collect()
}

/// Per-version value of a single-row-per-version family (trainer metrics).
fn by_version(dir: &Path, family: &str) -> BTreeMap<u64, f64> {
    series(dir, family)
        .into_iter()
        .map(|(_, version, _, value)| (version, value))
        .collect()
}

fn group_with_rewards(rewards: &[f64]) -> RolloutGroup {
    let stats = RewardStats::from_rewards(rewards);
    let members = rewards
        .iter()
        .enumerate()
        .map(|(i, &reward)| Trajectory {
            traj_id: format!("t{i}"),
            task_id: "task".into(),
            prompt_id: "p".into(),
            meta: TrajectoryMeta {
                producing_policy: "a".into(),
                produced_at_version: 0,
                produced_time: 0.0,
                task_type: "solver".into(),
                reward_stats: stats,
            },
            reward,
            payload_tokens: 100,
        })
        .collect();
    RolloutGroup {
        prompt_id: "p".into(),
        policy: "a".into(),
        members,
    }
}

// --- criterion 1: three-zone pool sizing --------------------------------

/// Same rule, written independently of the library: grow by the reclaimed
/// wait share, shrink toward the consumption ratio with margin, hold in
/// the dead band; clamp afterwards.
fn oracle_target(g: u32, w: f64, n_p: u64, n_c: u64, cfg: &AutoscaleConfig) -> u32 {
    let raw = if w > cfg.tau_high {
        g as f64 / (1.0 - w) // w = 1 gives +inf; the cast below saturates
    } else if w < cfg.tau_low && n_p > 0 && n_c > 0 {
        (g as f64 * (n_c as f64 / n_p as f64) * cfg.rho).ceil().min(g as f64)
    } else {
        g as f64
    };
    let raw = if raw.is_finite() { raw.ceil() as u32 } else { u32::MAX };
    raw.clamp(cfg.g_min, cfg.g_max)
}

#[test]
fn criterion_01_pool_sizing_matches_oracle() {
    let cfg = AutoscaleConfig::default();

    let d = compute_target(6, 0.269, 700, 700, &cfg).unwrap();
    assert_eq!((d.branch, d.g_target), (ScaleBranch::ScaleUp, 9), "{d:?}");

    let d = compute_target(11, 0.021, 1000, 800, &cfg).unwrap();
    assert_eq!((d.branch, d.g_target), (ScaleBranch::ScaleDown, 10), "{d:?}");

    // Inside the dead band nothing moves, whatever the flow counts say.
    for w in [0.05, 0.07, 0.0999, 0.10] {
        let d = compute_target(8, w, 50, 5000, &cfg).unwrap();
        assert_eq!((d.branch, d.g_target), (ScaleBranch::Hold, 8), "w={w}");
    }

    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xACCE97);
    for case in 0..1000u32 {
        let g_min = rng.random_range(1..=10);
        let g_max = g_min + rng.random_range(0..=30);
        let tau_low = rng.random_range(0.01..0.30);
        let cfg = AutoscaleConfig {
            cadence_versions: 10,
            tau_low,
            tau_high: tau_low + rng.random_range(0.01..0.30),
            rho: rng.random_range(1.0..1.5),
            g_min,
            g_max,
            instance_sizes: vec![1],
        };
        let g = rng.random_range(1..=40);
        let w = match case % 5 {
            0 => 0.0,
            1 => 1.0,
            2 => cfg.tau_low,
            3 => cfg.tau_high,
            _ => rng.random_range(0.0..=1.0),
        };
        let n_p = if case % 7 == 0 { 0 } else { rng.random_range(0..5000) };
        let n_c = if case % 11 == 0 { 0 } else { rng.random_range(0..5000) };
        let decision = compute_target(g, w, n_p, n_c, &cfg).unwrap();
        let expected = oracle_target(g, w, n_p, n_c, &cfg);
        assert_eq!(
            decision.g_target, expected,
            "g={g} w={w} n_p={n_p} n_c={n_c} cfg={cfg:?}"
        );
        assert_eq!(decision.branch == ScaleBranch::Hold, decision.g_target == g);
        assert_eq!(
            decision.estimated_delta_gpus,
            i64::from(decision.g_target) - i64::from(g)
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "1000 cases took {elapsed:?}");

    println!("criterion 1: PASS — three-zone sizing matches the independent rule on 1000 random cases");
}

// --- criterion 2: balance report golden + parse round-trip ---------------

fn golden_window() -> (BalanceWindow, ScalingDecision) {
    let window = BalanceWindow {
        window_versions: 10,
        wall_time_sec: 86.5,
        eval_time_sec: 0.0,
        training_time_sec: 80.0,
        avg_step_time_sec: 8.0,
        avg_batch_wait_sec: 0.64,
        wait_fraction: 0.08,
        total_raas_gpus: 10,
        produced: 750,
        entered: 720,
        consumed: 600,
        stale_skipped: 18,
        layout: vec![
            LayoutRow {
                uid: "pool-a".into(),
                gpus: 4,
                produced: 350,
                accepted: 336,
                accept_rate: 0.96,
                throughput_per_gpu: 84.0,
                status: InstanceStatus::Healthy,
            },
            LayoutRow {
                uid: "pool-b".into(),
                gpus: 4,
                produced: 250,
                accepted: 240,
                accept_rate: 0.96,
                throughput_per_gpu: 60.0,
                status: InstanceStatus::Healthy,
            },
            LayoutRow {
                uid: "spot-c".into(),
                gpus: 1,
                produced: 150,
                accepted: 144,
                accept_rate: 0.96,
                throughput_per_gpu: 144.0,
                status: InstanceStatus::Healthy,
            },
            LayoutRow {
                uid: "cold-d".into(),
                gpus: 1,
                produced: 0,
                accepted: 0,
                accept_rate: 0.0,
                throughput_per_gpu: 0.0,
                status: InstanceStatus::Suspect,
            },
        ],
    };
    let decision = ScalingDecision {
        branch: ScaleBranch::ScaleUp,
        g_target: 12,
        estimated_delta_gpus: 2,
        weight_transfer_active: true,
    };
    (window, decision)
}

#[test]
fn criterion_02_balance_report_is_frozen_and_parseable() {
    let (window, decision) = golden_window();
    let rendered = render_report(&window, &decision);

    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/balance_report.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(rendered, golden, "rendered report deviates from the golden file");

    let parsed = parse_report(&rendered).unwrap();
    assert_eq!(parsed.window_versions, 10);
    assert_eq!(parsed.wall_time_sec, 86.5);
    assert_eq!(parsed.eval_time_sec, 0.0);
    assert_eq!(parsed.training_time_sec, 80.0);
    assert_eq!(parsed.avg_step_time_sec, 8.0);
    assert_eq!(parsed.avg_batch_wait_sec, 0.64);
    assert_eq!(parsed.wait_fraction, 0.08);
    assert_eq!(parsed.total_raas_gpus, 10);
    assert_eq!(parsed.produced, 750);
    assert_eq!(parsed.entered, 720);
    assert_eq!(parsed.accept_rate, 0.96);
    assert_eq!(parsed.consumed, 600);
    assert_eq!(parsed.stale_skipped, 18);
    assert_eq!(parsed.stale_rate, 0.025);
    assert_eq!(parsed.throughput_per_gpu, 72.0);
    assert_eq!(parsed.produce_consume_ratio, 1.2);
    assert_eq!(parsed.branch, "scale_up");
    assert_eq!(parsed.g_target, 12);
    assert_eq!(parsed.estimated_delta_gpus, 2);
    assert!(parsed.weight_transfer_active);
    assert_eq!(parsed.layout, window.layout);
    assert_eq!(parsed.total_instances, 4);
    assert_eq!(parsed.total_gpus, 10);
    assert_eq!(parsed.total_produced, 750);
    assert_eq!(parsed.total_accepted, 720);

    // The zero-production row renders its zero-denominator ratios as 0.
    assert!(rendered.contains("cold-d"), "{rendered}");
    let cold = rendered.lines().find(|l| l.starts_with("cold-d")).unwrap();
    assert!(cold.contains("0.0000") && cold.contains("0.00"), "{cold}");

    println!("criterion 2: PASS — balance report matches the golden bytes and parses back field-for-field");
}

// --- criterion 3: weight store determinism and delta economy -------------

#[test]
fn criterion_03_weight_sync_is_deterministic_and_sparse() {
    let policy: PolicyId = "p".into();
    let sync = SyncPolicy { full_sync_interval: 5, max_delta_chain: 3 };
    let n = 24usize;
    let started = Instant::now();

    for schedule in 0..10_000u64 {
        let mut rng = StdRng::seed_from_u64(schedule);
        let store_a = WeightStore::new();
        let store_b = WeightStore::new();
        let mut elements: Vec<u16> = (0..n).map(|_| rng.random()).collect();
        // A client that starts from the first full pull and then applies
        // whatever the store hands it.
        let mut client: Option<WeightSnapshot> = None;
        let versions = rng.random_range(1..=8u64);
        for version in 1..=versions {
            for _ in 0..rng.random_range(1..=4) {
                let i = rng.random_range(0..n);
                elements[i] ^= rng.random::<u16>() | 1;
            }
            let snap = WeightSnapshot {
                policy: policy.clone(),
                version,
                elements: elements.clone(),
            };
            let ra = store_a.publish(&policy, snap.clone(), &sync).unwrap();
            let rb = store_b.publish(&policy, snap, &sync).unwrap();
            assert_eq!(ra.delta_sparsity.map(f64::to_bits), rb.delta_sparsity.map(f64::to_bits));
            assert_eq!(ra.delta_bytes, rb.delta_bytes);
            assert_eq!(ra.full_bytes, rb.full_bytes);

            if rng.random_bool(0.5) {
                let held = client.as_ref().map(|s| s.version).unwrap_or(0);
                let pull_a = store_a.pull_update(&policy, held, &sync).unwrap();
                let pull_b = store_b.pull_update(&policy, held, &sync).unwrap();
                assert_eq!(pull_a.wire_bytes(), pull_b.wire_bytes());
                match (pull_a, pull_b) {
                    (PullResponse::UpToDate, PullResponse::UpToDate) => {}
                    (PullResponse::Full(a), PullResponse::Full(b)) => {
                        assert_eq!(a, b);
                        client = Some((*a).clone());
                    }
                    (PullResponse::Deltas(a), PullResponse::Deltas(b)) => {
                        assert_eq!(a, b);
                        let mut snap = client.take().expect("delta chain without a base");
                        for delta in a {
                            snap = rollflow_core::weights::apply_delta(&snap, &delta).unwrap();
                        }
                        client = Some(snap);
                    }
                    (a, b) => panic!("stores disagree on response kind: {a:?} vs {b:?}"),
                }
            }
        }
        // Catch the client up; it must land bit-identical to the publisher.
        match store_a.pull_update(&policy, client.as_ref().map(|s| s.version).unwrap_or(0), &sync).unwrap() {
            PullResponse::UpToDate => {}
            PullResponse::Full(snap) => client = Some((*snap).clone()),
            PullResponse::Deltas(chain) => {
                let mut snap = client.take().expect("delta chain without a base");
                for delta in chain {
                    snap = rollflow_core::weights::apply_delta(&snap, &delta).unwrap();
                }
                client = Some(snap);
            }
        }
        let client = client.expect("client never synced");
        assert_eq!(client.version, versions, "schedule {schedule}");
        assert_eq!(client.elements, elements, "schedule {schedule}");
    }

    // Delta economy at production shape: ~1.1% of a million elements
    // change per step, so a delta pull must cost a few percent of a full
    // snapshot, not more.
    let sync = SyncPolicy::default();
    let store = WeightStore::new();
    let n = 1_000_000usize;
    let mut rng = StdRng::seed_from_u64(1);
    let mut elements: Vec<u16> = (0..n).map(|_| rng.random()).collect();
    store
        .publish(&policy, WeightSnapshot { policy: policy.clone(), version: 1, elements: elements.clone() }, &sync)
        .unwrap();
    let changes = ((1.0 - 0.989) * n as f64).round() as usize;
    for i in rand::seq::index::sample(&mut rng, n, changes) {
        elements[i] ^= rng.random::<u16>() | 1;
    }
    let record = store
        .publish(&policy, WeightSnapshot { policy: policy.clone(), version: 2, elements }, &sync)
        .unwrap();
    assert_eq!(record.delta_sparsity, Some(1.0 - changes as f64 / n as f64));

    let delta_wire = match store.pull_update(&policy, 1, &sync).unwrap() {
        PullResponse::Deltas(chain) => chain,
        other => panic!("expected a delta chain, got {other:?}"),
    };
    let delta_bytes: u64 = {
        let response = PullResponse::Deltas(delta_wire);
        response.wire_bytes()
    };
    let full_bytes = match store.pull_update(&policy, 0, &sync).unwrap() {
        full @ PullResponse::Full(_) => full.wire_bytes(),
        other => panic!("expected a full snapshot, got {other:?}"),
    };
    let header_allowance = 64.0;
    assert!(
        (delta_bytes as f64) <= 0.035 * full_bytes as f64 + header_allowance,
        "delta {delta_bytes} vs full {full_bytes}"
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");

    println!("criterion 3: PASS — 10000 randomized sync schedules converge bit-identically; 98.9%-sparse deltas ship under 3.5% of a full snapshot");
}

// --- criterion 4: link timing and cross-region sync cadence --------------

#[test]
fn criterion_04_transfer_timing_and_full_sync_cadence() {
    let link = LinkModel { bandwidth_bits_per_sec: 4e9, rtt_seconds: 0.3 };
    assert!((transfer_time(1_500_000_000, &link) - 3.3).abs() < 1e-9);
    assert!((transfer_time(28_000_000_000, &link) - 56.3).abs() < 1e-9);

    let out = tempfile::tempdir().unwrap();
    let summary = run_scenario(&load("cross_region.toml"), Some(out.path())).unwrap();
    assert!(summary.conservation_violations.is_empty());

    let transfers = series(out.path(), "transfer_seconds");
    assert!(!transfers.is_empty());
    let full_interval = 20u64;
    let mut full_versions = Vec::new();
    let mut per_uid: BTreeMap<&str, (f64, f64)> = BTreeMap::new(); // (min full, max delta)
    for (_, version, labels, value) in &transfers {
        let uid = labels["uid"].as_str();
        let entry = per_uid.entry(uid).or_insert((f64::INFINITY, 0.0));
        match labels["mode"].as_str() {
            "full" => {
                // Full snapshots travel only on the sync cadence or to
                // bootstrap a client that has nothing yet.
                assert!(
                    version % full_interval == 0 || labels["from"] == "0",
                    "unexpected full pull at version {version} from {}",
                    labels["from"]
                );
                full_versions.push(*version);
                entry.0 = entry.0.min(*value);
            }
            "delta" => entry.1 = entry.1.max(*value),
            other => panic!("unknown transfer mode {other}"),
        }
    }
    let last_version = transfers.iter().map(|(_, v, _, _)| *v).max().unwrap();
    for mark in (full_interval..last_version).step_by(full_interval as usize) {
        assert!(
            full_versions.contains(&mark),
            "no full sync observed at version {mark}"
        );
    }
    // On any given link a full pull costs strictly more than any delta
    // pull: the series are distinguishable without labels.
    for (uid, (min_full, max_delta)) in per_uid {
        if min_full.is_finite() && max_delta > 0.0 {
            assert!(min_full > max_delta, "{uid}: full {min_full} <= delta {max_delta}");
        }
    }

    println!("criterion 4: PASS — link timing exact to 1e-9; full-sync spikes land exactly every 20 versions");
}

// --- criterion 5: communication/computation overlap ----------------------

#[test]
fn criterion_05_overlap_hides_or_exposes_sync_cost() {
    // Growing rollouts: once a step outlasts a remote full sync, waits
    // must vanish within ten versions.
    let out = tempfile::tempdir().unwrap();
    let summary = run_scenario(&load("overlap_grow.toml"), Some(out.path())).unwrap();
    assert!(summary.conservation_violations.is_empty());
    let steps = by_version(out.path(), "step_seconds");
    let waits = by_version(out.path(), "trainer_wait");
    let full_sync_seconds = series(out.path(), "transfer_seconds")
        .iter()
        .filter(|(_, _, labels, _)| labels["mode"] == "full")
        .map(|(_, _, _, value)| *value)
        .fold(0.0f64, f64::max);
    assert!(full_sync_seconds > 1.0, "remote full sync should be slow, got {full_sync_seconds}");
    let crossover = *steps
        .iter()
        .find(|(_, step)| **step >= full_sync_seconds)
        .expect("step time never outgrew the full sync")
        .0;
    let last = *steps.keys().max().unwrap();
    assert!(crossover + 10 <= last, "crossover {crossover} too late in a {last}-version run");
    for (version, step) in steps.iter().filter(|(v, _)| **v >= crossover + 10) {
        let wait = waits[version];
        assert!(
            wait < 0.01 * step,
            "v{version}: wait {wait} not under 1% of step {step}"
        );
    }

    // Steps held below the sync cost: the trainer keeps starving.
    let out = tempfile::tempdir().unwrap();
    let summary = run_scenario(&load("cross_region_desk.toml"), Some(out.path())).unwrap();
    assert!(summary.conservation_violations.is_empty());
    let steps = by_version(out.path(), "step_seconds");
    let waits = by_version(out.path(), "trainer_wait");
    let tail: Vec<u64> = steps.keys().copied().filter(|v| *v >= 25).collect();
    let wait_sum: f64 = tail.iter().map(|v| waits[v]).sum();
    let step_sum: f64 = tail.iter().map(|v| steps[v]).sum();
    let fraction = wait_sum / step_sum;
    assert!(fraction > 0.10, "steady-state wait fraction {fraction} not above 10%");

    println!(
        "criterion 5: PASS — waits vanish once steps cover the sync (crossover v{crossover}); stay at {:.0}% when they cannot",
        fraction * 100.0
    );
}

// --- criterion 6: heterogeneous throughput shares ------------------------

#[test]
fn criterion_06_production_follows_throughput_shares() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_scenario(&load("hetero_shares.toml"), Some(out.path())).unwrap();
    assert!(summary.conservation_violations.is_empty());

    // Cumulative totals over the whole run.
    let produced: BTreeMap<&str, f64> = summary
        .ledger
        .per_instance
        .iter()
        .map(|(uid, counters)| (uid.as_str(), counters.produced as f64))
        .collect();
    let base = produced["pool-full"];
    assert!(base > 0.0);
    for (uid, share) in [("pool-full", 1.0), ("pool-mid", 0.6), ("pool-low", 0.3)] {
        let ratio = produced[uid] / base;
        let err = (ratio - share).abs() / share;
        assert!(
            err < 0.05,
            "{uid}: produced ratio {ratio:.4} vs share {share} ({:.1}% off)",
            err * 100.0
        );
    }

    // And window by window: cut the run into ten equal time slices (the
    // first is warmup) and hold every slice to the same 5%.
    let rows = series(out.path(), "produced");
    let mut cumulative: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut end = 0.0f64;
    for (time, _, labels, value) in &rows {
        cumulative.entry(labels["uid"].as_str()).or_default().push((*time, *value));
        end = end.max(*time);
    }
    let produced_before = |uid: &str, t: f64| -> f64 {
        cumulative[uid]
            .iter()
            .take_while(|(time, _)| *time < t)
            .last()
            .map(|(_, value)| *value)
            .unwrap_or(0.0)
    };
    let window = end / 10.0;
    for slice in 1..10 {
        let (lo, hi) = (slice as f64 * window, (slice + 1) as f64 * window);
        let base = produced_before("pool-full", hi) - produced_before("pool-full", lo);
        for (uid, share) in [("pool-mid", 0.6), ("pool-low", 0.3)] {
            let count = produced_before(uid, hi) - produced_before(uid, lo);
            let err = (count / base - share).abs() / share;
            assert!(
                err < 0.05,
                "window {slice}: {uid} ratio {:.4} vs {share}",
                count / base
            );
        }
    }

    println!("criterion 6: PASS — production tracks 100:60:30 throughput shares within 5%, per window and cumulatively");
}

// --- criterion 7: elastic fleet beats a static worst-case fleet ----------

#[test]
fn criterion_07_elastic_scaling_saves_gpu_time() {
    let elastic = run("elastic.toml");
    let fixed_min = run("elastic_fixed_min.toml");
    let fixed_max = run("elastic_fixed_max.toml");

    // The controller must land inside the dead band and stay there.
    let last_report = elastic.reports.last().expect("no balance reports");
    let parsed = parse_report(last_report).unwrap();
    assert!(
        (0.05..=0.10).contains(&parsed.wait_fraction),
        "converged wait fraction {} outside the dead band",
        parsed.wait_fraction
    );
    assert_eq!(parsed.branch, "hold");
    assert!((6..=11).contains(&elastic.final_gpus), "{}", elastic.final_gpus);

    // Pinned at the lower bound the trainer starves past the band.
    let starved = &fixed_min.trainers["a"];
    let starved_w = starved.total_wait_seconds / starved.total_step_seconds;
    assert!(starved_w > 0.10, "fixed-min wait fraction {starved_w}");

    // And the elastic run finishes the same work on strictly less GPU-time
    // than a fleet provisioned for the worst case the whole way.
    assert!(
        elastic.rollout_gpu_seconds < fixed_max.rollout_gpu_seconds,
        "elastic {} >= fixed-max {}",
        elastic.rollout_gpu_seconds,
        fixed_max.rollout_gpu_seconds
    );

    println!(
        "criterion 7: PASS — elastic fleet used {:.0} gpu-seconds vs {:.0} pinned at the maximum, converging to w={:.4}",
        elastic.rollout_gpu_seconds, fixed_max.rollout_gpu_seconds, parsed.wait_fraction
    );
}

// --- criterion 8: data hooks ---------------------------------------------

#[test]
fn criterion_08_hooks_filter_curate_and_replay() {
    // Zero-advantage filtering agrees with a brute-force scan on 10000
    // random groups, ties and mixed signs included.
    let mut rng = StdRng::seed_from_u64(88);
    for case in 0..10_000 {
        let len = rng.random_range(1..=16usize);
        let rewards: Vec<f64> = if case % 2 == 0 {
            let v = [-1.0, 0.0, 0.5, 1.0][rng.random_range(0..4)];
            vec![v; len]
        } else {
            (0..len).map(|_| [-1.0, 0.0, 0.5, 1.0][rng.random_range(0..4)]).collect()
        };
        let group = group_with_rewards(&rewards);
        let brute_force_uniform = rewards.iter().all(|r| *r == rewards[0]);
        let expected = if brute_force_uniform { FilterDecision::Drop } else { FilterDecision::Keep };
        assert_eq!(post_filter_zero_adv(&group), expected, "rewards {rewards:?}");
    }

    // Curation drifts to the floor under a stream of zero-variance groups
    // (both difficulty buckets) and back to certainty under informative
    // ones, never leaving [floor, 1].
    let cfg = GresoConfig::default();
    for (rewards, floor) in [
        (vec![1.0; 8], cfg.floor_easy), // consistently easy and uniform
        (vec![0.0; 8], cfg.floor_hard), // consistently hard and uniform
    ] {
        let group = group_with_rewards(&rewards);
        let mut state = GresoPromptState::unseen("p");
        assert!(greso_should_submit(&state, 0.999));
        for _ in 0..200 {
            state = greso_update(&state, &group, &cfg);
            assert!(
                state.submit_prob >= floor && state.submit_prob <= 1.0,
                "prob {} left [{}, 1]",
                state.submit_prob,
                floor
            );
        }
        assert_eq!(state.submit_prob, floor, "did not drift to the floor");
        assert!(!greso_should_submit(&state, floor), "draw at p must not submit");
        assert!(greso_should_submit(&state, floor - 1e-9));
    }
    let informative = group_with_rewards(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    let mut state = GresoPromptState::unseen("p");
    for _ in 0..200 {
        state = greso_update(&state, &informative, &cfg);
    }
    assert_eq!(state.submit_prob, 1.0, "informative prompts should recover to always-submit");
    assert_eq!(state.bucket, GresoBucket::Easy);

    // Replay mixing: with a warm pool the replayed share of a 256-batch is
    // exactly round(r * 256).
    for (ratio, expected_replay) in [(0.0, 0), (0.3, 77), (0.5, 128), (0.7, 179)] {
        let cfg = ReplayConfig { pool_capacity: 4096, max_staleness: 8, replay_ratio: ratio };
        let mut pool = ReplayPool::new(cfg);
        let warm = group_with_rewards(&vec![1.0; 4]).members;
        for i in 0..500 {
            replay_admit(&mut pool, warm[i % warm.len()].clone(), 10);
        }
        let (fresh, replayed) =
            compose_batch(10_000, &pool, &cfg, 256, 10).expect("batch should be ready");
        assert_eq!(replayed, expected_replay, "ratio {ratio}");
        assert_eq!(fresh + replayed, 256);
    }

    // Replay never serves anything staler than the version-gap bound.
    let cfg = ReplayConfig { pool_capacity: 4096, max_staleness: 8, replay_ratio: 0.5 };
    let mut pool = ReplayPool::new(cfg);
    for admitted in 0..=20u64 {
        let mut member = group_with_rewards(&[1.0, 0.0]).members.remove(0);
        member.traj_id = format!("admitted-{admitted}");
        replay_admit(&mut pool, member, admitted);
    }
    let served = replay_serve(&mut pool, 64, 20, &mut rng);
    assert!(!served.is_empty());
    for member in &served {
        let admitted: u64 = member.traj_id.strip_prefix("admitted-").unwrap().parse().unwrap();
        assert!(20 - admitted <= 8, "served {} at gap {}", member.traj_id, 20 - admitted);
    }

    println!("criterion 8: PASS — zero-advantage filter matches brute force on 10000 groups; curation drifts to its floors; replay shares and staleness bounds hold exactly");
}

// --- criterion 9: co-training isolation ----------------------------------

#[test]
fn criterion_09_policies_train_in_isolation() {
    let scenario = load("two_policy.toml");
    let baseline = run_scenario(&scenario, None).unwrap();
    assert!(baseline.conservation_violations.is_empty());
    assert_eq!(baseline.trainers["a"].versions, 100);
    assert_eq!(baseline.trainers["b"].versions, 100);
    assert_eq!(baseline.cross_policy_members, 0);

    let mut stalled = scenario;
    stalled.trainers[1].stalled = true;
    let halted = run_scenario(&stalled, None).unwrap();
    assert!(halted.conservation_violations.is_empty());
    assert_eq!(halted.trainers["a"].versions, 100);
    assert_eq!(halted.trainers["b"].versions, 0, "a stalled trainer must not step");
    assert_eq!(halted.cross_policy_members, 0);

    // Stalling one lane leaves the other's entire step log untouched,
    // down to the bit.
    let a_before = &baseline.trainers["a"].records;
    let a_after = &halted.trainers["a"].records;
    assert_eq!(a_before.len(), a_after.len());
    for (x, y) in a_before.iter().zip(a_after) {
        assert_eq!(x.version, y.version);
        assert_eq!(x.wait_seconds.to_bits(), y.wait_seconds.to_bits());
        assert_eq!(x.step_seconds.to_bits(), y.step_seconds.to_bits());
        assert_eq!(x.finished_at.to_bits(), y.finished_at.to_bits());
        assert_eq!(x.fresh_count, y.fresh_count);
        assert_eq!(x.delta_sparsity, y.delta_sparsity);
    }

    println!("criterion 9: PASS — two lanes, zero cross-policy members; stalling one leaves the other bit-identical");
}

// --- criterion 10: reproducibility ---------------------------------------

#[test]
fn criterion_10_same_seed_same_bytes() {
    let started = Instant::now();
    for name in ["vanilla.toml", "hooks.toml", "elastic.toml"] {
        let scenario = load(name);
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        run_scenario(&scenario, Some(out_a.path())).unwrap();
        run_scenario(&scenario, Some(out_b.path())).unwrap();
        let mut files: Vec<String> = std::fs::read_dir(out_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        files.sort();
        assert!(files.iter().any(|f| f.ends_with(".csv")));
        for file in files {
            let a = std::fs::read(out_a.path().join(&file)).unwrap();
            let b = std::fs::read(out_b.path().join(&file)).unwrap();
            assert_eq!(a, b, "{name}: {file} differs between identical runs");
        }
    }
    // The whole reproducibility sweep stays comfortably inside a test
    // budget; the full suite is expected to finish within minutes.
    assert!(started.elapsed().as_secs() < 120);

    println!("criterion 10: PASS — three scenarios, two runs each, byte-identical outputs");
}
