//! Rollout-pool sizing: a three-zone rule over the trainer's waiting
//! fraction. Starved trainers grow the pool proportionally to the time
//! lost waiting, oversupplied pools shrink toward the consumption rate
//! with a safety margin, and a dead band in between holds steady so the
//! pool does not oscillate.

use thiserror::Error;

use crate::report::{InstanceStatus, LayoutRow};

/// Controller parameters. `tau_low`/`tau_high` bound the dead band on the
/// waiting fraction, `rho` is the margin kept when shrinking, and targets
/// are clamped to `[g_min, g_max]` GPUs.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoscaleConfig {
    /// How often (in trainer versions) a report window closes and the
    /// controller runs.
    pub cadence_versions: u64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub rho: f64,
    pub g_min: u32,
    pub g_max: u32,
    /// GPU counts an instance may be launched with.
    pub instance_sizes: Vec<u32>,
}

impl Default for AutoscaleConfig {
    fn default() -> Self {
        AutoscaleConfig {
            cadence_versions: 10,
            tau_low: 0.05,
            tau_high: 0.10,
            rho: 1.10,
            g_min: 6,
            g_max: 11,
            instance_sizes: vec![1, 2, 4],
        }
    }
}

impl AutoscaleConfig {
    pub fn validate(&self) -> Result<(), ScaleError> {
        if self.cadence_versions == 0 {
            return Err(ScaleError::InvalidConfig("cadence_versions must be positive"));
        }
        if !(self.tau_low >= 0.0 && self.tau_low < self.tau_high && self.tau_high < 1.0) {
            return Err(ScaleError::InvalidConfig(
                "thresholds must satisfy 0 <= tau_low < tau_high < 1",
            ));
        }
        if !(self.rho >= 1.0) {
            return Err(ScaleError::InvalidConfig("rho must be at least 1"));
        }
        if self.g_min < 1 || self.g_min > self.g_max {
            return Err(ScaleError::InvalidConfig("need 1 <= g_min <= g_max"));
        }
        if self.instance_sizes.is_empty() || self.instance_sizes.iter().any(|&s| s == 0) {
            return Err(ScaleError::InvalidConfig("instance_sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleBranch {
    ScaleUp,
    ScaleDown,
    Hold,
}

impl std::fmt::Display for ScaleBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScaleBranch::ScaleUp => "scale_up",
            ScaleBranch::ScaleDown => "scale_down",
            ScaleBranch::Hold => "hold",
        })
    }
}

/// Output of one controller evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingDecision {
    pub branch: ScaleBranch,
    pub g_target: u32,
    /// `g_target - g_current`, so negative when shrinking.
    pub estimated_delta_gpus: i64,
    /// Whether a weight pull was in flight when the window closed; the
    /// maintainer defers fleet changes while this is set. `compute_target`
    /// itself always leaves it false — the caller fills it in.
    pub weight_transfer_active: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScaleError {
    #[error("wait fraction {0} outside [0, 1]")]
    InvalidWaitFraction(f64),
    #[error("cannot free {needed} GPUs: only {removable} removable")]
    InsufficientCapacity { needed: u32, removable: u32 },
    #[error("invalid autoscale config: {0}")]
    InvalidConfig(&'static str),
}

/// Applies the three-zone rule to a pool of `g` GPUs with waiting
/// fraction `w`, given `n_p` trajectories accepted and `n_c` consumed
/// over the window.
///
/// * `w > tau_high`: grow to `ceil(g / (1 - w))` — sized so the recovered
///   wait time turns into rollout throughput. At `w = 1` this is
///   unbounded and lands on `g_max`.
/// * `w < tau_low` with production and consumption both observed: shrink
///   to `min(g, ceil(g * (n_c / n_p) * rho))`.
/// * otherwise hold.
///
/// The result is clamped to `[g_min, g_max]` after the formula. The
/// branch reports the direction of the clamped move, so it is `Hold`
/// exactly when the final target equals the current pool.
pub fn compute_target(
    g: u32,
    w: f64,
    n_p: u64,
    n_c: u64,
    cfg: &AutoscaleConfig,
) -> Result<ScalingDecision, ScaleError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(ScaleError::InvalidWaitFraction(w));
    }
    let raw = if w > cfg.tau_high {
        (g as f64 / (1.0 - w)).ceil()
    } else if w < cfg.tau_low && n_p > 0 && n_c > 0 {
        let shrunk = (g as f64 * (n_c as f64 / n_p as f64) * cfg.rho).ceil();
        shrunk.min(g as f64)
    } else {
        g as f64
    };
    let g_target = (raw as u32).clamp(cfg.g_min, cfg.g_max);
    // The label reports what actually happens to the pool, not which
    // formula fired: the clamp can move an out-of-band pool even in the
    // dead band, or drag a grow below the current size.
    let branch = match g_target.cmp(&g) {
        std::cmp::Ordering::Equal => ScaleBranch::Hold,
        std::cmp::Ordering::Greater => ScaleBranch::ScaleUp,
        std::cmp::Ordering::Less => ScaleBranch::ScaleDown,
    };
    Ok(ScalingDecision {
        branch,
        g_target,
        estimated_delta_gpus: i64::from(g_target) - i64::from(g),
        weight_transfer_active: false,
    })
}

/// Picks instances to retire, freeing at least `gpus_to_remove` GPUs
/// (overshoot by part of the last victim is allowed). Suspect instances
/// go first, then ascending throughput per GPU, with ties broken by uid.
pub fn select_scale_down_victims(
    rows: &[LayoutRow],
    gpus_to_remove: u32,
) -> Result<Vec<String>, ScaleError> {
    let removable: u32 = rows.iter().map(|r| r.gpus).sum();
    if removable < gpus_to_remove {
        return Err(ScaleError::InsufficientCapacity { needed: gpus_to_remove, removable });
    }
    let mut order: Vec<&LayoutRow> = rows.iter().collect();
    order.sort_by(|a, b| {
        (a.status == InstanceStatus::Healthy)
            .cmp(&(b.status == InstanceStatus::Healthy))
            .then(a.throughput_per_gpu.total_cmp(&b.throughput_per_gpu))
            .then(a.uid.cmp(&b.uid))
    });
    let mut victims = Vec::new();
    let mut freed = 0u32;
    for row in order {
        if freed >= gpus_to_remove {
            break;
        }
        victims.push(row.uid.clone());
        freed += row.gpus;
    }
    Ok(victims)
}
