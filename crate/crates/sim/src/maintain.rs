//! Window maintainer: every `cadence_versions` trainer steps it closes
//! the balance window, renders the report, runs the three-zone target
//! computation, and turns the decision into fleet commands. Fleet changes
//! are deferred while a weight transfer is in flight.

use std::path::PathBuf;

use rollflow_core::dataflow::DataflowLayer;
use rollflow_core::model::Version;
use rollflow_core::report::render_report;
use rollflow_core::scale::{
    compute_target, select_scale_down_victims, AutoscaleConfig, ScalingDecision,
};

use crate::error::SimError;
use crate::metrics::MetricsSink;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FleetCommand {
    Launch { gpus: u32 },
    Retire { uid: String },
}

pub struct Maintainer {
    pub cfg: AutoscaleConfig,
    out_dir: Option<PathBuf>,
    /// Rendered reports in window order.
    pub reports: Vec<String>,
    pub decisions: Vec<ScalingDecision>,
}

impl Maintainer {
    pub fn new(cfg: AutoscaleConfig, out_dir: Option<PathBuf>) -> Self {
        Maintainer { cfg, out_dir, reports: Vec::new(), decisions: Vec::new() }
    }

    /// Greedy fill: largest configured size that still fits the remaining
    /// deficit; stops rather than overshoot past the target.
    fn plan_launches(&self, deficit: u32) -> Vec<FleetCommand> {
        let mut sizes = self.cfg.instance_sizes.clone();
        sizes.sort_unstable();
        let mut remaining = deficit;
        let mut commands = Vec::new();
        while remaining > 0 {
            match sizes.iter().rev().find(|&&s| s <= remaining) {
                Some(&size) => {
                    commands.push(FleetCommand::Launch { gpus: size });
                    remaining -= size;
                }
                None => break,
            }
        }
        commands
    }

    /// Closes one window: stats, decision, report, commands. The window is
    /// rolled afterwards, so the next report starts fresh.
    pub fn run_window(
        &mut self,
        version: Version,
        now: f64,
        dataflow: &DataflowLayer,
        transfer_active: bool,
        metrics: &MetricsSink,
    ) -> Result<Vec<FleetCommand>, SimError> {
        let window = dataflow.window_stats(self.cfg.cadence_versions)?;
        let g = dataflow.total_raas_gpus();
        let mut decision =
            compute_target(g, window.wait_fraction, window.entered, window.consumed, &self.cfg)?;
        decision.weight_transfer_active = transfer_active;

        let report = render_report(&window, &decision);
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("balance_report_{version:05}.txt")), &report)?;
        }
        metrics.push("wait_fraction", now, version, &[], window.wait_fraction);

        let commands = if transfer_active {
            // A pull is mid-flight; moving GPUs now would tear it. Skip this
            // window and let the next one act.
            Vec::new()
        } else if decision.g_target > g {
            self.plan_launches(decision.g_target - g)
        } else if decision.g_target < g {
            select_scale_down_victims(&window.layout, g - decision.g_target)?
                .into_iter()
                .map(|uid| FleetCommand::Retire { uid })
                .collect()
        } else {
            Vec::new()
        };

        self.reports.push(report);
        self.decisions.push(decision);
        dataflow.roll_window(now);
        Ok(commands)
    }
}

/// Renders a shell command from a template, substituting `{uid}` and
/// `{gpus}`.
pub fn render_command(template: &str, uid: &str, gpus: u32) -> String {
    template.replace("{uid}", uid).replace("{gpus}", &gpus.to_string())
}
