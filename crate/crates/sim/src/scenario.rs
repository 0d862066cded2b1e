//! Scenario files: a TOML description of one full deployment — workflow
//! and policies, trainers, rollout instances with their links, hook
//! selection, sync/staleness policies, optional pool autoscaling, and
//! engine knobs. `load_scenario` parses and validates; `build` wires the
//! actual components.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use rollflow_core::dataflow::{
    BufferConfig, DataflowConfig, DataflowLayer, RouteMode, RoutingTable, StalenessPolicy,
    TrainerLaneConfig,
};
use rollflow_core::hooks::{
    BatchComposer, Curator, FreshOnlyComposer, GresoConfig, GresoCurator, KeepAllCurator,
    KeepAllFilter, PostFilter, ReplayComposer, ReplayConfig, ZeroAdvFilter,
};
use rollflow_core::model::{PolicyId, RewardAssignment, WorkflowSpec};
use rollflow_core::scale::AutoscaleConfig;
use rollflow_core::weights::{LinkModel, SyncPolicy, WeightStore};

use crate::error::SimError;
use crate::raas::{InstanceSim, ResolvedInstance};
use crate::trainer::{TrainerSim, TrainerParams};
use crate::workload::{TokenDist, TokenModel, Workload};

fn default_workflow_name() -> String {
    "solve".into()
}
fn default_verifier_noise() -> f64 {
    0.1
}
fn default_prompt_count() -> u32 {
    256
}
fn default_group_size() -> u32 {
    8
}
fn default_success_low() -> f64 {
    0.2
}
fn default_success_high() -> f64 {
    0.8
}
fn default_max_version_gap() -> u64 {
    8
}
fn default_hook() -> String {
    "keep_all".into()
}
fn default_composer() -> String {
    "fresh_only".into()
}
fn default_replay_ratio() -> f64 {
    0.3
}
fn default_pool_capacity() -> u32 {
    10_000
}
fn default_full_sync_interval() -> u64 {
    20
}
fn default_max_delta_chain() -> u64 {
    4
}
fn default_token_value() -> f64 {
    400.0
}
fn default_sparsity() -> f64 {
    0.989
}
fn default_element_count() -> u32 {
    100_000
}
fn default_watermark() -> f64 {
    0.9
}
fn default_poll_seconds() -> f64 {
    0.02
}
fn default_share() -> f64 {
    1.0
}
fn default_base_rate() -> f64 {
    1000.0
}
fn default_reload_seconds() -> f64 {
    5.0
}
fn default_refresh_every() -> u64 {
    1
}
fn default_bandwidth() -> f64 {
    1e11
}
fn default_cadence() -> u64 {
    10
}
fn default_tau_low() -> f64 {
    0.05
}
fn default_tau_high() -> f64 {
    0.10
}
fn default_rho() -> f64 {
    1.10
}
fn default_instance_sizes() -> Vec<u32> {
    vec![1]
}
fn default_executor() -> String {
    "sim".into()
}
fn default_launch_command() -> String {
    "launch-rollout --uid {uid} --gpus {gpus}".into()
}
fn default_retire_command() -> String {
    "retire-rollout --uid {uid}".into()
}
fn default_idle_poll() -> f64 {
    0.05
}
fn default_max_sim_seconds() -> f64 {
    1e7
}
fn default_live_time_scale() -> f64 {
    200.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSection {
    #[serde(default = "default_workflow_name")]
    pub name: String,
    /// `[["solver", "a"], ["verifier", "b"]]` — role name, policy.
    pub roles: Vec<(String, String)>,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default = "default_verifier_noise")]
    pub verifier_noise: f64,
    /// Per-role reward assignment: "terminal" (default) or "per_role".
    #[serde(default)]
    pub reward: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsSection {
    #[serde(default = "default_prompt_count")]
    pub count: u32,
    #[serde(default = "default_group_size")]
    pub group_size: u32,
    #[serde(default = "default_success_low")]
    pub success_low: f64,
    #[serde(default = "default_success_high")]
    pub success_high: f64,
}

impl Default for PromptsSection {
    fn default() -> Self {
        PromptsSection {
            count: default_prompt_count(),
            group_size: default_group_size(),
            success_low: default_success_low(),
            success_high: default_success_high(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StalenessSection {
    #[serde(default = "default_max_version_gap")]
    pub max_version_gap: u64,
}

impl Default for StalenessSection {
    fn default() -> Self {
        StalenessSection { max_version_gap: default_max_version_gap() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HooksSection {
    /// "keep_all" or "greso".
    #[serde(default = "default_hook")]
    pub curator: String,
    /// "keep_all" or "zero_advantage".
    #[serde(default = "default_hook")]
    pub post_filter: String,
    /// "fresh_only" or "replay".
    #[serde(default = "default_composer")]
    pub composer: String,
    #[serde(default = "default_replay_ratio")]
    pub replay_ratio: f64,
    #[serde(default = "default_pool_capacity")]
    pub replay_pool_capacity: u32,
    /// Optional overrides for the selective-rollout curator.
    #[serde(default)]
    pub greso: Option<GresoSection>,
}

impl Default for HooksSection {
    fn default() -> Self {
        HooksSection {
            curator: default_hook(),
            post_filter: default_hook(),
            composer: default_composer(),
            replay_ratio: default_replay_ratio(),
            replay_pool_capacity: default_pool_capacity(),
            greso: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GresoSection {
    pub p_init_easy: Option<f64>,
    pub p_init_hard: Option<f64>,
    pub alpha_easy: Option<f64>,
    pub alpha_hard: Option<f64>,
    pub delta_p: Option<f64>,
    pub floor_easy: Option<f64>,
    pub floor_hard: Option<f64>,
    pub correctness_threshold: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    #[serde(default = "default_full_sync_interval")]
    pub full_sync_interval: u64,
    #[serde(default = "default_max_delta_chain")]
    pub max_delta_chain: u64,
}

impl Default for SyncSection {
    fn default() -> Self {
        SyncSection {
            full_sync_interval: default_full_sync_interval(),
            max_delta_chain: default_max_delta_chain(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSection {
    pub producer: String,
    pub consumers: Vec<String>,
    /// "exclusive", "shared", or "mixed".
    pub mode: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokensSection {
    /// "constant", "uniform", or "lognormal".
    #[serde(default = "default_token_dist")]
    pub distribution: String,
    #[serde(default = "default_token_value")]
    pub value: f64,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    /// Draws are scaled by `1 + growth_per_version * submit_version`.
    #[serde(default)]
    pub growth_per_version: f64,
}

fn default_token_dist() -> String {
    "constant".into()
}

impl Default for TokensSection {
    fn default() -> Self {
        TokensSection {
            distribution: default_token_dist(),
            value: default_token_value(),
            low: None,
            high: None,
            mu: None,
            sigma: None,
            growth_per_version: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub policy: String,
    pub batch_size: u32,
    pub step_seconds_per_token: f64,
    #[serde(default = "default_sparsity")]
    pub target_sparsity: f64,
    #[serde(default = "default_element_count")]
    pub element_count: u32,
    /// Defaults to 4x batch_size.
    pub buffer_capacity: Option<u32>,
    #[serde(default = "default_watermark")]
    pub backpressure_watermark: f64,
    #[serde(default = "default_poll_seconds")]
    pub poll_seconds: f64,
    /// A stalled trainer registers its lane but never polls for batches.
    #[serde(default)]
    pub stalled: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bits_per_sec: f64,
    #[serde(default)]
    pub rtt_seconds: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection { bandwidth_bits_per_sec: default_bandwidth(), rtt_seconds: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaasSection {
    pub uid: String,
    pub gpus: u32,
    #[serde(default = "default_share")]
    pub throughput_share: f64,
    #[serde(default = "default_base_rate")]
    pub base_tokens_per_sec_per_gpu: f64,
    #[serde(default = "default_reload_seconds")]
    pub reload_seconds: f64,
    #[serde(default = "default_refresh_every")]
    pub refresh_every: u64,
    /// Defaults to the instance's GPU count.
    pub tasks_per_pull: Option<u32>,
    #[serde(default)]
    pub link: LinkSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchTemplate {
    #[serde(default = "default_share")]
    pub throughput_share: f64,
    #[serde(default = "default_base_rate")]
    pub base_tokens_per_sec_per_gpu: f64,
    #[serde(default = "default_reload_seconds")]
    pub reload_seconds: f64,
    #[serde(default = "default_refresh_every")]
    pub refresh_every: u64,
    pub tasks_per_pull: Option<u32>,
    #[serde(default)]
    pub link: LinkSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoscaleSection {
    #[serde(default = "default_cadence")]
    pub cadence_versions: u64,
    #[serde(default = "default_tau_low")]
    pub tau_low: f64,
    #[serde(default = "default_tau_high")]
    pub tau_high: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub g_min: u32,
    pub g_max: u32,
    #[serde(default = "default_instance_sizes")]
    pub instance_sizes: Vec<u32>,
    /// "sim" mutates the simulated fleet; "shell" only renders commands.
    #[serde(default = "default_executor")]
    pub executor: String,
    #[serde(default = "default_launch_command")]
    pub launch_command: String,
    #[serde(default = "default_retire_command")]
    pub retire_command: String,
    /// Spec applied to instances the controller launches.
    pub launch: Option<LaunchTemplate>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default = "default_idle_poll")]
    pub idle_poll_seconds: f64,
    #[serde(default = "default_max_sim_seconds")]
    pub max_sim_seconds: f64,
    /// Simulated seconds per wall-clock second in live mode.
    #[serde(default = "default_live_time_scale")]
    pub live_time_scale: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            idle_poll_seconds: default_idle_poll(),
            max_sim_seconds: default_max_sim_seconds(),
            live_time_scale: default_live_time_scale(),
        }
    }
}

/// A parsed, validated deployment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub run_versions: u64,
    #[serde(default)]
    pub fresher_first: bool,
    pub workflow: WorkflowSection,
    #[serde(default)]
    pub prompts: PromptsSection,
    #[serde(default)]
    pub staleness: StalenessSection,
    #[serde(default)]
    pub hooks: HooksSection,
    #[serde(default)]
    pub sync: SyncSection,
    #[serde(default)]
    pub routing: Vec<RouteSection>,
    #[serde(default)]
    pub tokens: TokensSection,
    pub trainers: Vec<TrainerSection>,
    pub raas: Vec<RaasSection>,
    pub autoscale: Option<AutoscaleSection>,
    #[serde(default)]
    pub engine: EngineSection,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Scenario(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, SimError> {
    let scenario: Scenario =
        toml::from_str(text).map_err(|e| SimError::Scenario(format!("parse error: {e}")))?;
    scenario.validate()?;
    Ok(scenario)
}

fn err(msg: impl Into<String>) -> SimError {
    SimError::Scenario(msg.into())
}

fn positive(value: f64, what: &str) -> Result<(), SimError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(err(format!("{what} must be positive and finite, got {value}")));
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.run_versions == 0 {
            return Err(err("run_versions must be at least 1"));
        }
        if self.workflow.roles.is_empty() {
            return Err(err("workflow needs at least one role"));
        }
        if self.trainers.is_empty() {
            return Err(err("at least one trainer is required"));
        }
        if self.raas.is_empty() {
            return Err(err("at least one raas instance is required"));
        }
        for (role, _) in &self.workflow.roles {
            match self.workflow.reward.get(role).map(String::as_str) {
                None | Some("terminal") | Some("per_role") => {}
                Some(other) => {
                    return Err(err(format!(
                        "reward for role {role:?} must be \"terminal\" or \"per_role\", got {other:?}"
                    )))
                }
            }
        }
        for role in self.workflow.reward.keys() {
            if !self.workflow.roles.iter().any(|(r, _)| r == role) {
                return Err(err(format!("reward assigned to unknown role {role:?}")));
            }
        }
        if self.workflow.verifier_noise < 0.0 {
            return Err(err("verifier_noise must be non-negative"));
        }
        if self.prompts.count == 0 || self.prompts.group_size == 0 {
            return Err(err("prompts.count and prompts.group_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prompts.success_low)
            || !(0.0..=1.0).contains(&self.prompts.success_high)
            || self.prompts.success_low > self.prompts.success_high
        {
            return Err(err("prompt success range must satisfy 0 <= low <= high <= 1"));
        }
        match self.hooks.curator.as_str() {
            "keep_all" | "greso" => {}
            other => return Err(err(format!("unknown curator {other:?}"))),
        }
        match self.hooks.post_filter.as_str() {
            "keep_all" | "zero_advantage" => {}
            other => return Err(err(format!("unknown post_filter {other:?}"))),
        }
        match self.hooks.composer.as_str() {
            "fresh_only" | "replay" => {}
            other => return Err(err(format!("unknown composer {other:?}"))),
        }
        if !(0.0..=1.0).contains(&self.hooks.replay_ratio) {
            return Err(err("replay_ratio must lie in [0, 1]"));
        }
        if self.hooks.replay_pool_capacity == 0 {
            return Err(err("replay_pool_capacity must be positive"));
        }
        if self.sync.full_sync_interval == 0 || self.sync.max_delta_chain == 0 {
            return Err(err("sync intervals must be positive"));
        }
        self.token_model()?;

        let mut trainer_policies = BTreeSet::new();
        for t in &self.trainers {
            if !trainer_policies.insert(t.policy.clone()) {
                return Err(err(format!("duplicate trainer for policy {:?}", t.policy)));
            }
            if t.batch_size == 0 {
                return Err(err("trainer batch_size must be positive"));
            }
            positive(t.step_seconds_per_token, "step_seconds_per_token")?;
            if !(0.0..1.0).contains(&t.target_sparsity) {
                return Err(err("target_sparsity must lie in [0, 1)"));
            }
            if t.element_count == 0 {
                return Err(err("element_count must be positive"));
            }
            if t.buffer_capacity == Some(0) {
                return Err(err("buffer_capacity must be positive"));
            }
            if !(t.backpressure_watermark > 0.0 && t.backpressure_watermark <= 1.0) {
                return Err(err("backpressure_watermark must lie in (0, 1]"));
            }
            positive(t.poll_seconds, "poll_seconds")?;
        }

        let mut uids = BTreeSet::new();
        for r in &self.raas {
            if !uids.insert(r.uid.clone()) {
                return Err(err(format!("duplicate raas uid {:?}", r.uid)));
            }
            if r.uid.starts_with("auto-") {
                return Err(err("raas uids starting with \"auto-\" are reserved for launches"));
            }
            if r.gpus == 0 {
                return Err(err(format!("raas {:?} needs at least one gpu", r.uid)));
            }
            if !(r.throughput_share > 0.0 && r.throughput_share <= 1.0) {
                return Err(err("throughput_share must lie in (0, 1]"));
            }
            positive(r.base_tokens_per_sec_per_gpu, "base_tokens_per_sec_per_gpu")?;
            if r.reload_seconds < 0.0 {
                return Err(err("reload_seconds must be non-negative"));
            }
            if r.refresh_every == 0 {
                return Err(err("refresh_every must be positive"));
            }
            if r.tasks_per_pull == Some(0) {
                return Err(err("tasks_per_pull must be positive"));
            }
            positive(r.link.bandwidth_bits_per_sec, "link bandwidth")?;
            if r.link.rtt_seconds < 0.0 {
                return Err(err("link rtt must be non-negative"));
            }
        }

        // Routing and workflow consistency against the trainer set.
        let routing = self.routing_table()?;
        let policies: BTreeSet<PolicyId> =
            trainer_policies.iter().map(|p| PolicyId::from(p.as_str())).collect();
        routing.validate(&policies)?;
        let workflow = self.workflow_spec();
        rollflow_core::model::validate_workflow(&workflow, &routing.producers())
            .map_err(|e| err(format!("workflow invalid: {e}")))?;

        if let Some(auto) = &self.autoscale {
            self.autoscale_config()?.validate()?;
            match auto.executor.as_str() {
                "sim" => {
                    if auto.launch.is_none() {
                        return Err(err(
                            "autoscale.executor = \"sim\" requires an [autoscale.launch] template",
                        ));
                    }
                }
                "shell" => {}
                other => return Err(err(format!("unknown autoscale executor {other:?}"))),
            }
            if let Some(launch) = &auto.launch {
                if !(launch.throughput_share > 0.0 && launch.throughput_share <= 1.0) {
                    return Err(err("launch throughput_share must lie in (0, 1]"));
                }
                positive(launch.base_tokens_per_sec_per_gpu, "launch base rate")?;
                positive(launch.link.bandwidth_bits_per_sec, "launch link bandwidth")?;
            }
        }
        positive(self.engine.idle_poll_seconds, "idle_poll_seconds")?;
        positive(self.engine.max_sim_seconds, "max_sim_seconds")?;
        positive(self.engine.live_time_scale, "live_time_scale")?;
        Ok(())
    }

    pub fn workflow_spec(&self) -> WorkflowSpec {
        WorkflowSpec {
            roles: self
                .workflow
                .roles
                .iter()
                .map(|(role, policy)| (role.clone(), PolicyId::from(policy.as_str())))
                .collect(),
            max_retries: self.workflow.max_retries,
            reward_assignment: self
                .workflow
                .reward
                .iter()
                .map(|(role, kind)| {
                    let assignment = match kind.as_str() {
                        "per_role" => RewardAssignment::PerRole,
                        _ => RewardAssignment::Terminal,
                    };
                    (role.clone(), assignment)
                })
                .collect(),
        }
    }

    /// Explicit routes if given, otherwise each trainer policy consumes
    /// its own production.
    pub fn routing_table(&self) -> Result<RoutingTable, SimError> {
        if self.routing.is_empty() {
            return Ok(RoutingTable::exclusive(
                self.trainers.iter().map(|t| PolicyId::from(t.policy.as_str())),
            ));
        }
        let mut table = RoutingTable::default();
        for route in &self.routing {
            let mode = match route.mode.as_str() {
                "exclusive" => RouteMode::Exclusive,
                "shared" => RouteMode::Shared,
                "mixed" => RouteMode::Mixed,
                other => return Err(err(format!("unknown route mode {other:?}"))),
            };
            table.insert(
                PolicyId::from(route.producer.as_str()),
                route.consumers.iter().map(|c| PolicyId::from(c.as_str())).collect(),
                mode,
            );
        }
        Ok(table)
    }

    pub fn token_model(&self) -> Result<TokenModel, SimError> {
        let t = &self.tokens;
        let dist = match t.distribution.as_str() {
            "constant" => {
                positive(t.value, "tokens.value")?;
                TokenDist::Constant(t.value)
            }
            "uniform" => {
                let low = t.low.ok_or_else(|| err("uniform tokens need `low`"))?;
                let high = t.high.ok_or_else(|| err("uniform tokens need `high`"))?;
                positive(low, "tokens.low")?;
                if high < low {
                    return Err(err("tokens.high must be >= tokens.low"));
                }
                TokenDist::Uniform { low, high }
            }
            "lognormal" => {
                let mu = t.mu.ok_or_else(|| err("lognormal tokens need `mu`"))?;
                let sigma = t.sigma.ok_or_else(|| err("lognormal tokens need `sigma`"))?;
                if sigma < 0.0 {
                    return Err(err("tokens.sigma must be non-negative"));
                }
                TokenDist::LogNormal { mu, sigma }
            }
            other => return Err(err(format!("unknown token distribution {other:?}"))),
        };
        if self.tokens.growth_per_version < 0.0 {
            return Err(err("growth_per_version must be non-negative"));
        }
        Ok(TokenModel { dist, growth_per_version: self.tokens.growth_per_version })
    }

    pub fn autoscale_config(&self) -> Result<AutoscaleConfig, SimError> {
        let auto = self
            .autoscale
            .as_ref()
            .ok_or_else(|| err("scenario has no [autoscale] section"))?;
        Ok(AutoscaleConfig {
            cadence_versions: auto.cadence_versions,
            tau_low: auto.tau_low,
            tau_high: auto.tau_high,
            rho: auto.rho,
            g_min: auto.g_min,
            g_max: auto.g_max,
            instance_sizes: auto.instance_sizes.clone(),
        })
    }

    fn curator(&self) -> Box<dyn Curator> {
        match self.hooks.curator.as_str() {
            "greso" => {
                let mut cfg = GresoConfig::default();
                if let Some(g) = &self.hooks.greso {
                    if let Some(v) = g.p_init_easy {
                        cfg.p_init_easy = v;
                    }
                    if let Some(v) = g.p_init_hard {
                        cfg.p_init_hard = v;
                    }
                    if let Some(v) = g.alpha_easy {
                        cfg.alpha_easy = v;
                    }
                    if let Some(v) = g.alpha_hard {
                        cfg.alpha_hard = v;
                    }
                    if let Some(v) = g.delta_p {
                        cfg.delta_p = v;
                    }
                    if let Some(v) = g.floor_easy {
                        cfg.floor_easy = v;
                    }
                    if let Some(v) = g.floor_hard {
                        cfg.floor_hard = v;
                    }
                    if let Some(v) = g.correctness_threshold {
                        cfg.correctness_threshold = v;
                    }
                }
                Box::new(GresoCurator::new(cfg))
            }
            _ => Box::new(KeepAllCurator),
        }
    }

    fn post_filter(&self) -> Box<dyn PostFilter> {
        match self.hooks.post_filter.as_str() {
            "zero_advantage" => Box::new(ZeroAdvFilter),
            _ => Box::new(KeepAllFilter),
        }
    }

    fn composer(&self) -> Box<dyn BatchComposer> {
        match self.hooks.composer.as_str() {
            "replay" => Box::new(ReplayComposer::new(ReplayConfig {
                pool_capacity: self.hooks.replay_pool_capacity as usize,
                max_staleness: self.staleness.max_version_gap,
                replay_ratio: self.hooks.replay_ratio,
            })),
            _ => Box::new(FreshOnlyComposer),
        }
    }

    /// Instantiates every component of the deployment.
    pub fn build(&self) -> Result<Built, SimError> {
        let workflow = self.workflow_spec();
        let lanes: Vec<TrainerLaneConfig> = self
            .trainers
            .iter()
            .map(|t| TrainerLaneConfig {
                policy: PolicyId::from(t.policy.as_str()),
                buffer: BufferConfig {
                    capacity: t.buffer_capacity.unwrap_or(t.batch_size * 4) as usize,
                    backpressure_watermark: t.backpressure_watermark,
                },
                composer: self.composer(),
            })
            .collect();
        let dataflow = Arc::new(DataflowLayer::new(
            DataflowConfig {
                workflow_name: self.workflow.name.clone(),
                workflow: workflow.clone(),
                routing: self.routing_table()?,
                staleness: StalenessPolicy { max_version_gap: self.staleness.max_version_gap },
                prompts: (0..self.prompts.count).map(|i| format!("prompt-{i}")).collect(),
                curator: self.curator(),
                post_filter: self.post_filter(),
                fresher_first: self.fresher_first,
                seed: self.seed,
            },
            lanes,
        )?);
        let store = Arc::new(WeightStore::new());
        let sync = SyncPolicy {
            full_sync_interval: self.sync.full_sync_interval,
            max_delta_chain: self.sync.max_delta_chain,
        };
        let workload = Arc::new(Workload::new(
            workflow,
            self.prompts.group_size as usize,
            self.workflow.verifier_noise,
            self.prompts.success_low,
            self.prompts.success_high,
            self.token_model()?,
            self.seed,
        ));

        let mut instances = BTreeMap::new();
        for r in &self.raas {
            dataflow.register_raas(&r.uid, r.gpus)?;
            let resolved = ResolvedInstance {
                uid: r.uid.clone(),
                gpus: r.gpus,
                throughput_share: r.throughput_share,
                base_tokens_per_sec_per_gpu: r.base_tokens_per_sec_per_gpu,
                reload_seconds: r.reload_seconds,
                refresh_every: r.refresh_every,
                tasks_per_pull: r.tasks_per_pull.unwrap_or(r.gpus).max(1) as usize,
                link: LinkModel {
                    bandwidth_bits_per_sec: r.link.bandwidth_bits_per_sec,
                    rtt_seconds: r.link.rtt_seconds,
                },
            };
            instances.insert(
                r.uid.clone(),
                InstanceSim::new(resolved, Arc::clone(&workload), self.seed),
            );
        }

        let routing = self.routing_table()?;
        let mut trainers = BTreeMap::new();
        for t in &self.trainers {
            let policy = PolicyId::from(t.policy.as_str());
            let allowed_producers = routing
                .producers()
                .into_iter()
                .filter(|p| routing.routes_to(p, &policy))
                .collect();
            trainers.insert(
                t.policy.clone(),
                TrainerSim::new(TrainerParams {
                    policy,
                    batch_size: t.batch_size as usize,
                    step_seconds_per_token: t.step_seconds_per_token,
                    target_sparsity: t.target_sparsity,
                    element_count: t.element_count as usize,
                    poll_seconds: t.poll_seconds,
                    stalled: t.stalled,
                    run_versions: self.run_versions,
                    seed: self.seed,
                    allowed_producers,
                }),
            );
        }

        Ok(Built { dataflow, store, sync, workload, instances, trainers })
    }

    /// The trainer whose published versions pace report windows.
    pub fn driver_policy(&self) -> PolicyId {
        PolicyId::from(self.trainers[0].policy.as_str())
    }

    /// Builds the instance spec for a controller-launched instance.
    pub fn launch_instance(&self, uid: &str, gpus: u32) -> Result<ResolvedInstance, SimError> {
        let auto = self
            .autoscale
            .as_ref()
            .ok_or_else(|| err("launch requested without [autoscale]"))?;
        let template = auto
            .launch
            .as_ref()
            .ok_or_else(|| err("launch requested without [autoscale.launch] template"))?;
        Ok(ResolvedInstance {
            uid: uid.to_string(),
            gpus,
            throughput_share: template.throughput_share,
            base_tokens_per_sec_per_gpu: template.base_tokens_per_sec_per_gpu,
            reload_seconds: template.reload_seconds,
            refresh_every: template.refresh_every,
            tasks_per_pull: template.tasks_per_pull.unwrap_or(gpus).max(1) as usize,
            link: LinkModel {
                bandwidth_bits_per_sec: template.link.bandwidth_bits_per_sec,
                rtt_seconds: template.link.rtt_seconds,
            },
        })
    }
}

/// Everything `Scenario::build` wires together.
pub struct Built {
    pub dataflow: Arc<DataflowLayer>,
    pub store: Arc<WeightStore>,
    pub sync: SyncPolicy,
    pub workload: Arc<Workload>,
    pub instances: BTreeMap<String, InstanceSim>,
    pub trainers: BTreeMap<String, TrainerSim>,
}
