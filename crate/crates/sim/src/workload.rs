//! Synthetic rollout workload: per-prompt success probabilities, token
//! length draws, and the role-by-role execution of one task into rollout
//! groups. No real model runs anywhere — rewards are Bernoulli draws
//! against a seeded difficulty table, so every run is reproducible from
//! the scenario seed.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rollflow_core::model::{
    PolicyId, RewardAssignment, RewardStats, RolloutGroup, RolloutTask, Trajectory,
    TrajectoryMeta, Version, WorkflowSpec,
};
use rollflow_core::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenDist {
    Constant(f64),
    Uniform { low: f64, high: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenModel {
    pub dist: TokenDist,
    /// Draws are scaled by `1 + growth_per_version * submit_version`, which
    /// models responses getting longer as the policy improves.
    pub growth_per_version: f64,
}

impl TokenModel {
    /// Always at least one token.
    pub fn draw(&self, version: Version, rng: &mut ChaCha8Rng) -> u64 {
        let base = match self.dist {
            TokenDist::Constant(v) => v,
            TokenDist::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
            TokenDist::LogNormal { mu, sigma } => {
                // Box-Muller; one normal per draw keeps the stream simple.
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random();
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (mu + sigma * z).exp()
            }
        };
        let scaled = base * (1.0 + self.growth_per_version * version as f64);
        scaled.round().max(1.0) as u64
    }
}

/// Execution result for one task: the per-role groups (in role order) and
/// the total tokens drawn, retries included.
pub struct TaskRun {
    pub groups: Vec<RolloutGroup>,
    pub total_tokens: u64,
}

pub struct Workload {
    pub workflow: WorkflowSpec,
    pub group_size: usize,
    pub verifier_noise: f64,
    success_low: f64,
    success_high: f64,
    success_seed: u64,
    pub tokens: TokenModel,
}

impl Workload {
    pub fn new(
        workflow: WorkflowSpec,
        group_size: usize,
        verifier_noise: f64,
        success_low: f64,
        success_high: f64,
        tokens: TokenModel,
        root_seed: u64,
    ) -> Self {
        Workload {
            workflow,
            group_size,
            verifier_noise,
            success_low,
            success_high,
            success_seed: derive_seed(root_seed, "prompts"),
            tokens,
        }
    }

    /// Difficulty table entry for a prompt. Purely a hash of the prompt id,
    /// so the value is stable no matter which instance asks, in what order.
    pub fn success_prob(&self, prompt_id: &str) -> f64 {
        let h = derive_seed(self.success_seed, prompt_id);
        let unit = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.success_low + unit * (self.success_high - self.success_low)
    }

    /// The version draws are scaled by: the submit version of the first
    /// role's policy.
    fn growth_version(&self, task: &RolloutTask) -> Version {
        let first = &self.workflow.roles[0].1;
        task.submit_version.get(first).copied().unwrap_or(0)
    }

    /// Runs one task to completion: `group_size` members, each re-running
    /// the full role sequence until every verifier accepts or retries are
    /// exhausted. A rejected member re-executes the solver role too, so its
    /// tokens are drawn (and paid for) again. Per role, the trajectories of
    /// all members form one group.
    ///
    /// `held` supplies `produced_at_version` stamps; `finished` stamps
    /// `produced_time`.
    pub fn run_task(
        &self,
        task: &RolloutTask,
        held: &BTreeMap<PolicyId, Version>,
        finished: f64,
        traj_seq: &mut u64,
        rng: &mut ChaCha8Rng,
    ) -> TaskRun {
        let roles = &self.workflow.roles;
        let growth_version = self.growth_version(task);
        let p_success = self.success_prob(&task.prompt_id);
        let mut total_tokens: u64 = 0;

        // Final-attempt outcome and payload per (member, role).
        let mut outcomes = vec![vec![false; roles.len()]; self.group_size];
        let mut payloads = vec![vec![1u64; roles.len()]; self.group_size];

        for member in 0..self.group_size {
            let mut attempts = 0;
            loop {
                attempts += 1;
                let mut solver_outcome = false;
                for (ri, _) in roles.iter().enumerate() {
                    let tokens = self.tokens.draw(growth_version, rng);
                    total_tokens += tokens;
                    payloads[member][ri] = tokens;
                    let outcome = if ri == 0 {
                        solver_outcome = rng.random_bool(p_success);
                        solver_outcome
                    } else {
                        let base = if solver_outcome { 1.0 } else { 0.0 };
                        let noise = if self.verifier_noise > 0.0 {
                            rng.random_range(-self.verifier_noise..self.verifier_noise)
                        } else {
                            0.0
                        };
                        let p_accept = (base + noise).clamp(0.0, 1.0);
                        rng.random_bool(p_accept)
                    };
                    outcomes[member][ri] = outcome;
                }
                let verifiers_accept = outcomes[member][1..].iter().all(|&o| o);
                if verifiers_accept || attempts > self.workflow.max_retries {
                    break;
                }
            }
        }

        // Rewards from the final attempt.
        let mut groups = Vec::with_capacity(roles.len());
        for (ri, (role, policy)) in roles.iter().enumerate() {
            let rewards: Vec<f64> = (0..self.group_size)
                .map(|m| {
                    let own = outcomes[m][ri];
                    match self.workflow.reward_for(role) {
                        RewardAssignment::Terminal => {
                            if outcomes[m][0] {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        RewardAssignment::PerRole => {
                            if own {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .collect();
            let stats = RewardStats::from_rewards(&rewards);
            let produced_at = held.get(policy).copied().unwrap_or(0);
            let members = (0..self.group_size)
                .map(|m| {
                    *traj_seq += 1;
                    Trajectory {
                        traj_id: format!("traj-{traj_seq}"),
                        task_id: task.task_id.clone(),
                        prompt_id: task.prompt_id.clone(),
                        meta: TrajectoryMeta {
                            producing_policy: policy.clone(),
                            produced_at_version: produced_at,
                            produced_time: finished,
                            task_type: role.clone(),
                            reward_stats: stats,
                        },
                        reward: rewards[m],
                        payload_tokens: payloads[m][ri],
                    }
                })
                .collect();
            groups.push(RolloutGroup {
                prompt_id: task.prompt_id.clone(),
                policy: policy.clone(),
                members,
            });
        }

        TaskRun { groups, total_tokens }
    }
}
