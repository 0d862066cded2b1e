//! Shared vocabulary: policies, versions, tasks, trajectories, groups,
//! batches, and workflow descriptions.
//!
//! These are immutable value records; the only behavior here is validation
//! and small derived statistics. Construction is done by the harness, which
//! generates identifiers as `<kind>-<monotone counter>` so runs replay
//! deterministically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Monotone trainer step counter. Version 0 is the initial, never-published
/// state of a policy; the first published version is 1.
pub type Version = u64;

/// Short opaque identifier naming one trained policy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolicyId(String);

impl PolicyId {
    pub fn new(id: impl Into<String>) -> Self {
        PolicyId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PolicyId {
    fn from(s: &str) -> Self {
        PolicyId::new(s)
    }
}

/// A (policy, version) pair as it appears in publish logs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ModelVersion {
    pub policy: PolicyId,
    pub version: Version,
}

/// One unit of rollout work handed to a service instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTask {
    pub task_id: String,
    /// Identifier into the scenario's prompt stream.
    pub prompt_id: String,
    /// Name of the workflow this task executes. The role list itself lives
    /// in the scenario; tasks carry the name so they stay cheap to clone.
    pub workflow: String,
    /// Latest published version of each involved policy at issue time.
    pub submit_version: BTreeMap<PolicyId, Version>,
    pub issue_time: f64,
}

/// (min, max, mean) of the rewards in one rollout group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl RewardStats {
    /// Panics on an empty slice; groups are validated non-empty before
    /// statistics are attached.
    pub fn from_rewards(rewards: &[f64]) -> Self {
        assert!(!rewards.is_empty(), "reward stats over an empty group");
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &r in rewards {
            min = min.min(r);
            max = max.max(r);
            sum += r;
        }
        RewardStats {
            min,
            max,
            mean: sum / rewards.len() as f64,
        }
    }
}

/// Where, when, and by which policy version a trajectory was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub producing_policy: PolicyId,
    /// Version of the producing policy the service held when generation
    /// started. Never newer than the latest published version at that time.
    pub produced_at_version: Version,
    pub produced_time: f64,
    /// Free-form tag; the simulator stores the role name here.
    pub task_type: String,
    /// Statistics over the rewards of the group this trajectory belongs to.
    pub reward_stats: RewardStats,
}

/// One completed rollout result.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub traj_id: String,
    pub task_id: String,
    pub prompt_id: String,
    pub meta: TrajectoryMeta,
    pub reward: f64,
    /// Synthetic token count standing in for generated length; always >= 1.
    pub payload_tokens: u64,
}

/// All rollouts produced for one prompt by one policy in one generation
/// round.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub policy: PolicyId,
    pub members: Vec<Trajectory>,
}

/// A batch handed to a trainer. `members` lists fresh trajectories first,
/// replayed ones after.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub trainer: PolicyId,
    pub members: Vec<Trajectory>,
    pub fresh_count: usize,
    pub replay_count: usize,
    /// Trainer version at assembly time (the version the batch trains on
    /// top of, not the one it produces).
    pub assembled_at_version: Version,
}

/// How a role's trajectories are rewarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardAssignment {
    /// The role receives the workflow's terminal outcome.
    Terminal,
    /// The role receives its own per-role outcome (e.g. verdict correctness
    /// for a verifier).
    PerRole,
}

/// Role wiring for (possibly multi-policy) rollout workflows.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowSpec {
    /// Ordered (role_name, policy) pairs; executed in order.
    pub roles: Vec<(String, PolicyId)>,
    /// Extra full passes allowed when the final role rejects the outcome.
    pub max_retries: u32,
    pub reward_assignment: BTreeMap<String, RewardAssignment>,
}

impl WorkflowSpec {
    /// Distinct policies appearing in role order (first occurrence wins).
    pub fn policies(&self) -> Vec<PolicyId> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (_, p) in &self.roles {
            if seen.insert(p.clone()) {
                out.push(p.clone());
            }
        }
        out
    }

    pub fn reward_for(&self, role: &str) -> RewardAssignment {
        self.reward_assignment
            .get(role)
            .copied()
            .unwrap_or(RewardAssignment::Terminal)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("group has no members")]
    EmptyGroup,
    #[error("workflow has no roles")]
    NoRoles,
    #[error("role `{role}` references undeclared policy `{policy}`")]
    UnknownPolicy { role: String, policy: String },
    #[error("duplicate role name `{0}`")]
    DuplicateRole(String),
}

/// True iff all member rewards are exactly equal (zero within-group
/// variance). Equality is bit-level for the binary/discrete rewards this
/// harness produces — deliberately no tolerance, so `0.5` and `0.5 + 1e-12`
/// count as different outcomes. A singleton group is trivially uniform.
pub fn group_is_zero_advantage(group: &RolloutGroup) -> Result<bool, ModelError> {
    let first = match group.members.first() {
        Some(t) => t.reward,
        None => return Err(ModelError::EmptyGroup),
    };
    Ok(group.members.iter().all(|t| t.reward == first))
}

/// Checks that every role names a declared policy and role names are unique.
pub fn validate_workflow(
    spec: &WorkflowSpec,
    declared: &BTreeSet<PolicyId>,
) -> Result<(), ModelError> {
    if spec.roles.is_empty() {
        return Err(ModelError::NoRoles);
    }
    let mut seen = BTreeSet::new();
    for (role, policy) in &spec.roles {
        if !seen.insert(role.clone()) {
            return Err(ModelError::DuplicateRole(role.clone()));
        }
        if !declared.contains(policy) {
            return Err(ModelError::UnknownPolicy {
                role: role.clone(),
                policy: policy.to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(reward: f64) -> Trajectory {
        Trajectory {
            traj_id: "t-0".into(),
            task_id: "task-0".into(),
            prompt_id: "prompt-0".into(),
            meta: TrajectoryMeta {
                producing_policy: "a".into(),
                produced_at_version: 0,
                produced_time: 0.0,
                task_type: "solver".into(),
                reward_stats: RewardStats {
                    min: reward,
                    max: reward,
                    mean: reward,
                },
            },
            reward,
            payload_tokens: 1,
        }
    }

    fn group(rewards: &[f64]) -> RolloutGroup {
        RolloutGroup {
            prompt_id: "prompt-0".into(),
            policy: "a".into(),
            members: rewards.iter().copied().map(traj).collect(),
        }
    }

    #[test]
    fn zero_advantage_basic_cases() {
        assert_eq!(group_is_zero_advantage(&group(&[1.0, 1.0, 1.0, 1.0])), Ok(true));
        assert_eq!(group_is_zero_advantage(&group(&[1.0, 0.0, 1.0, 0.0])), Ok(false));
        // Exact equality, no tolerance: a 1e-12 nudge is a different reward.
        assert_eq!(group_is_zero_advantage(&group(&[0.5, 0.5 + 1e-12])), Ok(false));
        // A singleton group has zero variance by definition.
        assert_eq!(group_is_zero_advantage(&group(&[0.25])), Ok(true));
    }

    #[test]
    fn zero_advantage_rejects_empty_group() {
        assert_eq!(
            group_is_zero_advantage(&group(&[])),
            Err(ModelError::EmptyGroup)
        );
    }

    /// Brute-force oracle: pairwise equality over every pair.
    fn all_equal_oracle(rewards: &[f64]) -> bool {
        for i in 0..rewards.len() {
            for j in 0..rewards.len() {
                if rewards[i] != rewards[j] {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn zero_advantage_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let n = rng.random_range(1..=8);
            // Draw from a small discrete set so all-equal groups actually
            // occur, with occasional continuous values mixed in.
            let rewards: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.9) {
                        *[0.0, 0.5, 1.0].iter().nth(rng.random_range(0..3)).unwrap()
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let g = group(&rewards);
            assert_eq!(
                group_is_zero_advantage(&g).unwrap(),
                all_equal_oracle(&rewards),
                "disagreement on rewards {rewards:?}"
            );
        }
    }

    #[test]
    fn reward_stats_from_rewards() {
        let s = RewardStats::from_rewards(&[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(s.min, 0.0);
        assert_eq!(s.max, 1.0);
        assert_eq!(s.mean, 0.5);
    }

    fn wf(roles: &[(&str, &str)]) -> WorkflowSpec {
        WorkflowSpec {
            roles: roles
                .iter()
                .map(|(r, p)| (r.to_string(), PolicyId::from(*p)))
                .collect(),
            max_retries: 0,
            reward_assignment: BTreeMap::new(),
        }
    }

    fn declared(ids: &[&str]) -> BTreeSet<PolicyId> {
        ids.iter().map(|s| PolicyId::from(*s)).collect()
    }

    #[test]
    fn validate_workflow_cases() {
        assert_eq!(
            validate_workflow(&wf(&[("solver", "A"), ("verifier", "B")]), &declared(&["A", "B"])),
            Ok(())
        );
        assert_eq!(
            validate_workflow(&wf(&[("solver", "A")]), &declared(&["B"])),
            Err(ModelError::UnknownPolicy {
                role: "solver".into(),
                policy: "A".into()
            })
        );
        assert_eq!(
            validate_workflow(&wf(&[("s", "A"), ("s", "B")]), &declared(&["A", "B"])),
            Err(ModelError::DuplicateRole("s".into()))
        );
        assert_eq!(validate_workflow(&wf(&[]), &declared(&["A"])), Err(ModelError::NoRoles));
    }

    #[test]
    fn workflow_policy_listing_dedupes_in_role_order() {
        let spec = wf(&[("draft", "A"), ("check", "B"), ("revise", "A")]);
        let policies = spec.policies();
        assert_eq!(policies, vec![PolicyId::from("A"), PolicyId::from("B")]);
    }
}
