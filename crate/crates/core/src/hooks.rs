//! Pluggable data-selection hooks at the three intervention points of the
//! dataflow layer: curators decide which prompts are worth rolling out,
//! post-filters decide which finished groups enter the buffers, and batch
//! composers decide how training batches mix fresh and replayed
//! trajectories.
//!
//! Each family ships a keep-all/fresh-only default plus one adaptive
//! implementation: a selective-rollout curator with per-prompt submit
//! probabilities, a zero-advantage group filter, and a bounded replay pool.
//! All randomness comes through explicitly passed generators.

use std::collections::{BTreeMap, VecDeque};

use rand::RngCore;

use crate::model::{group_is_zero_advantage, RolloutGroup, Trajectory, Version};

/// Uniform draw in [0, 1) from a raw generator (53-bit mantissa).
pub fn uniform_draw(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Decides, per candidate prompt, whether to submit it for rollout.
pub trait Curator: Send {
    fn should_submit(&mut self, prompt_id: &str, rng: &mut dyn RngCore) -> bool;

    /// Sees every finished group (before post-filtering) so adaptive
    /// curators can update their statistics.
    fn observe_group(&mut self, _group: &RolloutGroup) {}
}

/// Submits every prompt; consumes no randomness.
pub struct KeepAllCurator;

impl Curator for KeepAllCurator {
    fn should_submit(&mut self, _prompt_id: &str, _rng: &mut dyn RngCore) -> bool {
        true
    }
}

/// Selective-rollout curator configuration. Prompts are bucketed by mean
/// correctness into easy/hard; each bucket has a target zero-variance ratio
/// and a submit-probability floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GresoConfig {
    pub p_init_easy: f64,
    pub p_init_hard: f64,
    pub alpha_easy: f64,
    pub alpha_hard: f64,
    pub delta_p: f64,
    pub floor_easy: f64,
    pub floor_hard: f64,
    pub correctness_threshold: f64,
}

impl Default for GresoConfig {
    fn default() -> Self {
        GresoConfig {
            p_init_easy: 0.5,
            p_init_hard: 0.5,
            alpha_easy: 0.083,
            alpha_hard: 0.167,
            delta_p: 0.01,
            floor_easy: 0.05,
            floor_hard: 0.30,
            correctness_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GresoBucket {
    Unseen,
    Easy,
    Hard,
}

/// Per-prompt adaptive state.
#[derive(Debug, Clone, PartialEq)]
pub struct GresoPromptState {
    pub prompt_id: String,
    pub bucket: GresoBucket,
    pub submit_prob: f64,
    pub groups_seen: u64,
    pub zero_variance_seen: u64,
    /// Running mean of group mean rewards.
    pub mean_correctness: f64,
}

impl GresoPromptState {
    pub fn unseen(prompt_id: impl Into<String>) -> Self {
        GresoPromptState {
            prompt_id: prompt_id.into(),
            bucket: GresoBucket::Unseen,
            submit_prob: 1.0,
            groups_seen: 0,
            zero_variance_seen: 0,
            mean_correctness: 0.0,
        }
    }
}

/// Unseen prompts always submit; otherwise submit iff the uniform draw
/// falls below the prompt's submit probability (strictly, so a draw equal
/// to the probability does not submit).
pub fn greso_should_submit(state: &GresoPromptState, uniform_draw: f64) -> bool {
    match state.bucket {
        GresoBucket::Unseen => true,
        _ => uniform_draw < state.submit_prob,
    }
}

/// Folds one finished group into the prompt's state: updates the history
/// counts and running mean correctness, assigns the bucket by mean
/// correctness against the threshold, then nudges the submit probability
/// toward the bucket's target zero-variance ratio — the empirical ratio
/// above target lowers it by `delta_p`, below raises it by `delta_p`,
/// exactly at target leaves it unchanged — and clamps to [floor, 1].
pub fn greso_update(
    state: &GresoPromptState,
    group: &RolloutGroup,
    cfg: &GresoConfig,
) -> GresoPromptState {
    let group_mean = group.members.iter().map(|t| t.reward).sum::<f64>()
        / group.members.len().max(1) as f64;
    let zero_var = group_is_zero_advantage(group).unwrap_or(false);

    let groups_seen = state.groups_seen + 1;
    let zero_variance_seen = state.zero_variance_seen + u64::from(zero_var);
    let mean_correctness =
        (state.mean_correctness * state.groups_seen as f64 + group_mean) / groups_seen as f64;

    let easy = mean_correctness >= cfg.correctness_threshold;
    let (bucket, alpha, floor, p_init) = if easy {
        (GresoBucket::Easy, cfg.alpha_easy, cfg.floor_easy, cfg.p_init_easy)
    } else {
        (GresoBucket::Hard, cfg.alpha_hard, cfg.floor_hard, cfg.p_init_hard)
    };

    let base = match state.bucket {
        GresoBucket::Unseen => p_init,
        _ => state.submit_prob,
    };
    let ratio = zero_variance_seen as f64 / groups_seen as f64;
    let adjusted = if ratio > alpha {
        base - cfg.delta_p
    } else if ratio < alpha {
        base + cfg.delta_p
    } else {
        base
    };

    GresoPromptState {
        prompt_id: state.prompt_id.clone(),
        bucket,
        submit_prob: adjusted.clamp(floor, 1.0),
        groups_seen,
        zero_variance_seen,
        mean_correctness,
    }
}

/// Stateful curator over a whole prompt set.
pub struct GresoCurator {
    cfg: GresoConfig,
    states: BTreeMap<String, GresoPromptState>,
}

impl GresoCurator {
    pub fn new(cfg: GresoConfig) -> Self {
        GresoCurator {
            cfg,
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, prompt_id: &str) -> Option<&GresoPromptState> {
        self.states.get(prompt_id)
    }
}

impl Curator for GresoCurator {
    fn should_submit(&mut self, prompt_id: &str, rng: &mut dyn RngCore) -> bool {
        match self.states.get(prompt_id) {
            None => true,
            Some(state) => {
                // Unseen states never consume randomness, so cold starts
                // stay reproducible regardless of prompt-set size.
                if state.bucket == GresoBucket::Unseen {
                    true
                } else {
                    greso_should_submit(state, uniform_draw(rng))
                }
            }
        }
    }

    fn observe_group(&mut self, group: &RolloutGroup) {
        let state = self
            .states
            .entry(group.prompt_id.clone())
            .or_insert_with(|| GresoPromptState::unseen(group.prompt_id.clone()));
        *state = greso_update(state, group, &self.cfg);
    }
}

/// Whether a finished group enters the trajectory buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

pub trait PostFilter: Send {
    fn decide(&self, group: &RolloutGroup) -> FilterDecision;
}

pub struct KeepAllFilter;

impl PostFilter for KeepAllFilter {
    fn decide(&self, _group: &RolloutGroup) -> FilterDecision {
        FilterDecision::Keep
    }
}

/// Drops groups whose rewards carry no training signal: all members exactly
/// equal. Empty groups (which never reach filtering in practice) drop.
pub fn post_filter_zero_adv(group: &RolloutGroup) -> FilterDecision {
    match group_is_zero_advantage(group) {
        Ok(false) => FilterDecision::Keep,
        _ => FilterDecision::Drop,
    }
}

pub struct ZeroAdvFilter;

impl PostFilter for ZeroAdvFilter {
    fn decide(&self, group: &RolloutGroup) -> FilterDecision {
        post_filter_zero_adv(group)
    }
}

/// Replay pool sizing and batch-mix policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayConfig {
    pub pool_capacity: usize,
    /// Maximum trainer-version gap an entry may have when served.
    pub max_staleness: u64,
    /// Fraction of each training batch drawn from the pool.
    pub replay_ratio: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            pool_capacity: 10_000,
            max_staleness: 8,
            replay_ratio: 0.0,
        }
    }
}

/// Bounded pool of past trajectories, evicting oldest-admitted first.
pub struct ReplayPool {
    cfg: ReplayConfig,
    entries: VecDeque<(Trajectory, Version)>,
}

impl ReplayPool {
    pub fn new(cfg: ReplayConfig) -> Self {
        ReplayPool {
            cfg,
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that would survive the staleness sweep at `trainer_version`.
    pub fn usable(&self, trainer_version: Version) -> usize {
        self.entries
            .iter()
            .filter(|(_, admitted)| trainer_version.saturating_sub(*admitted) <= self.cfg.max_staleness)
            .count()
    }
}

/// Appends an entry, evicting the oldest when over capacity.
pub fn replay_admit(pool: &mut ReplayPool, traj: Trajectory, trainer_version: Version) {
    pool.entries.push_back((traj, trainer_version));
    while pool.entries.len() > pool.cfg.pool_capacity {
        pool.entries.pop_front();
    }
}

/// Evicts entries whose version gap exceeds the staleness bound, then
/// samples `k` entries uniformly without replacement (fewer if the pool is
/// smaller). Served entries remain in the pool.
pub fn replay_serve(
    pool: &mut ReplayPool,
    k: usize,
    trainer_version: Version,
    rng: &mut dyn RngCore,
) -> Vec<Trajectory> {
    let max_gap = pool.cfg.max_staleness;
    pool.entries
        .retain(|(_, admitted)| trainer_version.saturating_sub(*admitted) <= max_gap);
    if k == 0 || pool.entries.is_empty() {
        return Vec::new();
    }
    let take = k.min(pool.entries.len());
    rand::seq::index::sample(rng, pool.entries.len(), take)
        .into_iter()
        .map(|i| pool.entries[i].0.clone())
        .collect()
}

/// Splits a batch between fresh and replayed trajectories: the replay share
/// is `round(r * batch_size)` (half away from zero) capped by usable pool
/// entries, the rest comes from fresh supply. Returns `None` (not ready)
/// when the two sources cannot reach `batch_size` together.
pub fn compose_batch(
    fresh_available: usize,
    pool: &ReplayPool,
    cfg: &ReplayConfig,
    batch_size: usize,
    trainer_version: Version,
) -> Option<(usize, usize)> {
    let replay_take = ((cfg.replay_ratio * batch_size as f64).round() as usize)
        .min(pool.usable(trainer_version))
        .min(batch_size);
    let fresh_take = (batch_size - replay_take).min(fresh_available);
    if fresh_take + replay_take < batch_size {
        return None;
    }
    Some((fresh_take, replay_take))
}

/// Plan for one batch: how many fresh and replayed members to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub fresh_take: usize,
    pub replay_take: usize,
}

/// Decides batch composition and owns any replay state.
pub trait BatchComposer: Send {
    /// `None` means not ready: the caller keeps waiting.
    fn plan(&mut self, fresh_available: usize, batch_size: usize, trainer_version: Version)
        -> Option<BatchPlan>;

    fn draw_replay(
        &mut self,
        k: usize,
        trainer_version: Version,
        rng: &mut dyn RngCore,
    ) -> Vec<Trajectory>;

    /// Offers one fresh batch member for future replay.
    fn admit_fresh(&mut self, _traj: &Trajectory, _trainer_version: Version) {}
}

/// Batches are 100% fresh; ready only at full batch size.
pub struct FreshOnlyComposer;

impl BatchComposer for FreshOnlyComposer {
    fn plan(&mut self, fresh_available: usize, batch_size: usize, _v: Version) -> Option<BatchPlan> {
        (fresh_available >= batch_size).then_some(BatchPlan {
            fresh_take: batch_size,
            replay_take: 0,
        })
    }

    fn draw_replay(&mut self, _k: usize, _v: Version, _rng: &mut dyn RngCore) -> Vec<Trajectory> {
        Vec::new()
    }
}

/// Mixes a replay share into every batch and feeds consumed fresh members
/// back into its pool.
pub struct ReplayComposer {
    cfg: ReplayConfig,
    pool: ReplayPool,
}

impl ReplayComposer {
    pub fn new(cfg: ReplayConfig) -> Self {
        ReplayComposer {
            cfg,
            pool: ReplayPool::new(cfg),
        }
    }

    pub fn pool(&self) -> &ReplayPool {
        &self.pool
    }
}

impl BatchComposer for ReplayComposer {
    fn plan(&mut self, fresh_available: usize, batch_size: usize, trainer_version: Version)
        -> Option<BatchPlan> {
        compose_batch(fresh_available, &self.pool, &self.cfg, batch_size, trainer_version)
            .map(|(fresh_take, replay_take)| BatchPlan { fresh_take, replay_take })
    }

    fn draw_replay(
        &mut self,
        k: usize,
        trainer_version: Version,
        rng: &mut dyn RngCore,
    ) -> Vec<Trajectory> {
        replay_serve(&mut self.pool, k, trainer_version, rng)
    }

    fn admit_fresh(&mut self, traj: &Trajectory, trainer_version: Version) {
        replay_admit(&mut self.pool, traj.clone(), trainer_version);
    }
}
