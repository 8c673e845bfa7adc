//! Synthetic point-maze benchmark: two disjoint trajectory families, a
//! percentile behavior-cloning learner, mixed-ratio batch sampling, policy
//! evaluation, and the before/after return-improvement report.
//!
//! The disjoint-families scenario makes the stitching story literal: family
//! A runs east from the start and never earns reward, family B starts far
//! away near `(2, 2)` and reaches the goal at `(3, 3)` for a single terminal
//! reward. Only a stitched trajectory demonstrates the full start-to-goal
//! path, so a policy cloned from the raw data cannot reach the goal while a
//! policy cloned from the augmented data can.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{mse_loss, Activation, AdamState, DenseMatrix, Mlp, NnError};
use crate::rng::StreamRng;
use crate::stitch::AttemptRecord;
use crate::traj::{
    compute_returns, returns_to_go, Dataset, NormStats, SourceTag, TrajError, Trajectory,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid maze spec: {0}")]
    InvalidSpec(&'static str),
    #[error("family states come within {min_dist} of each other, below the required gap {gap}")]
    FamiliesOverlap { min_dist: f64, gap: f64 },
    #[error("scenario generation failed: {0}")]
    GenerationFailed(&'static str),
    #[error("invalid mix config: {0}")]
    InvalidMix(&'static str),
    #[error("{0} transition pool is empty but its mix part is positive")]
    EmptyPool(&'static str),
    #[error("no trajectory falls in the top-percentile pool")]
    EmptyPercentile,
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

// ───────────────────────── environment ─────────────────────────

/// Arena, start, goal, and step limits for the point maze.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMazeSpec {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub max_step_norm: f64,
    pub episode_cap: usize,
    /// Square arena `[lo, hi]²`.
    pub bounds: (f64, f64),
}

impl Default for PointMazeSpec {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0],
            goal: [3.0, 3.0],
            goal_radius: 0.3,
            max_step_norm: 0.15,
            episode_cap: 100,
            bounds: (-0.5, 4.5),
        }
    }
}

impl PointMazeSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.goal_radius > 0.0) {
            return Err(EnvError::InvalidSpec("goal radius must be positive"));
        }
        if !(self.max_step_norm > 0.0) {
            return Err(EnvError::InvalidSpec("max step norm must be positive"));
        }
        if self.episode_cap == 0 {
            return Err(EnvError::InvalidSpec("episode cap must be positive"));
        }
        let (lo, hi) = self.bounds;
        if !(lo < hi) {
            return Err(EnvError::InvalidSpec("arena bounds must satisfy lo < hi"));
        }
        for v in self.start.iter().chain(self.goal.iter()) {
            if !(*v >= lo && *v <= hi) {
                return Err(EnvError::InvalidSpec("start and goal must lie inside the arena"));
            }
        }
        Ok(())
    }

    fn in_goal(&self, state: &[f64; 2]) -> bool {
        let dx = state[0] - self.goal[0];
        let dy = state[1] - self.goal[1];
        libm::sqrt(dx * dx + dy * dy) <= self.goal_radius
    }
}

/// Clip an action to the step-norm budget.
pub fn clip_action(action: &[f64], max_norm: f64) -> [f64; 2] {
    let norm = libm::sqrt(action[0] * action[0] + action[1] * action[1]);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        [action[0] * s, action[1] * s]
    } else {
        [action[0], action[1]]
    }
}

/// One transition: clip the action norm, add, clip to the arena. Reward 1
/// and done exactly when the next state lies within the goal radius.
pub fn env_step(spec: &PointMazeSpec, state: &[f64; 2], action: &[f64]) -> ([f64; 2], f64, bool) {
    let a = clip_action(action, spec.max_step_norm);
    let (lo, hi) = spec.bounds;
    let next = [
        (state[0] + a[0]).clamp(lo, hi),
        (state[1] + a[1]).clamp(lo, hi),
    ];
    if spec.in_goal(&next) {
        (next, 1.0, true)
    } else {
        (next, 0.0, false)
    }
}

// ───────────────────────── scenario generation ─────────────────────────

/// The disjoint-families scenario: counts and the required inter-family
/// state gap. Motion constants are baked in.
#[derive(Debug, Clone, PartialEq)]
pub struct DisjointFamiliesScenario {
    pub n_per_family: usize,
    pub family_gap: f64,
}

impl Default for DisjointFamiliesScenario {
    fn default() -> Self {
        Self {
            n_per_family: 50,
            family_gap: 1.0,
        }
    }
}

// Family A: east from the start along y ≈ 0.
const A_STEPS: usize = 48;
const A_SPEED: f64 = 0.08;
const A_NOISE: f64 = 0.015;
// Family B: east from near (2, 2), then north into the goal.
const B_START: [f64; 2] = [2.0, 2.0];
const B_START_NOISE: f64 = 0.03;
const B_SPEED: f64 = 0.05;
const B_NOISE: f64 = 0.01;
const B_TURN_X: f64 = 3.15;
const B_APPROACH_X: f64 = 3.05;
const B_STEP_CAP: usize = 80;
// Gentle steering keeps each family inside a narrow band.
const STEER_GAIN: f64 = 0.1;
const STEER_CLIP: f64 = 0.02;

fn steer(err: f64) -> f64 {
    (STEER_GAIN * err).clamp(-STEER_CLIP, STEER_CLIP)
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generate the two-family offline dataset.
///
/// Family A: `n` trajectories of 48 steps heading roughly east from the
/// start with noise, never entering the goal region, all returns 0.
/// Family B: `n` trajectories from near `(2, 2)` that reach the goal and
/// earn the single terminal reward.
///
/// Fails if any A state comes within the goal radius of the goal or the
/// minimum pairwise state distance between the families drops below the
/// configured gap (verified by brute-force scan).
pub fn generate_offline_dataset(
    spec: &PointMazeSpec,
    scenario: &DisjointFamiliesScenario,
    rng: &mut StreamRng,
) -> Result<Dataset, EnvError> {
    spec.validate()?;
    if scenario.n_per_family == 0 {
        return Err(EnvError::InvalidSpec("need at least one trajectory per family"));
    }

    let mut trajectories = Vec::with_capacity(2 * scenario.n_per_family);

    for _ in 0..scenario.n_per_family {
        let mut s = spec.start;
        let mut states = vec![s.to_vec()];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..A_STEPS {
            let a = [
                A_SPEED + A_NOISE * normal(rng),
                steer(0.0 - s[1]) + A_NOISE * normal(rng),
            ];
            let (next, reward, done) = env_step(spec, &s, &a);
            actions.push(a.to_vec());
            rewards.push(reward);
            if done {
                return Err(EnvError::GenerationFailed(
                    "family A reached the goal; families are not disjoint",
                ));
            }
            s = next;
            states.push(s.to_vec());
        }
        states.pop(); // tuples are (state, action, reward); drop the dangling state
        trajectories.push(Trajectory::new(states, actions, rewards, SourceTag::Original)?);
    }

    for _ in 0..scenario.n_per_family {
        let mut s = [
            B_START[0] + B_START_NOISE * normal(rng),
            B_START[1] + B_START_NOISE * normal(rng),
        ];
        let mut states = vec![s.to_vec()];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut reached = false;
        for _ in 0..B_STEP_CAP {
            let a = if s[0] < B_TURN_X {
                [
                    B_SPEED + B_NOISE * normal(rng),
                    steer(B_START[1] - s[1]) + B_NOISE * normal(rng),
                ]
            } else {
                [
                    steer(B_APPROACH_X - s[0]) + B_NOISE * normal(rng),
                    B_SPEED + B_NOISE * normal(rng),
                ]
            };
            let (next, reward, done) = env_step(spec, &s, &a);
            actions.push(a.to_vec());
            rewards.push(reward);
            s = next;
            if done {
                reached = true;
                break;
            }
            states.push(s.to_vec());
        }
        if !reached {
            return Err(EnvError::GenerationFailed(
                "family B failed to reach the goal within its step budget",
            ));
        }
        trajectories.push(Trajectory::new(states, actions, rewards, SourceTag::Original)?);
    }

    // Disjointness checks: A never near the goal, families separated.
    let (families_a, families_b) = trajectories.split_at(scenario.n_per_family);
    for t in families_a {
        for state in t.states() {
            if spec.in_goal(&[state[0], state[1]]) {
                return Err(EnvError::GenerationFailed("family A enters the goal region"));
            }
        }
    }
    let mut min_dist_sq = f64::INFINITY;
    for ta in families_a {
        for sa in ta.states() {
            for tb in families_b {
                for sb in tb.states() {
                    let dx = sa[0] - sb[0];
                    let dy = sa[1] - sb[1];
                    min_dist_sq = min_dist_sq.min(dx * dx + dy * dy);
                }
            }
        }
    }
    let min_dist = libm::sqrt(min_dist_sq);
    if min_dist < scenario.family_gap {
        return Err(EnvError::FamiliesOverlap {
            min_dist,
            gap: scenario.family_gap,
        });
    }

    Ok(Dataset::new(trajectories)?)
}

// ───────────────────────── mixed batches ─────────────────────────

/// Original-to-augmented mixing ratio and batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixConfig {
    pub original_parts: u32,
    pub augmented_parts: u32,
    pub batch_size: usize,
}

impl MixConfig {
    pub fn new(original_parts: u32, augmented_parts: u32, batch_size: usize) -> Self {
        Self {
            original_parts,
            augmented_parts,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.original_parts == 0 && self.augmented_parts == 0 {
            return Err(EnvError::InvalidMix("ratio parts cannot both be zero"));
        }
        if self.batch_size == 0 {
            return Err(EnvError::InvalidMix("batch size must be positive"));
        }
        Ok(())
    }

    /// Number of original transitions per batch: `round(batch · o / (o + a))`.
    pub fn original_per_batch(&self) -> usize {
        let o = self.original_parts as f64;
        let a = self.augmented_parts as f64;
        libm::round(self.batch_size as f64 * o / (o + a)) as usize
    }
}

/// Flat `(normalized state, raw action)` pairs ready for sampling.
#[derive(Debug, Clone, Default)]
pub struct TransitionPool {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl TransitionPool {
    pub fn from_trajectories<'a, I>(trajectories: I, stats: &NormStats) -> Self
    where
        I: IntoIterator<Item = &'a Trajectory>,
    {
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for t in trajectories {
            for (s, a) in t.states().iter().zip(t.actions()) {
                states.push(stats.normalize(s));
                actions.push(a.clone());
            }
        }
        Self { states, actions }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One sampled training batch with its composition counts.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pub states: DenseMatrix,
    pub actions: DenseMatrix,
    pub n_original: usize,
    pub n_augmented: usize,
}

/// Draw a batch with the configured original/augmented composition
/// (uniform with replacement within each pool), then shuffle the rows.
pub fn mixed_batch_sampler(
    original: &TransitionPool,
    augmented: &TransitionPool,
    mix: &MixConfig,
    rng: &mut StreamRng,
) -> Result<MixedBatch, EnvError> {
    mix.validate()?;
    let n_original = if mix.augmented_parts == 0 {
        mix.batch_size
    } else if mix.original_parts == 0 {
        0
    } else {
        mix.original_per_batch()
    };
    let n_augmented = mix.batch_size - n_original;
    if n_original > 0 && original.is_empty() {
        return Err(EnvError::EmptyPool("original"));
    }
    if n_augmented > 0 && augmented.is_empty() {
        return Err(EnvError::EmptyPool("augmented"));
    }

    let mut rows: Vec<(&Vec<f64>, &Vec<f64>)> = Vec::with_capacity(mix.batch_size);
    for _ in 0..n_original {
        let i = rng.random_range(0..original.len());
        rows.push((&original.states[i], &original.actions[i]));
    }
    for _ in 0..n_augmented {
        let i = rng.random_range(0..augmented.len());
        rows.push((&augmented.states[i], &augmented.actions[i]));
    }
    // Fisher–Yates shuffle so the two sources interleave.
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.random_range(0..=i));
    }

    let states = DenseMatrix::from_rows(&rows.iter().map(|(s, _)| (*s).clone()).collect::<Vec<_>>());
    let actions = DenseMatrix::from_rows(&rows.iter().map(|(_, a)| (*a).clone()).collect::<Vec<_>>());
    Ok(MixedBatch {
        states,
        actions,
        n_original,
        n_augmented,
    })
}

// ───────────────────────── percentile behavior cloning ─────────────────────────

/// Keep flags for trajectories whose total return sits in the top `p`
/// fraction (nearest-rank threshold over all returns; ties keep everything
/// at the boundary value).
pub fn percentile_keep(totals: &[f64], percentile: f64) -> Vec<bool> {
    assert!(
        percentile > 0.0 && percentile <= 1.0,
        "percentile must be in (0, 1]"
    );
    let n = totals.len();
    let mut sorted = totals.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite returns"));
    let rank = (libm::ceil(percentile * n as f64) as usize).clamp(1, n);
    let threshold = sorted[rank - 1];
    totals.iter().map(|&t| t >= threshold).collect()
}

/// Behavior-cloning hyperparameters.
#[derive(Debug, Clone)]
pub struct BcConfig {
    pub hidden_widths: Vec<usize>,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64, 64],
            steps: 6000,
            learning_rate: 1e-3,
        }
    }
}

/// A state → action network; actions are clipped to the step-norm budget at
/// execution. Carries its own normalization stats so it can act on raw
/// environment states.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    mlp: Mlp,
    stats: NormStats,
    pub max_action_norm: f64,
}

impl PolicyModel {
    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn act(&self, state: &[f64; 2]) -> [f64; 2] {
        let z = self.stats.normalize(state);
        let out = self
            .mlp
            .forward(&DenseMatrix::from_vec(1, z.len(), z))
            .expect("policy width fixed at construction");
        clip_action(out.row(0), self.max_action_norm)
    }
}

/// Anything that maps a raw maze state to an action.
pub trait Policy {
    fn action(&self, state: &[f64; 2]) -> [f64; 2];
}

impl Policy for PolicyModel {
    fn action(&self, state: &[f64; 2]) -> [f64; 2] {
        self.act(state)
    }
}

/// Train percentile behavior cloning on `D* = D ∪ D_aug`.
///
/// The top-`percentile` return threshold is computed over all of `D*`
/// (discounted at `gamma`); transitions from qualifying original
/// trajectories fill the original side of each batch and transitions from
/// qualifying augmented trajectories the augmented side, mixed at the
/// configured ratio.
#[allow(clippy::too_many_arguments)]
pub fn train_percentile_bc(
    dataset: &Dataset,
    augmented: &[Trajectory],
    stats: &NormStats,
    mix: &MixConfig,
    percentile: f64,
    gamma: f64,
    config: &BcConfig,
    spec: &PointMazeSpec,
    rng: &mut StreamRng,
) -> Result<PolicyModel, EnvError> {
    mix.validate()?;
    let mut totals: Vec<f64> = Vec::with_capacity(dataset.len() + augmented.len());
    for t in dataset.trajectories() {
        totals.push(compute_returns(t, gamma)?.total);
    }
    for t in augmented {
        totals.push(compute_returns(t, gamma)?.total);
    }
    let keep = percentile_keep(&totals, percentile);
    if !keep.iter().any(|&k| k) {
        return Err(EnvError::EmptyPercentile);
    }

    let kept_original = dataset
        .trajectories()
        .iter()
        .zip(&keep)
        .filter_map(|(t, &k)| k.then_some(t));
    let kept_augmented = augmented
        .iter()
        .zip(&keep[dataset.len()..])
        .filter_map(|(t, &k)| k.then_some(t));
    let pool_original = TransitionPool::from_trajectories(kept_original, stats);
    let pool_augmented = TransitionPool::from_trajectories(kept_augmented, stats);

    let mut widths = vec![dataset.state_dim()];
    widths.extend_from_slice(&config.hidden_widths);
    widths.push(dataset.action_dim());
    let mut mlp = Mlp::new(&widths, Activation::Gelu, rng)?;
    let mut opt = AdamState::new(&mlp, config.learning_rate);
    for _ in 0..config.steps {
        let batch = mixed_batch_sampler(&pool_original, &pool_augmented, mix, rng)?;
        let trace = mlp.forward_cached(&batch.states)?;
        let (_, dl) = mse_loss(trace.output(), &batch.actions)?;
        let grads = mlp.backward(&trace, &dl)?;
        opt.step(&mut mlp, &grads)?;
    }
    Ok(PolicyModel {
        mlp,
        stats: stats.clone(),
        max_action_norm: spec.max_step_norm,
    })
}

// ───────────────────────── evaluation ─────────────────────────

/// Success rate and mean discounted return over rollouts from the start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Roll the (deterministic) policy out of the start state. With a fixed
/// policy and spec the outcome is identical across episodes; the episode
/// count is kept for interface parity with stochastic policies.
pub fn evaluate_policy<P: Policy>(
    spec: &PointMazeSpec,
    policy: &P,
    episodes: usize,
    gamma: f64,
) -> EvalOutcome {
    assert!(episodes >= 1, "need at least one evaluation episode");
    let mut successes = 0usize;
    let mut total_return = 0.0;
    for _ in 0..episodes {
        let mut s = spec.start;
        let mut discount = 1.0;
        let mut ep_return = 0.0;
        for _ in 0..spec.episode_cap {
            let a = policy.action(&s);
            let (next, reward, done) = env_step(spec, &s, &a);
            ep_return += discount * reward;
            discount *= gamma;
            s = next;
            if done {
                successes += 1;
                break;
            }
        }
        total_return += ep_return;
    }
    EvalOutcome {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
    }
}

// ───────────────────────── return improvement ─────────────────────────

/// Before/after return-to-go pairs for the low-side prefix states of every
/// accepted stitch, plus the fraction strictly improved. `fraction` is
/// `None` when there is no accepted stitch to report on.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementReport {
    pub fraction_improved: Option<f64>,
    /// `(before, after)` per prefix state, in attempt order.
    pub pairs: Vec<(f64, f64)>,
}

/// Compare return-to-go before and after stitching for each state on the
/// low-side prefix: "before" in the original low trajectory, "after" at the
/// same position inside the assembled augmented trajectory.
pub fn return_improvement_report(
    dataset: &Dataset,
    augmented: &[Trajectory],
    records: &[AttemptRecord],
    gamma: f64,
) -> Result<ImprovementReport, EnvError> {
    let accepted: Vec<&AttemptRecord> = records.iter().filter(|r| r.accepted).collect();
    assert_eq!(
        accepted.len(),
        augmented.len(),
        "one accepted record per augmented trajectory"
    );
    let mut pairs = Vec::new();
    let mut improved = 0usize;
    for (rec, aug) in accepted.iter().zip(augmented) {
        let low = &dataset.trajectories()[rec.low_index];
        let before = compute_returns(low, gamma)?.to_go;
        let after = returns_to_go(aug.rewards(), gamma);
        for t in 0..rec.prefix_len {
            let pair = (before[t], after[t]);
            if pair.1 > pair.0 {
                improved += 1;
            }
            pairs.push(pair);
        }
    }
    let fraction_improved = if pairs.is_empty() {
        None
    } else {
        Some(improved as f64 / pairs.len() as f64)
    };
    Ok(ImprovementReport {
        fraction_improved,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn env_step_examples() {
        let spec = PointMazeSpec::default();

        // At the goal, a zero action stays within the radius: reward and done.
        let (_, r, done) = env_step(&spec, &spec.goal, &[0.0, 0.0]);
        assert_eq!(r, 1.0);
        assert!(done);

        // Zero action far from the goal: same state, no reward.
        let (next, r, done) = env_step(&spec, &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(next, [0.0, 0.0]);
        assert_eq!(r, 0.0);
        assert!(!done);

        // Oversized action is clipped to the step-norm budget.
        let (next, _, _) = env_step(&spec, &[1.0, 1.0], &[10.0, 0.0]);
        let disp = libm::sqrt((next[0] - 1.0) * (next[0] - 1.0) + (next[1] - 1.0) * (next[1] - 1.0));
        assert!((disp - spec.max_step_norm).abs() < 1e-12);
    }

    #[test]
    fn scenario_families_and_gap() {
        let spec = PointMazeSpec::default();
        let scenario = DisjointFamiliesScenario {
            n_per_family: 10,
            family_gap: 1.0,
        };
        let mut rng = substream(21, "env-test", 0);
        let ds = generate_offline_dataset(&spec, &scenario, &mut rng).unwrap();
        assert_eq!(ds.len(), 20);

        let mut min_dist_sq = f64::INFINITY;
        for (i, t) in ds.trajectories().iter().enumerate() {
            let total = compute_returns(t, 1.0).unwrap().total;
            if i < 10 {
                assert_eq!(total, 0.0, "family A must earn nothing");
                for s in t.states() {
                    let d = libm::sqrt(
                        (s[0] - spec.goal[0]) * (s[0] - spec.goal[0])
                            + (s[1] - spec.goal[1]) * (s[1] - spec.goal[1]),
                    );
                    assert!(d > spec.goal_radius);
                }
            } else {
                assert!(total > 0.0, "family B must reach the goal");
                assert_eq!(*t.rewards().last().unwrap(), 1.0);
            }
        }
        // Brute-force the inter-family gap independently of the generator.
        for ta in &ds.trajectories()[..10] {
            for tb in &ds.trajectories()[10..] {
                for sa in ta.states() {
                    for sb in tb.states() {
                        let d2 = (sa[0] - sb[0]) * (sa[0] - sb[0])
                            + (sa[1] - sb[1]) * (sa[1] - sb[1]);
                        min_dist_sq = min_dist_sq.min(d2);
                    }
                }
            }
        }
        assert!(libm::sqrt(min_dist_sq) >= scenario.family_gap);
    }

    fn tiny_pool(n: usize, tag: f64) -> TransitionPool {
        TransitionPool {
            states: (0..n).map(|i| vec![i as f64, tag]).collect(),
            actions: (0..n).map(|i| vec![tag, i as f64]).collect(),
        }
    }

    #[test]
    fn mixed_batch_composition() {
        let orig = tiny_pool(10, 1.0);
        let aug = tiny_pool(10, 2.0);
        let mut rng = substream(21, "env-test", 1);

        let batch = mixed_batch_sampler(
            &orig,
            &aug,
            &MixConfig::new(4, 1, 256),
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch.n_original, 205);
        assert_eq!(batch.n_augmented, 51);
        assert_eq!(batch.states.rows(), 256);
        // Composition is visible in the tag column of the actions.
        let from_orig = (0..256).filter(|&r| batch.actions.get(r, 0) == 1.0).count();
        assert_eq!(from_orig, 205);

        let batch = mixed_batch_sampler(&orig, &aug, &MixConfig::new(1, 0, 32), &mut rng).unwrap();
        assert_eq!((batch.n_original, batch.n_augmented), (32, 0));
        let empty = TransitionPool::default();
        // 1:0 never touches the augmented pool, even an empty one.
        assert!(mixed_batch_sampler(&orig, &empty, &MixConfig::new(1, 0, 32), &mut rng).is_ok());

        let batch = mixed_batch_sampler(&orig, &aug, &MixConfig::new(0, 1, 32), &mut rng).unwrap();
        assert_eq!((batch.n_original, batch.n_augmented), (0, 32));

        assert!(matches!(
            mixed_batch_sampler(&empty, &aug, &MixConfig::new(4, 1, 32), &mut rng),
            Err(EnvError::EmptyPool("original"))
        ));
        assert!(matches!(
            mixed_batch_sampler(&orig, &aug, &MixConfig::new(0, 0, 32), &mut rng),
            Err(EnvError::InvalidMix(_))
        ));
    }

    #[test]
    fn percentile_keep_rules() {
        let totals = [0.0, 3.0, 1.0, 2.0];
        let keep = percentile_keep(&totals, 0.5);
        assert_eq!(keep, vec![false, true, false, true]);
        // p = 1.0 keeps everything: plain behavior cloning.
        assert!(percentile_keep(&totals, 1.0).iter().all(|&k| k));
        // Augmented-only winners: returns above every original.
        let totals = [0.0, 0.0, 0.9, 0.8];
        let keep = percentile_keep(&totals, 0.5);
        assert_eq!(keep, vec![false, false, true, true]);
    }

    struct GoalSeeker {
        goal: [f64; 2],
    }

    impl Policy for GoalSeeker {
        fn action(&self, state: &[f64; 2]) -> [f64; 2] {
            [self.goal[0] - state[0], self.goal[1] - state[1]]
        }
    }

    struct ZeroPolicy;

    impl Policy for ZeroPolicy {
        fn action(&self, _state: &[f64; 2]) -> [f64; 2] {
            [0.0, 0.0]
        }
    }

    #[test]
    fn evaluation_oracle_sandwich_and_determinism() {
        let spec = PointMazeSpec::default();
        let oracle = GoalSeeker { goal: spec.goal };
        let out = evaluate_policy(&spec, &oracle, 5, 0.99);
        assert_eq!(out.success_rate, 1.0);
        assert!(out.mean_return > 0.0 && out.mean_return <= 1.0);

        let zero = evaluate_policy(&spec, &ZeroPolicy, 3, 0.99);
        assert_eq!(zero.success_rate, 0.0);
        assert_eq!(zero.mean_return, 0.0);

        let again = evaluate_policy(&spec, &oracle, 5, 0.99);
        assert_eq!(out, again);
    }

    #[test]
    fn improvement_report_zero_to_positive() {
        use crate::traj::SourceTag;
        // Original low trajectory: all-zero rewards.
        let low = Trajectory::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]],
            vec![vec![0.0, 0.0]; 3],
            vec![0.0; 3],
            SourceTag::Original,
        )
        .unwrap();
        let ds = Dataset::new(vec![low]).unwrap();
        // Stitched result: same two prefix states, then reward 1 at the end.
        let aug = Trajectory::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 1.0], vec![2.0, 2.0]],
            vec![vec![0.0, 0.0]; 4],
            vec![0.0, 0.0, 0.0, 1.0],
            SourceTag::Augmented,
        )
        .unwrap();
        let record = AttemptRecord {
            attempt: 0,
            low_index: 0,
            high_index: 0,
            prefix_len: 2,
            suffix_start: 1,
            delta: 1,
            max_error: 0.0,
            accepted: true,
        };
        let report = return_improvement_report(&ds, &[aug], &[record], 0.99).unwrap();
        assert_eq!(report.fraction_improved, Some(1.0));
        assert_eq!(report.pairs.len(), 2);
        for (before, after) in &report.pairs {
            assert_eq!(*before, 0.0);
            assert!(*after > 0.0);
        }

        let empty = return_improvement_report(&ds, &[], &[], 0.99).unwrap();
        assert_eq!(empty.fraction_improved, None);
    }
}
