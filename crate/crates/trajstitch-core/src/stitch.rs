//! The four-stage stitching pipeline and its outer augmentation loop.
//!
//! For one attempt: sample a low-return prefix and a high-return suffix,
//! imagine a continuation of the prefix's final state, pick the step count
//! whose imagined state is most similar to the suffix's first state
//! (cosine similarity, smallest index on ties), inpaint that many bridge
//! states between the two endpoints, wrap them with inverse-dynamics
//! actions and model rewards, and keep the result only if every wrapped
//! transition stays within the forward-dynamics qualification threshold.
//!
//! Every attempt draws from its own seed sub-stream, so reruns with a
//! different threshold see the identical attempt sequence and acceptance is
//! monotone in the threshold.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::aux::{AuxError, AuxModels};
use crate::diffusion::{
    sample_conditional, imagine_rollout, DenoiserModel, DiffusionError, MaskedWindow,
    NoiseSchedule,
};
use crate::nn::DenseMatrix;
use crate::rng::{substream, StreamRng};
use crate::traj::{
    partition_by_return, sample_cut_segment, CutMode, Dataset, NormStats, SourceTag, TrajError,
    Trajectory,
};

/// Norm below which a vector counts as degenerate for cosine similarity.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StitchError {
    #[error("invalid stitch config: {0}")]
    InvalidConfig(&'static str),
    #[error("delta {delta} outside 1..={max} for horizon {horizon}")]
    DeltaOutOfRange {
        delta: usize,
        max: usize,
        horizon: usize,
    },
    #[error("stitch mask needs at least one pad state from the high trajectory")]
    EmptyPad,
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Aux(#[from] AuxError),
}

/// Configuration for the augmentation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchConfig {
    /// Generation horizon `H`.
    pub horizon: usize,
    /// Qualification threshold on the squared next-state error (normalized
    /// units).
    pub delta_threshold: f64,
    /// Attempts `N`.
    pub iterations: usize,
    /// Minimum tuples kept on each side of a cut.
    pub min_keep: usize,
    /// Low-return pool quantile (undiscounted ranking).
    pub low_quantile: f64,
    /// High-return pool quantile (undiscounted ranking).
    pub high_quantile: f64,
    /// Root seed for the per-attempt sub-streams.
    pub seed: u64,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            horizon: 32,
            delta_threshold: 2.0,
            iterations: 400,
            min_keep: 5,
            low_quantile: 0.5,
            high_quantile: 0.8,
            seed: 0,
        }
    }
}

impl StitchConfig {
    pub fn validate(&self) -> Result<(), StitchError> {
        if self.horizon < 4 {
            return Err(StitchError::InvalidConfig("horizon must be at least 4"));
        }
        if !(self.delta_threshold > 0.0) {
            return Err(StitchError::InvalidConfig("delta threshold must be positive"));
        }
        if self.iterations == 0 {
            return Err(StitchError::InvalidConfig("iterations must be at least 1"));
        }
        if self.min_keep < 2 {
            return Err(StitchError::InvalidConfig("min_keep must be at least 2"));
        }
        if !(self.low_quantile > 0.0
            && self.low_quantile <= self.high_quantile
            && self.high_quantile < 1.0)
        {
            return Err(StitchError::InvalidConfig(
                "quantiles must satisfy 0 < low <= high < 1",
            ));
        }
        Ok(())
    }
}

// ───────────────────────── step estimation ─────────────────────────

/// Cosine similarity in `[-1, 1]`. Near-zero-norm inputs get similarity 0
/// with a warning, so degenerate states are never selected unless everything
/// is degenerate.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine similarity needs equal dims");
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = libm::sqrt(u.iter().map(|a| a * a).sum());
    let nv = libm::sqrt(v.iter().map(|a| a * a).sum());
    if nu < COSINE_NORM_FLOOR || nv < COSINE_NORM_FLOOR {
        log::warn!("cosine similarity of a near-zero vector; treating as 0");
        return 0.0;
    }
    dot / (nu * nv)
}

/// The estimated gap and the similarity profile it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEstimate {
    /// `delta in [1, H-2]`: argmax of the profile, smallest index on ties.
    pub delta: usize,
    /// `similarities[i]` is the score of step `i + 1`; length `H - 2`.
    pub similarities: Vec<f64>,
}

/// Pick the number of stitching steps: the index `i in {1, ..., H-2}` whose
/// imagined state is most similar to the target (normalized units). The
/// final imagined position `H-1` is excluded.
pub fn estimate_steps(imagined: &DenseMatrix, target: &[f64]) -> StepEstimate {
    let horizon = imagined.rows();
    assert!(horizon >= 4, "estimate_steps needs a horizon of at least 4");
    let mut best = 1;
    let mut best_sim = f64::NEG_INFINITY;
    let mut similarities = Vec::with_capacity(horizon - 2);
    for i in 1..=horizon - 2 {
        let sim = cosine_sim(imagined.row(i), target);
        similarities.push(sim);
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    StepEstimate {
        delta: best,
        similarities,
    }
}

// ───────────────────────── mask construction ─────────────────────────

/// Lay out the inpainting window `[s_T, MASK × delta, s'_1, s'_2, ...]`
/// (normalized units). The pad takes up to `H - 1 - delta` leading states of
/// the high segment; if it is shorter, the remaining tail positions stay
/// masked and are discarded after generation.
pub fn build_stitch_mask(
    cut_state: &[f64],
    delta: usize,
    high_states: &[Vec<f64>],
    horizon: usize,
) -> Result<MaskedWindow, StitchError> {
    if delta == 0 || delta > horizon - 2 {
        return Err(StitchError::DeltaOutOfRange {
            delta,
            max: horizon - 2,
            horizon,
        });
    }
    if high_states.is_empty() {
        return Err(StitchError::EmptyPad);
    }
    let d = cut_state.len();
    let mut values = DenseMatrix::zeros(horizon, d);
    let mut observed = vec![false; horizon];
    values.row_mut(0).copy_from_slice(cut_state);
    observed[0] = true;
    let pad = high_states.len().min(horizon - 1 - delta);
    for (j, state) in high_states[..pad].iter().enumerate() {
        values.row_mut(delta + 1 + j).copy_from_slice(state);
        observed[delta + 1 + j] = true;
    }
    Ok(MaskedWindow::new(values, observed)?)
}

/// Inpaint the masked window and slice out the `delta` stitching states
/// (positions `2..=delta+1`, normalized units).
pub fn generate_stitch_states(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    mask: &MaskedWindow,
    delta: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>, StitchError> {
    let window = sample_conditional(model, schedule, mask, rng)?;
    for (r, &obs) in mask.observed().iter().enumerate() {
        if obs {
            assert_eq!(
                window.row(r),
                mask.values().row(r),
                "inpainting must keep observed positions"
            );
        }
    }
    Ok((1..=delta).map(|r| window.row(r).to_vec()).collect())
}

// ───────────────────────── wrap-up ─────────────────────────

/// Wrap the stitching states with actions and rewards.
///
/// For every adjacent pair along `s_T, s~_1, ..., s~_delta, s'_1` the inverse
/// dynamics model predicts the connecting action, and the reward model
/// scores each (state, predicted action). The result is the stitching
/// trajectory `tau_r` of `delta + 2` tuples in raw units: it starts at the
/// cut state with predicted action/reward and ends with the high
/// trajectory's first tuple copied verbatim.
pub fn wrap_up(
    cut_state_raw: &[f64],
    bridge_norm: &[Vec<f64>],
    high_first_state_raw: &[f64],
    high_first_action: &[f64],
    high_first_reward: f64,
    models: &AuxModels,
    stats: &NormStats,
) -> Result<Trajectory, StitchError> {
    assert!(!bridge_norm.is_empty(), "wrap_up needs at least one stitching state");
    let mut chain_norm = Vec::with_capacity(bridge_norm.len() + 2);
    chain_norm.push(stats.normalize(cut_state_raw));
    chain_norm.extend(bridge_norm.iter().cloned());
    chain_norm.push(stats.normalize(high_first_state_raw));

    let mut actions = Vec::with_capacity(chain_norm.len() - 1);
    for pair in chain_norm.windows(2) {
        actions.push(models.inverse.predict(&pair[0], &pair[1])?);
    }
    let mut rewards = Vec::with_capacity(actions.len());
    for (state, action) in chain_norm.iter().zip(&actions) {
        rewards.push(models.reward.predict(state, action)?);
    }

    let mut states_raw = Vec::with_capacity(chain_norm.len());
    states_raw.push(cut_state_raw.to_vec());
    states_raw.extend(bridge_norm.iter().map(|s| stats.denormalize(s)));
    states_raw.push(high_first_state_raw.to_vec());

    actions.push(high_first_action.to_vec());
    rewards.push(high_first_reward);

    Ok(Trajectory::new(
        states_raw,
        actions,
        rewards,
        SourceTag::Augmented,
    )?)
}

// ───────────────────────── qualification ─────────────────────────

/// Outcome of the dynamics-consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct QualifyOutcome {
    pub accepted: bool,
    pub max_error: f64,
    /// One squared error per wrapped transition (`delta + 1` of them).
    pub errors: Vec<f64>,
}

/// Check every wrapped transition `(s_t, a_t, s_{t+1})` of the stitching
/// trajectory against the forward dynamics model: squared next-state error
/// in normalized units, rejected when any error reaches `delta_threshold`.
/// The high trajectory's own first tuple closes the list, so exactly
/// `delta + 1` errors are evaluated.
pub fn qualify(
    stitch_trajectory: &Trajectory,
    models: &AuxModels,
    stats: &NormStats,
    delta_threshold: f64,
) -> Result<QualifyOutcome, StitchError> {
    let states = stitch_trajectory.states();
    let actions = stitch_trajectory.actions();
    let mut errors = Vec::with_capacity(states.len() - 1);
    let mut max_error = 0.0_f64;
    for i in 0..states.len() - 1 {
        let s = stats.normalize(&states[i]);
        let s_next = stats.normalize(&states[i + 1]);
        let pred = models.forward.predict(&s, &actions[i])?;
        let err: f64 = pred
            .iter()
            .zip(&s_next)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        max_error = max_error.max(err);
        errors.push(err);
    }
    Ok(QualifyOutcome {
        accepted: max_error < delta_threshold,
        max_error,
        errors,
    })
}

// ───────────────────────── assembly ─────────────────────────

/// Concatenate prefix, stitching trajectory, and suffix into the augmented
/// trajectory: the prefix's final tuple is replaced by `tau_r`'s first (same
/// state, predicted action/reward) and the suffix's first tuple appears
/// exactly once, via `tau_r`'s last.
pub fn assemble_augmented(
    prefix: &Trajectory,
    stitch_trajectory: &Trajectory,
    suffix: &Trajectory,
) -> Result<Trajectory, StitchError> {
    assert_eq!(
        prefix.states().last().expect("prefix non-empty"),
        &stitch_trajectory.states()[0],
        "stitching trajectory must start at the prefix's final state"
    );
    assert_eq!(
        suffix.states().first().expect("suffix non-empty"),
        stitch_trajectory.states().last().expect("non-empty"),
        "stitching trajectory must end at the suffix's first state"
    );
    let t = prefix.len();
    let mut states = prefix.states()[..t - 1].to_vec();
    let mut actions = prefix.actions()[..t - 1].to_vec();
    let mut rewards = prefix.rewards()[..t - 1].to_vec();
    states.extend_from_slice(stitch_trajectory.states());
    actions.extend_from_slice(stitch_trajectory.actions());
    rewards.extend_from_slice(stitch_trajectory.rewards());
    states.extend_from_slice(&suffix.states()[1..]);
    actions.extend_from_slice(&suffix.actions()[1..]);
    rewards.extend_from_slice(&suffix.rewards()[1..]);
    Ok(Trajectory::new(
        states,
        actions,
        rewards,
        SourceTag::Augmented,
    )?)
}

// ───────────────────────── the outer loop ─────────────────────────

/// Everything recorded about one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub attempt: u64,
    pub low_index: usize,
    pub high_index: usize,
    /// Kept prefix length (the 1-based cut into the low trajectory).
    pub prefix_len: usize,
    /// 1-based cut into the high trajectory where the suffix starts.
    pub suffix_start: usize,
    pub delta: usize,
    pub max_error: f64,
    pub accepted: bool,
}

/// Attempt records plus aggregate counters.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchRunStats {
    pub attempts: Vec<AttemptRecord>,
    pub accepted_count: usize,
}

impl StitchRunStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts.is_empty() {
            0.0
        } else {
            self.accepted_count as f64 / self.attempts.len() as f64
        }
    }

    /// Histogram of estimated deltas over all attempts; index = delta.
    pub fn delta_histogram(&self, horizon: usize) -> Vec<usize> {
        let mut hist = vec![0; horizon.max(1) - 1];
        for rec in &self.attempts {
            if rec.delta < hist.len() {
                hist[rec.delta] += 1;
            }
        }
        hist
    }

    /// Nearest-rank quantiles of the max dynamics error over all attempts.
    pub fn error_quantiles(&self, qs: &[f64]) -> Vec<f64> {
        let mut errs: Vec<f64> = self.attempts.iter().map(|r| r.max_error).collect();
        if errs.is_empty() {
            return vec![f64::NAN; qs.len()];
        }
        errs.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        qs.iter()
            .map(|&q| {
                let rank = libm::ceil(q * errs.len() as f64) as usize;
                errs[rank.clamp(1, errs.len()) - 1]
            })
            .collect()
    }
}

/// Run `N` stitching attempts over the dataset and return the accepted
/// augmented trajectories plus per-attempt statistics.
///
/// Rejected attempts are simply skipped; each attempt re-samples a fresh
/// low/high pair from its own seed sub-stream (`"stitch.attempt"`, indexed
/// by attempt), so acceptance sets are comparable across thresholds.
pub fn run_augmentation(
    dataset: &Dataset,
    denoiser: &DenoiserModel,
    schedule: &NoiseSchedule,
    models: &AuxModels,
    stats: &NormStats,
    config: &StitchConfig,
) -> Result<(Vec<Trajectory>, StitchRunStats), StitchError> {
    config.validate()?;
    // Pools ranked by total undiscounted return.
    let (low_pool, high_pool) =
        partition_by_return(dataset, 1.0, config.low_quantile, config.high_quantile)?;

    let mut augmented = Vec::new();
    let mut attempts = Vec::with_capacity(config.iterations);
    for i in 0..config.iterations as u64 {
        let mut rng = substream(config.seed, "stitch.attempt", i);
        let low_index = low_pool[rng.random_range(0..low_pool.len())];
        let high_index = high_pool[rng.random_range(0..high_pool.len())];
        let low = &dataset.trajectories()[low_index];
        let high = &dataset.trajectories()[high_index];

        let prefix = sample_cut_segment(low, CutMode::Prefix, config.min_keep, &mut rng)?;
        let suffix = sample_cut_segment(high, CutMode::Suffix, config.min_keep, &mut rng)?;

        let cut_norm = stats.normalize(&prefix.cut_state);
        let target_norm = stats.normalize(&suffix.cut_state);

        let imagined = imagine_rollout(denoiser, schedule, &cut_norm, &mut rng)?;
        let estimate = estimate_steps(&imagined, &target_norm);

        let suffix_norm: Vec<Vec<f64>> = suffix
            .trajectory
            .states()
            .iter()
            .map(|s| stats.normalize(s))
            .collect();
        let mask = build_stitch_mask(&cut_norm, estimate.delta, &suffix_norm, config.horizon)?;
        let bridge = generate_stitch_states(denoiser, schedule, &mask, estimate.delta, &mut rng)?;

        let tau_r = wrap_up(
            &prefix.cut_state,
            &bridge,
            &suffix.cut_state,
            &suffix.trajectory.actions()[0],
            suffix.trajectory.rewards()[0],
            models,
            stats,
        )?;
        let outcome = qualify(&tau_r, models, stats, config.delta_threshold)?;

        attempts.push(AttemptRecord {
            attempt: i,
            low_index,
            high_index,
            prefix_len: prefix.cut_index,
            suffix_start: suffix.cut_index,
            delta: estimate.delta,
            max_error: outcome.max_error,
            accepted: outcome.accepted,
        });
        if outcome.accepted {
            augmented.push(assemble_augmented(
                &prefix.trajectory,
                &tau_r,
                &suffix.trajectory,
            )?);
        }
    }

    let accepted_count = augmented.len();
    if accepted_count == 0 {
        log::warn!(
            "no stitch accepted after {} attempts (threshold {})",
            config.iterations,
            config.delta_threshold
        );
    }
    Ok((
        augmented,
        StitchRunStats {
            attempts,
            accepted_count,
        },
    ))
}
