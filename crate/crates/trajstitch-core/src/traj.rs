//! Trajectory and dataset types: return accounting, state normalization,
//! low/high-return pool partitioning, and cut-segment sampling.
//!
//! Datasets are immutable after construction as far as readers are
//! concerned; the augmentation loop appends through a single writer.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::StreamRng;

/// Lower bound applied to every per-dimension standard deviation so that
/// constant dimensions normalize without blowing up.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajError {
    #[error("trajectory needs |states| = |actions| = |rewards| >= 2 (got {states}/{actions}/{rewards})")]
    LengthMismatch {
        states: usize,
        actions: usize,
        rewards: usize,
    },
    #[error("trajectory contains a non-finite entry")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("discount factor must be in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("quantiles must satisfy 0 < low <= high < 1 (got {low}, {high})")]
    InvalidQuantiles { low: f64, high: f64 },
    #[error("return pool is empty")]
    EmptyPool,
    #[error("trajectory of length {len} is too short to cut with min_keep {min_keep}")]
    TooShortToCut { len: usize, min_keep: usize },
}

/// Provenance of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Original,
    Augmented,
}

/// An ordered sequence of `(state, action, reward)` tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    source: SourceTag,
}

impl Trajectory {
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        source: SourceTag,
    ) -> Result<Self, TrajError> {
        if states.len() != actions.len() || states.len() != rewards.len() || states.len() < 2 {
            return Err(TrajError::LengthMismatch {
                states: states.len(),
                actions: actions.len(),
                rewards: rewards.len(),
            });
        }
        let d_s = states[0].len();
        let d_a = actions[0].len();
        for s in &states {
            if s.len() != d_s {
                return Err(TrajError::DimMismatch {
                    expected: d_s,
                    got: s.len(),
                });
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(TrajError::NonFinite);
            }
        }
        for a in &actions {
            if a.len() != d_a {
                return Err(TrajError::DimMismatch {
                    expected: d_a,
                    got: a.len(),
                });
            }
            if !a.iter().all(|v| v.is_finite()) {
                return Err(TrajError::NonFinite);
            }
        }
        if !rewards.iter().all(|v| v.is_finite()) {
            return Err(TrajError::NonFinite);
        }
        Ok(Self {
            states,
            actions,
            rewards,
            source,
        })
    }

    /// Number of tuples, `T`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: T >= 2
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }
}

/// An offline dataset: trajectories sharing state/action dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    state_dim: usize,
    action_dim: usize,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, TrajError> {
        let first = trajectories.first().ok_or(TrajError::EmptyDataset)?;
        let (d_s, d_a) = (first.state_dim(), first.action_dim());
        for t in &trajectories {
            if t.state_dim() != d_s {
                return Err(TrajError::DimMismatch {
                    expected: d_s,
                    got: t.state_dim(),
                });
            }
            if t.action_dim() != d_a {
                return Err(TrajError::DimMismatch {
                    expected: d_a,
                    got: t.action_dim(),
                });
            }
        }
        Ok(Self {
            trajectories,
            state_dim: d_s,
            action_dim: d_a,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: non-empty
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, t: Trajectory) -> Result<(), TrajError> {
        if t.state_dim() != self.state_dim {
            return Err(TrajError::DimMismatch {
                expected: self.state_dim,
                got: t.state_dim(),
            });
        }
        if t.action_dim() != self.action_dim {
            return Err(TrajError::DimMismatch {
                expected: self.action_dim,
                got: t.action_dim(),
            });
        }
        self.trajectories.push(t);
        Ok(())
    }
}

// ───────────────────────── returns ─────────────────────────

/// Discounted return accounting for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReturns {
    /// Total discounted return, equal to `to_go[0]`.
    pub total: f64,
    /// Return-to-go at every step: `to_go[t] = r[t] + gamma * to_go[t+1]`.
    pub to_go: Vec<f64>,
}

/// Per-trajectory returns for a whole dataset at a fixed discount.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnIndex {
    pub gamma: f64,
    pub entries: Vec<TrajectoryReturns>,
}

impl ReturnIndex {
    pub fn for_dataset(dataset: &Dataset, gamma: f64) -> Result<Self, TrajError> {
        let entries = dataset
            .trajectories()
            .iter()
            .map(|t| compute_returns(t, gamma))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { gamma, entries })
    }

    pub fn totals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.total).collect()
    }
}

/// Return-to-go by the backward recursion; `total` is the step-1 value.
pub fn compute_returns(traj: &Trajectory, gamma: f64) -> Result<TrajectoryReturns, TrajError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(TrajError::InvalidGamma(gamma));
    }
    let rewards = traj.rewards();
    let mut to_go = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        to_go[t] = acc;
    }
    Ok(TrajectoryReturns {
        total: to_go[0],
        to_go,
    })
}

/// Return-to-go for a bare reward sequence (used when scoring stitched
/// fragments that are not full [`Trajectory`] values yet).
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut to_go = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        to_go[t] = acc;
    }
    to_go
}

// ───────────────────────── normalization ─────────────────────────

/// Per-dimension state mean and (floored) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

/// Fit per-dimension z-score stats over every state in the dataset.
///
/// Uses the population standard deviation, floored at [`STD_FLOOR`];
/// constant dimensions are reported with a warning rather than an error.
pub fn fit_normalizer(dataset: &Dataset) -> NormStats {
    let d = dataset.state_dim();
    let mut mean = vec![0.0; d];
    let mut count = 0.0;
    for t in dataset.trajectories() {
        for s in t.states() {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
            count += 1.0;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; d];
    for t in dataset.trajectories() {
        for s in t.states() {
            for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
                let dlt = x - m;
                *v += dlt * dlt;
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = libm::sqrt(v / count);
            if s < STD_FLOOR {
                log::warn!("state dimension {i} is (near-)constant; flooring std at {STD_FLOOR}");
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    NormStats { mean, std }
}

// ───────────────────────── partitioning ─────────────────────────

/// Split trajectory indices into a low-return and a high-return pool.
///
/// Ranking uses total discounted return at `gamma`. Nearest-rank quantiles
/// on each side: the low pool keeps returns `<=` the `ceil(low_q * n)`-th
/// smallest, the high pool keeps returns `>=` the `ceil((1 - high_q) * n)`-th
/// largest. Ties keep every trajectory with the boundary return, so the two
/// pools may overlap when returns repeat.
pub fn partition_by_return(
    dataset: &Dataset,
    gamma: f64,
    low_quantile: f64,
    high_quantile: f64,
) -> Result<(Vec<usize>, Vec<usize>), TrajError> {
    if !(low_quantile > 0.0 && low_quantile <= high_quantile && high_quantile < 1.0) {
        return Err(TrajError::InvalidQuantiles {
            low: low_quantile,
            high: high_quantile,
        });
    }
    let totals = ReturnIndex::for_dataset(dataset, gamma)?.totals();
    let n = totals.len();
    let mut sorted = totals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("returns are finite"));

    let low_rank = ceil_rank(low_quantile, n);
    let low_threshold = sorted[low_rank - 1];
    let high_rank = ceil_rank(1.0 - high_quantile, n);
    let high_threshold = sorted[n - high_rank];

    if sorted[0] == sorted[n - 1] {
        log::warn!("all trajectory returns are equal; low and high pools are the whole dataset");
    }

    let low: Vec<usize> = (0..n).filter(|&i| totals[i] <= low_threshold).collect();
    let high: Vec<usize> = (0..n).filter(|&i| totals[i] >= high_threshold).collect();
    if low.is_empty() || high.is_empty() {
        return Err(TrajError::EmptyPool);
    }
    Ok((low, high))
}

fn ceil_rank(q: f64, n: usize) -> usize {
    let r = libm::ceil(q * n as f64) as usize;
    r.clamp(1, n)
}

// ───────────────────────── cut segments ─────────────────────────

/// Whether [`sample_cut_segment`] keeps the head or the tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutMode {
    /// Keep tuples `1..=c`; the cut state is the prefix's final state.
    Prefix,
    /// Keep tuples `c..=T`; the cut state is the suffix's first state.
    Suffix,
}

/// A kept segment plus the state at the cut.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSegment {
    pub trajectory: Trajectory,
    pub cut_state: Vec<f64>,
    /// 1-based cut index `c` into the source trajectory.
    pub cut_index: usize,
}

/// Sample a uniform cut `c in [min_keep, T - min_keep + 1]` and keep the
/// prefix (or suffix) around it, so both the kept segment and its
/// counterpart under the opposite mode hold at least `min_keep` tuples.
/// Requires `T >= 2 * min_keep - 1`.
pub fn sample_cut_segment(
    traj: &Trajectory,
    mode: CutMode,
    min_keep: usize,
    rng: &mut StreamRng,
) -> Result<CutSegment, TrajError> {
    let t_len = traj.len();
    let min_keep = min_keep.max(2); // segments must still be valid trajectories
    if t_len + 1 < 2 * min_keep {
        return Err(TrajError::TooShortToCut {
            len: t_len,
            min_keep,
        });
    }
    let lo = min_keep;
    let hi = t_len - min_keep + 1;
    let cut = rng.random_range(lo..=hi);
    let (range, cut_state) = match mode {
        CutMode::Prefix => (0..cut, traj.states()[cut - 1].clone()),
        CutMode::Suffix => (cut - 1..t_len, traj.states()[cut - 1].clone()),
    };
    let trajectory = Trajectory::new(
        traj.states()[range.clone()].to_vec(),
        traj.actions()[range.clone()].to_vec(),
        traj.rewards()[range].to_vec(),
        traj.source(),
    )
    .expect("segment keeps at least min_keep >= 2 tuples");
    Ok(CutSegment {
        trajectory,
        cut_state,
        cut_index: cut,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn traj_with_rewards(rewards: &[f64]) -> Trajectory {
        let n = rewards.len();
        Trajectory::new(
            (0..n).map(|i| vec![i as f64, 0.0]).collect(),
            vec![vec![0.0]; n],
            rewards.to_vec(),
            SourceTag::Original,
        )
        .unwrap()
    }

    fn dataset_with_returns(returns: &[f64]) -> Dataset {
        // One terminal reward per trajectory so total undiscounted return
        // equals the requested value.
        Dataset::new(
            returns
                .iter()
                .map(|&r| traj_with_rewards(&[0.0, r]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn trajectory_invariants() {
        assert!(matches!(
            Trajectory::new(
                vec![vec![0.0], vec![1.0], vec![2.0]],
                vec![vec![0.0]; 2],
                vec![0.0; 3],
                SourceTag::Original
            ),
            Err(TrajError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Trajectory::new(
                vec![vec![0.0]],
                vec![vec![0.0]],
                vec![0.0],
                SourceTag::Original
            ),
            Err(TrajError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Trajectory::new(
                vec![vec![0.0], vec![f64::INFINITY]],
                vec![vec![0.0]; 2],
                vec![0.0; 2],
                SourceTag::Original
            ),
            Err(TrajError::NonFinite)
        ));
    }

    #[test]
    fn returns_examples() {
        let r = compute_returns(&traj_with_rewards(&[1.0, 1.0]), 0.99).unwrap();
        assert!((r.total - 1.99).abs() < 1e-12);

        let r = compute_returns(&traj_with_rewards(&[0.0, 0.0, 0.0]), 0.5).unwrap();
        assert_eq!(r.total, 0.0);

        let r = compute_returns(&traj_with_rewards(&[0.0, 0.0, 1.0]), 0.9).unwrap();
        assert!((r.total - 0.81).abs() < 1e-12);

        assert!(matches!(
            compute_returns(&traj_with_rewards(&[0.0, 0.0]), 0.0),
            Err(TrajError::InvalidGamma(_))
        ));
        assert!(matches!(
            compute_returns(&traj_with_rewards(&[0.0, 0.0]), 1.5),
            Err(TrajError::InvalidGamma(_))
        ));
    }

    #[test]
    fn return_to_go_recursion_holds_exactly() {
        let mut rng = substream(3, "traj-test", 0);
        for _ in 0..50 {
            let n = rng.random_range(2..20usize);
            let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let gamma = rng.random_range(0.1..=1.0);
            let r = compute_returns(&traj_with_rewards(&rewards), gamma).unwrap();
            for t in 0..n - 1 {
                assert_eq!(r.to_go[t], rewards[t] + gamma * r.to_go[t + 1]);
            }
            assert_eq!(r.to_go[n - 1], rewards[n - 1]);
            assert_eq!(r.total, r.to_go[0]);
        }
    }

    #[test]
    fn partition_nearest_rank_example() {
        let ds = dataset_with_returns(&[0.0, 1.0, 2.0, 3.0]);
        let (low, high) = partition_by_return(&ds, 1.0, 0.5, 0.75).unwrap();
        assert_eq!(low, vec![0, 1]);
        assert_eq!(high, vec![3]);
    }

    #[test]
    fn partition_degenerate_cases() {
        let ds = dataset_with_returns(&[5.0, 5.0, 5.0]);
        let (low, high) = partition_by_return(&ds, 1.0, 0.5, 0.8).unwrap();
        assert_eq!(low.len(), 3);
        assert_eq!(high.len(), 3);

        let single = dataset_with_returns(&[2.0]);
        let (low, high) = partition_by_return(&single, 1.0, 0.5, 0.5).unwrap();
        assert_eq!(low, vec![0]);
        assert_eq!(high, vec![0]);

        assert!(matches!(
            partition_by_return(&ds, 1.0, 0.8, 0.5),
            Err(TrajError::InvalidQuantiles { .. })
        ));
    }

    #[test]
    fn partition_orders_pools_when_returns_distinct() {
        let mut rng = substream(3, "traj-test", 1);
        for _ in 0..20 {
            let n = rng.random_range(2..30usize);
            let returns: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
            let ds = dataset_with_returns(&returns);
            let (low, high) = partition_by_return(&ds, 1.0, 0.3, 0.7).unwrap();
            let max_low = low.iter().map(|&i| returns[i]).fold(f64::MIN, f64::max);
            let min_high = high.iter().map(|&i| returns[i]).fold(f64::MAX, f64::min);
            assert!(max_low <= min_high);
        }
    }

    #[test]
    fn normalizer_two_point_example() {
        let ds = Dataset::new(vec![Trajectory::new(
            vec![vec![0.0, 0.0], vec![2.0, 2.0]],
            vec![vec![0.0]; 2],
            vec![0.0; 2],
            SourceTag::Original,
        )
        .unwrap()])
        .unwrap();
        let stats = fit_normalizer(&ds);
        assert_eq!(stats.mean, vec![1.0, 1.0]);
        assert_eq!(stats.std, vec![1.0, 1.0]);
    }

    #[test]
    fn normalizer_round_trip_and_constant_dim() {
        let ds = Dataset::new(vec![Trajectory::new(
            vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![-2.0, 5.0]],
            vec![vec![0.0]; 3],
            vec![0.0; 3],
            SourceTag::Original,
        )
        .unwrap()])
        .unwrap();
        let stats = fit_normalizer(&ds);
        assert_eq!(stats.std[1], STD_FLOOR);
        assert_eq!(stats.mean[1], 5.0);
        let v = vec![0.37, 5.0];
        let round = stats.denormalize(&stats.normalize(&v));
        for (a, b) in v.iter().zip(&round) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_dataset_has_zero_mean_unit_std() {
        let mut rng = substream(3, "traj-test", 2);
        let trajs: Vec<Trajectory> = (0..8)
            .map(|_| {
                let n = rng.random_range(3..12usize);
                Trajectory::new(
                    (0..n)
                        .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(0.0..100.0)])
                        .collect(),
                    vec![vec![0.0]; n],
                    vec![0.0; n],
                    SourceTag::Original,
                )
                .unwrap()
            })
            .collect();
        let ds = Dataset::new(trajs).unwrap();
        let stats = fit_normalizer(&ds);
        let mut count = 0.0;
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        for t in ds.trajectories() {
            for s in t.states() {
                let z = stats.normalize(s);
                mean[0] += z[0];
                mean[1] += z[1];
                count += 1.0;
            }
        }
        mean[0] /= count;
        mean[1] /= count;
        for t in ds.trajectories() {
            for s in t.states() {
                let z = stats.normalize(s);
                var[0] += (z[0] - mean[0]) * (z[0] - mean[0]);
                var[1] += (z[1] - mean[1]) * (z[1] - mean[1]);
            }
        }
        for d in 0..2 {
            assert!(mean[d].abs() < 1e-6);
            assert!((libm::sqrt(var[d] / count) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cut_segment_bounds_and_short_inputs() {
        let traj = traj_with_rewards(&[0.0; 10]);
        let mut rng = substream(3, "traj-test", 3);
        for _ in 0..100 {
            let cut = sample_cut_segment(&traj, CutMode::Prefix, 3, &mut rng).unwrap();
            assert!(cut.cut_index >= 3 && cut.cut_index <= 8);
            assert_eq!(cut.trajectory.len(), cut.cut_index);
            assert_eq!(
                cut.cut_state,
                traj.states()[cut.cut_index - 1]
            );
            assert_eq!(cut.trajectory.states().last().unwrap(), &cut.cut_state);

            let cut = sample_cut_segment(&traj, CutMode::Suffix, 3, &mut rng).unwrap();
            assert!(cut.trajectory.len() >= 3);
            assert_eq!(cut.trajectory.states().first().unwrap(), &cut.cut_state);
        }

        // T = 5 with min_keep = 3 leaves exactly one admissible cut.
        let traj5 = traj_with_rewards(&[0.0; 5]);
        let cut = sample_cut_segment(&traj5, CutMode::Prefix, 3, &mut rng).unwrap();
        assert_eq!(cut.cut_index, 3);
        assert_eq!(cut.trajectory.len(), 3);

        let traj4 = traj_with_rewards(&[0.0; 4]);
        assert!(matches!(
            sample_cut_segment(&traj4, CutMode::Prefix, 3, &mut rng),
            Err(TrajError::TooShortToCut { .. })
        ));
    }
}
