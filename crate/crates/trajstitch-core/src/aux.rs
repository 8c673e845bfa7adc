//! The three learned regressors that wrap generated states into full
//! transitions and police them afterwards:
//!
//! - inverse dynamics `(s_t, s_{t+1}) → a_t`
//! - reward `(s_t, a_t) → r_t`
//! - forward dynamics `(s_t, a_t) → s_{t+1}`
//!
//! States are in normalized units on both sides; actions and rewards stay
//! in raw units. All three train by MSE regression over the dataset's
//! consecutive tuples with a 90/10 train/held-out split. The reward model
//! additionally sees each trajectory's final tuple, which has no successor
//! state but does carry the terminal reward.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::nn::{mse_loss, Activation, AdamState, DenseMatrix, Mlp, NnError};
use crate::rng::StreamRng;
use crate::traj::{Dataset, NormStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuxError {
    #[error("dataset holds no transition (every trajectory needs T >= 2)")]
    NoTransitions,
    #[error("{model} training loss became non-finite at step {step}")]
    NonFiniteLoss { model: &'static str, step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `(s_t ⊕ s_{t+1}) → a_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDynamicsModel {
    mlp: Mlp,
    state_dim: usize,
    action_dim: usize,
}

/// `(s_t ⊕ a_t) → r_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    mlp: Mlp,
    state_dim: usize,
    action_dim: usize,
}

/// `(s_t ⊕ a_t) → s_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardDynamicsModel {
    mlp: Mlp,
    state_dim: usize,
    action_dim: usize,
}

macro_rules! accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn mlp(&self) -> &Mlp {
                &self.mlp
            }

            pub fn state_dim(&self) -> usize {
                self.state_dim
            }

            pub fn action_dim(&self) -> usize {
                self.action_dim
            }
        }
    };
}

accessors!(InverseDynamicsModel);
accessors!(RewardModel);
accessors!(ForwardDynamicsModel);

impl InverseDynamicsModel {
    pub fn from_mlp(mlp: Mlp, state_dim: usize, action_dim: usize) -> Result<Self, AuxError> {
        check_widths(&mlp, 2 * state_dim, action_dim, "inverse dynamics")?;
        Ok(Self {
            mlp,
            state_dim,
            action_dim,
        })
    }

    /// Predicted action between two adjacent (normalized) states.
    pub fn predict(&self, state: &[f64], next_state: &[f64]) -> Result<Vec<f64>, AuxError> {
        let row = concat_checked(state, self.state_dim, next_state, self.state_dim)?;
        let out = self.mlp.forward(&DenseMatrix::from_vec(1, row.len(), row))?;
        Ok(out.data().to_vec())
    }

    /// Batch form; rows of `pairs` are `[s_t ⊕ s_{t+1}]`, order preserved.
    pub fn predict_batch(&self, pairs: &DenseMatrix) -> Result<DenseMatrix, AuxError> {
        Ok(self.mlp.forward(pairs)?)
    }
}

impl RewardModel {
    pub fn from_mlp(mlp: Mlp, state_dim: usize, action_dim: usize) -> Result<Self, AuxError> {
        check_widths(&mlp, state_dim + action_dim, 1, "reward")?;
        Ok(Self {
            mlp,
            state_dim,
            action_dim,
        })
    }

    /// Predicted instant reward for a (normalized state, raw action) pair.
    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<f64, AuxError> {
        let row = concat_checked(state, self.state_dim, action, self.action_dim)?;
        let out = self.mlp.forward(&DenseMatrix::from_vec(1, row.len(), row))?;
        Ok(out.get(0, 0))
    }

    pub fn predict_batch(&self, inputs: &DenseMatrix) -> Result<DenseMatrix, AuxError> {
        Ok(self.mlp.forward(inputs)?)
    }
}

impl ForwardDynamicsModel {
    pub fn from_mlp(mlp: Mlp, state_dim: usize, action_dim: usize) -> Result<Self, AuxError> {
        check_widths(&mlp, state_dim + action_dim, state_dim, "forward dynamics")?;
        Ok(Self {
            mlp,
            state_dim,
            action_dim,
        })
    }

    /// Predicted next state (normalized) for a (normalized state, raw action)
    /// pair.
    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, AuxError> {
        let row = concat_checked(state, self.state_dim, action, self.action_dim)?;
        let out = self.mlp.forward(&DenseMatrix::from_vec(1, row.len(), row))?;
        Ok(out.data().to_vec())
    }

    pub fn predict_batch(&self, inputs: &DenseMatrix) -> Result<DenseMatrix, AuxError> {
        Ok(self.mlp.forward(inputs)?)
    }
}

fn check_widths(mlp: &Mlp, d_in: usize, d_out: usize, what: &'static str) -> Result<(), AuxError> {
    if mlp.input_dim() != d_in {
        return Err(NnError::ShapeMismatch {
            what,
            expected: d_in,
            got: mlp.input_dim(),
        }
        .into());
    }
    if mlp.output_dim() != d_out {
        return Err(NnError::ShapeMismatch {
            what,
            expected: d_out,
            got: mlp.output_dim(),
        }
        .into());
    }
    Ok(())
}

fn concat_checked(
    a: &[f64],
    expect_a: usize,
    b: &[f64],
    expect_b: usize,
) -> Result<Vec<f64>, AuxError> {
    if a.len() != expect_a {
        return Err(NnError::ShapeMismatch {
            what: "first input",
            expected: expect_a,
            got: a.len(),
        }
        .into());
    }
    if b.len() != expect_b {
        return Err(NnError::ShapeMismatch {
            what: "second input",
            expected: expect_b,
            got: b.len(),
        }
        .into());
    }
    let mut row = Vec::with_capacity(a.len() + b.len());
    row.extend_from_slice(a);
    row.extend_from_slice(b);
    Ok(row)
}

/// The trained trio.
#[derive(Debug, Clone)]
pub struct AuxModels {
    pub inverse: InverseDynamicsModel,
    pub reward: RewardModel,
    pub forward: ForwardDynamicsModel,
}

/// Training hyperparameters for the auxiliary regressors. The inverse model
/// uses 2 hidden layers, the reward and forward models 4.
#[derive(Debug, Clone)]
pub struct AuxTrainConfig {
    pub hidden_width: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout_fraction: f64,
}

impl Default for AuxTrainConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            steps: 4000,
            batch_size: 128,
            learning_rate: 1e-3,
            holdout_fraction: 0.1,
        }
    }
}

/// Per-model loss curves and held-out MSE.
#[derive(Debug, Clone)]
pub struct AuxTrainReport {
    pub inverse_losses: Vec<f64>,
    pub reward_losses: Vec<f64>,
    pub forward_losses: Vec<f64>,
    pub inverse_held_out: f64,
    pub reward_held_out: f64,
    pub forward_held_out: f64,
}

/// Train all three models by MSE regression over the dataset's transitions.
pub fn train_aux_models(
    dataset: &Dataset,
    stats: &NormStats,
    config: &AuxTrainConfig,
    rng: &mut StreamRng,
) -> Result<(AuxModels, AuxTrainReport), AuxError> {
    let d_s = dataset.state_dim();
    let d_a = dataset.action_dim();

    // Consecutive tuples for the dynamics pair; every tuple for the reward.
    let mut pair_in = Vec::new(); // [s ⊕ s']
    let mut pair_act = Vec::new(); // a
    let mut sa_in = Vec::new(); // [s ⊕ a] aligned with pair rows
    let mut next_out = Vec::new(); // s'
    let mut rew_in = Vec::new(); // [s ⊕ a] over all tuples
    let mut rew_out = Vec::new(); // r
    for t in dataset.trajectories() {
        let states: Vec<Vec<f64>> = t.states().iter().map(|s| stats.normalize(s)).collect();
        for i in 0..t.len() {
            let sa = concat_checked(&states[i], d_s, &t.actions()[i], d_a)?;
            rew_in.push(sa.clone());
            rew_out.push(alloc::vec![t.rewards()[i]]);
            if i + 1 < t.len() {
                pair_in.push(concat_checked(&states[i], d_s, &states[i + 1], d_s)?);
                pair_act.push(t.actions()[i].clone());
                sa_in.push(sa);
                next_out.push(states[i + 1].clone());
            }
        }
    }
    if pair_in.is_empty() {
        return Err(AuxError::NoTransitions);
    }

    let widths = |n_hidden: usize, d_in: usize, d_out: usize| {
        let mut w = alloc::vec![d_in];
        w.extend(core::iter::repeat(config.hidden_width).take(n_hidden));
        w.push(d_out);
        w
    };

    let mut inv_mlp = Mlp::new(&widths(2, 2 * d_s, d_a), Activation::Gelu, rng)?;
    let mut rew_mlp = Mlp::new(&widths(4, d_s + d_a, 1), Activation::Gelu, rng)?;
    let mut fwd_mlp = Mlp::new(&widths(4, d_s + d_a, d_s), Activation::Gelu, rng)?;

    // One split over the transition rows (shared by the dynamics pair) and
    // one over the reward tuples.
    let (pair_train, pair_hold) = split_indices(pair_in.len(), config.holdout_fraction, rng);
    let (rew_train, rew_hold) = split_indices(rew_in.len(), config.holdout_fraction, rng);

    let inverse_losses = fit(
        "inverse dynamics",
        &mut inv_mlp,
        &pair_in,
        &pair_act,
        &pair_train,
        config,
        rng,
    )?;
    let reward_losses = fit(
        "reward",
        &mut rew_mlp,
        &rew_in,
        &rew_out,
        &rew_train,
        config,
        rng,
    )?;
    let forward_losses = fit(
        "forward dynamics",
        &mut fwd_mlp,
        &sa_in,
        &next_out,
        &pair_train,
        config,
        rng,
    )?;

    let inverse_held_out = held_out_mse(&inv_mlp, &pair_in, &pair_act, &pair_hold)?;
    let reward_held_out = held_out_mse(&rew_mlp, &rew_in, &rew_out, &rew_hold)?;
    let forward_held_out = held_out_mse(&fwd_mlp, &sa_in, &next_out, &pair_hold)?;

    Ok((
        AuxModels {
            inverse: InverseDynamicsModel::from_mlp(inv_mlp, d_s, d_a)?,
            reward: RewardModel::from_mlp(rew_mlp, d_s, d_a)?,
            forward: ForwardDynamicsModel::from_mlp(fwd_mlp, d_s, d_a)?,
        },
        AuxTrainReport {
            inverse_losses,
            reward_losses,
            forward_losses,
            inverse_held_out,
            reward_held_out,
            forward_held_out,
        },
    ))
}

/// Deterministic train/held-out split: shuffle indices with a stream derived
/// from `rng`, hold out the tail fraction.
fn split_indices(n: usize, holdout_fraction: f64, rng: &mut StreamRng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((n as f64 * holdout_fraction) as usize).min(n.saturating_sub(1));
    let train = idx[..n - held].to_vec();
    let holdout = idx[n - held..].to_vec();
    (train, holdout)
}

fn fit(
    name: &'static str,
    mlp: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    train: &[usize],
    config: &AuxTrainConfig,
    rng: &mut StreamRng,
) -> Result<Vec<f64>, AuxError> {
    let mut opt = AdamState::new(mlp, config.learning_rate);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| train[rng.random_range(0..train.len())])
            .collect();
        let x = DenseMatrix::from_rows(&idx.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>());
        let y = DenseMatrix::from_rows(&idx.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>());
        let trace = mlp.forward_cached(&x)?;
        let (loss, dl) = mse_loss(trace.output(), &y)?;
        if !loss.is_finite() {
            return Err(AuxError::NonFiniteLoss { model: name, step });
        }
        let grads = mlp.backward(&trace, &dl)?;
        opt.step(mlp, &grads)?;
        losses.push(loss);
    }
    Ok(losses)
}

fn held_out_mse(
    mlp: &Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    holdout: &[usize],
) -> Result<f64, AuxError> {
    if holdout.is_empty() {
        return Ok(f64::NAN);
    }
    let x = DenseMatrix::from_rows(&holdout.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>());
    let y = DenseMatrix::from_rows(&holdout.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>());
    let pred = mlp.forward(&x)?;
    let (loss, _) = mse_loss(&pred, &y)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::traj::{fit_normalizer, SourceTag, Trajectory};

    fn linear_env_dataset(rng: &mut StreamRng, n_traj: usize, len: usize) -> Dataset {
        // s' = s + 0.1 a with constant reward 0.5
        let trajs = (0..n_traj)
            .map(|_| {
                let mut s = alloc::vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let mut states = alloc::vec![s.clone()];
                let mut actions = Vec::new();
                let mut rewards = Vec::new();
                for _ in 0..len - 1 {
                    let a = alloc::vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    s = alloc::vec![s[0] + 0.1 * a[0], s[1] + 0.1 * a[1]];
                    states.push(s.clone());
                    actions.push(a);
                    rewards.push(0.5);
                }
                actions.push(alloc::vec![0.0, 0.0]);
                rewards.push(0.5);
                Trajectory::new(states, actions, rewards, SourceTag::Original).unwrap()
            })
            .collect();
        Dataset::new(trajs).unwrap()
    }

    #[test]
    fn shape_contracts_and_batch_order() {
        let mut rng = substream(5, "aux-test", 0);
        let inv = InverseDynamicsModel::from_mlp(
            Mlp::new(&[4, 8, 2], Activation::Gelu, &mut rng).unwrap(),
            2,
            2,
        )
        .unwrap();
        let a = inv.predict(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(inv.predict(&[0.0], &[0.0, 0.0]).is_err());

        let rows = [
            alloc::vec![0.1, 0.2, 0.3, 0.4],
            alloc::vec![-1.0, 0.0, 1.0, 0.5],
            alloc::vec![0.0, 0.0, 0.0, 0.0],
        ];
        let batch = inv.predict_batch(&DenseMatrix::from_rows(&rows)).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let one = inv.predict(&row[..2], &row[2..]).unwrap();
            assert_eq!(batch.row(i), &one[..]);
        }

        let rew = RewardModel::from_mlp(
            Mlp::new(&[4, 8, 1], Activation::Gelu, &mut rng).unwrap(),
            2,
            2,
        )
        .unwrap();
        assert!(rew.predict(&[0.0, 0.0], &[0.0, 0.0]).unwrap().is_finite());

        let fwd = ForwardDynamicsModel::from_mlp(
            Mlp::new(&[4, 8, 2], Activation::Gelu, &mut rng).unwrap(),
            2,
            2,
        )
        .unwrap();
        assert_eq!(fwd.predict(&[0.0, 0.0], &[0.0, 0.0]).unwrap().len(), 2);

        assert!(RewardModel::from_mlp(
            Mlp::new(&[3, 8, 1], Activation::Gelu, &mut rng).unwrap(),
            2,
            2
        )
        .is_err());
    }

    #[test]
    fn learns_a_linear_environment() {
        let mut rng = substream(5, "aux-test", 1);
        let ds = linear_env_dataset(&mut rng, 30, 24);
        let stats = fit_normalizer(&ds);
        let cfg = AuxTrainConfig {
            hidden_width: 64,
            steps: 1500,
            batch_size: 64,
            learning_rate: 1e-3,
            holdout_fraction: 0.1,
        };
        let (models, report) = train_aux_models(&ds, &stats, &cfg, &mut rng).unwrap();

        assert!(
            report.forward_held_out < 1e-3,
            "forward held-out mse {}",
            report.forward_held_out
        );
        assert!(
            report.inverse_held_out < 1e-2,
            "inverse held-out mse {}",
            report.inverse_held_out
        );

        // Constant reward recovered everywhere.
        let r = models.reward.predict(&stats.normalize(&[0.2, -0.3]), &[0.5, 0.1]).unwrap();
        assert!((r - 0.5).abs() < 0.01, "predicted reward {r}");

        // Probe: the inverse model recovers the action of a fresh pair.
        let s = [0.15, -0.4];
        let a = [0.6, -0.2];
        let s_next = [s[0] + 0.1 * a[0], s[1] + 0.1 * a[1]];
        let pred = models
            .inverse
            .predict(&stats.normalize(&s), &stats.normalize(&s_next))
            .unwrap();
        for (p, t) in pred.iter().zip(&a) {
            assert!((p - t).abs() < 0.1, "inverse recovered {pred:?} for {a:?}");
        }

        // Probe: forward model recovers s + 0.1 a (within normalized 0.05).
        let pred = models.forward.predict(&stats.normalize(&s), &a).unwrap();
        let want = stats.normalize(&s_next);
        for (p, t) in pred.iter().zip(&want) {
            assert!((p - t).abs() < 0.05, "forward predicted {pred:?} wanted {want:?}");
        }
    }
}
