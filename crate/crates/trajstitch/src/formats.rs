//! On-disk formats: JSON-lines datasets with a stats sidecar, model
//! checkpoints, run statistics, and CSV tables.
//!
//! All JSON floats go through `serde_json`'s shortest-round-trip formatter,
//! so every value reloads bit-exactly. Files are written to a temporary
//! sibling and renamed into place.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use trajstitch_core::aux::{
    AuxModels, ForwardDynamicsModel, InverseDynamicsModel, RewardModel,
};
use trajstitch_core::diffusion::{DenoiserModel, COSINE_OFFSET};
use trajstitch_core::nn::{Activation, DenseMatrix, Layer, Mlp};
use trajstitch_core::stitch::{AttemptRecord, StitchRunStats};
use trajstitch_core::traj::{Dataset, NormStats, SourceTag, Trajectory};

/// Current checkpoint schema version.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write bytes to a temporary sibling, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

// ───────────────────────── dataset JSONL ─────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryLine {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

fn source_str(tag: SourceTag) -> &'static str {
    match tag {
        SourceTag::Original => "original",
        SourceTag::Augmented => "augmented",
    }
}

fn parse_source(s: Option<&str>, path: &Path, line: usize) -> Result<SourceTag, FormatError> {
    match s {
        None | Some("original") => Ok(SourceTag::Original),
        Some("augmented") => Ok(SourceTag::Augmented),
        Some(other) => Err(FormatError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unknown source tag {other:?}"),
        }),
    }
}

/// Serialize trajectories one per line.
pub fn trajectories_to_jsonl(trajectories: &[Trajectory]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in trajectories {
        let line = TrajectoryLine {
            states: t.states().to_vec(),
            actions: t.actions().to_vec(),
            rewards: t.rewards().to_vec(),
            source: Some(source_str(t.source()).to_owned()),
        };
        serde_json::to_writer(&mut out, &line).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

/// Save a dataset as JSON-lines.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &trajectories_to_jsonl(dataset.trajectories()))
}

/// Save a bare trajectory list (the augmented set) as JSON-lines. An empty
/// list produces an empty file.
pub fn save_trajectories(trajectories: &[Trajectory], path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &trajectories_to_jsonl(trajectories))
}

fn read_trajectory_lines(path: &Path) -> Result<Vec<Trajectory>, FormatError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut trajectories = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| FormatError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        let source = parse_source(parsed.source.as_deref(), path, line_no)?;
        let traj = Trajectory::new(parsed.states, parsed.actions, parsed.rewards, source)
            .map_err(|e| FormatError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        trajectories.push(traj);
    }
    Ok(trajectories)
}

/// Load a dataset from JSON-lines, preserving trajectory order.
pub fn load_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let trajectories = read_trajectory_lines(path)?;
    if trajectories.is_empty() {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            message: "empty dataset".into(),
        });
    }
    Dataset::new(trajectories).map_err(|e| FormatError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load a (possibly empty) trajectory list, e.g. `d_aug.jsonl`.
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, FormatError> {
    read_trajectory_lines(path)
}

// ───────────────────────── stats sidecar ─────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct StatsDto {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// `<name>.stats.json` next to a `<name>.jsonl` dataset.
pub fn stats_sidecar_path(dataset_path: &Path) -> PathBuf {
    dataset_path.with_extension("stats.json")
}

pub fn save_stats(stats: &NormStats, path: &Path) -> Result<(), FormatError> {
    let dto = StatsDto {
        mean: stats.mean.clone(),
        std: stats.std.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&dto).expect("in-memory serialization");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_stats(path: &Path) -> Result<NormStats, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let dto: StatsDto = serde_json::from_slice(&bytes).map_err(|e| FormatError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    if dto.mean.len() != dto.std.len() {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            message: "mean/std length mismatch".into(),
        });
    }
    Ok(NormStats {
        mean: dto.mean,
        std: dto.std,
    })
}

// ───────────────────────── checkpoints ─────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct LayerDto {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDto {
    version: u32,
    kind: String,
    activation: String,
    widths: Vec<usize>,
    layers: Vec<LayerDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_gain: Option<f64>,
}

fn mlp_to_dto(mlp: &Mlp, kind: &str) -> CheckpointDto {
    CheckpointDto {
        version: CHECKPOINT_VERSION,
        kind: kind.to_owned(),
        activation: match mlp.activation() {
            Activation::Gelu => "gelu".to_owned(),
            Activation::Relu => "relu".to_owned(),
        },
        widths: mlp.widths().to_vec(),
        layers: mlp
            .layers()
            .iter()
            .map(|l| LayerDto {
                weights: (0..l.weights.rows()).map(|r| l.weights.row(r).to_vec()).collect(),
                bias: l.bias.clone(),
            })
            .collect(),
        horizon: None,
        state_dim: None,
        action_dim: None,
        k_steps: None,
        s_offset: None,
        noise_gain: None,
    }
}

fn dto_to_mlp(dto: &CheckpointDto, path: &Path) -> Result<Mlp, FormatError> {
    let schema = |message: String| FormatError::Schema {
        path: path.to_path_buf(),
        message,
    };
    if dto.version != CHECKPOINT_VERSION {
        return Err(schema(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            dto.version
        )));
    }
    let activation = match dto.activation.as_str() {
        "gelu" => Activation::Gelu,
        "relu" => Activation::Relu,
        other => return Err(schema(format!("unknown activation tag {other:?}"))),
    };
    let mut layers = Vec::with_capacity(dto.layers.len());
    for (i, l) in dto.layers.iter().enumerate() {
        let rows = l.weights.len();
        let cols = l.weights.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || l.weights.iter().any(|r| r.len() != cols) {
            return Err(schema(format!("layer {i} weight matrix is ragged or empty")));
        }
        let mut m = DenseMatrix::zeros(rows, cols);
        for (r, row) in l.weights.iter().enumerate() {
            m.row_mut(r).copy_from_slice(row);
        }
        layers.push(Layer {
            weights: m,
            bias: l.bias.clone(),
        });
    }
    let mlp = Mlp::from_parts(activation, layers).map_err(|e| schema(e.to_string()))?;
    if mlp.widths() != dto.widths.as_slice() {
        return Err(schema("declared widths do not match layer shapes".into()));
    }
    Ok(mlp)
}

fn save_dto(dto: &CheckpointDto, path: &Path) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec(dto).expect("in-memory serialization");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn load_dto(path: &Path, expect_kind: &str) -> Result<CheckpointDto, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let dto: CheckpointDto = serde_json::from_slice(&bytes).map_err(|e| FormatError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    if dto.kind != expect_kind {
        return Err(FormatError::Schema {
            path: path.to_path_buf(),
            message: format!("expected a {expect_kind:?} checkpoint, found {:?}", dto.kind),
        });
    }
    Ok(dto)
}

/// Save the denoiser together with its schedule parameters and horizon.
pub fn save_denoiser(
    model: &DenoiserModel,
    k_steps: usize,
    path: &Path,
) -> Result<(), FormatError> {
    let mut dto = mlp_to_dto(model.mlp(), "denoiser");
    dto.horizon = Some(model.horizon());
    dto.state_dim = Some(model.state_dim());
    dto.k_steps = Some(k_steps);
    dto.s_offset = Some(COSINE_OFFSET);
    dto.noise_gain = Some(model.noise_gain());
    save_dto(&dto, path)
}

/// Load the denoiser; returns the model and its recorded `K`.
pub fn load_denoiser(path: &Path) -> Result<(DenoiserModel, usize), FormatError> {
    let dto = load_dto(path, "denoiser")?;
    let schema = |message: &str| FormatError::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    };
    let horizon = dto.horizon.ok_or_else(|| schema("missing horizon"))?;
    let state_dim = dto.state_dim.ok_or_else(|| schema("missing state_dim"))?;
    let k_steps = dto.k_steps.ok_or_else(|| schema("missing k_steps"))?;
    let noise_gain = dto.noise_gain.ok_or_else(|| schema("missing noise_gain"))?;
    let mlp = dto_to_mlp(&dto, path)?;
    let model = DenoiserModel::from_parts(mlp, horizon, state_dim, noise_gain)
        .map_err(|e| schema(&e.to_string()))?;
    Ok((model, k_steps))
}

fn aux_dims(dto: &CheckpointDto, path: &Path) -> Result<(usize, usize), FormatError> {
    let schema = |message: &str| FormatError::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    };
    Ok((
        dto.state_dim.ok_or_else(|| schema("missing state_dim"))?,
        dto.action_dim.ok_or_else(|| schema("missing action_dim"))?,
    ))
}

/// Save the three auxiliary models as `inv_dyn.json`, `reward.json`, and
/// `fwd_dyn.json` inside `dir`.
pub fn save_aux_models(models: &AuxModels, dir: &Path) -> Result<(), FormatError> {
    let mut inv = mlp_to_dto(models.inverse.mlp(), "inverse_dynamics");
    inv.state_dim = Some(models.inverse.state_dim());
    inv.action_dim = Some(models.inverse.action_dim());
    save_dto(&inv, &dir.join("inv_dyn.json"))?;

    let mut rew = mlp_to_dto(models.reward.mlp(), "reward");
    rew.state_dim = Some(models.reward.state_dim());
    rew.action_dim = Some(models.reward.action_dim());
    save_dto(&rew, &dir.join("reward.json"))?;

    let mut fwd = mlp_to_dto(models.forward.mlp(), "forward_dynamics");
    fwd.state_dim = Some(models.forward.state_dim());
    fwd.action_dim = Some(models.forward.action_dim());
    save_dto(&fwd, &dir.join("fwd_dyn.json"))
}

pub fn load_aux_models(dir: &Path) -> Result<AuxModels, FormatError> {
    let path = dir.join("inv_dyn.json");
    let dto = load_dto(&path, "inverse_dynamics")?;
    let (d_s, d_a) = aux_dims(&dto, &path)?;
    let inverse = InverseDynamicsModel::from_mlp(dto_to_mlp(&dto, &path)?, d_s, d_a)
        .map_err(|e| FormatError::Schema {
            path,
            message: e.to_string(),
        })?;

    let path = dir.join("reward.json");
    let dto = load_dto(&path, "reward")?;
    let (d_s, d_a) = aux_dims(&dto, &path)?;
    let reward = RewardModel::from_mlp(dto_to_mlp(&dto, &path)?, d_s, d_a).map_err(|e| {
        FormatError::Schema {
            path,
            message: e.to_string(),
        }
    })?;

    let path = dir.join("fwd_dyn.json");
    let dto = load_dto(&path, "forward_dynamics")?;
    let (d_s, d_a) = aux_dims(&dto, &path)?;
    let forward = ForwardDynamicsModel::from_mlp(dto_to_mlp(&dto, &path)?, d_s, d_a)
        .map_err(|e| FormatError::Schema {
            path,
            message: e.to_string(),
        })?;

    Ok(AuxModels {
        inverse,
        reward,
        forward,
    })
}

// ───────────────────────── run statistics ─────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptDto {
    pub attempt: u64,
    pub low_index: usize,
    pub high_index: usize,
    pub prefix_len: usize,
    pub suffix_start: usize,
    pub delta: usize,
    pub max_error: f64,
    pub accepted: bool,
}

impl From<&AttemptRecord> for AttemptDto {
    fn from(r: &AttemptRecord) -> Self {
        Self {
            attempt: r.attempt,
            low_index: r.low_index,
            high_index: r.high_index,
            prefix_len: r.prefix_len,
            suffix_start: r.suffix_start,
            delta: r.delta,
            max_error: r.max_error,
            accepted: r.accepted,
        }
    }
}

impl From<&AttemptDto> for AttemptRecord {
    fn from(r: &AttemptDto) -> Self {
        Self {
            attempt: r.attempt,
            low_index: r.low_index,
            high_index: r.high_index,
            prefix_len: r.prefix_len,
            suffix_start: r.suffix_start,
            delta: r.delta,
            max_error: r.max_error,
            accepted: r.accepted,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorQuantiles {
    pub q10: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q90: f64,
}

/// `stitch_stats.json`: counters, the delta histogram, error quantiles, the
/// resolved config echo, and the per-attempt records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StitchStatsFile {
    pub seed: u64,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub delta_histogram: Vec<usize>,
    pub max_error_quantiles: ErrorQuantiles,
    pub config: serde_json::Value,
    pub records: Vec<AttemptDto>,
}

impl StitchStatsFile {
    pub fn new(
        stats: &StitchRunStats,
        horizon: usize,
        seed: u64,
        config: serde_json::Value,
    ) -> Self {
        let q = stats.error_quantiles(&[0.1, 0.25, 0.5, 0.75, 0.9]);
        Self {
            seed,
            attempts: stats.attempts.len(),
            accepted: stats.accepted_count,
            acceptance_rate: stats.acceptance_rate(),
            delta_histogram: stats.delta_histogram(horizon),
            max_error_quantiles: ErrorQuantiles {
                q10: q[0],
                q25: q[1],
                q50: q[2],
                q75: q[3],
                q90: q[4],
            },
            config,
            records: stats.attempts.iter().map(AttemptDto::from).collect(),
        }
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| FormatError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

// ───────────────────────── eval report ─────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub per_seed: Vec<SeedOutcome>,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
}

impl ArmReport {
    pub fn from_outcomes(per_seed: Vec<SeedOutcome>) -> Self {
        let succ: Vec<f64> = per_seed.iter().map(|o| o.success_rate).collect();
        let ret: Vec<f64> = per_seed.iter().map(|o| o.mean_return).collect();
        let (success_mean, success_std) = mean_std(&succ);
        let (return_mean, return_std) = mean_std(&ret);
        Self {
            per_seed,
            success_mean,
            success_std,
            return_mean,
            return_std,
        }
    }
}

/// Population mean/std (the seed set is the whole population of the run).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImprovementSummary {
    /// Fraction of low-side prefix states with strictly improved
    /// return-to-go; `null` when no stitch was accepted.
    pub fraction_improved: Option<f64>,
    pub states_compared: usize,
}

/// `eval_report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub gamma: f64,
    pub episodes: usize,
    pub seeds: usize,
    pub raw: ArmReport,
    pub augmented: ArmReport,
    pub improvement: ImprovementSummary,
    pub config: serde_json::Value,
}

// ───────────────────────── CSV tables ─────────────────────────

/// `figure4.csv`: one `(before, after)` return pair per prefix state.
pub fn save_figure4_csv(pairs: &[(f64, f64)], path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::new();
    writeln!(out, "before,after").expect("in-memory write");
    for (b, a) in pairs {
        writeln!(out, "{b},{a}").expect("in-memory write");
    }
    write_atomic(path, &out)
}

/// Loss curves: one row per logging interval (mean over the interval).
pub fn save_loss_csv(losses: &[f64], interval: usize, path: &Path) -> Result<(), FormatError> {
    let interval = interval.max(1);
    let mut out = Vec::new();
    writeln!(out, "step,loss").expect("in-memory write");
    for (i, chunk) in losses.chunks(interval).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        writeln!(out, "{},{}", i * interval + chunk.len(), mean).expect("in-memory write");
    }
    write_atomic(path, &out)
}

/// One row of the threshold sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSweepRow {
    pub delta: f64,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
}

pub fn save_delta_sweep_csv(rows: &[DeltaSweepRow], path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::new();
    writeln!(
        out,
        "delta,attempts,accepted,acceptance_rate,success_mean,success_std,return_mean,return_std"
    )
    .expect("in-memory write");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.delta,
            r.attempts,
            r.accepted,
            r.acceptance_rate,
            r.success_mean,
            r.success_std,
            r.return_mean,
            r.return_std
        )
        .expect("in-memory write");
    }
    write_atomic(path, &out)
}

/// One row of the data-ratio sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSweepRow {
    pub ratio: String,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
}

pub fn save_ratio_sweep_csv(rows: &[RatioSweepRow], path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::new();
    writeln!(out, "ratio,success_mean,success_std,return_mean,return_std")
        .expect("in-memory write");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.ratio, r.success_mean, r.success_std, r.return_mean, r.return_std
        )
        .expect("in-memory write");
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trajstitch_core::rng::substream;
    use trajstitch_core::traj::fit_normalizer;

    fn sample_dataset() -> Dataset {
        let t1 = Trajectory::new(
            vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]],
            vec![vec![1.0], vec![-1.0], vec![0.25]],
            vec![0.0, 0.5, 1.0],
            SourceTag::Original,
        )
        .unwrap();
        let t2 = Trajectory::new(
            vec![vec![-1.5, 2.5], vec![0.000123456789, 7.0]],
            vec![vec![0.125], vec![1e-17]],
            vec![-0.25, 0.75],
            SourceTag::Augmented,
        )
        .unwrap();
        Dataset::new(vec![t1, t2]).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let ds = sample_dataset();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds, back); // bit-exact floats and tags
    }

    #[test]
    fn dataset_error_reporting() {
        let dir = tempfile::tempdir().unwrap();

        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        let err = load_dataset(&empty).unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");

        let bad = dir.path().join("bad.jsonl");
        fs::write(
            &bad,
            "{\"states\":[[0,0],[1,1]],\"actions\":[[0],[0]],\"rewards\":[0,0]}\n\
             {\"states\":[[0,0],[1,1],[2,2]],\"actions\":[[0],[0]],\"rewards\":[0,0]}\n",
        )
        .unwrap();
        let err = load_dataset(&bad).unwrap_err();
        assert!(err.to_string().contains(":2:"), "line number missing: {err}");

        let mismatch = dir.path().join("dims.jsonl");
        fs::write(
            &mismatch,
            "{\"states\":[[0,0],[1,1]],\"actions\":[[0],[0]],\"rewards\":[0,0]}\n\
             {\"states\":[[0],[1]],\"actions\":[[0],[0]],\"rewards\":[0,0]}\n",
        )
        .unwrap();
        let err = load_dataset(&mismatch).unwrap_err();
        assert!(matches!(err, FormatError::Schema { .. }), "{err}");

        let missing = dir.path().join("nonexistent/deep/file.jsonl");
        assert!(matches!(
            save_dataset(&sample_dataset(), &missing),
            Ok(()) // parents are created; writing is not an error
        ));
        let unreadable = dir.path().join("not-there.jsonl");
        assert!(matches!(
            load_dataset(&unreadable),
            Err(FormatError::Io { .. })
        ));
    }

    #[test]
    fn stats_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        let stats = fit_normalizer(&ds);
        let path = stats_sidecar_path(&dir.path().join("data.jsonl"));
        assert!(path.to_string_lossy().ends_with("data.stats.json"));
        save_stats(&stats, &path).unwrap();
        assert_eq!(load_stats(&path).unwrap(), stats);
    }

    #[test]
    fn checkpoints_reload_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = substream(77, "fmt-test", 0);
        let model = DenoiserModel::new(6, 2, &[16, 16], &mut rng).unwrap();
        let path = dir.path().join("denoiser.json");
        save_denoiser(&model, 10, &path).unwrap();
        let (back, k_steps) = load_denoiser(&path).unwrap();
        assert_eq!(k_steps, 10);
        assert_eq!(model.mlp(), back.mlp());
        assert_eq!(back.horizon(), 6);

        let models = AuxModels {
            inverse: InverseDynamicsModel::from_mlp(
                Mlp::new(&[4, 8, 2], Activation::Gelu, &mut rng).unwrap(),
                2,
                2,
            )
            .unwrap(),
            reward: RewardModel::from_mlp(
                Mlp::new(&[4, 8, 1], Activation::Gelu, &mut rng).unwrap(),
                2,
                2,
            )
            .unwrap(),
            forward: ForwardDynamicsModel::from_mlp(
                Mlp::new(&[4, 8, 2], Activation::Gelu, &mut rng).unwrap(),
                2,
                2,
            )
            .unwrap(),
        };
        save_aux_models(&models, dir.path()).unwrap();
        let back = load_aux_models(dir.path()).unwrap();
        assert_eq!(models.inverse.mlp(), back.inverse.mlp());
        assert_eq!(models.reward.mlp(), back.reward.mlp());
        assert_eq!(models.forward.mlp(), back.forward.mlp());

        // Kind mismatch is a schema error.
        assert!(matches!(
            load_denoiser(&dir.path().join("reward.json")),
            Err(FormatError::Schema { .. })
        ));
    }

    #[test]
    fn loss_csv_rows_per_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let losses: Vec<f64> = (0..230).map(|i| i as f64).collect();
        save_loss_csv(&losses, 50, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "step,loss");
        assert_eq!(rows.len() - 1, 5); // ceil(230 / 50)
    }
}
