//! Pipeline commands: dataset generation, model training, stitching,
//! evaluation, and parameter sweeps. Each command reads its inputs from the
//! run directory, writes its artifacts atomically, and echoes the resolved
//! configuration alongside them.

use std::path::Path;
use std::time::Instant;

use trajstitch_core::diffusion::{train_denoiser, NoiseSchedule};
use trajstitch_core::env::{
    evaluate_policy, generate_offline_dataset, return_improvement_report, train_percentile_bc,
    MixConfig,
};
use trajstitch_core::aux::train_aux_models;
use trajstitch_core::rng::substream;
use trajstitch_core::stitch::{run_augmentation, AttemptRecord, StitchConfig};
use trajstitch_core::traj::{compute_returns, fit_normalizer, Dataset, NormStats, Trajectory};

use crate::config::{ConfigError, RunConfig};
use crate::formats::{
    self, ArmReport, DeltaSweepRow, EvalReportFile, ImprovementSummary, RatioSweepRow,
    SeedOutcome, StitchStatsFile,
};

/// Loss-curve CSV logging interval (steps per row).
pub const LOSS_LOG_INTERVAL: usize = 50;

/// Threshold grid for `sweep --param delta`.
pub const DELTA_GRID: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Ratio grid for `sweep --param ratio`, as (original, augmented) parts.
pub const RATIO_GRID: [(u32, u32); 6] = [(0, 1), (1, 2), (1, 1), (2, 1), (4, 1), (1, 0)];

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

fn cfg_err(e: impl std::fmt::Display) -> AppError {
    AppError::Config(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> AppError {
    AppError::Runtime(e.to_string())
}

fn echo_config(config: &RunConfig) -> Result<(), AppError> {
    formats::save_json(&config.echo_value(), &config.out_dir.join("resolved_config.json"))
        .map_err(run_err)
}

fn load_inputs(config: &RunConfig) -> Result<(Dataset, NormStats), AppError> {
    let dataset_path = config.dataset_path();
    let dataset = formats::load_dataset(&dataset_path).map_err(cfg_err)?;
    let stats = formats::load_stats(&formats::stats_sidecar_path(&dataset_path))
        .map_err(cfg_err)?;
    Ok((dataset, stats))
}

// ───────────────────────── gen-data ─────────────────────────

pub fn cmd_gen_data(config: &RunConfig) -> Result<(), AppError> {
    if config.scenario != "disjoint-families" {
        return Err(AppError::Config(format!(
            "unknown scenario {:?} (available: disjoint-families)",
            config.scenario
        )));
    }
    let started = Instant::now();
    let spec = config.maze_spec();
    let scenario = config.scenario();
    let mut rng = substream(config.seed, "data", 0);
    let dataset = generate_offline_dataset(&spec, &scenario, &mut rng).map_err(run_err)?;
    let stats = fit_normalizer(&dataset);

    let dataset_path = config.dataset_path();
    formats::save_dataset(&dataset, &dataset_path).map_err(run_err)?;
    formats::save_stats(&stats, &formats::stats_sidecar_path(&dataset_path)).map_err(run_err)?;
    echo_config(config)?;

    let n = scenario.n_per_family;
    let summary = |trajs: &[Trajectory]| -> (f64, f64, f64) {
        let totals: Vec<f64> = trajs
            .iter()
            .map(|t| compute_returns(t, config.gamma).expect("valid gamma").total)
            .collect();
        let (mean, _) = formats::mean_std(&totals);
        let min = totals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, min, max)
    };
    let (a_mean, a_min, a_max) = summary(&dataset.trajectories()[..n]);
    let (b_mean, b_min, b_max) = summary(&dataset.trajectories()[n..]);
    println!(
        "wrote {} trajectories to {} ({:.1?})",
        dataset.len(),
        dataset_path.display(),
        started.elapsed()
    );
    println!("  family A returns: mean {a_mean:.4} range [{a_min:.4}, {a_max:.4}]");
    println!("  family B returns: mean {b_mean:.4} range [{b_min:.4}, {b_max:.4}]");
    Ok(())
}

// ───────────────────────── train ─────────────────────────

pub fn cmd_train(config: &RunConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let (dataset, stats) = load_inputs(config)?;
    let schedule = NoiseSchedule::cosine(config.k_steps).map_err(cfg_err)?;
    let out = &config.out_dir;

    let mut rng = substream(config.seed, "train.denoiser", 0);
    let trained = train_denoiser(
        &dataset,
        &stats,
        &schedule,
        config.horizon,
        &config.denoiser_config(),
        &mut rng,
    )
    .map_err(run_err)?;
    formats::save_denoiser(&trained.model, config.k_steps, &out.join("denoiser.json"))
        .map_err(run_err)?;
    formats::save_loss_csv(&trained.losses, LOSS_LOG_INTERVAL, &out.join("denoiser_loss.csv"))
        .map_err(run_err)?;
    let head: f64 = trained.losses.iter().take(100).sum::<f64>()
        / trained.losses.len().min(100) as f64;
    let tail: f64 = trained.losses.iter().rev().take(100).sum::<f64>()
        / trained.losses.len().min(100) as f64;
    println!(
        "denoiser: {} steps, smoothed loss {head:.4} -> {tail:.4} ({:.1?})",
        trained.losses.len(),
        started.elapsed()
    );

    let mut rng = substream(config.seed, "train.aux", 0);
    let (models, report) =
        train_aux_models(&dataset, &stats, &config.aux_config(), &mut rng).map_err(run_err)?;
    formats::save_aux_models(&models, out).map_err(run_err)?;
    formats::save_loss_csv(&report.inverse_losses, LOSS_LOG_INTERVAL, &out.join("inv_dyn_loss.csv"))
        .map_err(run_err)?;
    formats::save_loss_csv(&report.reward_losses, LOSS_LOG_INTERVAL, &out.join("reward_loss.csv"))
        .map_err(run_err)?;
    formats::save_loss_csv(&report.forward_losses, LOSS_LOG_INTERVAL, &out.join("fwd_dyn_loss.csv"))
        .map_err(run_err)?;
    echo_config(config)?;
    println!(
        "aux models held-out mse: inverse {:.3e}, reward {:.3e}, forward {:.3e} ({:.1?} total)",
        report.inverse_held_out,
        report.reward_held_out,
        report.forward_held_out,
        started.elapsed()
    );
    Ok(())
}

// ───────────────────────── stitch ─────────────────────────

fn run_stitch_with(
    config: &RunConfig,
    dataset: &Dataset,
    stats: &NormStats,
    stitch_config: &StitchConfig,
) -> Result<(Vec<Trajectory>, trajstitch_core::stitch::StitchRunStats), AppError> {
    let out = &config.out_dir;
    let (denoiser, k_steps) =
        formats::load_denoiser(&out.join("denoiser.json")).map_err(cfg_err)?;
    let models = formats::load_aux_models(out).map_err(cfg_err)?;
    let schedule = NoiseSchedule::cosine(k_steps).map_err(run_err)?;
    run_augmentation(dataset, &denoiser, &schedule, &models, stats, stitch_config)
        .map_err(run_err)
}

pub fn cmd_stitch(config: &RunConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let (dataset, stats) = load_inputs(config)?;
    let stitch_config = config.stitch_config();
    let (augmented, stats_run) = run_stitch_with(config, &dataset, &stats, &stitch_config)?;

    let out = &config.out_dir;
    formats::save_trajectories(&augmented, &out.join("d_aug.jsonl")).map_err(run_err)?;
    let stats_file = StitchStatsFile::new(
        &stats_run,
        config.horizon,
        config.seed,
        config.echo_value(),
    );
    formats::save_json(&stats_file, &out.join("stitch_stats.json")).map_err(run_err)?;
    echo_config(config)?;
    println!(
        "stitch: {} attempts, {} accepted (rate {:.3}) at delta {} ({:.1?})",
        stats_file.attempts,
        stats_file.accepted,
        stats_file.acceptance_rate,
        config.delta_threshold,
        started.elapsed()
    );
    Ok(())
}

// ───────────────────────── eval ─────────────────────────

/// Train and evaluate one percentile-BC arm over the configured seeds. The
/// RNG stream is named by the arm, so equal setups reproduce bit-identical
/// results across commands.
fn eval_one_arm(
    config: &RunConfig,
    dataset: &Dataset,
    stats: &NormStats,
    augmented: &[Trajectory],
    mix: &MixConfig,
    stream: &str,
) -> Result<ArmReport, AppError> {
    let spec = config.maze_spec();
    let bc = config.bc_config();
    let mut outcomes = Vec::with_capacity(config.eval_seeds);
    for i in 0..config.eval_seeds {
        let mut rng = substream(config.seed, stream, i as u64);
        let policy = train_percentile_bc(
            dataset,
            augmented,
            stats,
            mix,
            config.percentile,
            config.gamma,
            &bc,
            &spec,
            &mut rng,
        )
        .map_err(run_err)?;
        let outcome = evaluate_policy(&spec, &policy, config.eval_episodes, config.gamma);
        outcomes.push(SeedOutcome {
            seed: i,
            success_rate: outcome.success_rate,
            mean_return: outcome.mean_return,
        });
    }
    Ok(ArmReport::from_outcomes(outcomes))
}

fn eval_raw_arm(
    config: &RunConfig,
    dataset: &Dataset,
    stats: &NormStats,
) -> Result<ArmReport, AppError> {
    eval_one_arm(
        config,
        dataset,
        stats,
        &[],
        &MixConfig::new(1, 0, config.bc_batch),
        "bc.raw",
    )
}

fn eval_mixed_arm(
    config: &RunConfig,
    dataset: &Dataset,
    stats: &NormStats,
    augmented: &[Trajectory],
    mix: &MixConfig,
) -> Result<ArmReport, AppError> {
    let stream = format!("bc.mixed.{}:{}", mix.original_parts, mix.augmented_parts);
    eval_one_arm(config, dataset, stats, augmented, mix, &stream)
}

fn load_stitch_outputs(config: &RunConfig) -> Result<(Vec<Trajectory>, Vec<AttemptRecord>), AppError> {
    let out = &config.out_dir;
    let augmented = formats::load_trajectories(&out.join("d_aug.jsonl")).map_err(cfg_err)?;
    let stats_file: StitchStatsFile =
        formats::load_json(&out.join("stitch_stats.json")).map_err(cfg_err)?;
    let records: Vec<AttemptRecord> = stats_file.records.iter().map(AttemptRecord::from).collect();
    Ok((augmented, records))
}

pub fn cmd_eval(config: &RunConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let (dataset, stats) = load_inputs(config)?;
    let (augmented, records) = load_stitch_outputs(config)?;

    let raw = eval_raw_arm(config, &dataset, &stats)?;
    let mixed = eval_mixed_arm(config, &dataset, &stats, &augmented, &config.mix_config())?;
    let improvement =
        return_improvement_report(&dataset, &augmented, &records, config.gamma).map_err(run_err)?;

    let out = &config.out_dir;
    formats::save_figure4_csv(&improvement.pairs, &out.join("figure4.csv")).map_err(run_err)?;
    let report = EvalReportFile {
        gamma: config.gamma,
        episodes: config.eval_episodes,
        seeds: config.eval_seeds,
        raw,
        augmented: mixed,
        improvement: ImprovementSummary {
            fraction_improved: improvement.fraction_improved,
            states_compared: improvement.pairs.len(),
        },
        config: config.echo_value(),
    };
    formats::save_json(&report, &out.join("eval_report.json")).map_err(run_err)?;
    echo_config(config)?;

    println!(
        "eval over {} seeds x {} episodes ({:.1?}):",
        config.eval_seeds,
        config.eval_episodes,
        started.elapsed()
    );
    println!(
        "  raw       success {:.3} ± {:.3}, return {:.3} ± {:.3}",
        report.raw.success_mean,
        report.raw.success_std,
        report.raw.return_mean,
        report.raw.return_std
    );
    println!(
        "  augmented success {:.3} ± {:.3}, return {:.3} ± {:.3}",
        report.augmented.success_mean,
        report.augmented.success_std,
        report.augmented.return_mean,
        report.augmented.return_std
    );
    match report.improvement.fraction_improved {
        Some(f) => println!(
            "  return-to-go improved for {:.1}% of {} prefix states",
            100.0 * f,
            report.improvement.states_compared
        ),
        None => println!("  no accepted stitches; improvement fraction undefined"),
    }
    Ok(())
}

// ───────────────────────── sweep ─────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Delta,
    Ratio,
}

pub fn cmd_sweep(config: &RunConfig, param: SweepParam) -> Result<(), AppError> {
    match param {
        SweepParam::Delta => sweep_delta(config),
        SweepParam::Ratio => sweep_ratio(config),
    }
}

fn sweep_delta(config: &RunConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let (dataset, stats) = load_inputs(config)?;
    let mut rows = Vec::with_capacity(DELTA_GRID.len());
    for &delta in &DELTA_GRID {
        let mut stitch_config = config.stitch_config();
        stitch_config.delta_threshold = delta;
        let (augmented, run_stats) = run_stitch_with(config, &dataset, &stats, &stitch_config)?;
        let arm = eval_mixed_arm(config, &dataset, &stats, &augmented, &config.mix_config())?;
        println!(
            "delta {delta}: accepted {}/{} -> success {:.3} ± {:.3}",
            run_stats.accepted_count,
            run_stats.attempts.len(),
            arm.success_mean,
            arm.success_std
        );
        rows.push(DeltaSweepRow {
            delta,
            attempts: run_stats.attempts.len(),
            accepted: run_stats.accepted_count,
            acceptance_rate: run_stats.acceptance_rate(),
            success_mean: arm.success_mean,
            success_std: arm.success_std,
            return_mean: arm.return_mean,
            return_std: arm.return_std,
        });
    }
    formats::save_delta_sweep_csv(&rows, &config.out_dir.join("sweep_delta.csv"))
        .map_err(run_err)?;
    echo_config(config)?;
    println!("delta sweep done in {:.1?}", started.elapsed());
    Ok(())
}

fn sweep_ratio(config: &RunConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let (dataset, stats) = load_inputs(config)?;
    let (augmented, _records) = load_stitch_outputs(config)?;
    let mut rows = Vec::with_capacity(RATIO_GRID.len());
    for &(o, a) in &RATIO_GRID {
        let arm = if a == 0 {
            // 1:0 is the raw-data arm by definition: no augmentation used.
            eval_raw_arm(config, &dataset, &stats)?
        } else {
            let mix = MixConfig::new(o, a, config.bc_batch);
            eval_mixed_arm(config, &dataset, &stats, &augmented, &mix)?
        };
        println!(
            "ratio {o}:{a} -> success {:.3} ± {:.3}, return {:.3} ± {:.3}",
            arm.success_mean, arm.success_std, arm.return_mean, arm.return_std
        );
        rows.push(RatioSweepRow {
            ratio: format!("{o}:{a}"),
            success_mean: arm.success_mean,
            success_std: arm.success_std,
            return_mean: arm.return_mean,
            return_std: arm.return_std,
        });
    }
    formats::save_ratio_sweep_csv(&rows, &config.out_dir.join("sweep_ratio.csv"))
        .map_err(run_err)?;
    echo_config(config)?;
    println!("ratio sweep done in {:.1?}", started.elapsed());
    Ok(())
}

// ───────────────────────── run-all ─────────────────────────

pub fn cmd_run_all(config: &RunConfig) -> Result<(), AppError> {
    cmd_gen_data(config)?;
    cmd_train(config)?;
    cmd_stitch(config)?;
    cmd_eval(config)
}

/// Resolve the config exactly like `main` does; kept here so integration
/// tests drive the same path as the binary.
pub fn resolve_config(
    path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig, AppError> {
    Ok(RunConfig::resolve(path, seed, out, overrides)?)
}
