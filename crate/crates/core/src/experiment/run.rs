use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::metrics::{aggregate_files, MetricsRow, MetricsWriter};
use crate::agent::{Agent, PolicySnapshot};
use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Goal, State};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "GCRL_OUTPUT_DIR";

/// Where a run writes: the config's `output_dir`, else `$GCRL_OUTPUT_DIR`,
/// else `./runs`.
pub fn output_root(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Files written for one seed.
#[derive(Clone, Debug)]
pub struct SeedOutput {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub rows: Vec<MetricsRow>,
}

/// Files written by [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub aggregate: PathBuf,
    pub seeds: Vec<SeedOutput>,
}

/// Fresh evaluation start/goal pairs, independent of training randomness.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

/// Evaluates a frozen policy on `episodes` fresh start/goal pairs.
pub fn evaluate_snapshot(
    snapshot: &PolicySnapshot<f64>,
    episodes: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    profile: crate::agent::CriticChoice,
) -> Result<crate::bias::BiasReport<f64>> {
    let starts: Vec<(State<f64>, Goal<f64>)> = (0..episodes).map(|_| snapshot.env.sample_start_goal(rng)).collect();
    let trajs = snapshot.evaluate(&starts)?;
    snapshot.report(epoch, &trajs, profile)
}

/// Trains and evaluates every seed in turn, then writes the aggregate.
///
/// Layout below the output root:
///
/// ```text
/// <method>_<task>_n<n>/
///     aggregate.csv
///     seed<k>/config.txt      resolved configuration
///     seed<k>/metrics.csv     one row per epoch, flushed as it is written
///     seed<k>/policy.ckpt     final policy and critics
/// ```
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    run_in(config, &output_root(config), |_| {})
}

/// [`run`] below an explicit root, calling `on_epoch` after every row.
pub fn run_in(config: &ExperimentConfig, root: &Path, mut on_epoch: impl FnMut(&MetricsRow)) -> Result<RunOutput> {
    let dir = root.join(config.run_name());
    fs::create_dir_all(&dir)?;
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        seeds.push(run_seed(config, seed, &dir.join(format!("seed{seed}")), &mut on_epoch)?);
    }
    let aggregate = dir.join("aggregate.csv");
    let files: Vec<&Path> = seeds.iter().map(|s| s.metrics.as_path()).collect();
    aggregate_files(&files, &aggregate)?;
    Ok(RunOutput { dir, aggregate, seeds })
}

/// One seed: warm-up, then `epochs` of training with an evaluation round
/// after each.
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    on_epoch: &mut dyn FnMut(&MetricsRow),
) -> Result<SeedOutput> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), config.to_text())?;
    let env: EnvSpec<f64> = config.env().with_seed(seed);
    let agent_cfg = config.agent_config(seed);
    let eval_episodes = agent_cfg.eval_episodes;
    let mut agent = Agent::new(env, agent_cfg)?;
    let mut rng = eval_rng(seed);
    let metrics = dir.join("metrics.csv");
    let checkpoint = dir.join("policy.ckpt");
    let mut writer = MetricsWriter::create(&metrics)?;
    let mut rows = Vec::with_capacity(config.epochs);
    let clock = Instant::now();

    agent.warmup()?;
    for epoch in 1..=config.epochs {
        let (mut loss, mut cycles) = (0.0, 0usize);
        for _ in 0..config.cycles_per_epoch {
            if let Some(l) = agent.train_cycle()?.critic_loss {
                loss += l;
                cycles += 1;
            }
        }
        let snapshot = agent.snapshot();
        let report = evaluate_snapshot(&snapshot, eval_episodes, &mut rng, epoch, config.profile_critic)?;
        let row = MetricsRow {
            method: config.method.name().to_string(),
            task: config.task.clone(),
            n: config.n,
            seed,
            epoch,
            success_rate: report.success_rate,
            tsb: report.tsb,
            isb: report.isb,
            critic_loss: (cycles > 0).then(|| loss / cycles as f64),
            seconds: config.wall_clock.then(|| clock.elapsed().as_secs_f64()),
        };
        writer.write(&row)?;
        on_epoch(&row);
        rows.push(row);
        if epoch == config.epochs {
            let mut w = BufWriter::new(File::create(&checkpoint)?);
            snapshot.write(&mut w)?;
            w.flush().map_err(Error::from)?;
        }
    }
    Ok(SeedOutput {
        seed,
        dir: dir.to_path_buf(),
        metrics,
        checkpoint,
        rows,
    })
}
