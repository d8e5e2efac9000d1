use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gcrl::agent::{CriticChoice, PolicySnapshot};
use gcrl::experiment::{self, oracle, parse_config, task_env, OUTPUT_ENV};

#[derive(Parser)]
#[command(name = "gcrl", version, about = "Goal-conditioned multi-step RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write run and aggregate CSVs.
    Train {
        config: PathBuf,
        /// Output root; overrides the config's output_dir.
        #[arg(long, env = OUTPUT_ENV)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Evaluate a saved policy on fresh start/goal pairs.
    Eval {
        checkpoint: PathBuf,
        task: String,
        #[arg(long, default_value_t = 120)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Final-epoch comparison of run CSVs; `*` marks the per-task best.
    Compare {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Mean and sample std per epoch across run CSVs.
    Aggregate {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks value iteration, the TD identity and the bias decomposition
    /// against exact references.
    OracleCheck,
}

fn train(config: &Path, out: Option<PathBuf>, quiet: bool) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
    if out.is_some() {
        cfg.output_dir = out;
    }
    let root = experiment::output_root(&cfg);
    let result = experiment::run_in(&cfg, &root, |row| {
        if !quiet {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            eprintln!(
                "seed {} epoch {:>3}  success {:.3}  tsb {}  isb {}",
                row.seed,
                row.epoch,
                row.success_rate,
                opt(row.tsb),
                opt(row.isb)
            );
        }
    })?;
    println!("{}", result.aggregate.display());
    for s in &result.seeds {
        println!("{}", s.metrics.display());
    }
    Ok(())
}

fn eval(checkpoint: &Path, task: &str, episodes: usize, seed: u64) -> Result<()> {
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let snapshot = PolicySnapshot::<f64>::read(&mut BufReader::new(file))?;
    let Some(env) = task_env(task) else {
        bail!("unknown task {task:?}; expected grid<N> or point");
    };
    if env.kind != snapshot.env.kind {
        bail!("checkpoint was trained on {:?}, not {task}", snapshot.env.kind);
    }
    let mut rng = experiment::eval_rng(seed);
    let report = experiment::evaluate_snapshot(&snapshot, episodes, &mut rng, 0, CriticChoice::Live)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    println!("episodes,success_rate,tsb,isb");
    println!(
        "{episodes},{},{},{}",
        report.success_rate,
        opt(report.tsb),
        opt(report.isb)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { config, out, quiet } => train(&config, out, quiet),
        Command::Eval {
            checkpoint,
            task,
            episodes,
            seed,
        } => eval(&checkpoint, &task, episodes, seed),
        Command::Compare { csv } => {
            let paths: Vec<&Path> = csv.iter().map(PathBuf::as_path).collect();
            experiment::compare(&paths)
                .map(|rows| print!("{}", experiment::render_table(&rows)))
                .map_err(Into::into)
        }
        Command::Aggregate { csv, out } => {
            let paths: Vec<&Path> = csv.iter().map(PathBuf::as_path).collect();
            experiment::aggregate_files(&paths, &out).map_err(Into::into)
        }
        Command::OracleCheck => match oracle::run_all() {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    ok &= c.passed;
                    println!(
                        "{} {}: worst {:.3e} (tolerance {:.0e}, {} cases)",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.worst,
                        c.tolerance,
                        c.cases
                    );
                }
                if ok {
                    Ok(())
                } else {
                    Err(anyhow::anyhow!("oracle checks failed"))
                }
            }
            Err(e) => Err(e.into()),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
