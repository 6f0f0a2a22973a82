use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppg_core::experiment::{
    self, entropy_tally, seed_range, DEFAULT_FIRST_SEED, FINAL_EPOCHS,
};
use ppg_core::math::mean_std;
use ppg_core::{Algo, Error, TrainConfig};

#[derive(Parser)]
#[command(name = "ppg", version, about = "Train and compare VPG, PPO and PPG on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train several algorithms over several seeds and aggregate.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "ppg,ppo")]
        algos: Vec<Algo>,
        /// Explicit seed list.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["seeds_from", "count"])]
        seeds: Vec<u64>,
        #[arg(long)]
        seeds_from: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Dump advantage-policy plane snapshots of one epoch.
    Plane {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,40,80")]
        snap_iters: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Play episodes with a saved policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Act with the policy mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value = "pointmass2d")]
        env: String,
        #[arg(long, default_value_t = DEFAULT_FIRST_SEED)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Configuration layering: defaults, then `--config`, then the flags below
/// in the order listed, then every `--set` in order.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    steps_per_epoch: Option<String>,
    #[arg(long)]
    max_policy_iters: Option<String>,
    #[arg(long)]
    kl_target: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    u_b: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    l_b: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    policy_lr: Option<String>,
    #[arg(long)]
    value_lr: Option<String>,
    #[arg(long)]
    value_iters: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    hidden: Option<String>,
    /// Any config key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self, algo: Option<Algo>) -> Result<TrainConfig, Error> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(a) = algo {
            c.algo = a;
        }
        let flags = [
            ("env_id", &self.env),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("steps_per_epoch", &self.steps_per_epoch),
            ("max_policy_iters", &self.max_policy_iters),
            ("kl_target", &self.kl_target),
            ("u_b", &self.u_b),
            ("l_b", &self.l_b),
            ("epsilon", &self.epsilon),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("policy_lr", &self.policy_lr),
            ("value_lr", &self.value_lr),
            ("value_iters", &self.value_iters),
            ("hidden", &self.hidden),
        ];
        let usage = |e: Error| Error::Usage(e.to_string());
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, v).map_err(usage)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            c.set(k, v).map_err(usage)?;
        }
        c.validate().map_err(usage)?;
        Ok(c)
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Usage(_) => "usage",
        Error::Config(_) => "config",
        Error::Dimension { .. } => "dimension",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
        Error::Csv { .. } => "csv",
    }
}

/// One line per error: `error kind=<kind> message=<JSON string>`.
fn report(kind: &str, message: &str) {
    let quoted = serde_json::to_string(message).unwrap_or_else(|_| format!("{message:?}"));
    eprintln!("error kind={kind} message={quoted}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            report("usage", first);
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(kind(&e), &e.to_string());
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { cfg, algo, out } => cmd_run(cfg.build(algo)?, &out),
        Command::Compare {
            cfg,
            algos,
            seeds,
            seeds_from,
            count,
            jobs,
            out,
        } => {
            let seeds = if !seeds.is_empty() {
                seeds
            } else {
                seed_range(seeds_from.unwrap_or(DEFAULT_FIRST_SEED), count.unwrap_or(10))
            };
            cmd_compare(cfg.build(None)?, &algos, &seeds, jobs, &out)
        }
        Command::Plane {
            cfg,
            algo,
            snap_iters,
            epoch,
            out,
        } => cmd_plane(cfg.build(algo)?, &snap_iters, epoch, &out),
        Command::Eval {
            checkpoint,
            episodes,
            deterministic,
            env,
            seed,
            out,
        } => cmd_eval(&checkpoint, episodes, deterministic, &env, seed, &out),
    }
}

fn cmd_run(config: TrainConfig, out: &Path) -> Result<(), Error> {
    let s = experiment::run(&config, out)?;
    let last = s.records.last();
    println!(
        "run {} epochs={} final_return={} final_entropy={}",
        s.dir.display(),
        s.records.len(),
        s.final_return().map_or("nan".into(), |v| format!("{v:.4}")),
        last.map_or("nan".into(), |r| format!("{:.4}", r.entropy)),
    );
    Ok(())
}

fn cmd_compare(
    base: TrainConfig,
    algos: &[Algo],
    seeds: &[u64],
    jobs: usize,
    out: &Path,
) -> Result<(), Error> {
    let summary = experiment::compare(&base, algos, seeds, out, jobs)?;
    for job in &summary.jobs {
        match &job.result {
            Ok(r) => println!(
                "{} seed {}: final_return={:.4} final_entropy={:.4}",
                job.algo,
                job.seed,
                r.final_return().unwrap_or(f64::NAN),
                r.final_entropy().unwrap_or(f64::NAN)
            ),
            Err(e) => {
                log::warn!("{} seed {} failed: {e}", job.algo, job.seed);
                report(kind(e), &format!("{} seed {}: {e}", job.algo, job.seed));
            }
        }
    }
    for &algo in algos {
        let finals: Vec<f64> = summary
            .completed(algo)
            .iter()
            .filter_map(|r| r.final_return())
            .collect();
        let (m, s) = mean_std(&finals);
        println!(
            "{algo}: final-{FINAL_EPOCHS} return {m:.4} ± {s:.4} over {} seeds",
            finals.len()
        );
    }
    if algos.contains(&Algo::Ppg) && algos.contains(&Algo::Ppo) {
        let t = entropy_tally(&summary, Algo::Ppg, Algo::Ppo);
        println!(
            "final entropy ppg >= ppo in {} of {} seeds",
            t.a_at_least_b,
            t.pairs.len()
        );
    }
    println!("aggregate {}", summary.aggregate_path.display());
    let failed = summary.failures().len();
    if failed > 0 {
        return Err(Error::Config(format!(
            "{failed} of {} runs failed; aggregate covers the rest",
            summary.jobs.len()
        )));
    }
    Ok(())
}

fn cmd_plane(config: TrainConfig, snap_iters: &[usize], epoch: usize, out: &Path) -> Result<(), Error> {
    let s = experiment::plane(&config, snap_iters, epoch, out)?;
    for snap in &s.snapshots {
        let q = snap.quadrant_counts();
        println!(
            "{} points={} quadrants={:?} clip_fraction={:.4}",
            s.dir.join(format!("{}.csv", snap.file_stem())).display(),
            snap.points.len(),
            q,
            snap.clip_fraction()
        );
    }
    if !s.skipped.is_empty() {
        println!(
            "skipped passes {:?}: the update loop stopped after {} evaluations",
            s.skipped,
            s.traces.len()
        );
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    episodes: usize,
    deterministic: bool,
    env: &str,
    seed: u64,
    out: &Path,
) -> Result<(), Error> {
    let s = experiment::evaluate_policy(checkpoint, env, episodes, deterministic, seed)?;
    let stem = checkpoint
        .file_stem()
        .map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    let mode = if deterministic { "det" } else { "sto" };
    let path = out.join(format!("eval_{stem}_{env}_seed{seed}_{mode}.json"));
    s.write(&path)?;
    println!(
        "mean_return={:.6} std_return={:.6} mean_entropy={:.6} episodes={} written={}",
        s.mean_return,
        s.std_return,
        s.mean_entropy,
        s.episodes,
        path.display()
    );
    Ok(())
}
