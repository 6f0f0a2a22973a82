//! File-producing experiment drivers behind the `ppg` binary: single runs,
//! multi-seed comparisons, plane dumps and checkpoint evaluation.
//!
//! Layout of one run:
//!
//! ```text
//! <out>/<algo>/<env>/seed<N>/
//!     manifest.json
//!     metrics.csv  return.svg  entropy.svg  kl.svg
//!     checkpoint_init_policy.bin   checkpoint_init_value.bin
//!     checkpoint_final_policy.bin  checkpoint_final_value.bin
//!     FAILED                       (only if the run errored)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::diagnostics::{
    aggregate, emit_metrics_csv, emit_plane_csv, emit_run_plots, emit_svg, fmt_f64,
    line_chart_svg, plane_snapshot, plane_svg, trace_svg, write_aggregate_csv, write_file,
    write_trace_csv, AggregateRow, Curve, MetricSeries, PlaneSnapshot,
};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::math::{mean_std, Rng, Stream};
use crate::nn::policy_forward;
use crate::objectives::Algo;
use crate::trainer::{train, train_with, EpochRecord, IterTrace};

pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.json";

/// Number of trailing epochs averaged into a run's final return.
pub const FINAL_EPOCHS: usize = 5;

/// Seeds used when only a count is given.
pub const DEFAULT_FIRST_SEED: u64 = 10000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub algo: String,
    pub env_id: String,
    pub seeds: Vec<u64>,
    /// Every config key with its canonical value.
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: &TrainConfig, seeds: Vec<u64>, files: Vec<String>) -> Self {
        let map = config
            .to_text()
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            command: command.to_string(),
            algo: config.algo.to_string(),
            env_id: config.env_id.clone(),
            seeds,
            config: map,
            config_hash: config.content_hash(),
            files,
            notes: Vec::new(),
        }
    }

    /// Rebuilds the configuration the manifest was written for.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        for (k, v) in &self.config {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest encoding: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: bad manifest: {e}", path.display())))
    }
}

pub fn run_dir(out: &Path, algo: Algo, env_id: &str, seed: u64) -> PathBuf {
    out.join(algo.as_str()).join(env_id).join(format!("seed{seed}"))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    Ok(())
}

/// Runs `body`; on error leaves a marker file holding the message.
fn guarded<T>(dir: &Path, body: impl FnOnce() -> Result<T>) -> Result<T> {
    body().inspect_err(|e| {
        let _ = fs::write(dir.join(FAILED_MARKER), format!("{e}\n"));
    })
}

pub const RUN_FILES: [&str; 9] = [
    MANIFEST,
    "metrics.csv",
    "return.svg",
    "entropy.svg",
    "kl.svg",
    "checkpoint_init_policy.bin",
    "checkpoint_init_value.bin",
    "checkpoint_final_policy.bin",
    "checkpoint_final_value.bin",
];

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub algo: Algo,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub series: MetricSeries,
}

impl RunSummary {
    pub fn final_return(&self) -> Option<f64> {
        self.series.final_mean_return(FINAL_EPOCHS)
    }

    pub fn final_entropy(&self) -> Option<f64> {
        self.records.last().map(|r| r.entropy)
    }
}

/// Trains one configuration and writes its directory. The configuration is
/// validated before anything touches the file system.
pub fn run(config: &TrainConfig, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    let dir = run_dir(out, config.algo, &config.env_id, config.seed);
    prepare_dir(&dir)?;
    guarded(&dir, || {
        let files = RUN_FILES.iter().map(|s| s.to_string()).collect();
        RunManifest::new("run", config, vec![config.seed], files).write(&dir.join(MANIFEST))?;
        let outcome = train(config)?;
        Checkpoint::Policy(outcome.initial_policy)
            .save(&dir.join("checkpoint_init_policy.bin"))?;
        Checkpoint::Value(outcome.initial_value).save(&dir.join("checkpoint_init_value.bin"))?;
        let series = MetricSeries::from_records(&outcome.records);
        emit_metrics_csv(&series, &dir.join("metrics.csv"))?;
        emit_run_plots(&series, &dir)?;
        Checkpoint::Policy(outcome.policy).save(&dir.join("checkpoint_final_policy.bin"))?;
        Checkpoint::Value(outcome.value).save(&dir.join("checkpoint_final_value.bin"))?;
        Ok(RunSummary {
            dir: dir.clone(),
            algo: config.algo,
            seed: config.seed,
            records: outcome.records,
            series,
        })
    })
}

/// Outcome of one (algorithm, seed) job of a comparison.
#[derive(Debug)]
pub struct JobResult {
    pub algo: Algo,
    pub seed: u64,
    pub result: Result<RunSummary>,
}

#[derive(Debug)]
pub struct CompareSummary {
    pub jobs: Vec<JobResult>,
    pub aggregates: Vec<(Algo, Vec<AggregateRow>)>,
    pub aggregate_path: PathBuf,
    pub finals_path: PathBuf,
}

impl CompareSummary {
    pub fn completed(&self, algo: Algo) -> Vec<&RunSummary> {
        self.jobs
            .iter()
            .filter(|j| j.algo == algo)
            .filter_map(|j| j.result.as_ref().ok())
            .collect()
    }

    pub fn failures(&self) -> Vec<&JobResult> {
        self.jobs.iter().filter(|j| j.result.is_err()).collect()
    }
}

/// `first, first+1, …` (`count` seeds).
pub fn seed_range(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first + i).collect()
}

fn run_jobs(pairs: &[(Algo, u64)], base: &TrainConfig, out: &Path, jobs: usize) -> Vec<JobResult> {
    let one = |&(algo, seed): &(Algo, u64)| {
        let config = TrainConfig {
            algo,
            seed,
            ..base.clone()
        };
        let result = run(&config, out);
        if let Err(e) = &result {
            log::warn!("{algo} seed {seed} failed: {e}");
        }
        JobResult { algo, seed, result }
    };
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| pairs.par_iter().map(one).collect());
        }
    }
    let _ = jobs;
    pairs.iter().map(one).collect()
}

/// Runs every (algorithm, seed) pair, then aggregates the completed runs
/// per algorithm from their metrics files. Failed runs are logged and left
/// out of the aggregate.
pub fn compare(
    base: &TrainConfig,
    algos: &[Algo],
    seeds: &[u64],
    out: &Path,
    jobs: usize,
) -> Result<CompareSummary> {
    if algos.is_empty() || seeds.is_empty() {
        return Err(Error::Usage("compare needs at least one algorithm and one seed".into()));
    }
    for &algo in algos {
        TrainConfig {
            algo,
            ..base.clone()
        }
        .validate()?;
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = vec![
        "aggregate.csv".into(),
        "final_by_seed.csv".into(),
        "compare_return.svg".into(),
        "compare_entropy.svg".into(),
    ];
    let mut manifest = RunManifest::new("compare", base, seeds.to_vec(), files);
    manifest.algo = algos.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",");
    manifest.write(&out.join("compare_manifest.json"))?;

    let pairs: Vec<(Algo, u64)> = algos
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let jobs_out = run_jobs(&pairs, base, out, jobs.max(1));

    let mut aggregates = Vec::new();
    for &algo in algos {
        let mut runs = Vec::new();
        for job in jobs_out.iter().filter(|j| j.algo == algo && j.result.is_ok()) {
            let path = run_dir(out, algo, &base.env_id, job.seed).join("metrics.csv");
            runs.push((job.seed, crate::diagnostics::read_metrics_file(&path)?));
        }
        aggregates.push((algo, aggregate(&runs)));
    }
    let aggregate_path = out.join("aggregate.csv");
    let named: Vec<(String, Vec<AggregateRow>)> = aggregates
        .iter()
        .map(|(a, rows)| (a.to_string(), rows.clone()))
        .collect();
    write_file(&aggregate_path, |w| write_aggregate_csv(&named, w))?;
    for (stem, idx, label) in [("return", 0, "average return"), ("entropy", 2, "entropy")] {
        let curves: Vec<Curve> = aggregates
            .iter()
            .filter(|(_, rows)| !rows.is_empty())
            .map(|(a, rows)| Curve {
                name: a.to_string(),
                points: rows.iter().map(|r| (r.epoch as f64, r.mean[idx])).collect(),
                band: Some(rows.iter().map(|r| r.std[idx]).collect()),
            })
            .collect();
        if !curves.is_empty() {
            let svg = line_chart_svg(&format!("{label}, mean ± std over seeds"), "epoch", label, &curves)?;
            emit_svg(&svg, &out.join(format!("compare_{stem}.svg")))?;
        }
    }
    let finals_path = out.join("final_by_seed.csv");
    write_file(&finals_path, |w| write_finals(&jobs_out, w))?;
    Ok(CompareSummary {
        jobs: jobs_out,
        aggregates,
        aggregate_path,
        finals_path,
    })
}

fn write_finals(jobs: &[JobResult], out: &mut dyn std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::csv("final_by_seed.csv", e);
    w.write_record(["algo", "seed", "final_return", "final_entropy", "status"])
        .map_err(wrap)?;
    let mut sorted: Vec<&JobResult> = jobs.iter().collect();
    sorted.sort_by_key(|j| (j.algo.as_str(), j.seed));
    for j in sorted {
        let (ret, ent, status) = match &j.result {
            Ok(r) => (
                r.final_return().map_or(String::new(), fmt_f64),
                r.final_entropy().map_or(String::new(), fmt_f64),
                "ok",
            ),
            Err(_) => (String::new(), String::new(), "failed"),
        };
        w.write_record([j.algo.as_str(), &j.seed.to_string(), &ret, &ent, status])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("final_by_seed.csv", e))
}

/// Per-seed comparison of final entropies between two algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTally {
    /// `(seed, entropy of a, entropy of b)` for seeds both completed.
    pub pairs: Vec<(u64, f64, f64)>,
    /// Seeds where `a` ended with at least the entropy of `b`.
    pub a_at_least_b: usize,
}

pub fn entropy_tally(summary: &CompareSummary, a: Algo, b: Algo) -> EntropyTally {
    let mut pairs = Vec::new();
    for ra in summary.completed(a) {
        if let Some(rb) = summary.completed(b).into_iter().find(|r| r.seed == ra.seed) {
            if let (Some(ea), Some(eb)) = (ra.final_entropy(), rb.final_entropy()) {
                pairs.push((ra.seed, ea, eb));
            }
        }
    }
    pairs.sort_by_key(|p| p.0);
    let a_at_least_b = pairs.iter().filter(|p| p.1 >= p.2).count();
    EntropyTally {
        pairs,
        a_at_least_b,
    }
}

#[derive(Debug, Clone)]
pub struct PlaneSummary {
    pub dir: PathBuf,
    pub epoch: usize,
    pub snapshots: Vec<PlaneSnapshot>,
    /// Requested passes that were never evaluated because the loop stopped.
    pub skipped: Vec<usize>,
    pub traces: Vec<IterTrace>,
}

/// Trains up to and including `epoch` and snapshots the advantage-policy
/// plane of that epoch at the requested inner passes.
///
/// A pass index equal to the iteration cap means "after the last update",
/// which is the end-of-loop report.
pub fn plane(config: &TrainConfig, snap_iters: &[usize], epoch: usize, out: &Path) -> Result<PlaneSummary> {
    config.validate()?;
    let dir = run_dir(out, config.algo, &config.env_id, config.seed);
    prepare_dir(&dir)?;
    let config = TrainConfig {
        epochs: epoch + 1,
        ..config.clone()
    };
    guarded(&dir, || {
        let mut wanted: Vec<usize> = snap_iters.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        let files = wanted
            .iter()
            .flat_map(|i| {
                let stem = format!("plane_e{epoch}_i{i}");
                [format!("{stem}.csv"), format!("{stem}.svg")]
            })
            .chain([format!("trace_e{epoch}.csv"), format!("trace_e{epoch}.svg")])
            .collect();
        let mut manifest = RunManifest::new("plane", &config, vec![config.seed], files);
        manifest.write(&dir.join(MANIFEST))?;

        let bounds = (config.u_b, config.l_b);
        let mut snapshots = Vec::new();
        let mut failure = None;
        let outcome = train_with(&config, &mut |view| {
            if view.epoch != epoch || failure.is_some() || !wanted.contains(&view.pass) {
                return;
            }
            match plane_snapshot(epoch, view.pass, view.report, view.advantages, bounds) {
                Ok(s) => snapshots.push(s),
                Err(e) => failure = Some(e),
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let traces = outcome
            .records
            .last()
            .map(|r| r.traces.clone())
            .unwrap_or_default();
        let skipped: Vec<usize> = wanted
            .iter()
            .copied()
            .filter(|i| !snapshots.iter().any(|s| s.iter == *i))
            .collect();
        for s in &snapshots {
            emit_plane_csv(s, &dir.join(format!("{}.csv", s.file_stem())))?;
            emit_svg(&plane_svg(s)?, &dir.join(format!("{}.svg", s.file_stem())))?;
        }
        write_file(&dir.join(format!("trace_e{epoch}.csv")), |w| write_trace_csv(&traces, w))?;
        if !traces.is_empty() {
            emit_svg(&trace_svg(epoch, &traces)?, &dir.join(format!("trace_e{epoch}.svg")))?;
        }
        if !skipped.is_empty() {
            let evaluated = traces.len();
            manifest.notes.push(format!(
                "snapshots truncated: the update loop evaluated {evaluated} passes, \
                 so passes {skipped:?} were not recorded"
            ));
            let present = |f: &String| {
                !skipped
                    .iter()
                    .any(|i| f.starts_with(&format!("plane_e{epoch}_i{i}.")))
            };
            manifest.files.retain(present);
            manifest.write(&dir.join(MANIFEST))?;
        }
        Ok(PlaneSummary {
            dir: dir.clone(),
            epoch,
            snapshots,
            skipped,
            traces,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub checkpoint: String,
    pub env_id: String,
    pub seed: u64,
    pub episodes: usize,
    pub deterministic: bool,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_entropy: f64,
    pub returns: Vec<f64>,
}

/// Plays `episodes` full episodes with a saved policy. Stochastic mode
/// samples actions; deterministic mode acts with the mean.
pub fn evaluate_policy(
    checkpoint: &Path,
    env_id: &str,
    episodes: usize,
    deterministic: bool,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Usage("--episodes must be at least 1".into()));
    }
    let policy = match Checkpoint::load(checkpoint)? {
        Checkpoint::Policy(p) => p,
        Checkpoint::Value(_) => {
            return Err(Error::Checkpoint(format!(
                "{}: holds a value network, not a policy",
                checkpoint.display()
            )))
        }
    };
    let mut env = make_env(env_id)?;
    let spec = env.spec();
    if spec.obs_dim != policy.obs_dim() || spec.act_dim != policy.act_dim() {
        return Err(Error::Checkpoint(format!(
            "{}: policy is {}→{} but {env_id} is {}→{}",
            checkpoint.display(),
            policy.obs_dim(),
            policy.act_dim(),
            spec.obs_dim,
            spec.act_dim
        )));
    }
    let mut env_rng = Rng::new(seed, Stream::Env);
    let mut act_rng = Rng::new(seed, Stream::Eval);
    let mut returns = Vec::with_capacity(episodes);
    let (mut ent_sum, mut ent_n) = (0.0, 0usize);
    for _ in 0..episodes {
        let mut obs = env.reset(&mut env_rng);
        let mut total = 0.0;
        loop {
            let dist = policy_forward(&policy, &obs)?;
            ent_sum += dist.entropy();
            ent_n += 1;
            let action = if deterministic {
                dist.mean.clone()
            } else {
                dist.sample(&mut act_rng)
            };
            let step = env.step(&action)?;
            total += step.reward;
            if step.done() {
                break;
            }
            obs = step.obs;
        }
        returns.push(total);
    }
    let (mean_return, std_return) = mean_std(&returns);
    Ok(EvalSummary {
        checkpoint: checkpoint.display().to_string(),
        env_id: env_id.to_string(),
        seed,
        episodes,
        deterministic,
        mean_return,
        std_return,
        mean_entropy: ent_sum / ent_n as f64,
        returns,
    })
}

impl EvalSummary {
    /// Writes the summary as JSON, creating the parent directory if needed.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("eval encoding: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
