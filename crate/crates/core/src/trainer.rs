//! The shared VPG / PPO / PPG training loop.
//!
//! Each epoch freezes the current policy as the old policy, collects a
//! rollout, computes returns and normalized GAE advantages once, runs the
//! policy update loop with the approximate-KL break, then fits the value
//! network.

use crate::config::TrainConfig;
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::{mean_std, Rng, Stream};
use crate::nn::{
    init_policy_with, init_value_with, policy_dists, value_grad_mse, value_mse,
    PolicyBatch, PolicyParams, ValueParams,
};
use crate::objectives::{evaluate, exact_kl_mean, Algo, ObjectiveReport};
use crate::optim::{adam_step, AdamState};
use crate::rollout::{advantages, collect, AdvantageBatch, Rollout};

/// Per-pass summary of the policy update loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterTrace {
    pub loss: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
    pub d_mc: f64,
    pub exact_kl: f64,
    pub clip_fraction: f64,
}

impl From<&ObjectiveReport> for IterTrace {
    fn from(r: &ObjectiveReport) -> Self {
        Self {
            loss: r.loss,
            loss_pos: r.loss_pos,
            loss_neg: r.loss_neg,
            d_mc: r.d_mc,
            exact_kl: r.exact_kl_mean.unwrap_or(f64::NAN),
            clip_fraction: r.clip_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterOutcome {
    /// Number of updates applied.
    pub iters_used: usize,
    /// One entry per evaluated pass (including the one that triggered the break).
    pub traces: Vec<IterTrace>,
    /// `D_MC` of the check that halted the loop, if it was halted.
    pub break_d_mc: Option<f64>,
    /// Objective evaluated on the policy the loop leaves behind.
    pub final_report: ObjectiveReport,
}

/// Runs the inner policy loop on a frozen batch. `on_pass(k, report)` sees
/// the objective after `k` updates, for every `k` from 0 to `iters_used`:
/// each in-loop report before its break check, and, when the loop ran to
/// the cap, the end-of-loop report as well.
///
/// `policy` must be the policy that collected `rollout`; its distributions
/// are the reference for the exact KL filled into each report.
pub fn policy_iteration(
    rollout: &Rollout,
    adv: &AdvantageBatch,
    config: &TrainConfig,
    policy: &mut PolicyParams,
    opt: &mut AdamState,
    on_pass: &mut dyn FnMut(usize, &ObjectiveReport),
) -> Result<PolicyIterOutcome> {
    let kind = config.objective();
    let cap = config.policy_iter_cap();
    let adv = &adv.normalized;
    let mut traces = Vec::with_capacity(cap);
    let mut iters_used = 0;
    let mut break_d_mc = None;
    let mut last_report = None;
    let mut old_dists = None;
    for pass in 0..cap {
        let batch = PolicyBatch::forward_with(Exec::default(), policy, &rollout.obs)?;
        let logp = batch.log_probs(policy, &rollout.actions)?;
        let mut report = evaluate(kind, &logp, &rollout.old_log_probs, adv)?;
        let dists = batch.dists(policy);
        let old = old_dists.get_or_insert_with(|| dists.clone());
        report.exact_kl_mean = Some(exact_kl_mean(old, &dists)?);
        on_pass(pass, &report);
        traces.push(IterTrace::from(&report));
        if config.algo != Algo::Vpg && report.d_mc > config.kl_target {
            break_d_mc = Some(report.d_mc);
            last_report = Some(report);
            break;
        }
        let grad =
            batch.grad_weighted_with(Exec::default(), policy, &rollout.actions, &report.coeffs)?;
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut flat = policy.flatten();
        adam_step(&mut flat, &ascent, opt, config.policy_lr);
        policy.set_flat(&flat)?;
        iters_used += 1;
    }
    let final_report = match last_report {
        Some(r) => r,
        None => {
            let batch = PolicyBatch::forward_with(Exec::default(), policy, &rollout.obs)?;
            let logp = batch.log_probs(policy, &rollout.actions)?;
            let mut report = evaluate(kind, &logp, &rollout.old_log_probs, adv)?;
            if let Some(old) = &old_dists {
                report.exact_kl_mean = Some(exact_kl_mean(old, &batch.dists(policy))?);
            }
            on_pass(iters_used, &report);
            report
        }
    };
    Ok(PolicyIterOutcome {
        iters_used,
        traces,
        break_d_mc,
        final_report,
    })
}

/// `value_iters` full-batch Adam steps on the squared error to `returns`.
/// Returns the loss before and after.
pub fn value_fit(
    rollout: &Rollout,
    returns: &[f64],
    value: &mut ValueParams,
    opt: &mut AdamState,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let before = value_mse(value, &rollout.obs, returns)?;
    let mut flat = value.flatten();
    for _ in 0..config.value_iters {
        let grad = value_grad_mse(value, &rollout.obs, returns)?;
        adam_step(&mut flat, &grad, opt, config.value_lr);
        value.set_flat(&flat)?;
    }
    let after = value_mse(value, &rollout.obs, returns)?;
    Ok((before, after))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub avg_return: f64,
    pub std_return: f64,
    pub episodes: usize,
    pub entropy: f64,
    /// `D_MC` of the policy at the end of the update loop.
    pub d_mc: f64,
    pub exact_kl: f64,
    pub iters_used: usize,
    pub break_d_mc: Option<f64>,
    pub clip_fraction: f64,
    pub loss: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
    pub value_loss_before: f64,
    pub value_loss_after: f64,
    /// Mean and population std of the normalized advantages.
    pub adv_mean: f64,
    pub adv_std: f64,
    pub traces: Vec<IterTrace>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub initial_policy: PolicyParams,
    pub initial_value: ValueParams,
    pub policy: PolicyParams,
    pub value: ValueParams,
}

/// What a training hook is shown for each inner pass.
pub struct PassView<'a> {
    pub epoch: usize,
    pub pass: usize,
    pub report: &'a ObjectiveReport,
    pub advantages: &'a [f64],
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(config, &mut |_| {})
}

pub fn train_with(
    config: &TrainConfig,
    on_pass: &mut dyn FnMut(PassView<'_>),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut env = make_env(&config.env_id)?;
    let spec = env.spec();
    let mut policy = init_policy_with(
        spec.obs_dim,
        spec.act_dim,
        &config.hidden,
        &mut Rng::new(config.seed, Stream::PolicyInit),
    );
    let mut value = init_value_with(
        spec.obs_dim,
        &config.hidden,
        &mut Rng::new(config.seed, Stream::ValueInit),
    );
    let initial_policy = policy.clone();
    let initial_value = value.clone();
    let mut env_rng = Rng::new(config.seed, Stream::Env);
    let mut act_rng = Rng::new(config.seed, Stream::Action);
    let mut policy_opt = AdamState::new(policy.num_params());
    let mut value_opt = AdamState::new(value.num_params());

    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let old_policy = policy.clone();
        let rollout = collect(
            env.as_mut(),
            &old_policy,
            &value,
            config.steps_per_epoch,
            &mut env_rng,
            &mut act_rng,
        )
        .map_err(|e| Error::Config(format!("epoch {epoch}: {e}")))?;
        let adv = advantages(&rollout, config.gamma, config.lambda);
        let (adv_mean, adv_std) = mean_std(&adv.normalized);

        let outcome = policy_iteration(
            &rollout,
            &adv,
            config,
            &mut policy,
            &mut policy_opt,
            &mut |pass, report| {
                on_pass(PassView {
                    epoch,
                    pass,
                    report,
                    advantages: &adv.normalized,
                })
            },
        )?;

        let new_dists = policy_dists(&policy, &rollout.obs)?;
        let entropy = new_dists.iter().map(|d| d.entropy()).sum::<f64>() / new_dists.len() as f64;

        let (value_loss_before, value_loss_after) =
            value_fit(&rollout, &adv.returns, &mut value, &mut value_opt, config)?;

        let returns = rollout.reported_returns();
        let (avg_return, std_return) = mean_std(&returns);
        let fr = &outcome.final_report;
        let exact_kl = fr.exact_kl_mean.expect("set on every evaluated pass");
        records.push(EpochRecord {
            epoch,
            avg_return,
            std_return,
            episodes: rollout.episode_returns.len(),
            entropy,
            d_mc: fr.d_mc,
            exact_kl,
            iters_used: outcome.iters_used,
            break_d_mc: outcome.break_d_mc,
            clip_fraction: fr.clip_fraction(),
            loss: fr.loss,
            loss_pos: fr.loss_pos,
            loss_neg: fr.loss_neg,
            value_loss_before,
            value_loss_after,
            adv_mean,
            adv_std,
            traces: outcome.traces,
        });
        log::debug!(
            "{} {} epoch {epoch}: return {avg_return:.3}, iters {}, d_mc {:.5}",
            config.algo,
            config.env_id,
            outcome.iters_used,
            fr.d_mc
        );
    }
    Ok(TrainOutcome {
        records,
        initial_policy,
        initial_value,
        policy,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_env;
    use crate::math::{Rng, Stream};

    fn small_config(algo: Algo) -> TrainConfig {
        TrainConfig {
            algo,
            epochs: 2,
            steps_per_epoch: 300,
            hidden: vec![16, 16],
            value_iters: 10,
            ..Default::default()
        }
    }

    fn batch(config: &TrainConfig) -> (Rollout, AdvantageBatch, PolicyParams) {
        let mut env = make_env(&config.env_id).unwrap();
        let p = init_policy_with(4, 2, &config.hidden, &mut Rng::new(1, Stream::PolicyInit));
        let v = init_value_with(4, &config.hidden, &mut Rng::new(1, Stream::ValueInit));
        let r = collect(
            env.as_mut(),
            &p,
            &v,
            config.steps_per_epoch,
            &mut Rng::new(1, Stream::Env),
            &mut Rng::new(1, Stream::Action),
        )
        .unwrap();
        let adv = advantages(&r, config.gamma, config.lambda);
        (r, adv, p)
    }

    fn run_loop(config: &TrainConfig) -> PolicyIterOutcome {
        let (r, adv, mut p) = batch(config);
        let mut opt = AdamState::new(p.num_params());
        policy_iteration(&r, &adv, config, &mut p, &mut opt, &mut |_, _| {}).unwrap()
    }

    #[test]
    fn vpg_runs_exactly_once() {
        let mut c = small_config(Algo::Vpg);
        c.kl_target = 1e-12;
        let out = run_loop(&c);
        assert_eq!(out.iters_used, 1);
        assert_eq!(out.traces.len(), 1);
        assert!(out.break_d_mc.is_none());
    }

    #[test]
    fn huge_kl_target_runs_to_cap() {
        for algo in [Algo::Ppo, Algo::Ppg] {
            let mut c = small_config(algo);
            c.kl_target = f64::INFINITY;
            c.max_policy_iters = 12;
            let out = run_loop(&c);
            assert_eq!(out.iters_used, 12);
            assert!(out.break_d_mc.is_none());
        }
    }

    #[test]
    fn zero_kl_target_breaks_after_first_update() {
        for algo in [Algo::Ppo, Algo::Ppg] {
            let mut c = small_config(algo);
            c.kl_target = 0.0;
            let out = run_loop(&c);
            assert!(out.iters_used >= 1 && out.iters_used <= 2, "{}", out.iters_used);
            assert_eq!(out.traces[0].d_mc, 0.0);
        }
    }

    #[test]
    fn first_pass_is_at_old_policy() {
        let c = small_config(Algo::Ppg);
        let mut first = None;
        let (r, adv, mut p) = batch(&c);
        let mut opt = AdamState::new(p.num_params());
        policy_iteration(&r, &adv, &c, &mut p, &mut opt, &mut |pass, rep| {
            if pass == 0 {
                first = Some(rep.clone());
            }
        })
        .unwrap();
        let first = first.unwrap();
        assert!(first.d.iter().all(|&d| d == 0.0));
        assert_eq!(first.clip_fraction(), 0.0);
    }

    #[test]
    fn break_fires_only_above_target() {
        for algo in [Algo::Ppo, Algo::Ppg] {
            let mut c = small_config(algo);
            c.kl_target = 1e-5;
            c.policy_lr = 1e-2;
            let (r, adv, mut p) = batch(&c);
            let mut opt = AdamState::new(p.num_params());
            let mut seen = Vec::new();
            let out = policy_iteration(&r, &adv, &c, &mut p, &mut opt, &mut |_, rep| {
                seen.push(rep.d_mc)
            })
            .unwrap();
            assert_eq!(seen.len(), out.iters_used + 1);
            match out.break_d_mc {
                Some(b) => {
                    assert!(b > c.kl_target);
                    assert_eq!(*seen.last().unwrap(), b);
                    assert_eq!(out.final_report.d_mc, b);
                    assert_eq!(out.iters_used, seen.len() - 1);
                    assert!(seen[..seen.len() - 1].iter().all(|&d| d <= c.kl_target));
                }
                None => {
                    assert_eq!(out.iters_used, c.max_policy_iters);
                    assert_eq!(out.traces.len(), c.max_policy_iters);
                    // the last report follows the final update and is never checked
                    assert!(seen[..c.max_policy_iters].iter().all(|&d| d <= c.kl_target));
                    assert_eq!(*seen.last().unwrap(), out.final_report.d_mc);
                }
            }
        }
    }

    #[test]
    fn value_fit_reduces_error_mostly() {
        let c = small_config(Algo::Ppg);
        let mut improved = 0;
        let trials = 20;
        for seed in 0..trials {
            let mut env = make_env("pointmass2d").unwrap();
            let p = init_policy_with(4, 2, &c.hidden, &mut Rng::new(seed, Stream::PolicyInit));
            let mut v = init_value_with(4, &c.hidden, &mut Rng::new(seed, Stream::ValueInit));
            let r = collect(
                env.as_mut(),
                &p,
                &v,
                200,
                &mut Rng::new(seed, Stream::Env),
                &mut Rng::new(seed, Stream::Action),
            )
            .unwrap();
            let adv = advantages(&r, c.gamma, c.lambda);
            let mut opt = AdamState::new(v.num_params());
            let (before, after) = value_fit(&r, &adv.returns, &mut v, &mut opt, &c).unwrap();
            if after <= before {
                improved += 1;
            }
        }
        assert!(improved as f64 >= 0.95 * trials as f64, "{improved}/{trials}");
    }

    #[test]
    fn value_fit_is_noop_at_exact_targets() {
        let c = small_config(Algo::Ppg);
        let (r, _, _) = batch(&c);
        let mut v = init_value_with(4, &c.hidden, &mut Rng::new(3, Stream::ValueInit));
        let targets = crate::nn::value_predictions(&v, &r.obs).unwrap();
        let before = v.flatten();
        let mut opt = AdamState::new(v.num_params());
        value_fit(&r, &targets, &mut v, &mut opt, &c).unwrap();
        assert_eq!(v.flatten(), before);
    }

    #[test]
    fn value_fit_linear_least_squares() {
        // V(x) = w x + b fit to noisy targets converges to the OLS line.
        let xs: Vec<f64> = (0..40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 0.7 * x - 0.3 + 0.05 * ((i * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let (mx, my) = (
            xs.iter().sum::<f64>() / 40.0,
            ys.iter().sum::<f64>() / 40.0,
        );
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let w = sxy / sxx;
        let b = my - w * mx;

        let rollout = Rollout {
            obs: xs.iter().map(|x| vec![*x]).collect(),
            actions: vec![vec![0.0]; 40],
            rewards: vec![0.0; 40],
            old_log_probs: vec![0.0; 40],
            values: vec![0.0; 40],
            slices: vec![],
            ..Default::default()
        };
        let mut v = init_value_with(1, &[], &mut Rng::new(1, Stream::ValueInit));
        let c = TrainConfig {
            value_iters: 20_000,
            value_lr: 1e-2,
            ..Default::default()
        };
        let mut opt = AdamState::new(v.num_params());
        value_fit(&rollout, &ys, &mut v, &mut opt, &c).unwrap();
        let flat = v.flatten();
        assert!((flat[0] - w).abs() < 1e-3, "{} vs {w}", flat[0]);
        assert!((flat[1] - b).abs() < 1e-3, "{} vs {b}", flat[1]);
    }

    #[test]
    fn zero_epochs_is_empty() {
        let mut c = small_config(Algo::Ppg);
        c.epochs = 0;
        let out = train(&c).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.policy, out.initial_policy);
    }

    #[test]
    fn training_is_deterministic() {
        let c = small_config(Algo::Ppg);
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.policy, b.policy);
        for r in &a.records {
            assert!(r.iters_used >= 1 && r.iters_used <= c.max_policy_iters);
            assert!((r.loss_pos + r.loss_neg - r.loss).abs() == 0.0);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = small_config(Algo::Ppg);
        c.env_id = "nope".into();
        assert!(train(&c).is_err());
    }
}
