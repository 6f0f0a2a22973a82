//! On-policy data collection, rewards-to-go, GAE(λ) and advantage
//! normalization.

use std::io::{Read, Write};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::Rng;
use crate::nn::{policy_forward, value_forward, value_predictions_with, PolicyParams, ValueParams};

pub const NORMALIZE_EPS: f64 = 1e-8;

/// A contiguous run of timesteps from one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSlice {
    pub start: usize,
    pub end: usize,
    pub terminal: bool,
    /// `0` when `terminal`, otherwise `V(s_end)` at the cutoff state.
    pub bootstrap_value: f64,
}

impl EpisodeSlice {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub slices: Vec<EpisodeSlice>,
    /// Undiscounted returns of episodes that ended naturally (goal or time
    /// limit) within this rollout.
    pub episode_returns: Vec<f64>,
    /// Return accumulated by the trailing episode cut off by the step budget.
    pub partial_return: Option<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (what, len) in [
            ("rollout observations", self.obs.len()),
            ("rollout actions", self.actions.len()),
            ("rollout old log-probs", self.old_log_probs.len()),
            ("rollout values", self.values.len()),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        let mut at = 0;
        for s in &self.slices {
            if s.start != at || s.end <= s.start {
                return Err(Error::Config("episode slices must partition the rollout".into()));
            }
            at = s.end;
        }
        if at != n {
            return Err(Error::Config("episode slices must cover the rollout".into()));
        }
        Ok(())
    }

    /// Returns reported for an epoch: completed episodes, or the partial
    /// trailing episode when none completed.
    pub fn reported_returns(&self) -> Vec<f64> {
        if self.episode_returns.is_empty() {
            self.partial_return.into_iter().collect()
        } else {
            self.episode_returns.clone()
        }
    }
}

/// Collects exactly `steps` transitions under `policy`, resetting the
/// environment at the start and after every finished episode.
pub fn collect(
    env: &mut dyn Environment,
    policy: &PolicyParams,
    value: &ValueParams,
    steps: usize,
    env_rng: &mut Rng,
    action_rng: &mut Rng,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    let spec = env.spec();
    if spec.obs_dim != policy.obs_dim() || spec.act_dim != policy.act_dim() {
        return Err(Error::Config(format!(
            "policy shape {}→{} does not match environment {} ({}→{})",
            policy.obs_dim(),
            policy.act_dim(),
            env.id(),
            spec.obs_dim,
            spec.act_dim
        )));
    }
    let mut r = Rollout::default();
    let mut obs = env.reset(env_rng);
    let mut start = 0;
    let mut ep_return = 0.0;
    for t in 0..steps {
        let dist = policy_forward(policy, &obs)?;
        let action = dist.sample(action_rng);
        let logp = dist.log_prob(&action);
        let step = env.step(&action)?;
        let done = step.done();
        r.obs.push(std::mem::replace(&mut obs, step.obs));
        r.actions.push(action);
        r.rewards.push(step.reward);
        r.old_log_probs.push(logp);
        ep_return += step.reward;

        let last = t + 1 == steps;
        if done || last {
            let bootstrap_value = if step.terminal {
                0.0
            } else {
                value_forward(value, &obs)?
            };
            r.slices.push(EpisodeSlice {
                start,
                end: t + 1,
                terminal: step.terminal,
                bootstrap_value,
            });
            if done {
                r.episode_returns.push(ep_return);
            } else {
                r.partial_return = Some(ep_return);
            }
            start = t + 1;
            ep_return = 0.0;
            if done && !last {
                obs = env.reset(env_rng);
            }
        }
    }
    r.values = value_predictions_with(Exec::default(), value, &r.obs)?;
    Ok(r)
}

/// Discounted rewards-to-go per slice, seeded with the bootstrap value.
pub fn rewards_to_go(r: &Rollout, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    for s in &r.slices {
        let mut acc = s.bootstrap_value;
        for t in (s.start..s.end).rev() {
            acc = r.rewards[t] + gamma * acc;
            out[t] = acc;
        }
    }
    out
}

/// Generalized advantage estimates per slice.
pub fn gae(r: &Rollout, gamma: f64, lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    for s in &r.slices {
        let mut next_value = s.bootstrap_value;
        let mut acc = 0.0;
        for t in (s.start..s.end).rev() {
            let delta = r.rewards[t] + gamma * next_value - r.values[t];
            acc = delta + gamma * lambda * acc;
            out[t] = acc;
            next_value = r.values[t];
        }
    }
    out
}

/// `(A − mean) / (std + 1e-8)` with the population standard deviation.
pub fn normalize(adv: &[f64]) -> Vec<f64> {
    let (mean, std) = crate::math::mean_std(adv);
    adv.iter().map(|a| (a - mean) / (std + NORMALIZE_EPS)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub returns: Vec<f64>,
    pub gae: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn advantages(r: &Rollout, gamma: f64, lambda: f64) -> AdvantageBatch {
    let returns = rewards_to_go(r, gamma);
    let gae = gae(r, gamma, lambda);
    let normalized = normalize(&gae);
    AdvantageBatch {
        returns,
        gae,
        normalized,
    }
}

/// Writes the rollout as CSV with columns
/// `obs0.., act0.., reward, old_logp, value, slice_id, terminal, bootstrap`.
/// `terminal` and `bootstrap` are set on the final row of each slice only.
pub fn write_csv<W: Write>(r: &Rollout, out: W) -> Result<()> {
    let obs_dim = r.obs.first().map_or(0, Vec::len);
    let act_dim = r.actions.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..obs_dim).map(|k| format!("obs{k}")).collect();
    header.extend((0..act_dim).map(|k| format!("act{k}")));
    header.extend(
        ["reward", "old_logp", "value", "slice_id", "terminal", "bootstrap"]
            .iter()
            .map(|s| s.to_string()),
    );
    let wrap = |e: csv::Error| Error::csv("<rollout>", e);
    w.write_record(&header).map_err(wrap)?;
    for (sid, s) in r.slices.iter().enumerate() {
        for t in s.start..s.end {
            let last = t + 1 == s.end;
            let mut rec: Vec<String> = r.obs[t].iter().map(|v| fmt_f64(*v)).collect();
            rec.extend(r.actions[t].iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(r.rewards[t]));
            rec.push(fmt_f64(r.old_log_probs[t]));
            rec.push(fmt_f64(r.values[t]));
            rec.push(sid.to_string());
            rec.push(u8::from(last && s.terminal).to_string());
            rec.push(fmt_f64(if last { s.bootstrap_value } else { 0.0 }));
            w.write_record(&rec).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io("<rollout>", e))?;
    Ok(())
}

/// Reads a rollout written by [`write_csv`]. Episode returns are not stored
/// in the dump and come back empty.
pub fn read_csv<R: Read>(input: R) -> Result<Rollout> {
    let mut rdr = csv::Reader::from_reader(input);
    let wrap = |e: csv::Error| Error::csv("<rollout>", e);
    let header = rdr.headers().map_err(wrap)?.clone();
    let obs_dim = header.iter().filter(|h| h.starts_with("obs")).count();
    let act_dim = header.iter().filter(|h| h.starts_with("act")).count();
    if header.len() != obs_dim + act_dim + 6 {
        return Err(Error::Config("unexpected rollout CSV header".into()));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Config(format!("bad number '{s}': {e}")))
    };
    let mut r = Rollout::default();
    let mut ids: Vec<(usize, bool, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(wrap)?;
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != header.len() {
            return Err(Error::Config("ragged rollout CSV row".into()));
        }
        let base = obs_dim + act_dim;
        r.obs.push(f[..obs_dim].iter().map(|s| parse(s)).collect::<Result<_>>()?);
        r.actions.push(f[obs_dim..base].iter().map(|s| parse(s)).collect::<Result<_>>()?);
        r.rewards.push(parse(f[base])?);
        r.old_log_probs.push(parse(f[base + 1])?);
        r.values.push(parse(f[base + 2])?);
        let sid: usize = f[base + 3]
            .parse()
            .map_err(|_| Error::Config(format!("bad slice id '{}'", f[base + 3])))?;
        ids.push((sid, f[base + 4] == "1", parse(f[base + 5])?));
    }
    // Consecutive rows sharing a slice id form one slice; its flags live on
    // the final row.
    let mut start = 0;
    for t in 0..ids.len() {
        if t + 1 == ids.len() || ids[t + 1].0 != ids[t].0 {
            r.slices.push(EpisodeSlice {
                start,
                end: t + 1,
                terminal: ids[t].1,
                bootstrap_value: ids[t].2,
            });
            start = t + 1;
        }
    }
    r.validate()?;
    Ok(r)
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, PointMass2D};
    use crate::math::Stream;
    use crate::nn::{init_policy, init_value, policy_log_probs};

    fn rollout(rewards: &[f64], values: &[f64], slices: Vec<EpisodeSlice>) -> Rollout {
        let n = rewards.len();
        Rollout {
            obs: vec![vec![0.0]; n],
            actions: vec![vec![0.0]; n],
            rewards: rewards.to_vec(),
            old_log_probs: vec![0.0; n],
            values: values.to_vec(),
            slices,
            ..Default::default()
        }
    }

    fn one_slice(n: usize, terminal: bool, bootstrap: f64) -> Vec<EpisodeSlice> {
        vec![EpisodeSlice {
            start: 0,
            end: n,
            terminal,
            bootstrap_value: bootstrap,
        }]
    }

    #[test]
    fn rewards_to_go_examples() {
        let r = rollout(&[1.0, 1.0, 1.0], &[0.0; 3], one_slice(3, true, 0.0));
        assert_eq!(rewards_to_go(&r, 1.0), vec![3.0, 2.0, 1.0]);
        let r = rollout(&[1.0, 0.0, 0.0], &[0.0; 3], one_slice(3, true, 0.0));
        assert_eq!(rewards_to_go(&r, 0.5), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn gamma_zero_returns_raw_rewards() {
        let rewards = [0.3, -1.2, 4.0, 2.5];
        let r = rollout(&rewards, &[0.0; 4], one_slice(4, false, 7.0));
        assert_eq!(rewards_to_go(&r, 0.0), rewards.to_vec());
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let rewards = [0.5, -0.25, 1.0];
        let values = [0.1, 0.2, 0.3];
        let r = rollout(&rewards, &values, one_slice(3, false, 0.7));
        let a = gae(&r, 0.9, 0.0);
        let next = [0.2, 0.3, 0.7];
        for t in 0..3 {
            assert_eq!(a[t], rewards[t] + 0.9 * next[t] - values[t]);
        }
    }

    #[test]
    fn gae_lambda_one_with_zero_values_is_returns() {
        let rewards = [0.5, -0.25, 1.0, 2.0];
        let r = rollout(&rewards, &[0.0; 4], one_slice(4, false, 0.7));
        let a = gae(&r, 0.95, 1.0);
        let ret = rewards_to_go(&r, 0.95);
        for t in 0..4 {
            assert!((a[t] - ret[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&[1.0, 2.0, 3.0]);
        // population std of [1,2,3] is sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / (s + 1e-8), 0.0, 1.0 / (s + 1e-8)];
        for (a, b) in n.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((n[2] - 1.224_744_871).abs() < 1e-7);
        assert_eq!(normalize(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn terminal_flag_only_affects_bootstrap() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, 0.4, 0.3];
        let term = rollout(&rewards, &values, one_slice(3, true, 0.0));
        let trunc = rollout(&rewards, &values, one_slice(3, false, 2.0));
        let (g, l) = (0.9, 0.8);
        let rt = rewards_to_go(&term, g);
        let rc = rewards_to_go(&trunc, g);
        let at = gae(&term, g, l);
        let ac = gae(&trunc, g, l);
        for t in 0..3 {
            let k = (3 - t) as i32;
            assert!((rc[t] - rt[t] - g.powi(k) * 2.0).abs() < 1e-12);
            assert!((ac[t] - at[t] - (g * l).powi(k - 1) * g * 2.0).abs() < 1e-12);
        }
    }

    fn setup() -> (Box<dyn Environment>, PolicyParams, ValueParams) {
        let env = make_env("pointmass2d").unwrap();
        let mut rng = Rng::new(1, Stream::PolicyInit);
        let p = init_policy(4, 2, &mut rng);
        let v = init_value(4, &mut Rng::new(1, Stream::ValueInit));
        (env, p, v)
    }

    #[test]
    fn collect_exact_step_count_and_partition() {
        let (mut env, p, v) = setup();
        let r = collect(
            env.as_mut(),
            &p,
            &v,
            537,
            &mut Rng::new(2, Stream::Env),
            &mut Rng::new(2, Stream::Action),
        )
        .unwrap();
        assert_eq!(r.len(), 537);
        r.validate().unwrap();
        for s in &r.slices {
            assert!(s.len() <= PointMass2D::MAX_STEPS);
            if s.terminal {
                assert_eq!(s.bootstrap_value, 0.0);
            }
        }
    }

    #[test]
    fn collect_single_full_episode() {
        // A long episode that never reaches the goal: start far away with a
        // policy whose mean is zero and tiny std.
        let (mut env, mut p, v) = setup();
        p.set_flat(&vec![0.0; p.num_params()]).unwrap();
        p.log_std = vec![-20.0; 2];
        let mut env_rng = Rng::new(5, Stream::Env);
        let r = collect(env.as_mut(), &p, &v, 100, &mut env_rng, &mut Rng::new(5, Stream::Action)).unwrap();
        assert_eq!(r.slices.len(), 1);
        assert!(!r.slices[0].terminal);
        assert_eq!(r.episode_returns.len(), 1);
        assert!(r.partial_return.is_none());
    }

    #[test]
    fn collect_is_deterministic_and_logps_match() {
        let (mut env, p, v) = setup();
        let mut go = || {
            collect(
                env.as_mut(),
                &p,
                &v,
                300,
                &mut Rng::new(9, Stream::Env),
                &mut Rng::new(9, Stream::Action),
            )
            .unwrap()
        };
        let a = go();
        let b = go();
        assert_eq!(a, b);
        let lp = policy_log_probs(&p, &a.obs, &a.actions).unwrap();
        for (x, y) in lp.iter().zip(&a.old_log_probs) {
            assert!((x - y).abs() <= 1e-14);
        }
    }

    #[test]
    fn collect_rejects_mismatched_policy() {
        let mut env = make_env("pendulum").unwrap();
        let (_, p, v) = setup();
        let res = collect(
            env.as_mut(),
            &p,
            &v,
            10,
            &mut Rng::new(1, Stream::Env),
            &mut Rng::new(1, Stream::Action),
        );
        assert!(res.is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let (mut env, p, v) = setup();
        let r = collect(
            env.as_mut(),
            &p,
            &v,
            250,
            &mut Rng::new(3, Stream::Env),
            &mut Rng::new(3, Stream::Action),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with(
            "obs0,obs1,obs2,obs3,act0,act1,reward,old_logp,value,slice_id,terminal,bootstrap\n"
        ));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.obs, r.obs);
        assert_eq!(back.actions, r.actions);
        assert_eq!(back.rewards, r.rewards);
        assert_eq!(back.old_log_probs, r.old_log_probs);
        assert_eq!(back.values, r.values);
        assert_eq!(back.slices, r.slices);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_centers_and_is_idempotent(xs in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
                let n = normalize(&xs);
                let mean = n.iter().sum::<f64>() / n.len() as f64;
                prop_assert!(mean.abs() < 1e-10);
                let nn = normalize(&n);
                for (a, b) in n.iter().zip(&nn) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
}
