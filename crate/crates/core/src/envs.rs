//! Episodic continuous-control environments.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub max_episode_steps: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Genuine termination (goal reached). Never set together with `truncated`.
    pub terminal: bool,
    /// Time-limit cutoff.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn id(&self) -> &'static str;
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    /// Errors if called before `reset` or after the episode ended.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

pub const ENV_IDS: [&str; 2] = ["pointmass2d", "pendulum"];

pub fn make_env(id: &str) -> Result<Box<dyn Environment>> {
    match id {
        "pointmass2d" => Ok(Box::new(PointMass2D::default())),
        "pendulum" => Ok(Box::new(PendulumSwingUp::default())),
        other => Err(Error::Config(format!(
            "unknown environment '{other}' (expected one of {})",
            ENV_IDS.join(", ")
        ))),
    }
}

fn clip(x: f64, bound: f64) -> f64 {
    x.clamp(-bound, bound)
}

fn check_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(Error::Dimension {
            what: "action",
            expected: dim,
            got: action.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum Phase {
    #[default]
    NeedsReset,
    Running,
    Done,
}

/// Point mass on the plane that must be driven to the origin.
///
/// Observation is `(px, py, vx, vy)`, action is a force clipped to `[-1, 1]²`.
#[derive(Debug, Clone, Default)]
pub struct PointMass2D {
    pos: [f64; 2],
    vel: [f64; 2],
    t: usize,
    phase: Phase,
}

impl PointMass2D {
    pub const DT: f64 = 0.05;
    pub const DAMPING: f64 = 0.005;
    pub const GOAL_RADIUS: f64 = 0.05;
    pub const GOAL_BONUS: f64 = 10.0;
    pub const MAX_STEPS: usize = 100;

    /// Places the mass at a chosen state, bypassing the start distribution.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.t = 0;
        self.phase = Phase::Running;
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Environment for PointMass2D {
    fn id(&self) -> &'static str {
        "pointmass2d"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 4,
            act_dim: 2,
            max_episode_steps: Self::MAX_STEPS,
            action_low: vec![-1.0; 2],
            action_high: vec![1.0; 2],
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        let x = rng.uniform_range(-1.0, 1.0);
        let y = rng.uniform_range(-1.0, 1.0);
        self.set_state([x, y], [0.0, 0.0]);
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match self.phase {
            Phase::NeedsReset => return Err(Error::Usage("step called before reset".into())),
            Phase::Done => return Err(Error::Usage("step called after episode end".into())),
            Phase::Running => {}
        }
        check_action(action, 2)?;
        let a = [clip(action[0], 1.0), clip(action[1], 1.0)];
        for k in 0..2 {
            let p = self.pos[k] + Self::DT * self.vel[k];
            let v = self.vel[k] + Self::DT * a[k] - Self::DAMPING * self.vel[k];
            self.pos[k] = p;
            self.vel[k] = v;
        }
        self.t += 1;
        let dist = self.pos[0].hypot(self.pos[1]);
        let mut reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        let terminal = dist < Self::GOAL_RADIUS;
        if terminal {
            reward += Self::GOAL_BONUS;
        }
        let truncated = !terminal && self.t >= Self::MAX_STEPS;
        if terminal || truncated {
            self.phase = Phase::Done;
        }
        Ok(StepResult {
            obs: self.obs(),
            reward,
            terminal,
            truncated,
        })
    }
}

/// Torque-driven pendulum; angle zero is upright. No terminal state.
///
/// Dynamics `θ̈ = (g/l) sin θ + u / (m l²)` integrated with semi-implicit
/// Euler. Observation is `(cos θ, sin θ, θ̇)`.
#[derive(Debug, Clone, Default)]
pub struct PendulumSwingUp {
    theta: f64,
    theta_dot: f64,
    t: usize,
    phase: Phase,
}

impl PendulumSwingUp {
    pub const G: f64 = 10.0;
    pub const L: f64 = 1.0;
    pub const M: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_STEPS: usize = 200;

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.t = 0;
        self.phase = Phase::Running;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn angular_accel(theta: f64, torque: f64) -> f64 {
        Self::G / Self::L * theta.sin() + torque / (Self::M * Self::L * Self::L)
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for PendulumSwingUp {
    fn id(&self) -> &'static str {
        "pendulum"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 3,
            act_dim: 1,
            max_episode_steps: Self::MAX_STEPS,
            action_low: vec![-Self::MAX_TORQUE],
            action_high: vec![Self::MAX_TORQUE],
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        let theta = rng.uniform_range(-PI, PI);
        let theta_dot = rng.uniform_range(-1.0, 1.0);
        self.set_state(theta, theta_dot);
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match self.phase {
            Phase::NeedsReset => return Err(Error::Usage("step called before reset".into())),
            Phase::Done => return Err(Error::Usage("step called after episode end".into())),
            Phase::Running => {}
        }
        check_action(action, 1)?;
        let u = clip(action[0], Self::MAX_TORQUE);
        let err = angle_normalize(self.theta);
        let reward = -(err * err + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        self.theta_dot += Self::DT * Self::angular_accel(self.theta, u);
        self.theta += Self::DT * self.theta_dot;
        self.t += 1;
        let truncated = self.t >= Self::MAX_STEPS;
        if truncated {
            self.phase = Phase::Done;
        }
        Ok(StepResult {
            obs: self.obs(),
            reward,
            terminal: false,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Stream;

    #[test]
    fn unknown_env_id() {
        assert!(make_env("cartpole").is_err());
        for id in ENV_IDS {
            assert_eq!(make_env(id).unwrap().id(), id);
        }
    }

    #[test]
    fn reset_is_deterministic_and_starts_at_rest() {
        let mut env = PointMass2D::default();
        let a = env.reset(&mut Rng::new(3, Stream::Env));
        let b = env.reset(&mut Rng::new(3, Stream::Env));
        assert_eq!(a, b);
        assert_eq!(&a[2..4], &[0.0, 0.0]);
        assert!(a[..2].iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn reset_position_mean_is_centered() {
        let mut env = PointMass2D::default();
        let mut rng = Rng::new(4, Stream::Env);
        let n = 10_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let o = env.reset(&mut rng);
            sx += o[0];
            sy += o[1];
        }
        assert!((sx / n as f64).abs() < 0.05);
        assert!((sy / n as f64).abs() < 0.05);
    }

    #[test]
    fn pointmass_goal_and_statics() {
        let mut env = PointMass2D::default();
        env.set_state([0.0, 0.0], [0.0, 0.0]);
        let s = env.step(&[0.1, -0.1]).unwrap();
        assert!(s.terminal && !s.truncated);
        let expected = -0.0 - 0.01 * 0.02 + 10.0;
        assert!((s.reward - expected).abs() < 1e-12);

        env.set_state([0.3, -0.4], [0.0, 0.0]);
        let s = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(&s.obs[..2], &[0.3, -0.4]);
        assert!((s.reward + 0.5).abs() < 1e-15);
        assert!(!s.terminal);
    }

    #[test]
    fn pointmass_clips_actions() {
        let mut a = PointMass2D::default();
        let mut b = PointMass2D::default();
        a.set_state([0.5, 0.5], [0.1, 0.0]);
        b.set_state([0.5, 0.5], [0.1, 0.0]);
        a.step(&[0.0, 0.0]).unwrap();
        b.step(&[0.0, 0.0]).unwrap();
        let sa = a.step(&[5.0, -7.0]).unwrap();
        let sb = b.step(&[1.0, -1.0]).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn step_usage_errors() {
        let mut env = PointMass2D::default();
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Usage(_))));
        env.set_state([0.9, 0.9], [0.0, 0.0]);
        for _ in 0..PointMass2D::MAX_STEPS - 1 {
            assert!(!env.step(&[0.0, 0.0]).unwrap().done());
        }
        let last = env.step(&[0.0, 0.0]).unwrap();
        assert!(last.truncated && !last.terminal);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Usage(_))));

        let mut p = PendulumSwingUp::default();
        assert!(p.step(&[0.0]).is_err());
        p.reset(&mut Rng::new(0, Stream::Env));
        assert!(matches!(p.step(&[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pendulum_truncates_at_limit_and_never_terminates() {
        let mut env = PendulumSwingUp::default();
        let mut rng = Rng::new(8, Stream::Env);
        let obs = env.reset(&mut rng);
        assert_eq!(obs.len(), 3);
        let mut steps = 0;
        loop {
            let s = env.step(&[rng.uniform_range(-3.0, 3.0)]).unwrap();
            steps += 1;
            assert!(!s.terminal);
            assert!(s.reward.is_finite() && s.reward <= 0.0);
            if s.truncated {
                break;
            }
        }
        assert_eq!(steps, PendulumSwingUp::MAX_STEPS);
    }

    /// Reference trajectory from the same ODE integrated with RK4 at dt = 1e-4.
    fn fine_trajectory(theta0: f64, omega0: f64, duration: f64) -> Vec<(f64, f64)> {
        let h = 1e-4;
        let f = |th: f64, om: f64| (om, PendulumSwingUp::angular_accel(th, 0.0));
        let steps_per_sample = (PendulumSwingUp::DT / h).round() as usize;
        let n = (duration / PendulumSwingUp::DT).round() as usize;
        let (mut th, mut om) = (theta0, omega0);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..steps_per_sample {
                let (k1t, k1o) = f(th, om);
                let (k2t, k2o) = f(th + 0.5 * h * k1t, om + 0.5 * h * k1o);
                let (k3t, k3o) = f(th + 0.5 * h * k2t, om + 0.5 * h * k2o);
                let (k4t, k4o) = f(th + h * k3t, om + h * k3o);
                th += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
                om += h / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
            }
            out.push((th, om));
        }
        out
    }

    #[test]
    fn pendulum_matches_fine_integrator() {
        // Small oscillation about the hanging equilibrium (θ = π).
        let (theta0, omega0) = (PI - 0.05, 0.0);
        let reference = fine_trajectory(theta0, omega0, 1.0);
        let mut env = PendulumSwingUp::default();
        env.set_state(theta0, omega0);
        let energy = |th: f64, om: f64| 0.5 * om * om + PendulumSwingUp::G * th.cos();
        let e_ref = energy(theta0, omega0);
        for &(th_ref, om_ref) in &reference {
            env.step(&[0.0]).unwrap();
            let (th, om) = env.state();
            assert!((th - th_ref).abs() < 1e-2, "theta {th} vs {th_ref}");
            assert!((energy(th, om) - energy(th_ref, om_ref)).abs() < 1e-2);
            assert!((energy(th_ref, om_ref) - e_ref).abs() < 1e-9);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        for id in ENV_IDS {
            let run = || {
                let mut env = make_env(id).unwrap();
                let mut rng = Rng::new(77, Stream::Env);
                let mut act_rng = Rng::new(77, Stream::Action);
                let mut trace = vec![env.reset(&mut rng)];
                let act_dim = env.spec().act_dim;
                loop {
                    let a: Vec<f64> = (0..act_dim).map(|_| act_rng.uniform_range(-1.0, 1.0)).collect();
                    let s = env.step(&a).unwrap();
                    trace.push(s.obs.clone());
                    trace.push(vec![s.reward]);
                    if s.done() {
                        break;
                    }
                }
                trace
            };
            let a = run();
            let b = run();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                let xb: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn angle_wrap() {
        assert!((angle_normalize(3.0 * PI) + PI).abs() < 1e-12);
        assert!((angle_normalize(0.5) - 0.5).abs() < 1e-15);
        assert!((angle_normalize(-0.5 - 2.0 * PI) + 0.5).abs() < 1e-12);
    }
}
