//! Training configuration and its flat `key=value` text format.
//!
//! One pair per line, `#` starts a comment, keys are the snake-case field
//! names. Later assignments override earlier ones, which is how command-line
//! overrides are layered on top of a file.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::envs::ENV_IDS;
use crate::error::{Error, Result};
use crate::objectives::{Algo, ObjectiveKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algo: Algo,
    pub env_id: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Forced to 1 for VPG.
    pub max_policy_iters: usize,
    pub kl_target: f64,
    pub u_b: f64,
    pub l_b: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub value_iters: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Ppg,
            env_id: "pointmass2d".into(),
            seed: 10000,
            epochs: 50,
            steps_per_epoch: 4000,
            max_policy_iters: 80,
            kl_target: 0.015,
            u_b: 0.2,
            l_b: -0.2,
            epsilon: 0.2,
            gamma: 0.99,
            lambda: 0.97,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            value_iters: 80,
            hidden: vec![64, 64],
        }
    }
}

pub const KEYS: [&str; 16] = [
    "algo",
    "env_id",
    "seed",
    "epochs",
    "steps_per_epoch",
    "max_policy_iters",
    "kl_target",
    "u_b",
    "l_b",
    "epsilon",
    "gamma",
    "lambda",
    "policy_lr",
    "value_lr",
    "value_iters",
    "hidden",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveKind {
        match self.algo {
            Algo::Vpg => ObjectiveKind::Vpg,
            Algo::Ppo => ObjectiveKind::Ppo {
                epsilon: self.epsilon,
            },
            Algo::Ppg => ObjectiveKind::Ppg {
                upper: self.u_b,
                lower: self.l_b,
            },
        }
    }

    /// Number of policy update passes the loop may run for this algorithm.
    pub fn policy_iter_cap(&self) -> usize {
        match self.algo {
            Algo::Vpg => 1,
            _ => self.max_policy_iters,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "algo" => self.algo = value.parse()?,
            "env_id" | "env" => self.env_id = value.to_string(),
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_num(key, value)?,
            "max_policy_iters" => self.max_policy_iters = parse_num(key, value)?,
            "kl_target" => self.kl_target = parse_num(key, value)?,
            "u_b" => self.u_b = parse_num(key, value)?,
            "l_b" => self.l_b = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "policy_lr" => self.policy_lr = parse_num(key, value)?,
            "value_lr" => self.value_lr = parse_num(key, value)?,
            "value_iters" => self.value_iters = parse_num(key, value)?,
            "hidden" => {
                self.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| parse_num::<usize>(key, s.trim()))
                        .collect::<Result<_>>()?
                }
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Canonical text form: every key in a fixed order, shortest round-trip
    /// float formatting. `from_text(to_text())` reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "algo={}", self.algo);
        let _ = writeln!(s, "env_id={}", self.env_id);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "steps_per_epoch={}", self.steps_per_epoch);
        let _ = writeln!(s, "max_policy_iters={}", self.max_policy_iters);
        let _ = writeln!(s, "kl_target={:?}", self.kl_target);
        let _ = writeln!(s, "u_b={:?}", self.u_b);
        let _ = writeln!(s, "l_b={:?}", self.l_b);
        let _ = writeln!(s, "epsilon={:?}", self.epsilon);
        let _ = writeln!(s, "gamma={:?}", self.gamma);
        let _ = writeln!(s, "lambda={:?}", self.lambda);
        let _ = writeln!(s, "policy_lr={:?}", self.policy_lr);
        let _ = writeln!(s, "value_lr={:?}", self.value_lr);
        let _ = writeln!(s, "value_iters={}", self.value_iters);
        let _ = writeln!(s, "hidden={}", hidden.join(","));
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !ENV_IDS.contains(&self.env_id.as_str()) {
            return Err(Error::Config(format!(
                "unknown environment '{}' (expected one of {})",
                self.env_id,
                ENV_IDS.join(", ")
            )));
        }
        for (name, v) in [
            ("steps_per_epoch", self.steps_per_epoch),
            ("max_policy_iters", self.max_policy_iters),
            ("value_iters", self.value_iters),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.kl_target.is_nan() || self.kl_target <= 0.0 {
            return Err(Error::Config(format!("kl_target must be > 0, got {}", self.kl_target)));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("policy_lr", self.policy_lr), ("value_lr", self.value_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        // clip bounds are only checked for the algorithm that uses them
        self.objective().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.steps_per_epoch, 4000);
        assert_eq!(c.max_policy_iters, 80);
        assert_eq!(c.kl_target, 0.015);
        assert_eq!((c.u_b, c.l_b, c.epsilon), (0.2, -0.2, 0.2));
        assert_eq!((c.gamma, c.lambda), (0.99, 0.97));
        assert_eq!((c.policy_lr, c.value_lr, c.value_iters), (3e-4, 1e-3, 80));
        assert_eq!(c.hidden, vec![64, 64]);
        c.validate().unwrap();
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let text = "# experiment\nalgo = ppo\nseed=7 # trailing\n\nkl_target=0.02\nseed=8\nhidden=32,16\n";
        let c = TrainConfig::from_text(text).unwrap();
        assert_eq!(c.algo, Algo::Ppo);
        assert_eq!(c.seed, 8);
        assert_eq!(c.kl_target, 0.02);
        assert_eq!(c.hidden, vec![32, 16]);
    }

    #[test]
    fn every_key_is_addressable() {
        let c = TrainConfig::default();
        let text = c.to_text();
        for key in KEYS {
            assert!(text.contains(&format!("{key}=")), "{key}");
        }
        let mut d = TrainConfig::default();
        for key in KEYS {
            let line = text.lines().find(|l| l.starts_with(&format!("{key}="))).unwrap();
            d.set(key, line.split_once('=').unwrap().1).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn errors() {
        assert!(TrainConfig::from_text("bogus=1").is_err());
        assert!(TrainConfig::from_text("seed").is_err());
        assert!(TrainConfig::from_text("seed=abc").is_err());
        assert!(TrainConfig::from_text("algo=xyz").is_err());
        let c = TrainConfig::from_text("kl_target=0").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig::from_text("env_id=mujoco").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig::from_text("algo=ppg\nu_b=-0.1").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig::from_text("kl_target=inf").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn vpg_runs_one_iteration() {
        let c = TrainConfig::from_text("algo=vpg").unwrap();
        assert_eq!(c.policy_iter_cap(), 1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.seed += 1;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn text_roundtrip(seed in any::<u64>(), kl in 1e-6f64..10.0, lr in 1e-6f64..1.0,
                              gamma in 0.0f64..=1.0, hidden in proptest::collection::vec(1usize..256, 0..4)) {
                let c = TrainConfig { seed, kl_target: kl, policy_lr: lr, gamma, hidden, ..Default::default() };
                prop_assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
            }
        }
    }
}
