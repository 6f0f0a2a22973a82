//! Random-policy reference returns.
//!
//! The band is `mean ± 1.96·SE` of the undiscounted episode return of a
//! policy that draws each action uniformly from the action box. It was
//! computed once with [`random_policy_band`] over 10⁴ episodes and frozen
//! below; a test recomputes it.

use crate::envs::make_env;
use crate::error::Result;
use crate::math::{mean_std, Rng, Stream};

pub const REFERENCE_EPISODES: usize = 10_000;
pub const REFERENCE_SEED: u64 = 0;

/// Frozen band for `pointmass2d`.
pub const POINTMASS_RANDOM_BAND: Band = Band {
    lo: -87.577_446_089_580_06,
    hi: -86.209_081_981_773_1,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// How many band widths `x` lies above the upper edge.
    pub fn widths_above(&self, x: f64) -> f64 {
        (x - self.hi) / self.width()
    }
}

/// Returns of `episodes` uniform-random episodes. Resets and actions share
/// one stream so the whole run is a function of `seed`.
pub fn random_policy_returns(env_id: &str, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut env = make_env(env_id)?;
    let spec = env.spec();
    let mut rng = Rng::new(seed, Stream::Eval);
    let mut out = Vec::with_capacity(episodes);
    let mut action = vec![0.0; spec.act_dim];
    for _ in 0..episodes {
        env.reset(&mut rng);
        let mut total = 0.0;
        loop {
            for (k, a) in action.iter_mut().enumerate() {
                *a = rng.uniform_range(spec.action_low[k], spec.action_high[k]);
            }
            let step = env.step(&action)?;
            total += step.reward;
            if step.done() {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

pub fn random_policy_band(env_id: &str, episodes: usize, seed: u64) -> Result<Band> {
    let returns = random_policy_returns(env_id, episodes, seed)?;
    let (mean, std) = mean_std(&returns);
    let half = 1.96 * std / (returns.len() as f64).sqrt();
    Ok(Band {
        lo: mean - half,
        hi: mean + half,
    })
}
