//! VPG, PPO and PPG objectives, their per-sample gradient coefficients and
//! the KL estimators used to stop policy iterations.
//!
//! Every objective here is a function of the current log-probabilities of
//! the batch, so its gradient has the form `Σ_i c_i ∇ log π(a_i|s_i)`.
//! The objectives return the coefficients `c_i`; the network module turns
//! them into a parameter gradient.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::GaussianDist;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    Vpg,
    Ppo { epsilon: f64 },
    Ppg { upper: f64, lower: f64 },
}

impl ObjectiveKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObjectiveKind::Vpg => Ok(()),
            ObjectiveKind::Ppo { epsilon } if epsilon > 0.0 && epsilon < 1.0 => Ok(()),
            ObjectiveKind::Ppo { epsilon } => {
                Err(Error::Config(format!("epsilon must be in (0, 1), got {epsilon}")))
            }
            ObjectiveKind::Ppg { upper, lower } if upper > 0.0 && lower < 0.0 => Ok(()),
            ObjectiveKind::Ppg { upper, lower } => Err(Error::Config(format!(
                "PPG bounds need u_b > 0 > l_b, got u_b={upper}, l_b={lower}"
            ))),
        }
    }

    pub fn algo(&self) -> Algo {
        match self {
            ObjectiveKind::Vpg => Algo::Vpg,
            ObjectiveKind::Ppo { .. } => Algo::Ppo,
            ObjectiveKind::Ppg { .. } => Algo::Ppg,
        }
    }
}

/// Algorithm selector without its clip parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Vpg,
    Ppo,
    Ppg,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Vpg, Algo::Ppo, Algo::Ppg];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Vpg => "vpg",
            Algo::Ppo => "ppo",
            Algo::Ppg => "ppg",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vpg" => Ok(Algo::Vpg),
            "ppo" => Ok(Algo::Ppo),
            "ppg" => Ok(Algo::Ppg),
            _ => Err(Error::Config(format!(
                "unknown algorithm '{s}' (expected vpg, ppo or ppg)"
            ))),
        }
    }
}

/// Loss value with its gradient coefficients and clip flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub coeffs: Vec<f64>,
    pub clipped: Vec<bool>,
    /// Contribution of samples with `Â ≥ 0`.
    pub loss_pos: f64,
    /// Contribution of samples with `Â < 0`.
    pub loss_neg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub loss: f64,
    pub coeffs: Vec<f64>,
    pub clip_mask: Vec<bool>,
    pub d: Vec<f64>,
    pub ratio: Vec<f64>,
    pub d_mc: f64,
    /// Filled in by callers that have both policies' distributions.
    pub exact_kl_mean: Option<f64>,
    pub loss_pos: f64,
    pub loss_neg: f64,
}

impl ObjectiveReport {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn clip_fraction(&self) -> f64 {
        if self.clip_mask.is_empty() {
            return 0.0;
        }
        self.clip_mask.iter().filter(|&&c| c).count() as f64 / self.clip_mask.len() as f64
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            what: "objective batch",
            expected: a,
            got: b,
        });
    }
    if a == 0 {
        return Err(Error::Config("objective batch is empty".into()));
    }
    Ok(())
}

/// Assembles a [`LossEval`] from per-sample terms, keeping the advantage-sign
/// split on the same `1/N̂` normalizer.
fn assemble(terms: &[f64], adv: &[f64], coeffs: Vec<f64>, clipped: Vec<bool>) -> LossEval {
    let n = terms.len() as f64;
    let (mut pos, mut neg) = (0.0, 0.0);
    for (t, a) in terms.iter().zip(adv) {
        if *a >= 0.0 {
            pos += t;
        } else {
            neg += t;
        }
    }
    let (loss_pos, loss_neg) = (pos / n, neg / n);
    LossEval {
        loss: loss_pos + loss_neg,
        coeffs,
        clipped,
        loss_pos,
        loss_neg,
    }
}

/// `d_i = log π_new − log π_old`.
pub fn log_diff(new_logp: &[f64], old_logp: &[f64]) -> Result<Vec<f64>> {
    if new_logp.len() != old_logp.len() {
        return Err(Error::Dimension {
            what: "log-prob batch",
            expected: old_logp.len(),
            got: new_logp.len(),
        });
    }
    Ok(new_logp.iter().zip(old_logp).map(|(n, o)| n - o).collect())
}

/// Advantage-sign-dependent clip of the log-ratio.
///
/// Non-negative advantages are capped above at `upper`, negative ones are
/// floored at `lower`. The other direction is never clipped. Ties at the
/// bound count as unclipped.
pub fn ppg_clip(d: f64, adv: f64, upper: f64, lower: f64) -> (f64, bool) {
    if adv >= 0.0 {
        (d.min(upper), d > upper)
    } else {
        (d.max(lower), d < lower)
    }
}

/// `(1/N̂) Σ log π_i Â_i`; coefficients `Â_i / N̂`.
pub fn loss_vpg(logp: &[f64], adv: &[f64]) -> Result<LossEval> {
    check_lengths(logp.len(), adv.len())?;
    let n = adv.len() as f64;
    let terms: Vec<f64> = logp.iter().zip(adv).map(|(l, a)| l * a).collect();
    let coeffs = adv.iter().map(|a| a / n).collect();
    Ok(assemble(&terms, adv, coeffs, vec![false; adv.len()]))
}

/// Clipped surrogate `(1/N̂) Σ min(r Â, clip(r, 1±ε) Â)` with `r = exp(d)`.
///
/// The coefficient is `r Â / N̂` when the unclipped branch attains the min
/// and zero when the clipped (locally constant) branch is strictly smaller.
pub fn loss_ppo(d: &[f64], adv: &[f64], epsilon: f64) -> Result<LossEval> {
    check_lengths(d.len(), adv.len())?;
    let n = adv.len() as f64;
    let mut terms = Vec::with_capacity(d.len());
    let mut coeffs = Vec::with_capacity(d.len());
    let mut clipped = Vec::with_capacity(d.len());
    for (&di, &a) in d.iter().zip(adv) {
        let r = di.exp();
        let unclipped = r * a;
        let clipped_term = r.clamp(1.0 - epsilon, 1.0 + epsilon) * a;
        if clipped_term < unclipped {
            terms.push(clipped_term);
            coeffs.push(0.0);
            clipped.push(true);
        } else {
            terms.push(unclipped);
            coeffs.push(unclipped / n);
            clipped.push(false);
        }
    }
    Ok(assemble(&terms, adv, coeffs, clipped))
}

/// `(1/N̂) Σ Â_i δ_i` with `δ_i` from [`ppg_clip`]; coefficients `Â_i / N̂`
/// for unclipped samples, zero for clipped ones.
pub fn loss_ppg(d: &[f64], adv: &[f64], upper: f64, lower: f64) -> Result<LossEval> {
    check_lengths(d.len(), adv.len())?;
    let n = adv.len() as f64;
    let mut terms = Vec::with_capacity(d.len());
    let mut coeffs = Vec::with_capacity(d.len());
    let mut clipped = Vec::with_capacity(d.len());
    for (&di, &a) in d.iter().zip(adv) {
        let (delta, c) = ppg_clip(di, a, upper, lower);
        terms.push(a * delta);
        coeffs.push(if c { 0.0 } else { a / n });
        clipped.push(c);
    }
    Ok(assemble(&terms, adv, coeffs, clipped))
}

/// `(1/N̂) Σ d_i Â_i`; coefficients `Â_i / N̂`, identical to VPG's.
pub fn loss_ppg_nclip(d: &[f64], adv: &[f64]) -> Result<LossEval> {
    check_lengths(d.len(), adv.len())?;
    let n = adv.len() as f64;
    let terms: Vec<f64> = d.iter().zip(adv).map(|(x, a)| x * a).collect();
    let coeffs = adv.iter().map(|a| a / n).collect();
    Ok(assemble(&terms, adv, coeffs, vec![false; adv.len()]))
}

/// `(1/N̂) Σ r_i Â_i`, the unclipped surrogate. Coefficients `r_i Â_i / N̂`.
pub fn loss_ppo_nclip(d: &[f64], adv: &[f64]) -> Result<LossEval> {
    check_lengths(d.len(), adv.len())?;
    let n = adv.len() as f64;
    let terms: Vec<f64> = d.iter().zip(adv).map(|(x, a)| x.exp() * a).collect();
    let coeffs = terms.iter().map(|t| t / n).collect();
    Ok(assemble(&terms, adv, coeffs, vec![false; adv.len()]))
}

/// Signed sample mean of the log-ratios.
pub fn d_mc(d: &[f64]) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.iter().sum::<f64>() / d.len() as f64
}

/// Mean over states of the closed-form KL(new ‖ old).
pub fn exact_kl_mean(old: &[GaussianDist], new: &[GaussianDist]) -> Result<f64> {
    check_lengths(old.len(), new.len())?;
    Ok(new.iter().zip(old).map(|(n, o)| n.kl(o)).sum::<f64>() / new.len() as f64)
}

/// Evaluates `kind` on a batch and packages everything the trainer and the
/// diagnostics consume.
pub fn evaluate(
    kind: ObjectiveKind,
    new_logp: &[f64],
    old_logp: &[f64],
    adv: &[f64],
) -> Result<ObjectiveReport> {
    let d = log_diff(new_logp, old_logp)?;
    let eval = match kind {
        ObjectiveKind::Vpg => loss_vpg(new_logp, adv)?,
        ObjectiveKind::Ppo { epsilon } => loss_ppo(&d, adv, epsilon)?,
        ObjectiveKind::Ppg { upper, lower } => loss_ppg(&d, adv, upper, lower)?,
    };
    let ratio = d.iter().map(|x| x.exp()).collect();
    Ok(ObjectiveReport {
        loss: eval.loss,
        coeffs: eval.coeffs,
        clip_mask: eval.clipped,
        d_mc: d_mc(&d),
        ratio,
        d,
        exact_kl_mean: None,
        loss_pos: eval.loss_pos,
        loss_neg: eval.loss_neg,
    })
}
