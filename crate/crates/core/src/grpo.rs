//! Group-relative advantages and the clipped policy objective.
//!
//! Each group holds `G` rollouts of the same question. Rewards are
//! standardized within the group, and the policy ascends the clipped
//! ratio surrogate minus a KL penalty towards a frozen reference policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::log_sum_exp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

type Result<T> = std::result::Result<T, GrpoError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub adv_eps: f64,
    pub kl_coef: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            adv_eps: 1e-6,
            kl_coef: 0.001,
            group_size: 3,
            learning_rate: 1e-3,
            steps: 2000,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GrpoError::InvalidInput(format!("clip_eps {} not in (0, 1)", self.clip_eps)));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(GrpoError::InvalidInput(format!("kl_coef {} must be >= 0", self.kl_coef)));
        }
        if !(self.adv_eps >= 0.0 && self.adv_eps.is_finite()) {
            return Err(GrpoError::InvalidInput(format!("adv_eps {} must be >= 0", self.adv_eps)));
        }
        if self.group_size < 2 {
            return Err(GrpoError::InvalidInput("group_size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GrpoError::InvalidInput(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// `A_i = (R_i - mean) / (std + adv_eps)` with the population standard
/// deviation. A group with identical rewards carries no signal and gets
/// all-zero advantages.
pub fn group_advantages(rewards: &[f64], adv_eps: f64) -> Vec<f64> {
    let n = rewards.len();
    if n == 0 {
        return Vec::new();
    }
    let mu = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    rewards.iter().map(|r| (r - mu) / (sigma + adv_eps)).collect()
}

/// One clipped surrogate term `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the unclipped branch is the one selected by the `min`, i.e. the
/// term depends on the ratio locally.
pub fn unclipped_active(ratio: f64, advantage: f64, clip_eps: f64) -> bool {
    if advantage >= 0.0 {
        ratio <= 1.0 + clip_eps
    } else {
        ratio >= 1.0 - clip_eps
    }
}

/// `(1/G) sum_i [clipped_term(exp(new_i - old_i), A_i) - beta KL_i]`.
///
/// `kl_terms[i]` is the KL of the current policy against the reference over
/// rollout `i`; for the toy policy it is computed in closed form.
pub fn grpo_objective(
    new_logprobs: &[f64],
    old_logprobs: &[f64],
    advantages: &[f64],
    kl_terms: &[f64],
    cfg: &GrpoConfig,
) -> Result<f64> {
    let g = new_logprobs.len();
    if g == 0 || old_logprobs.len() != g || advantages.len() != g || kl_terms.len() != g {
        return Err(GrpoError::InvalidInput(format!(
            "length mismatch: new {}, old {}, advantages {}, kl {}",
            g,
            old_logprobs.len(),
            advantages.len(),
            kl_terms.len()
        )));
    }
    let all = new_logprobs.iter().chain(old_logprobs).chain(advantages).chain(kl_terms);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(GrpoError::InvalidInput("non-finite input".into()));
    }
    let total: f64 = (0..g)
        .map(|i| {
            let ratio = (new_logprobs[i] - old_logprobs[i]).exp();
            clipped_term(ratio, advantages[i], cfg.clip_eps) - cfg.kl_coef * kl_terms[i]
        })
        .sum();
    Ok(total / g as f64)
}

/// Softmax policy over a finite action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
            return Err(GrpoError::InvalidInput("logits must be non-empty and finite".into()));
        }
        Ok(Self { logits })
    }

    pub fn uniform(n: usize) -> Self {
        Self { logits: vec![0.0; n] }
    }

    pub fn num_actions(&self) -> usize {
        self.logits.len()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    pub fn entropy(&self) -> f64 {
        let lp = self.log_probs();
        -lp.iter().map(|l| l.exp() * l).sum::<f64>()
    }

    /// `KL(self || reference)` in nats.
    pub fn kl(&self, reference: &ToyPolicy) -> f64 {
        kl_from_logits(&self.logits, &reference.logits)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logits);
    logits.iter().map(|l| l - z).collect()
}

pub fn kl_from_logits(p: &[f64], q: &[f64]) -> f64 {
    let lp = log_softmax(p);
    let lq = log_softmax(q);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>().max(0.0)
}

/// An objective over policy logits with an analytic gradient.
pub trait DifferentiableObjective {
    fn value(&self, logits: &[f64]) -> f64;
    fn gradient(&self, logits: &[f64]) -> Vec<f64>;
    /// True when a step of size `h` around `logits` may cross a
    /// non-differentiable point.
    fn near_kink(&self, _logits: &[f64], _h: f64) -> bool {
        false
    }
}

/// The GRPO objective for a group of toy episodes, as a function of the
/// current policy logits.
///
/// Episode `i` is the sequence of sampled action indices `episodes[i]`; its
/// log-probability is the sum of the per-decision log-probabilities. The KL
/// term of an episode is `len(episodes[i]) * KL(pi || pi_ref)`, the exact KL
/// between the two policies' distributions over that many decisions.
#[derive(Debug, Clone)]
pub struct ToyGrpoObjective {
    pub episodes: Vec<Vec<usize>>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub reference_logits: Vec<f64>,
    pub cfg: GrpoConfig,
}

impl ToyGrpoObjective {
    /// Objective whose old policy is `old`, i.e. an on-policy update.
    pub fn on_policy(
        old: &ToyPolicy,
        reference: &ToyPolicy,
        episodes: Vec<Vec<usize>>,
        advantages: Vec<f64>,
        cfg: GrpoConfig,
    ) -> Self {
        let lp = old.log_probs();
        let old_logprobs = episodes.iter().map(|e| e.iter().map(|a| lp[*a]).sum()).collect();
        Self {
            episodes,
            old_logprobs,
            advantages,
            reference_logits: reference.logits.clone(),
            cfg,
        }
    }

    fn episode_logprobs(&self, logits: &[f64]) -> Vec<f64> {
        let lp = log_softmax(logits);
        self.episodes.iter().map(|e| e.iter().map(|a| lp[*a]).sum()).collect()
    }

    fn kl_terms(&self, logits: &[f64]) -> Vec<f64> {
        let kl = kl_from_logits(logits, &self.reference_logits);
        self.episodes.iter().map(|e| e.len() as f64 * kl).collect()
    }

    fn ratios(&self, logits: &[f64]) -> Vec<f64> {
        self.episode_logprobs(logits)
            .iter()
            .zip(&self.old_logprobs)
            .map(|(n, o)| (n - o).exp())
            .collect()
    }
}

impl DifferentiableObjective for ToyGrpoObjective {
    fn value(&self, logits: &[f64]) -> f64 {
        let new = self.episode_logprobs(logits);
        let kl = self.kl_terms(logits);
        grpo_objective(&new, &self.old_logprobs, &self.advantages, &kl, &self.cfg).unwrap_or(f64::NAN)
    }

    fn gradient(&self, logits: &[f64]) -> Vec<f64> {
        let k = logits.len();
        let g = self.episodes.len() as f64;
        let lp = log_softmax(logits);
        let pi: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let ratios = self.ratios(logits);
        let mut grad = vec![0.0; k];

        for ((episode, &ratio), &adv) in self.episodes.iter().zip(&ratios).zip(&self.advantages) {
            if !unclipped_active(ratio, adv, self.cfg.clip_eps) {
                continue;
            }
            // d/dlogits of sum_t log pi(a_t) = counts - n * pi
            let n = episode.len() as f64;
            for (j, gj) in grad.iter_mut().enumerate() {
                *gj -= ratio * adv * n * pi[j] / g;
            }
            for &a in episode {
                grad[a] += ratio * adv / g;
            }
        }

        if self.cfg.kl_coef > 0.0 {
            let lq = log_softmax(&self.reference_logits);
            let ell: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
            let kl: f64 = pi.iter().zip(&ell).map(|(p, l)| p * l).sum();
            let decisions: f64 = self.episodes.iter().map(|e| e.len() as f64).sum();
            for j in 0..k {
                grad[j] -= self.cfg.kl_coef * decisions / g * pi[j] * (ell[j] - kl);
            }
        }
        grad
    }

    fn near_kink(&self, logits: &[f64], h: f64) -> bool {
        let eps = self.cfg.clip_eps;
        // a logit step of h moves an episode log-prob by at most n*h
        self.ratios(logits).iter().zip(&self.episodes).any(|(r, e)| {
            let margin = 10.0 * h * (e.len().max(1) as f64) * r;
            (r - (1.0 - eps)).abs() <= margin || (r - (1.0 + eps)).abs() <= margin
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// The evaluation point is too close to a clip boundary for finite
    /// differences to be meaningful.
    pub unreliable: bool,
}

const REL_ERR_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient with central finite differences on each
/// logit. `h` must lie in `[1e-7, 1e-3]`.
pub fn gradient_check(policy: &ToyPolicy, objective: &dyn DifferentiableObjective, h: f64) -> Result<GradientCheck> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(GrpoError::InvalidInput(format!("step {h} not in [1e-7, 1e-3]")));
    }
    let x = &policy.logits;
    let analytic = objective.gradient(x);
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = objective.value(&probe);
        probe[j] = x[j] - h;
        let down = objective.value(&probe);
        probe[j] = x[j];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[j].abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        worst = worst.max((analytic[j] - numeric).abs() / denom);
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        unreliable: objective.near_kink(x, h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn advantages_hand_values() {
        let a = group_advantages(&[1.0, 0.0, 0.5], 0.0);
        let s = (1.0f64 / 6.0).sqrt();
        assert_abs_diff_eq!(a[0], 0.5 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 1.224744871391589, epsilon = 1e-9);
        assert_abs_diff_eq!(a[1], -1.224744871391589, epsilon = 1e-9);
        assert_eq!(a[2], 0.0);
        assert_eq!(group_advantages(&[0.3; 4], 1e-6), vec![0.0; 4]);
        assert_eq!(group_advantages(&[1.0, 0.0, 0.5], 1e-6), group_advantages(&[3.0, 2.0, 2.5], 1e-6));
    }

    #[test]
    fn objective_examples() {
        let cfg = GrpoConfig { kl_coef: 0.0, ..GrpoConfig::default() };
        let lp = [-1.0, -2.0, -0.5];
        let adv = [0.7, -1.1, 0.4];
        let v = grpo_objective(&lp, &lp, &adv, &[0.0; 3], &cfg).unwrap();
        assert_abs_diff_eq!(v, (0.7 - 1.1 + 0.4) / 3.0, epsilon = 1e-15);

        assert_abs_diff_eq!(clipped_term(1.5, 1.0, 0.2), 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(clipped_term(0.5, -1.0, 0.2), -0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(clipped_term(1.5, -1.0, 0.2), -1.5, epsilon = 1e-15);

        assert!(grpo_objective(&[f64::NAN], &[0.0], &[1.0], &[0.0], &cfg).is_err());
        assert!(grpo_objective(&[0.0, 0.0], &[0.0], &[1.0], &[0.0], &cfg).is_err());
    }

    #[test]
    fn toy_policy_quantities() {
        let p = ToyPolicy::uniform(4);
        assert_abs_diff_eq!(p.entropy(), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(p.kl(&p), 0.0);
        let q = ToyPolicy::new(vec![1.0, 0.0]).unwrap();
        let pq = q.probs();
        let by_hand = pq[0] * (pq[0] / 0.5).ln() + pq[1] * (pq[1] / 0.5).ln();
        assert_abs_diff_eq!(q.kl(&ToyPolicy::uniform(2)), by_hand, epsilon = 1e-12);
        assert!(ToyPolicy::new(vec![f64::INFINITY]).is_err());
    }

    struct Linear(Vec<f64>);
    impl DifferentiableObjective for Linear {
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.0).map(|(a, b)| a * b).sum()
        }
        fn gradient(&self, _: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn linear_gradient_is_exact() {
        let p = ToyPolicy::new(vec![0.3, -0.2, 1.0]).unwrap();
        let c = gradient_check(&p, &Linear(vec![1.5, -2.0, 0.25]), 1e-4).unwrap();
        assert!(c.max_relative_error <= 1e-9, "{c:?}");
        assert!(!c.unreliable);
        assert!(gradient_check(&p, &Linear(vec![1.0; 3]), 1e-2).is_err());
    }

    #[test]
    fn toy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 20 {
            let k = rng.random_range(2..6);
            let old = ToyPolicy::new((0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let reference = ToyPolicy::new((0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let episodes: Vec<Vec<usize>> = (0..3)
                .map(|_| (0..rng.random_range(1..4)).map(|_| rng.random_range(0..k)).collect())
                .collect();
            let adv = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let cfg = GrpoConfig { kl_coef: 0.1, ..GrpoConfig::default() };
            let obj = ToyGrpoObjective::on_policy(&old, &reference, episodes, adv, cfg);
            let at = ToyPolicy::new(old.logits.iter().map(|l| l + rng.random_range(-0.3..0.3)).collect()).unwrap();
            let c = gradient_check(&at, &obj, 1e-5).unwrap();
            if c.unreliable {
                continue;
            }
            assert!(c.max_relative_error <= 1e-4, "{c:?}");
            checked += 1;
        }
    }

    #[test]
    fn kink_is_flagged() {
        let old = ToyPolicy::uniform(2);
        let obj = ToyGrpoObjective::on_policy(&old, &old, vec![vec![0]], vec![1.0], GrpoConfig::default());
        // move logits so that the ratio is exactly 1 + eps
        let target = (1.2f64 * 0.5).ln();
        let l0 = target - (1.0 - target.exp()).ln();
        let at = ToyPolicy::new(vec![l0, 0.0]).unwrap();
        assert!(gradient_check(&at, &obj, 1e-5).unwrap().unreliable);
    }
}
