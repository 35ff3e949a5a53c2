//! Knowledge-guided policy update.
//!
//! Given the LM's step policy `π` and per-hop demonstration token sets
//! `V_1..V_h`, the update searches for a policy `π*` (parameterized by its
//! logits, initialized at `π`) that puts more mass on the demonstrations
//! while staying close to `π`:
//!
//! ```text
//! J(π*) = Σ_i Σ_{v ∈ V_i} log π*(v)  −  β · KL(π || π*)
//! ```
//!
//! `J` is ascended for K Adam steps on the logits. The penalty weight β is
//! adapted after every step towards a target divergence σ: doubled when
//! the realized KL is at least 2σ, halved when it is at most σ/2.
//!
//! [`Estimator::MonteCarlo`] instead ascends the sampled importance-weighted
//! reward `(1/M) Σ_a (π*(a)/π(a)) · r − β · KL(π || π*)` where the actions
//! `a` are drawn from `π` and `r` is the knowledge gain under `π`.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lm::{PolicyDistribution, TokenId};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("distributions have different sizes ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("demonstration token {id} is outside a vocabulary of {size}")]
    InvalidToken { id: TokenId, size: usize },
    #[error("invalid guidance config: {0}")]
    InvalidConfig(&'static str),
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Closed-form demonstration log-likelihood under `π*`.
    Exact,
    /// Importance-weighted reward over `samples` actions drawn from `π`.
    MonteCarlo { samples: usize },
}

/// Default number of off-policy samples for [`Estimator::MonteCarlo`].
pub const DEFAULT_MC_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Target KL divergence σ.
    pub sigma: f64,
    /// KL weight β at the start of every generation.
    pub beta_init: f64,
    /// Optimizer steps K per decoding step.
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub estimator: Estimator,
}

pub const DEFAULT_SIGMA: f64 = 0.02;
pub const DEFAULT_BETA_INIT: f64 = 0.1;
pub const DEFAULT_INNER_STEPS: usize = 3;
/// Tuned so the median per-step KL on the synthetic benchmark sits inside [σ/2, 2σ].
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            beta_init: DEFAULT_BETA_INIT,
            inner_steps: DEFAULT_INNER_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            estimator: Estimator::Exact,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(PolicyError::InvalidSigma(self.sigma));
        }
        if !(self.beta_init > 0.0 && self.beta_init.is_finite()) {
            return Err(PolicyError::InvalidBeta(self.beta_init));
        }
        if self.inner_steps == 0 {
            return Err(PolicyError::InvalidConfig("inner_steps must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PolicyError::InvalidConfig("learning_rate must be positive"));
        }
        if let Estimator::MonteCarlo { samples: 0 } = self.estimator {
            return Err(PolicyError::InvalidConfig("monte carlo needs at least one sample"));
        }
        Ok(())
    }
}

/// Demonstration token ids per hop. Each hop is deduplicated; a token may
/// appear in several hops and then counts once per hop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    hops: Vec<Vec<TokenId>>,
}

impl DemonstrationSet {
    pub fn new(hops: Vec<Vec<TokenId>>) -> Self {
        let hops = hops
            .into_iter()
            .map(|hop| {
                let mut seen = BTreeSet::new();
                hop.into_iter().filter(|t| seen.insert(*t)).collect()
            })
            .collect();
        Self { hops }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn hops(&self) -> &[Vec<TokenId>] {
        &self.hops
    }

    pub fn is_empty(&self) -> bool {
        self.hops.iter().all(Vec::is_empty)
    }

    /// Total number of (hop, token) pairs.
    pub fn count(&self) -> usize {
        self.hops.iter().map(Vec::len).sum()
    }

    /// Distinct tokens across hops, ascending.
    pub fn union(&self) -> Vec<TokenId> {
        let set: BTreeSet<TokenId> = self.hops.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    fn check(&self, size: usize) -> Result<(), PolicyError> {
        match self.hops.iter().flatten().find(|&&t| t as usize >= size) {
            Some(&id) => Err(PolicyError::InvalidToken { id, size }),
            None => Ok(()),
        }
    }

    /// Per-token multiplicity across hops, as a dense vector.
    fn counts(&self, size: usize) -> Vec<f64> {
        let mut c = alloc::vec![0.0; size];
        for &t in self.hops.iter().flatten() {
            c[t as usize] += 1.0;
        }
        c
    }
}

/// Everything a guided step produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub updated: PolicyDistribution,
    /// `KL(π || π*)`.
    pub kl: f64,
    /// Knowledge gain under the original policy `π`.
    pub knowledge_gain: f64,
    pub demo_mass_before: f64,
    pub demo_mass_after: f64,
    pub beta_next: f64,
    /// A non-finite value appeared; `updated` is the unchanged base policy.
    pub aborted: bool,
}

/// Sum over hops of the log-probabilities of that hop's tokens.
pub fn knowledge_gain(policy: &PolicyDistribution, demos: &DemonstrationSet) -> f64 {
    if demos.is_empty() {
        return 0.0;
    }
    let lp = policy.log_probs();
    demos
        .hops()
        .iter()
        .flatten()
        .map(|&t| lp.get(t as usize).copied().unwrap_or(f64::NEG_INFINITY))
        .sum()
}

/// `KL(softmax(p) || softmax(q))`, clamped at zero against rounding.
pub fn kl_divergence(p: &PolicyDistribution, q: &PolicyDistribution) -> Result<f64, PolicyError> {
    if p.len() != q.len() {
        return Err(PolicyError::DimensionMismatch(p.len(), q.len()));
    }
    Ok(kl_from_logs(&p.log_probs(), &q.log_probs()))
}

fn kl_from_logs(lp: &[f64], lq: &[f64]) -> f64 {
    let kl: f64 = lp
        .iter()
        .zip(lq)
        .filter(|(a, _)| a.is_finite())
        .map(|(&a, &b)| {
            let p = math::exp(a);
            if p > 0.0 {
                p * (a - b)
            } else {
                0.0
            }
        })
        .sum();
    kl.max(0.0)
}

/// Probability mass on the distinct demonstration tokens.
pub fn demo_mass(policy: &PolicyDistribution, demos: &DemonstrationSet) -> f64 {
    let probs = policy.probs();
    demos
        .union()
        .iter()
        .filter_map(|&t| probs.get(t as usize))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Exact surrogate `J(θ)` at logits `theta` against base policy `base`.
pub fn surrogate_objective(
    theta: &[f64],
    base: &PolicyDistribution,
    demos: &DemonstrationSet,
    beta: f64,
) -> f64 {
    let lq = math::log_softmax(theta);
    let gain: f64 = demos.hops().iter().flatten().map(|&t| lq[t as usize]).sum();
    gain - beta * kl_from_logs(&base.log_probs(), &lq)
}

/// Analytic gradient of [`surrogate_objective`] with respect to `theta`:
/// `c_j − N·q_j − β·(q_j − p_j)` where `c_j` counts token `j` across hops
/// and `N` is the total count.
pub fn surrogate_gradient(
    theta: &[f64],
    base: &PolicyDistribution,
    demos: &DemonstrationSet,
    beta: f64,
) -> Vec<f64> {
    let q = math::softmax(theta);
    let p = base.probs();
    let counts = demos.counts(theta.len());
    let n = demos.count() as f64;
    exact_gradient(&q, &p, &counts, n, beta)
}

fn exact_gradient(q: &[f64], p: &[f64], counts: &[f64], n: f64, beta: f64) -> Vec<f64> {
    q.iter()
        .zip(p)
        .zip(counts)
        .map(|((&qj, &pj), &cj)| cj - n * qj - beta * (qj - pj))
        .collect()
}

/// Gradient of the sampled importance-weighted objective.
fn monte_carlo_gradient(q: &[f64], p: &[f64], actions: &[usize], reward: f64, beta: f64) -> Vec<f64> {
    let m = actions.len() as f64;
    let mut g: Vec<f64> = q.iter().zip(p).map(|(&qj, &pj)| -beta * (qj - pj)).collect();
    for &a in actions {
        let w = reward * q[a] / (p[a] * m);
        for (gj, &qj) in g.iter_mut().zip(q) {
            *gj -= w * qj;
        }
        g[a] += w;
    }
    g
}

/// β schedule: double when `kl ≥ 2σ`, halve when `kl ≤ σ/2`, else keep.
/// The result stays within the positive normal range of `f64`.
pub fn adapt_beta(kl: f64, sigma: f64, beta: f64) -> Result<f64, PolicyError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PolicyError::InvalidSigma(sigma));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PolicyError::InvalidBeta(beta));
    }
    let next = if kl >= 2.0 * sigma {
        beta * 2.0
    } else if kl <= sigma / 2.0 {
        beta / 2.0
    } else {
        beta
    };
    Ok(next.clamp(f64::MIN_POSITIVE, f64::MAX))
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// One guided decoding step: K Adam steps from `base` on the configured
/// objective, then β adaptation on the realized `KL(π || π*)`.
///
/// `rng` is only consumed by [`Estimator::MonteCarlo`].
pub fn guide_step(
    base: &PolicyDistribution,
    demos: &DemonstrationSet,
    cfg: &GuidanceConfig,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<StepOutcome, PolicyError> {
    cfg.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PolicyError::InvalidBeta(beta));
    }
    let size = base.len();
    demos.check(size)?;

    let p = base.probs();
    let lp = base.log_probs();
    let gain = knowledge_gain(base, demos);
    let mass_before = demo_mass(base, demos);
    let counts = demos.counts(size);
    let n = demos.count() as f64;

    let actions: Vec<usize> = match cfg.estimator {
        Estimator::MonteCarlo { samples } if !demos.is_empty() => {
            (0..samples).map(|_| draw(&p, rng)).collect()
        }
        _ => Vec::new(),
    };

    let mut theta: Vec<f64> = base.logits().to_vec();
    let mut m = alloc::vec![0.0; size];
    let mut v = alloc::vec![0.0; size];
    let mut aborted = false;
    for step in 1..=cfg.inner_steps {
        let q = math::softmax(&theta);
        let g = match cfg.estimator {
            Estimator::Exact => exact_gradient(&q, &p, &counts, n, beta),
            Estimator::MonteCarlo { .. } if actions.is_empty() => exact_gradient(&q, &p, &counts, 0.0, beta),
            Estimator::MonteCarlo { .. } => monte_carlo_gradient(&q, &p, &actions, gain, beta),
        };
        let bias1 = 1.0 - libm::pow(ADAM_BETA1, step as f64);
        let bias2 = 1.0 - libm::pow(ADAM_BETA2, step as f64);
        for j in 0..size {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            theta[j] += cfg.learning_rate * m_hat / (math::sqrt(v_hat) + ADAM_EPSILON);
        }
        if theta.iter().any(|x| !x.is_finite()) {
            aborted = true;
            break;
        }
    }

    let updated = if aborted {
        base.clone()
    } else {
        PolicyDistribution::new(theta).map_err(|_| PolicyError::InvalidConfig("non-finite update"))?
    };
    let kl = if aborted {
        0.0
    } else {
        kl_from_logs(&lp, &updated.log_probs())
    };
    let mass_after = demo_mass(&updated, demos);
    let beta_next = adapt_beta(kl, cfg.sigma, beta)?;
    Ok(StepOutcome {
        updated,
        kl,
        knowledge_gain: gain,
        demo_mass_before: mass_before,
        demo_mass_after: mass_after,
        beta_next,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn rng() -> StdRng {
        StdRng::seed_from_u64(7)
    }

    #[test]
    fn gain_on_uniform() {
        let pi = PolicyDistribution::uniform(4);
        let one = DemonstrationSet::new(vec![vec![1]]);
        assert!((knowledge_gain(&pi, &one) - math::ln(0.25)).abs() < 1e-12);
        assert!((knowledge_gain(&pi, &one) + 1.3863).abs() < 1e-4);
        let twice = DemonstrationSet::new(vec![vec![1], vec![1]]);
        assert!((knowledge_gain(&pi, &twice) - 2.0 * math::ln(0.25)).abs() < 1e-12);
        assert_eq!(knowledge_gain(&pi, &DemonstrationSet::empty()), 0.0);
    }

    #[test]
    fn hop_sets_are_deduplicated() {
        let d = DemonstrationSet::new(vec![vec![3, 3, 1], vec![1]]);
        assert_eq!(d.hops(), [vec![3, 1], vec![1]]);
        assert_eq!(d.count(), 3);
        assert_eq!(d.union(), [1, 3]);
    }

    #[test]
    fn kl_cases() {
        let p = PolicyDistribution::from_probs(&[0.5, 0.5]);
        let q = PolicyDistribution::from_probs(&[0.9, 0.1]);
        let expected = 0.5 * math::ln(0.5 / 0.9) + 0.5 * math::ln(0.5 / 0.1);
        let kl = kl_divergence(&p, &q).unwrap();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.5108).abs() < 1e-4);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        // shift invariance
        let shifted = PolicyDistribution::new(vec![3.0, 3.0]).unwrap();
        assert!(kl_divergence(&p, &shifted).unwrap() < 1e-15);
        assert_eq!(
            kl_divergence(&p, &PolicyDistribution::uniform(3)),
            Err(PolicyError::DimensionMismatch(2, 3))
        );
    }

    #[test]
    fn adapt_beta_branches() {
        assert_eq!(adapt_beta(0.05, 0.02, 0.1).unwrap(), 0.2);
        assert_eq!(adapt_beta(0.005, 0.02, 0.1).unwrap(), 0.05);
        assert_eq!(adapt_beta(0.02, 0.02, 0.1).unwrap(), 0.1);
        assert_eq!(adapt_beta(0.04, 0.02, 0.1).unwrap(), 0.2);
        assert_eq!(adapt_beta(0.01, 0.02, 0.1).unwrap(), 0.05);
        assert!(adapt_beta(0.0, 0.0, 0.1).is_err());
        assert!(adapt_beta(0.0, 0.02, -1.0).is_err());
        assert!(adapt_beta(0.0, 0.02, f64::MIN_POSITIVE).unwrap() > 0.0);
        assert!(adapt_beta(1.0, 0.02, f64::MAX).unwrap().is_finite());
    }

    #[test]
    fn empty_demos_are_identity() {
        let base = PolicyDistribution::new(vec![0.3, -1.0, 2.5, 0.0]).unwrap();
        let out = guide_step(&base, &DemonstrationSet::empty(), &GuidanceConfig::default(), 0.1, &mut rng()).unwrap();
        assert_eq!(out.updated.logits(), base.logits());
        assert_eq!(out.kl, 0.0);
        assert_eq!(out.beta_next, 0.05);
    }

    #[test]
    fn single_demo_on_uniform_becomes_the_mode() {
        let base = PolicyDistribution::uniform(10);
        let demos = DemonstrationSet::new(vec![vec![3]]);
        let out = guide_step(&base, &demos, &GuidanceConfig::default(), 0.1, &mut rng()).unwrap();
        let q = out.updated.probs();
        assert!(q[3] > 0.1);
        assert!(q.iter().enumerate().all(|(i, &x)| i == 3 || x < q[3]));
        assert!(out.demo_mass_after > out.demo_mass_before);
        assert!(out.kl > 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let base = PolicyDistribution::uniform(3);
        let demos = DemonstrationSet::new(vec![vec![5]]);
        assert!(matches!(
            guide_step(&base, &demos, &GuidanceConfig::default(), 0.1, &mut rng()),
            Err(PolicyError::InvalidToken { id: 5, size: 3 })
        ));
        let ok = DemonstrationSet::new(vec![vec![1]]);
        assert!(guide_step(&base, &ok, &GuidanceConfig::default(), 0.0, &mut rng()).is_err());
        let cfg = GuidanceConfig {
            inner_steps: 0,
            ..GuidanceConfig::default()
        };
        assert!(guide_step(&base, &ok, &cfg, 0.1, &mut rng()).is_err());
    }

    #[test]
    fn huge_learning_rate_aborts_cleanly() {
        let base = PolicyDistribution::uniform(4);
        let demos = DemonstrationSet::new(vec![vec![0]]);
        let cfg = GuidanceConfig {
            learning_rate: f64::MAX,
            ..GuidanceConfig::default()
        };
        let out = guide_step(&base, &demos, &cfg, 0.1, &mut rng()).unwrap();
        assert!(out.aborted);
        assert_eq!(out.updated, base);
    }

    #[test]
    fn monte_carlo_mode_runs_and_is_seeded() {
        let base = PolicyDistribution::new(vec![0.1, 0.7, -0.4, 1.2, 0.0]).unwrap();
        let demos = DemonstrationSet::new(vec![vec![2, 4]]);
        let cfg = GuidanceConfig {
            estimator: Estimator::MonteCarlo { samples: 8 },
            ..GuidanceConfig::default()
        };
        let a = guide_step(&base, &demos, &cfg, 0.1, &mut StdRng::seed_from_u64(1)).unwrap();
        let b = guide_step(&base, &demos, &cfg, 0.1, &mut StdRng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.kl > 0.0 && a.kl.is_finite());
        assert!(a.knowledge_gain < 0.0);
        let empty = guide_step(&base, &DemonstrationSet::empty(), &cfg, 0.1, &mut rng()).unwrap();
        assert_eq!(empty.updated, base);
    }

    /// Central finite differences on the surrogate.
    fn numeric_gradient(theta: &[f64], base: &PolicyDistribution, demos: &DemonstrationSet, beta: f64) -> Vec<f64> {
        let h = 1e-5;
        (0..theta.len())
            .map(|j| {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[j] += h;
                minus[j] -= h;
                (surrogate_objective(&plus, base, demos, beta) - surrogate_objective(&minus, base, demos, beta)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences_on_a_fixed_case() {
        let base = PolicyDistribution::new(vec![0.5, -0.2, 1.0, 0.0, -1.5]).unwrap();
        let theta = [0.9, -0.1, 0.2, 0.3, -1.0];
        let demos = DemonstrationSet::new(vec![vec![1, 3], vec![3]]);
        let a = surrogate_gradient(&theta, &base, &demos, 0.7);
        let n = numeric_gradient(&theta, &base, &demos, 0.7);
        for (x, y) in a.iter().zip(&n) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}
