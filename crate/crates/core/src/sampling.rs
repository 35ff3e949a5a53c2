//! Nucleus (top-p) then top-k truncated sampling.

use alloc::vec::Vec;

use rand::Rng;

use crate::lm::{PolicyDistribution, TokenId};

/// Slack on the nucleus threshold so that `top_p` equal to a prefix sum
/// selects that prefix despite rounding.
const NUCLEUS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub token: TokenId,
    /// Truncation kept no mass and the argmax was returned instead.
    pub fallback: bool,
}

/// Token ids and renormalized probabilities of the truncated support, most
/// probable first (ties by lower id). `top_p >= 1` disables the nucleus,
/// `top_k == 0` disables top-k.
pub fn truncate(probs: &[f64], top_p: f64, top_k: usize) -> Vec<(TokenId, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    if top_p < 1.0 {
        let mut acc = 0.0;
        let mut keep = 0;
        for &i in &order {
            if keep > 0 && acc >= top_p - NUCLEUS_SLACK {
                break;
            }
            acc += probs[i];
            keep += 1;
        }
        if top_p <= 0.0 {
            keep = 0;
        }
        order.truncate(keep);
    }
    if top_k > 0 {
        order.truncate(top_k);
    }
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    if total.is_nan() || total <= 0.0 {
        return Vec::new();
    }
    order.into_iter().map(|i| (i as TokenId, probs[i] / total)).collect()
}

/// Draw one token from the truncated policy. Exactly one uniform variate is
/// consumed per call, including on fallback, so two decoders fed the same
/// RNG stay aligned step for step.
pub fn sample_from(policy: &PolicyDistribution, top_p: f64, top_k: usize, rng: &mut impl Rng) -> Sample {
    let u: f64 = rng.gen();
    let support = truncate(&policy.probs(), top_p, top_k);
    if support.is_empty() {
        return Sample {
            token: policy.argmax().unwrap_or(0),
            fallback: true,
        };
    }
    let mut acc = 0.0;
    for &(token, p) in &support {
        acc += p;
        if u < acc {
            return Sample { token, fallback: false };
        }
    }
    Sample {
        token: support[support.len() - 1].0,
        fallback: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn dist(p: &[f64]) -> PolicyDistribution {
        PolicyDistribution::from_probs(p)
    }

    #[test]
    fn one_hot_ignores_truncation() {
        let pi = PolicyDistribution::new(alloc::vec![-1e9, 0.0, -1e9]).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        for (p, k) in [(1.0, 0), (0.1, 1), (0.9, 20)] {
            assert_eq!(sample_from(&pi, p, k, &mut rng).token, 1);
        }
    }

    #[test]
    fn nucleus_is_smallest_prefix() {
        let p = [0.5, 0.3, 0.2];
        assert_eq!(truncate(&p, 0.5, 0).iter().map(|x| x.0).collect::<Vec<_>>(), [0]);
        assert_eq!(truncate(&p, 0.6, 0).iter().map(|x| x.0).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(truncate(&p, 0.8, 0).len(), 2);
        assert_eq!(truncate(&p, 1.0, 0).len(), 3);
        assert_eq!(truncate(&p, 1.0, 2).len(), 2);
    }

    #[test]
    fn top_p_half_only_draws_first() {
        let pi = dist(&[0.5, 0.3, 0.2]);
        let mut rng = StdRng::seed_from_u64(3);
        assert!((0..1000).all(|_| sample_from(&pi, 0.5, 0, &mut rng).token == 0));
    }

    #[test]
    fn ties_keep_lower_id_first() {
        let t = truncate(&[0.25, 0.25, 0.25, 0.25], 1.0, 2);
        assert_eq!(t.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn zero_top_p_falls_back_to_argmax() {
        let pi = dist(&[0.2, 0.7, 0.1]);
        let s = sample_from(&pi, 0.0, 0, &mut StdRng::seed_from_u64(1));
        assert_eq!(s, Sample { token: 1, fallback: true });
    }

    #[test]
    fn top_k_one_is_argmax() {
        let pi = dist(&[0.2, 0.3, 0.5]);
        let mut rng = StdRng::seed_from_u64(5);
        assert!((0..100).all(|_| sample_from(&pi, 1.0, 1, &mut rng).token == 2));
    }
}
