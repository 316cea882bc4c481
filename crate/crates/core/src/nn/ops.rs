use crate::error::{Error, Result};

/// Probability entries below this value are clamped inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-9;

/// Probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution(Vec<f64>);

impl PredictiveDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution has no classes"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut p = vec![0.0; classes];
        p[class] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax of `v / tau`, evaluated with max-subtraction.
pub fn softmax_temp(v: &[f64], tau: f64) -> Result<PredictiveDistribution> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax input must be non-empty and finite"));
    }
    let mut out: Vec<f64> = v.iter().map(|x| x / tau).collect();
    softmax_in_place(&mut out);
    Ok(PredictiveDistribution(out))
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Shannon entropy divided by `ln C`.
///
/// Evaluated as `1 - KL(p || uniform) / ln C`, which equals
/// `-(1/ln C) * sum p ln p` for normalized `p` and hits both endpoints exactly:
/// uniform input gives 1 and one-hot input gives 0.
pub fn entropy_normalized(p: &PredictiveDistribution) -> Result<f64> {
    if p.classes() < 2 {
        return Err(Error::invalid(
            "normalized entropy needs at least two classes",
        ));
    }
    Ok(entropy_normalized_slice(p.probs()))
}

pub(crate) fn entropy_normalized_slice(p: &[f64]) -> f64 {
    let c = p.len() as f64;
    let log_c = c.ln();
    let kl: f64 = p
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * (x.max(LOG_CLAMP) * c).ln())
        .sum();
    (1.0 - kl / log_c).clamp(0.0, 1.0)
}

/// Gradient of normalized entropy with respect to the logits that produced
/// `p = softmax(logits)`.
pub(crate) fn entropy_logit_grad(p: &[f64]) -> Vec<f64> {
    let log_c = (p.len() as f64).ln();
    let plogp: Vec<f64> = p
        .iter()
        .map(|x| {
            if *x > 0.0 {
                x * x.max(LOG_CLAMP).ln()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = plogp.iter().sum();
    p.iter()
        .zip(&plogp)
        .map(|(pj, pl)| -(pl - pj * total) / log_c)
        .collect()
}

/// Cross-entropy of `softmax(logits)` against `target`, via log-sum-exp.
/// Returns the loss and the softmax probabilities.
pub fn cross_entropy_with_logits(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = logits.iter().map(|l| (l - lse).exp()).collect();
    (lse - logits[target], probs)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry_and_limits() {
        for tau in [0.01, 1.0, 50.0] {
            let p = softmax_temp(&[2.5, 2.5, 2.5], tau).unwrap();
            for x in p.probs() {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let p = softmax_temp(&[1.0, 0.0], 1e6).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-5);
        assert!((p.probs()[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn softmax_budget_example() {
        // 40-digit evaluation: [0.945686733867359..., 0.054313266132640...]
        let p = softmax_temp(&[0.8, 0.6], 0.07).unwrap();
        assert!((p.probs()[0] - 0.945_686_733_867_359_4).abs() < 1e-12);
        assert!((p.probs()[1] - 0.054_313_266_132_640_6).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax_temp(&[1.0, 2.0], 0.0).is_err());
        assert!(softmax_temp(&[1.0, 2.0], -1.0).is_err());
        assert!(softmax_temp(&[1.0, 2.0], f64::NAN).is_err());
    }

    #[test]
    fn softmax_survives_huge_inputs() {
        let p = softmax_temp(&[1e4, -1e4, 9_999.0], 0.5).unwrap();
        let s: f64 = p.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(p.probs().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn entropy_endpoints_are_exact() {
        for c in 2..=64 {
            assert_eq!(
                entropy_normalized(&PredictiveDistribution::uniform(c)).unwrap(),
                1.0,
                "C={c}"
            );
            assert_eq!(
                entropy_normalized(&PredictiveDistribution::one_hot(c, c / 2)).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn entropy_reference_values() {
        let h =
            entropy_normalized(&PredictiveDistribution::new(vec![0.75, 0.25]).unwrap()).unwrap();
        assert!((h - 0.811_278_124_459_132_9).abs() < 1e-12);
        let h = entropy_normalized(&PredictiveDistribution::new(vec![0.9, 0.1]).unwrap()).unwrap();
        assert!((h - 0.468_995_593_589_281_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_needs_two_classes() {
        assert!(entropy_normalized(&PredictiveDistribution::new(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn entropy_logit_grad_matches_finite_difference() {
        let logits = [0.3, -1.2, 0.7, 0.05];
        let h = |l: &[f64]| {
            let mut p = l.to_vec();
            softmax_in_place(&mut p);
            entropy_normalized_slice(&p)
        };
        let mut p = logits.to_vec();
        softmax_in_place(&mut p);
        let g = entropy_logit_grad(&p);
        for j in 0..4 {
            let mut up = logits;
            let mut dn = logits;
            up[j] += 1e-5;
            dn[j] -= 1e-5;
            let fd = (h(&up) - h(&dn)) / 2e-5;
            assert!((fd - g[j]).abs() < 1e-8, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let (loss, p) = cross_entropy_with_logits(&[1.0, 2.0, 0.5], 1);
        let z: f64 = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).sum();
        assert!((loss - (z.ln() - 2.0)).abs() < 1e-14);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(PredictiveDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(PredictiveDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(PredictiveDistribution::new(vec![0.5, 0.5 + 1e-10]).is_ok());
    }
}
