use thiserror::Error;

/// Finite stand-in for −∞; logits at or below it count as masked.
pub const MASKED: f64 = -1e30;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("target class {0} is masked")]
    TargetMasked(usize),
    #[error("target class {target} out of range for {classes} classes")]
    OutOfRange { target: usize, classes: usize },
    #[error("smoothing factor {0} outside [0, 1)")]
    BadEpsilon(f64),
}

/// One row's target and admitted classes. An empty `admitted` admits all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CeTarget {
    pub target: usize,
    pub admitted: Vec<bool>,
}

impl CeTarget {
    pub fn new(target: usize, admitted: Vec<bool>) -> Self {
        Self { target, admitted }
    }

    fn admits(&self, c: usize) -> bool {
        self.admitted.is_empty() || self.admitted[c]
    }
}

/// Label-smoothed cross-entropy restricted to admitted classes: the target
/// gets `1 − eps` and the remaining admitted classes share `eps` uniformly.
/// Writes `p − q` into `grad` when given.
pub fn masked_ls_ce_row(logits: &[f64], t: &CeTarget, eps: f64, grad: Option<&mut [f64]>) -> Result<f64, LossError> {
    let c = logits.len();
    if !(0.0..1.0).contains(&eps) {
        return Err(LossError::BadEpsilon(eps));
    }
    if t.target >= c {
        return Err(LossError::OutOfRange { target: t.target, classes: c });
    }
    if !t.admits(t.target) || logits[t.target] <= MASKED {
        return Err(LossError::TargetMasked(t.target));
    }
    let live = |k: usize| t.admits(k) && logits[k] > MASKED;
    let max = (0..c).filter(|&k| live(k)).map(|k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in (0..c).filter(|&k| live(k)) {
        sum += (logits[k] - max).exp();
        count += 1;
    }
    let lse = max + sum.ln();
    let other = if count > 1 { eps / (count - 1) as f64 } else { 0.0 };
    let q_target = if count > 1 { 1.0 - eps } else { 1.0 };
    let mut loss = 0.0;
    for k in (0..c).filter(|&k| live(k)) {
        let q = if k == t.target { q_target } else { other };
        if q > 0.0 {
            loss -= q * (logits[k] - lse);
        }
    }
    if let Some(g) = grad {
        for k in 0..c {
            g[k] = if live(k) {
                let q = if k == t.target { q_target } else { other };
                (logits[k] - lse).exp() - q
            } else {
                0.0
            };
        }
    }
    Ok(loss)
}

/// Label-smoothed cross-entropy over one logit vector; entries at or below
/// [`MASKED`] (including −∞) are excluded from both softmax and smoothing.
pub fn label_smoothed_ce(logits: &[f64], target: usize, eps: f64) -> Result<f64, LossError> {
    masked_ls_ce_row(logits, &CeTarget::new(target, Vec::new()), eps, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation: explicit probabilities, explicit q, −Σ q log p.
    fn oracle(logits: &[f64], target: usize, eps: f64) -> f64 {
        let live: Vec<usize> = (0..logits.len()).filter(|&k| logits[k] > MASKED).collect();
        let z: f64 = live.iter().map(|&k| logits[k].exp()).sum();
        let mut loss = 0.0;
        for &k in &live {
            let p = logits[k].exp() / z;
            let q = if k == target { 1.0 - eps } else { eps / (live.len() - 1) as f64 };
            loss -= q * p.ln();
        }
        loss
    }

    #[test]
    fn uniform_cases() {
        assert!((label_smoothed_ce(&[0.0; 4], 2, 0.0).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((label_smoothed_ce(&[0.0; 3], 0, 0.1).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_summation() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
        };
        for trial in 0..200 {
            let c = 2 + trial % 9;
            let mut logits: Vec<f64> = (0..c).map(|_| next()).collect();
            if trial % 3 == 0 {
                logits[(trial / 3) % c] = MASKED;
            }
            if trial % 5 == 0 {
                logits[(trial / 5 + 1) % c] = f64::NEG_INFINITY;
            }
            let Some(target) = (0..c).find(|&k| logits[k] > MASKED) else { continue };
            if (0..c).filter(|&k| logits[k] > MASKED).count() < 2 {
                continue;
            }
            let a = label_smoothed_ce(&logits, target, 0.1).unwrap();
            assert!((a - oracle(&logits, target, 0.1)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn masked_gradient_is_zero_and_errors() {
        let logits = [1.0, MASKED, 0.5, -0.2];
        let mut g = [9.0; 4];
        let t = CeTarget::new(0, vec![true, true, true, false]);
        masked_ls_ce_row(&logits, &t, 0.1, Some(&mut g)).unwrap();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(label_smoothed_ce(&logits, 1, 0.1), Err(LossError::TargetMasked(1)));
        assert!(label_smoothed_ce(&logits, 7, 0.1).is_err());
        assert!(label_smoothed_ce(&logits, 0, 1.0).is_err());
    }
}
