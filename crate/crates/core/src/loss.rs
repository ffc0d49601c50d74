//! Softmax and cross-entropy on raw logits.

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log Σ exp(z)` computed with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy `−log p_target` evaluated from logits, so it stays finite
/// when the target probability underflows. When the target logit is the
/// largest, `ln_1p` keeps full relative precision for near-zero losses.
pub fn cross_entropy_from_logits(logits: &[f64], target: usize) -> f64 {
    let zy = logits[target];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if zy >= max {
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != target)
            .map(|(_, z)| (z - zy).exp())
            .sum();
        rest.ln_1p()
    } else {
        (max - zy) + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let p = softmax(&[0.0; 4]);
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn large_logit_dominates() {
        let p = softmax(&[800.0, 0.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(cross_entropy_from_logits(&[0.0, 800.0], 0) > 799.0);
    }

    #[test]
    fn small_losses_keep_relative_precision() {
        // −log σ(40) = ln(1 + e^{−40}) ≈ e^{−40}.
        let l = cross_entropy_from_logits(&[40.0, 0.0], 0);
        let expected = (-40f64).exp();
        assert!(((l - expected) / expected).abs() < 1e-14, "{l}");
        let lse = log_sum_exp(&[1.0, 2.0, 3.0]);
        for y in 0..3 {
            let z = [1.0, 2.0, 3.0];
            assert!((cross_entropy_from_logits(&z, y) - (lse - z[y])).abs() < 1e-14);
        }
    }
}
