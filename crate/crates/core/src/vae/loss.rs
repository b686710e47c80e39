use serde::Serialize;

use super::params::Tensor;
use super::ModelError;
use crate::codec::{MelodySequence, STEPS, VOCAB};
use crate::scalar::Scalar;

/// ELBO terms, all averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction_nll: f64,
    pub kl_divergence: f64,
    pub beta_in_effect: f64,
}

/// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)`, averaged over rows.
pub(crate) fn kl_mean<T: Scalar>(mu: &[T], logvar: &[T], batch: usize) -> T {
    let s: T = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| lv.exp() + m * m - T::one() - lv)
        .sum();
    T::of(0.5) * s / T::of(batch as f64)
}

/// Free-bits hinge: the KL is only penalised above `free_bits * latent`.
pub(crate) fn kl_penalty_active(kl: f64, free_bits: f64, latent: usize) -> bool {
    kl > free_bits * latent as f64
}

/// Cross-entropy of one logit row against `target`; writes
/// `scale * (softmax - onehot)` into `grad` when given.
pub(crate) fn row_xent<T: Scalar>(row: &[T], target: usize, grad: Option<(&mut [T], T)>) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    if let Some((g, scale)) = grad {
        for (i, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - log_z).exp();
            *gv = scale * (if i == target { p - T::one() } else { p });
        }
    }
    log_z - row[target]
}

/// ELBO with free bits: `nll + beta * max(kl - free_bits * Z, 0)`.
///
/// `logits` is `batch x 32 x 90`; `mu` and `logvar` are `batch x Z`.
pub fn elbo_loss<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[MelodySequence],
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    beta: f64,
    free_bits: f64,
) -> Result<LossBreakdown, ModelError> {
    let batch = targets.len();
    if batch == 0 {
        return Err(ModelError::EmptyDataset);
    }
    if logits.shape() != [batch, STEPS, VOCAB] || mu.shape() != logvar.shape() || mu.rows() != batch {
        return Err(ModelError::ShapeMismatch("elbo_loss inputs disagree".into()));
    }
    let mut nll = T::zero();
    for (b, seq) in targets.iter().enumerate() {
        for (k, &tok) in seq.tokens.iter().enumerate() {
            let o = (b * STEPS + k) * VOCAB;
            nll += row_xent(&logits.values()[o..o + VOCAB], tok as usize, None);
        }
    }
    let nll = nll.as_f64() / batch as f64;
    let kl = kl_mean(mu.values(), logvar.values(), batch).as_f64();
    let latent = mu.cols();
    let hinge = (kl - free_bits * latent as f64).max(0.0);
    Ok(LossBreakdown { total: nll + beta * hinge, reconstruction_nll: nll, kl_divergence: kl, beta_in_effect: beta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(b: usize) -> Vec<MelodySequence> {
        (0..b).map(|i| MelodySequence::new([(i % 90) as u8; STEPS], "")).collect()
    }

    #[test]
    fn kl_identities() {
        let z = 6;
        let zeros = Tensor::<f64>::zeros(&[2, z]);
        let logits = Tensor::<f64>::zeros(&[2, STEPS, VOCAB]);
        let l = elbo_loss(&logits, &seqs(2), &zeros, &zeros, 1.0, 0.0).unwrap();
        assert!(l.kl_divergence.abs() < 1e-9);
        let ones = Tensor::from_vec(&[2, z], vec![1.0; 2 * z]).unwrap();
        let l = elbo_loss(&logits, &seqs(2), &ones, &zeros, 1.0, 0.0).unwrap();
        assert!((l.kl_divergence - 0.5 * z as f64).abs() < 1e-9);
    }

    #[test]
    fn uniform_logits_nll() {
        let logits = Tensor::<f64>::zeros(&[3, STEPS, VOCAB]);
        let zeros = Tensor::<f64>::zeros(&[3, 2]);
        let l = elbo_loss(&logits, &seqs(3), &zeros, &zeros, 0.2, 0.125).unwrap();
        assert!((l.reconstruction_nll - 32.0 * 90f64.ln()).abs() < 1e-9);
        assert_eq!(l.total, l.reconstruction_nll);
    }

    #[test]
    fn free_bits_hinge() {
        let logits = Tensor::<f64>::zeros(&[1, STEPS, VOCAB]);
        let mu = Tensor::from_vec(&[1, 4], vec![1.0; 4]).unwrap(); // kl = 2
        let lv = Tensor::<f64>::zeros(&[1, 4]);
        let base = 32.0 * 90f64.ln();
        let l = elbo_loss(&logits, &seqs(1), &mu, &lv, 0.5, 0.25).unwrap();
        assert!((l.total - (base + 0.5 * (2.0 - 1.0))).abs() < 1e-9);
        let l = elbo_loss(&logits, &seqs(1), &mu, &lv, 0.5, 0.75).unwrap();
        assert!((l.total - base).abs() < 1e-9);
    }

    #[test]
    fn xent_gradient_is_softmax_minus_onehot() {
        let row = [0.0f64; VOCAB];
        let mut g = [0.0; VOCAB];
        let nll = row_xent(&row, 3, Some((&mut g, 1.0)));
        assert!((nll - 90f64.ln()).abs() < 1e-12);
        assert!((g[3] - (1.0 / 90.0 - 1.0)).abs() < 1e-15);
        assert!((g[0] - 1.0 / 90.0).abs() < 1e-15);
    }
}
