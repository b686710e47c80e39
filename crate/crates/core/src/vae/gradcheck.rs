//! Finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::RngCore;
use serde::Serialize;

use super::loss::{kl_mean, row_xent};
use super::network::{forward, Tokens};
use super::params::ModelParams;
use super::train::loss_and_grad;
use super::ModelError;
use crate::codec::{MelodySequence, STEPS, VOCAB};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub coordinates: usize,
    pub seed: u64,
    /// KL weight used for the checked loss.
    pub beta: f64,
    pub free_bits: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, coordinates: 200, seed: 0, beta: 1.0, free_bits: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// Tensor name, flat index, analytic and numeric value at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Gradient magnitudes below this are compared absolutely.
const DENOM_FLOOR: f64 = 1e-3;

fn deterministic_loss(p: &ModelParams<f64>, seqs: &[&Tokens], beta: f64, free_bits: f64) -> f64 {
    let f = forward::<f64, ChaCha8Rng>(p, seqs, None);
    let batch = seqs.len();
    let mut nll = 0.0;
    for k in 0..STEPS {
        for (b, s) in seqs.iter().enumerate() {
            let o = (k * batch + b) * VOCAB;
            nll += row_xent(&f.dec.logits[o..o + VOCAB], s[k] as usize, None);
        }
    }
    let kl = kl_mean(&f.enc.mu, &f.enc.logvar, batch);
    nll / batch as f64 + beta * (kl - free_bits * p.dims.latent as f64).max(0.0)
}

/// Compares analytic gradients of the deterministic (`z = mu`) ELBO with
/// central differences on randomly chosen coordinates. The relative error
/// is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn gradient_check(
    params: &ModelParams<f64>,
    batch: &[MelodySequence],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    params.validate()?;
    let seqs: Vec<&Tokens> = batch.iter().map(|s| &s.tokens).collect();
    let mut grads = ModelParams::zeros(params.dims);
    loss_and_grad::<f64, dyn RngCore>(params, &seqs, opts.beta, opts.free_bits, None, None, &mut grads, false);

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, coordinates_checked: 0, worst: None };
    for _ in 0..opts.coordinates {
        let mut flat = rng.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let orig = params.tensors()[ti].values()[flat];
        probe.tensors_mut()[ti].values_mut()[flat] = orig + opts.epsilon;
        let up = deterministic_loss(&probe, &seqs, opts.beta, opts.free_bits);
        probe.tensors_mut()[ti].values_mut()[flat] = orig - opts.epsilon;
        let down = deterministic_loss(&probe, &seqs, opts.beta, opts.free_bits);
        probe.tensors_mut()[ti].values_mut()[flat] = orig;

        let numeric = (up - down) / (2.0 * opts.epsilon);
        let analytic = grads.tensors()[ti].values()[flat];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        report.coordinates_checked += 1;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((super::params::TENSOR_NAMES[ti].to_string(), flat, analytic, numeric));
        }
    }
    Ok(report)
}
