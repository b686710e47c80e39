use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{kl_mean, kl_penalty_active, row_xent, LossBreakdown};
use super::network::{argmax, backward, decoder_pass, encoder_pass, forward, softmax, LatentGrads, Tokens};
use super::params::{ModelParams, Tensor, TrainMask};
use super::ModelError;
use crate::codec::{MelodySequence, STEPS, VOCAB};
use crate::scalar::Scalar;

/// Chunk size for evaluation passes. Fixed so every accuracy path performs
/// identical arithmetic.
pub const EVAL_CHUNK: usize = 128;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Minimum accuracy gain that resets early-stopping patience.
pub const EARLY_STOP_MIN_DELTA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Final KL weight.
    pub beta_max: f64,
    /// Epochs over which the KL weight ramps linearly from 0 to `beta_max`.
    pub beta_warmup_epochs: usize,
    /// KL allowance per latent dimension, in nats.
    pub free_bits: f64,
    pub early_stop_patience: usize,
    /// Global gradient-norm ceiling per batch; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 64,
            max_epochs: 60,
            beta_max: 0.2,
            beta_warmup_epochs: 50,
            free_bits: 0.125,
            early_stop_patience: 8,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("learning_rate {}", self.learning_rate)));
        }
        if !(self.beta_max >= 0.0) || !(self.free_bits >= 0.0) {
            return Err(ModelError::InvalidConfig("beta_max and free_bits must be non-negative".into()));
        }
        if !(self.grad_clip_norm >= 0.0) {
            return Err(ModelError::InvalidConfig(format!("grad_clip_norm {}", self.grad_clip_norm)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn beta_at(&self, epoch: usize) -> f64 {
        if self.beta_warmup_epochs == 0 {
            self.beta_max
        } else {
            self.beta_max * (epoch as f64 / self.beta_warmup_epochs as f64).min(1.0)
        }
    }
}

/// Soft-target distillation from a frozen teacher.
#[derive(Debug, Clone, Copy)]
pub struct Distillation<'a, T> {
    pub teacher: &'a ModelParams<T>,
    /// Weight of the distillation term.
    pub weight: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// Train accuracy of the returned parameters.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e].train_accuracy)
    }
}

/// Loss of one batch plus accumulated gradients (into `grads`, which the
/// caller zeroes). `rng` selects the sampled-latent path; `None` uses `z = mu`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_and_grad<T: Scalar, R: Rng + ?Sized>(
    p: &ModelParams<T>,
    seqs: &[&Tokens],
    beta: f64,
    free_bits: f64,
    rng: Option<&mut R>,
    distill: Option<&Distillation<'_, T>>,
    grads: &mut ModelParams<T>,
    output_head_only: bool,
) -> LossBreakdown {
    let batch = seqs.len();
    let f = forward(p, seqs, rng);
    let scale = T::one() / T::of(batch as f64);
    let mut dlogits = vec![T::zero(); f.dec.logits.len()];
    let mut nll = T::zero();
    for k in 0..STEPS {
        for (b, seq) in seqs.iter().enumerate() {
            let o = (k * batch + b) * VOCAB;
            nll += row_xent(&f.dec.logits[o..o + VOCAB], seq[k] as usize, Some((&mut dlogits[o..o + VOCAB], scale)));
        }
    }
    let mut nll = nll.as_f64() / batch as f64;

    if let Some(d) = distill {
        let teacher = encoder_pass(d.teacher, seqs);
        let t_logits = decoder_pass(d.teacher, &teacher.mu, seqs).logits;
        let temp = T::of(d.temperature);
        let w = d.weight * d.temperature * d.temperature;
        let gscale = T::of(d.weight * d.temperature) * scale;
        let mut kl_sum = 0.0;
        for (o, (s_row, t_row)) in f.dec.logits.chunks_exact(VOCAB).zip(t_logits.chunks_exact(VOCAB)).enumerate() {
            let ps = softmax(s_row, temp);
            let pt = softmax(t_row, temp);
            for i in 0..VOCAB {
                let (q, p_t) = (ps[i], pt[i]);
                if p_t > T::zero() {
                    kl_sum += (p_t * (p_t.ln() - q.ln())).as_f64();
                }
                dlogits[o * VOCAB + i] += gscale * (q - p_t);
            }
        }
        nll += w * kl_sum / batch as f64;
    }

    let kl = kl_mean(&f.enc.mu, &f.enc.logvar, batch).as_f64();
    let latent = p.dims.latent;
    let active = beta > 0.0 && kl_penalty_active(kl, free_bits, latent);
    let kl_grads = active.then(|| {
        let c = T::of(beta) * scale;
        LatentGrads {
            dmu: f.enc.mu.iter().map(|&m| c * m).collect(),
            dlogvar: f.enc.logvar.iter().map(|&lv| c * T::of(0.5) * (lv.exp() - T::one())).collect(),
        }
    });
    backward(p, &f, seqs, &dlogits, kl_grads.as_ref(), grads, output_head_only);
    let hinge = (kl - free_bits * latent as f64).max(0.0);
    LossBreakdown { total: nll + beta * hinge, reconstruction_nll: nll, kl_divergence: kl, beta_in_effect: beta }
}

struct Adam<T> {
    m: ModelParams<T>,
    v: ModelParams<T>,
    step: i32,
    lr: f64,
}

impl<T: Scalar> Adam<T> {
    fn new(like: &ModelParams<T>, lr: f64) -> Self {
        Adam { m: ModelParams::zeros(like.dims), v: ModelParams::zeros(like.dims), step: 0, lr }
    }

    fn update(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, mask: &TrainMask, clip: f64) {
        self.step += 1;
        let norm = grads
            .tensors()
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.is_trainable(*i))
            .flat_map(|(_, t)| t.values())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt();
        let gscale = if clip > 0.0 && norm > clip { T::of(clip / norm) } else { T::one() };
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let (lr, eps) = (T::of(self.lr), T::of(ADAM_EPS));
        for (i, (((p, g), m), v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .enumerate()
        {
            if !mask.is_trainable(i) {
                continue;
            }
            for (((p, &g), m), v) in p.values_mut().iter_mut().zip(g.values()).zip(m.values_mut()).zip(v.values_mut()) {
                let g = g * gscale;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Trains every tensor. See [`train_with`].
pub fn train<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &[MelodySequence],
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainLog), ModelError> {
    train_with(params, dataset, cfg, &TrainMask::all(), None)
}

/// Adam on the ELBO (plus an optional distillation term), updating only the
/// tensors `mask` allows. The KL weight warms up linearly; training stops at
/// `max_epochs` or once train accuracy has not improved by more than
/// [`EARLY_STOP_MIN_DELTA`] for `early_stop_patience` epochs, returning the
/// parameters of the most accurate epoch. Deterministic per `cfg.seed`.
pub fn train_with<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &[MelodySequence],
    cfg: &TrainConfig,
    mask: &TrainMask,
    distill: Option<&Distillation<'_, T>>,
) -> Result<(ModelParams<T>, TrainLog), ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    cfg.validate()?;
    params.validate()?;
    let mut log = TrainLog::default();
    let mut p = params.clone();
    if !mask.any() {
        return Ok((p, log));
    }
    let head_only = mask.is_output_head_only();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&p, cfg.learning_rate);
    let mut grads = ModelParams::zeros(p.dims);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut kept: Option<(f64, ModelParams<T>)> = None;

    for epoch in 0..cfg.max_epochs {
        let beta = cfg.beta_at(epoch);
        order.shuffle(&mut rng);
        let (mut nll, mut kl, mut total, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&Tokens> = chunk.iter().map(|&i| &dataset[i].tokens).collect();
            grads.fill_zero();
            let l = loss_and_grad(&p, &seqs, beta, cfg.free_bits, Some(&mut rng), distill, &mut grads, head_only);
            adam.update(&mut p, &grads, mask, cfg.grad_clip_norm);
            nll += l.reconstruction_nll;
            kl += l.kl_divergence;
            total += l.total;
            batches += 1;
        }
        p.validate().map_err(|_| ModelError::Diverged { epoch })?;
        let acc = reconstruction_accuracy(&p, dataset)?;
        let n = batches as f64;
        log.epochs.push(EpochLog {
            epoch,
            loss: LossBreakdown {
                total: total / n,
                reconstruction_nll: nll / n,
                kl_divergence: kl / n,
                beta_in_effect: beta,
            },
            train_accuracy: acc,
        });
        if kept.as_ref().is_none_or(|k| acc > k.0) {
            kept = Some((acc, p.clone()));
        }
        if acc > best + EARLY_STOP_MIN_DELTA {
            best = acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = log.epochs.iter().position(|e| Some(e.train_accuracy) == kept.as_ref().map(|k| k.0));
    Ok((kept.map_or(p, |k| k.1), log))
}

/// Steps whose argmax over step-major `logits` equals the target token.
pub(crate) fn count_correct<T: Scalar>(logits: &[T], seqs: &[&Tokens]) -> usize {
    let batch = seqs.len();
    let mut correct = 0;
    for k in 0..STEPS {
        for (b, seq) in seqs.iter().enumerate() {
            let o = (k * batch + b) * VOCAB;
            if argmax(&logits[o..o + VOCAB]) == seq[k] as usize {
                correct += 1;
            }
        }
    }
    correct
}

/// Posterior means for every sequence, `n x latent`.
pub fn posterior_means<T: Scalar>(p: &ModelParams<T>, dataset: &[MelodySequence]) -> Result<Tensor<T>, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut out = Vec::with_capacity(dataset.len() * p.dims.latent);
    for chunk in dataset.chunks(EVAL_CHUNK) {
        let seqs: Vec<&Tokens> = chunk.iter().map(|s| &s.tokens).collect();
        out.extend(encoder_pass(p, &seqs).mu);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteActivation("encoder mean".into()));
    }
    Tensor::from_vec(&[dataset.len(), p.dims.latent], out)
}

/// Teacher-forced token accuracy given precomputed latents (one row per
/// sequence). Only the decoder of `p` is used.
pub fn accuracy_given_latents<T: Scalar>(
    p: &ModelParams<T>,
    dataset: &[MelodySequence],
    latents: &Tensor<T>,
) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if latents.shape() != [dataset.len(), p.dims.latent] {
        return Err(ModelError::ShapeMismatch(format!("latents {:?}", latents.shape())));
    }
    let zd = p.dims.latent;
    let mut correct = 0usize;
    for (c, chunk) in dataset.chunks(EVAL_CHUNK).enumerate() {
        let seqs: Vec<&Tokens> = chunk.iter().map(|s| &s.tokens).collect();
        let start = c * EVAL_CHUNK * zd;
        let z = &latents.values()[start..start + chunk.len() * zd];
        correct += count_correct(&decoder_pass(p, z, &seqs).logits, &seqs);
    }
    Ok(correct as f64 / (STEPS * dataset.len()) as f64)
}

/// Fraction of steps whose teacher-forced argmax prediction (with `z = mu`)
/// equals the target token.
pub fn reconstruction_accuracy<T: Scalar>(p: &ModelParams<T>, dataset: &[MelodySequence]) -> Result<f64, ModelError> {
    let latents = posterior_means(p, dataset)?;
    accuracy_given_latents(p, dataset, &latents)
}
