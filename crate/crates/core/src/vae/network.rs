//! Forward and reverse-mode passes of the recurrent VAE.
//!
//! Batched activations are row-major with the batch as the leading
//! dimension of every per-step block; per-step blocks are stacked in time
//! order, so a full trace is `steps x batch x width`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::{GruCell, ModelParams, Tensor};
use super::ModelError;
use crate::codec::{MelodySequence, STEPS, VOCAB};
use crate::scalar::{gemm, sigmoid, MatRef, Scalar};

pub const LOGVAR_MIN: f64 = -8.0;
pub const LOGVAR_MAX: f64 = 8.0;
/// Temperatures at or below this decode greedily.
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

pub(crate) type Tokens = [u8; STEPS];

fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize, col0: usize, ncols: usize) -> Vec<T> {
    // rows x [col0, col0 + ncols) of a rows x cols matrix, transposed
    let mut out = vec![T::zero(); ncols * rows];
    for r in 0..rows {
        for c in 0..ncols {
            out[c * rows + r] = m[r * cols + col0 + c];
        }
    }
    out
}

fn broadcast_rows<T: Scalar>(dst: &mut [T], row: &[T]) {
    for chunk in dst.chunks_exact_mut(row.len()) {
        chunk.copy_from_slice(row);
    }
}

fn add_col_sums<T: Scalar>(dst: &mut [T], m: &[T]) {
    for chunk in m.chunks_exact(dst.len()) {
        for (d, v) in dst.iter_mut().zip(chunk) {
            *d += *v;
        }
    }
}

/// Activations of one recurrent pass.
#[derive(Debug, Clone)]
pub(crate) struct GruTrace<T> {
    pub batch: usize,
    pub hidden: usize,
    pub steps: usize,
    /// `(steps + 1) x batch x hidden`; block 0 is the initial state.
    pub hs: Vec<T>,
    r: Vec<T>,
    u: Vec<T>,
    n: Vec<T>,
    /// Recurrent candidate pre-activation `W_hn h + b_hn`.
    ghn: Vec<T>,
}

impl<T: Scalar> GruTrace<T> {
    fn new(steps: usize, batch: usize, hidden: usize, h0: Option<&[T]>) -> Self {
        let block = batch * hidden;
        let mut hs = vec![T::zero(); (steps + 1) * block];
        if let Some(h0) = h0 {
            hs[..block].copy_from_slice(h0);
        }
        GruTrace {
            batch,
            hidden,
            steps,
            hs,
            r: vec![T::zero(); steps * block],
            u: vec![T::zero(); steps * block],
            n: vec![T::zero(); steps * block],
            ghn: vec![T::zero(); steps * block],
        }
    }

    /// State after `k` steps.
    pub fn h(&self, k: usize) -> &[T] {
        let block = self.batch * self.hidden;
        &self.hs[k * block..(k + 1) * block]
    }

    /// States after steps `1..=steps`, stacked.
    pub fn outputs(&self) -> &[T] {
        &self.hs[self.batch * self.hidden..]
    }
}

/// One cell update. `gi` already holds the input projection plus `b_ih`.
#[allow(clippy::too_many_arguments)]
fn gru_step<T: Scalar>(
    cell: &GruCell<T>,
    hidden: usize,
    gi: &[T],
    h_prev: &[T],
    gh: &mut [T],
    r: &mut [T],
    u: &mut [T],
    n: &mut [T],
    ghn: &mut [T],
    h_next: &mut [T],
) {
    let batch = h_prev.len() / hidden;
    let g3 = 3 * hidden;
    broadcast_rows(gh, cell.b_hh.values());
    gemm(T::one(), MatRef::new(h_prev, batch, hidden), MatRef::new(cell.w_hh.values(), g3, hidden).t(), T::one(), gh);
    for b in 0..batch {
        let gi = &gi[b * g3..(b + 1) * g3];
        let gh = &gh[b * g3..(b + 1) * g3];
        for j in 0..hidden {
            let idx = b * hidden + j;
            let rr = sigmoid(gi[j] + gh[j]);
            let uu = sigmoid(gi[hidden + j] + gh[hidden + j]);
            let hn = gh[2 * hidden + j];
            let nn = (gi[2 * hidden + j] + rr * hn).tanh();
            r[idx] = rr;
            u[idx] = uu;
            n[idx] = nn;
            ghn[idx] = hn;
            h_next[idx] = (T::one() - uu) * nn + uu * h_prev[idx];
        }
    }
}

/// Runs a cell over `trace.steps` steps; `input(k, gi)` must fill the
/// `batch x 3H` input projection (including `b_ih`) for step `k`.
fn run_gru<T: Scalar>(cell: &GruCell<T>, trace: &mut GruTrace<T>, mut input: impl FnMut(usize, &mut [T])) {
    let (batch, hidden) = (trace.batch, trace.hidden);
    let block = batch * hidden;
    let mut gi = vec![T::zero(); batch * 3 * hidden];
    let mut gh = vec![T::zero(); batch * 3 * hidden];
    for k in 0..trace.steps {
        input(k, &mut gi);
        let (prev, next) = trace.hs.split_at_mut((k + 1) * block);
        let s = k * block..(k + 1) * block;
        gru_step(
            cell,
            hidden,
            &gi,
            &prev[k * block..],
            &mut gh,
            &mut trace.r[s.clone()],
            &mut trace.u[s.clone()],
            &mut trace.n[s.clone()],
            &mut trace.ghn[s],
            &mut next[..block],
        );
    }
}

/// Backpropagation through time. `dh_out` (optional, same layout as
/// [`GruTrace::outputs`]) holds loss gradients w.r.t. every emitted state,
/// `dh_final` the gradient w.r.t. the last state. `on_dgi(k, dgi)` receives
/// the gradient of the step-`k` input projection. Accumulates into
/// `w_hh`, `b_ih`, `b_hh` and returns the gradient w.r.t. the initial state.
#[allow(clippy::too_many_arguments)]
fn backprop_gru<T: Scalar>(
    cell: &GruCell<T>,
    trace: &GruTrace<T>,
    dh_out: Option<&[T]>,
    dh_final: Option<&[T]>,
    d_w_hh: &mut Tensor<T>,
    d_b_ih: &mut Tensor<T>,
    d_b_hh: &mut Tensor<T>,
    mut on_dgi: impl FnMut(usize, &[T]),
) -> Vec<T> {
    let (batch, hidden, steps) = (trace.batch, trace.hidden, trace.steps);
    let g3 = 3 * hidden;
    let block = batch * hidden;
    let mut carry = match dh_final {
        Some(d) => d.to_vec(),
        None => vec![T::zero(); block],
    };
    let mut dgh_all = vec![T::zero(); steps * batch * g3];
    let mut dgi = vec![T::zero(); batch * g3];
    let mut dh = vec![T::zero(); block];
    for k in (0..steps).rev() {
        dh.copy_from_slice(&carry);
        if let Some(d) = dh_out {
            for (a, b) in dh.iter_mut().zip(&d[k * block..(k + 1) * block]) {
                *a += *b;
            }
        }
        let h_prev = trace.h(k);
        let s = k * block;
        let dgh = &mut dgh_all[k * batch * g3..(k + 1) * batch * g3];
        for b in 0..batch {
            for j in 0..hidden {
                let idx = b * hidden + j;
                let (r, u, n, hn) = (trace.r[s + idx], trace.u[s + idx], trace.n[s + idx], trace.ghn[s + idx]);
                let d = dh[idx];
                let dn_pre = d * (T::one() - u) * (T::one() - n * n);
                let du_pre = d * (h_prev[idx] - n) * u * (T::one() - u);
                let dr_pre = dn_pre * hn * r * (T::one() - r);
                let o = b * g3;
                dgi[o + j] = dr_pre;
                dgi[o + hidden + j] = du_pre;
                dgi[o + 2 * hidden + j] = dn_pre;
                dgh[o + j] = dr_pre;
                dgh[o + hidden + j] = du_pre;
                dgh[o + 2 * hidden + j] = dn_pre * r;
                carry[idx] = d * u;
            }
        }
        gemm(T::one(), MatRef::new(dgh, batch, g3), MatRef::new(cell.w_hh.values(), g3, hidden), T::one(), &mut carry);
        add_col_sums(d_b_ih.values_mut(), &dgi);
        on_dgi(k, &dgi);
    }
    gemm(
        T::one(),
        MatRef::new(&dgh_all, steps * batch, g3).t(),
        MatRef::new(&trace.hs[..steps * block], steps * batch, hidden),
        T::one(),
        d_w_hh.values_mut(),
    );
    add_col_sums(d_b_hh.values_mut(), &dgh_all);
    carry
}

/// Encoder activations for a batch.
#[derive(Debug, Clone)]
pub(crate) struct EncoderPass<T> {
    fwd: GruTrace<T>,
    bwd: GruTrace<T>,
    /// `batch x 2H`: final forward state, then final backward state.
    hcat: Vec<T>,
    pub mu: Vec<T>,
    logvar_raw: Vec<T>,
    pub logvar: Vec<T>,
}

fn encode_direction<T: Scalar>(cell: &GruCell<T>, seqs: &[&Tokens], hidden: usize, reverse: bool) -> GruTrace<T> {
    let g3 = 3 * hidden;
    let emb = transpose(cell.w_ih.values(), g3, VOCAB, 0, VOCAB);
    let mut trace = GruTrace::new(STEPS, seqs.len(), hidden, None);
    run_gru(cell, &mut trace, |k, gi| {
        let pos = if reverse { STEPS - 1 - k } else { k };
        for (b, seq) in seqs.iter().enumerate() {
            let row = &mut gi[b * g3..(b + 1) * g3];
            let tok = seq[pos] as usize;
            for ((g, e), bias) in row.iter_mut().zip(&emb[tok * g3..(tok + 1) * g3]).zip(cell.b_ih.values()) {
                *g = *e + *bias;
            }
        }
    });
    trace
}

pub(crate) fn encoder_pass<T: Scalar>(p: &ModelParams<T>, seqs: &[&Tokens]) -> EncoderPass<T> {
    let (h, z) = (p.dims.hidden, p.dims.latent);
    let batch = seqs.len();
    let fwd = encode_direction(&p.enc_fwd_rnn, seqs, h, false);
    let bwd = encode_direction(&p.enc_bwd_rnn, seqs, h, true);
    let mut hcat = vec![T::zero(); batch * 2 * h];
    for b in 0..batch {
        hcat[b * 2 * h..b * 2 * h + h].copy_from_slice(&fwd.h(STEPS)[b * h..(b + 1) * h]);
        hcat[b * 2 * h + h..(b + 1) * 2 * h].copy_from_slice(&bwd.h(STEPS)[b * h..(b + 1) * h]);
    }
    let affine = |lin: &super::params::Linear<T>| {
        let mut out = vec![T::zero(); batch * z];
        broadcast_rows(&mut out, lin.b.values());
        gemm(T::one(), MatRef::new(&hcat, batch, 2 * h), MatRef::new(lin.w.values(), z, 2 * h).t(), T::one(), &mut out);
        out
    };
    let mu = affine(&p.enc_mu);
    let logvar_raw = affine(&p.enc_logvar);
    let (lo, hi) = (T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
    let logvar = logvar_raw.iter().map(|&v| v.max(lo).min(hi)).collect();
    EncoderPass { fwd, bwd, hcat, mu, logvar_raw, logvar }
}

/// Decoder activations for a batch under teacher forcing.
#[derive(Debug, Clone)]
pub(crate) struct DecoderPass<T> {
    pub trace: GruTrace<T>,
    /// `steps x batch x VOCAB`.
    pub logits: Vec<T>,
}

fn decoder_input_base<T: Scalar>(p: &ModelParams<T>, z: &[T], batch: usize) -> Vec<T> {
    let (h, zd) = (p.dims.hidden, p.dims.latent);
    let g3 = 3 * h;
    let mut base = vec![T::zero(); batch * g3];
    broadcast_rows(&mut base, p.dec_rnn.b_ih.values());
    gemm(
        T::one(),
        MatRef::new(z, batch, zd),
        MatRef::cols_of(p.dec_rnn.w_ih.values(), g3, VOCAB + zd, VOCAB, zd).t(),
        T::one(),
        &mut base,
    );
    base
}

fn decoder_initial_state<T: Scalar>(p: &ModelParams<T>, z: &[T], batch: usize) -> Vec<T> {
    let (h, zd) = (p.dims.hidden, p.dims.latent);
    let mut h0 = vec![T::zero(); batch * h];
    broadcast_rows(&mut h0, p.dec_init.b.values());
    gemm(T::one(), MatRef::new(z, batch, zd), MatRef::new(p.dec_init.w.values(), h, zd).t(), T::one(), &mut h0);
    h0.iter_mut().for_each(|v| *v = v.tanh());
    h0
}

pub(crate) fn decoder_pass<T: Scalar>(p: &ModelParams<T>, z: &[T], seqs: &[&Tokens]) -> DecoderPass<T> {
    let h = p.dims.hidden;
    let zd = p.dims.latent;
    let g3 = 3 * h;
    let batch = seqs.len();
    let base = decoder_input_base(p, z, batch);
    let emb = transpose(p.dec_rnn.w_ih.values(), g3, VOCAB + zd, 0, VOCAB);
    let h0 = decoder_initial_state(p, z, batch);
    let mut trace = GruTrace::new(STEPS, batch, h, Some(&h0));
    run_gru(&p.dec_rnn, &mut trace, |k, gi| {
        gi.copy_from_slice(&base);
        if k > 0 {
            for (b, seq) in seqs.iter().enumerate() {
                let tok = seq[k - 1] as usize;
                for (g, e) in gi[b * g3..(b + 1) * g3].iter_mut().zip(&emb[tok * g3..(tok + 1) * g3]) {
                    *g += *e;
                }
            }
        }
    });
    let logits = project_outputs(p, trace.outputs());
    DecoderPass { trace, logits }
}

/// Output head applied to stacked decoder states (`rows x hidden`).
pub(crate) fn project_outputs<T: Scalar>(p: &ModelParams<T>, states: &[T]) -> Vec<T> {
    let h = p.dims.hidden;
    let rows = states.len() / h;
    let mut logits = vec![T::zero(); rows * VOCAB];
    broadcast_rows(&mut logits, p.dec_out.b.values());
    gemm(T::one(), MatRef::new(states, rows, h), MatRef::new(p.dec_out.w.values(), VOCAB, h).t(), T::one(), &mut logits);
    logits
}

/// Full teacher-forced pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward<T> {
    pub enc: EncoderPass<T>,
    pub z: Vec<T>,
    /// Standard-normal noise when `z` was sampled.
    pub eps: Option<Vec<T>>,
    pub dec: DecoderPass<T>,
}

pub(crate) fn forward<T: Scalar, R: Rng + ?Sized>(
    p: &ModelParams<T>,
    seqs: &[&Tokens],
    rng: Option<&mut R>,
) -> Forward<T> {
    let enc = encoder_pass(p, seqs);
    let (z, eps) = match rng {
        None => (enc.mu.clone(), None),
        Some(rng) => {
            let eps: Vec<T> = (0..enc.mu.len()).map(|_| T::of(StandardNormal.sample(rng))).collect();
            let z = enc
                .mu
                .iter()
                .zip(&enc.logvar)
                .zip(&eps)
                .map(|((&m, &lv), &e)| m + (T::of(0.5) * lv).exp() * e)
                .collect();
            (z, Some(eps))
        }
    };
    let dec = decoder_pass(p, &z, seqs);
    Forward { enc, z, eps, dec }
}

/// Gradients of the loss w.r.t. the latent statistics coming from the KL term.
pub(crate) struct LatentGrads<T> {
    pub dmu: Vec<T>,
    pub dlogvar: Vec<T>,
}

/// Reverse pass. `dlogits` matches [`DecoderPass::logits`]. When
/// `output_head_only` is set, only `dec_out` gradients are produced.
pub(crate) fn backward<T: Scalar>(
    p: &ModelParams<T>,
    f: &Forward<T>,
    seqs: &[&Tokens],
    dlogits: &[T],
    kl: Option<&LatentGrads<T>>,
    grads: &mut ModelParams<T>,
    output_head_only: bool,
) {
    let (h, zd) = (p.dims.hidden, p.dims.latent);
    let g3 = 3 * h;
    let batch = seqs.len();
    let rows = STEPS * batch;
    let dec_states = f.dec.trace.outputs();

    gemm(T::one(), MatRef::new(dlogits, rows, VOCAB).t(), MatRef::new(dec_states, rows, h), T::one(), grads.dec_out.w.values_mut());
    add_col_sums(grads.dec_out.b.values_mut(), dlogits);
    if output_head_only {
        return;
    }

    let mut dhs = vec![T::zero(); rows * h];
    gemm(T::one(), MatRef::new(dlogits, rows, VOCAB), MatRef::new(p.dec_out.w.values(), VOCAB, h), T::zero(), &mut dhs);

    // decoder recurrence
    let mut sum_dgi = vec![T::zero(); batch * g3];
    let in_width = VOCAB + zd;
    let dh0 = {
        let GruCell { w_ih, w_hh, b_ih, b_hh } = &mut grads.dec_rnn;
        let w_ih = w_ih.values_mut();
        backprop_gru(&p.dec_rnn, &f.dec.trace, Some(&dhs), None, w_hh, b_ih, b_hh, |k, dgi| {
            for (s, d) in sum_dgi.iter_mut().zip(dgi) {
                *s += *d;
            }
            if k > 0 {
                for (b, seq) in seqs.iter().enumerate() {
                    let tok = seq[k - 1] as usize;
                    for (g, d) in dgi[b * g3..(b + 1) * g3].iter().enumerate() {
                        w_ih[g * in_width + tok] += *d;
                    }
                }
            }
        })
    };
    let mut dw_z = vec![T::zero(); g3 * zd];
    gemm(T::one(), MatRef::new(&sum_dgi, batch, g3).t(), MatRef::new(&f.z, batch, zd), T::zero(), &mut dw_z);
    {
        let w = grads.dec_rnn.w_ih.values_mut();
        for g in 0..g3 {
            for c in 0..zd {
                w[g * in_width + VOCAB + c] += dw_z[g * zd + c];
            }
        }
    }
    let mut dz = vec![T::zero(); batch * zd];
    gemm(
        T::one(),
        MatRef::new(&sum_dgi, batch, g3),
        MatRef::cols_of(p.dec_rnn.w_ih.values(), g3, in_width, VOCAB, zd),
        T::zero(),
        &mut dz,
    );

    // initial state
    let h0 = f.dec.trace.h(0);
    let dpre: Vec<T> = dh0.iter().zip(h0).map(|(&d, &hv)| d * (T::one() - hv * hv)).collect();
    gemm(T::one(), MatRef::new(&dpre, batch, h).t(), MatRef::new(&f.z, batch, zd), T::one(), grads.dec_init.w.values_mut());
    add_col_sums(grads.dec_init.b.values_mut(), &dpre);
    gemm(T::one(), MatRef::new(&dpre, batch, h), MatRef::new(p.dec_init.w.values(), h, zd), T::one(), &mut dz);

    // latent
    let mut dmu = dz.clone();
    let mut dlv = vec![T::zero(); batch * zd];
    if let Some(eps) = &f.eps {
        for i in 0..dlv.len() {
            dlv[i] = dz[i] * eps[i] * T::of(0.5) * (T::of(0.5) * f.enc.logvar[i]).exp();
        }
    }
    if let Some(kl) = kl {
        for i in 0..dmu.len() {
            dmu[i] += kl.dmu[i];
            dlv[i] += kl.dlogvar[i];
        }
    }
    let (lo, hi) = (T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
    for (d, &raw) in dlv.iter_mut().zip(&f.enc.logvar_raw) {
        if raw < lo || raw > hi {
            *d = T::zero();
        }
    }

    // encoder heads
    let h2 = 2 * h;
    gemm(T::one(), MatRef::new(&dmu, batch, zd).t(), MatRef::new(&f.enc.hcat, batch, h2), T::one(), grads.enc_mu.w.values_mut());
    add_col_sums(grads.enc_mu.b.values_mut(), &dmu);
    gemm(T::one(), MatRef::new(&dlv, batch, zd).t(), MatRef::new(&f.enc.hcat, batch, h2), T::one(), grads.enc_logvar.w.values_mut());
    add_col_sums(grads.enc_logvar.b.values_mut(), &dlv);
    let mut dhcat = vec![T::zero(); batch * h2];
    gemm(T::one(), MatRef::new(&dmu, batch, zd), MatRef::new(p.enc_mu.w.values(), zd, h2), T::zero(), &mut dhcat);
    gemm(T::one(), MatRef::new(&dlv, batch, zd), MatRef::new(p.enc_logvar.w.values(), zd, h2), T::one(), &mut dhcat);
    let mut dh_f = vec![T::zero(); batch * h];
    let mut dh_b = vec![T::zero(); batch * h];
    for b in 0..batch {
        dh_f[b * h..(b + 1) * h].copy_from_slice(&dhcat[b * h2..b * h2 + h]);
        dh_b[b * h..(b + 1) * h].copy_from_slice(&dhcat[b * h2 + h..(b + 1) * h2]);
    }

    for (cell, grad, trace, dh, reverse) in [
        (&p.enc_fwd_rnn, &mut grads.enc_fwd_rnn, &f.enc.fwd, dh_f, false),
        (&p.enc_bwd_rnn, &mut grads.enc_bwd_rnn, &f.enc.bwd, dh_b, true),
    ] {
        let GruCell { w_ih, w_hh, b_ih, b_hh } = grad;
        let w_ih = w_ih.values_mut();
        backprop_gru(cell, trace, None, Some(&dh), w_hh, b_ih, b_hh, |k, dgi| {
            let pos = if reverse { STEPS - 1 - k } else { k };
            for (b, seq) in seqs.iter().enumerate() {
                let tok = seq[pos] as usize;
                for (g, d) in dgi[b * g3..(b + 1) * g3].iter().enumerate() {
                    w_ih[g * VOCAB + tok] += *d;
                }
            }
        });
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `row / temperature`.
pub fn softmax<T: Scalar>(row: &[T], temperature: T) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = row.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn tokens_of(seqs: &[MelodySequence]) -> Vec<&Tokens> {
    seqs.iter().map(|s| &s.tokens).collect()
}

fn check_finite<T: Scalar>(what: &str, values: &[T]) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteActivation(what.to_string()))
    }
}

/// Posterior statistics `(mu, logvar)`, each `batch x latent`. The
/// log-variance is clamped to `[-8, 8]`.
pub fn encode<T: Scalar>(p: &ModelParams<T>, batch: &[MelodySequence]) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let enc = encoder_pass(p, &tokens_of(batch));
    check_finite("encoder mean", &enc.mu)?;
    check_finite("encoder log-variance", &enc.logvar)?;
    let shape = [batch.len(), p.dims.latent];
    Ok((Tensor::from_vec(&shape, enc.mu)?, Tensor::from_vec(&shape, enc.logvar)?))
}

/// `z = mu + exp(logvar / 2) * eps`, or `z = mu` when `deterministic`.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    rng: &mut R,
    deterministic: bool,
) -> Tensor<T> {
    assert_eq!(mu.shape(), logvar.shape());
    if deterministic {
        return mu.clone();
    }
    let values = mu
        .values()
        .iter()
        .zip(logvar.values())
        .map(|(&m, &lv)| m + (T::of(0.5) * lv).exp() * T::of(StandardNormal.sample(rng)))
        .collect();
    Tensor::from_vec(mu.shape(), values).expect("same shape as mu")
}

/// Teacher-forced logits, `batch x 32 x 90`.
pub fn decode_teacher_forced<T: Scalar>(
    p: &ModelParams<T>,
    z: &Tensor<T>,
    targets: &[MelodySequence],
) -> Result<Tensor<T>, ModelError> {
    let batch = targets.len();
    if batch == 0 {
        return Err(ModelError::EmptyDataset);
    }
    if z.shape() != [batch, p.dims.latent] {
        return Err(ModelError::ShapeMismatch(format!("z has shape {:?}", z.shape())));
    }
    let dec = decoder_pass(p, z.values(), &tokens_of(targets));
    check_finite("decoder logits", &dec.logits)?;
    Tensor::from_vec(&[batch, STEPS, VOCAB], step_major_to_batch_major(&dec.logits, batch))
}

pub(crate) fn step_major_to_batch_major<T: Scalar>(logits: &[T], batch: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for k in 0..STEPS {
        for b in 0..batch {
            let src = (k * batch + b) * VOCAB;
            let dst = (b * STEPS + k) * VOCAB;
            out[dst..dst + VOCAB].copy_from_slice(&logits[src..src + VOCAB]);
        }
    }
    out
}

/// Free-running generation from a single latent vector; every step samples
/// from `softmax(logits / temperature)` and feeds the token back.
pub fn decode_sample<T: Scalar, R: Rng + ?Sized>(
    p: &ModelParams<T>,
    z: &[T],
    rng: &mut R,
    temperature: f64,
) -> Result<MelodySequence, ModelError> {
    let (h, zd) = (p.dims.hidden, p.dims.latent);
    if z.len() != zd {
        return Err(ModelError::ShapeMismatch(format!("latent of length {}", z.len())));
    }
    if !(temperature > 0.0) {
        return Err(ModelError::InvalidConfig(format!("temperature {temperature}")));
    }
    let g3 = 3 * h;
    let base = decoder_input_base(p, z, 1);
    let emb = transpose(p.dec_rnn.w_ih.values(), g3, VOCAB + zd, 0, VOCAB);
    let mut h_prev = decoder_initial_state(p, z, 1);
    let mut h_next = vec![T::zero(); h];
    let (mut r, mut u, mut n, mut ghn) = (vec![T::zero(); h], vec![T::zero(); h], vec![T::zero(); h], vec![T::zero(); h]);
    let mut gi = vec![T::zero(); g3];
    let mut gh = vec![T::zero(); g3];
    let mut logits = vec![T::zero(); VOCAB];
    let mut tokens = [0u8; STEPS];
    let mut prev: Option<usize> = None;
    for slot in tokens.iter_mut() {
        gi.copy_from_slice(&base);
        if let Some(tok) = prev {
            for (g, e) in gi.iter_mut().zip(&emb[tok * g3..(tok + 1) * g3]) {
                *g += *e;
            }
        }
        gru_step(&p.dec_rnn, h, &gi, &h_prev, &mut gh, &mut r, &mut u, &mut n, &mut ghn, &mut h_next);
        std::mem::swap(&mut h_prev, &mut h_next);
        logits.copy_from_slice(p.dec_out.b.values());
        gemm(T::one(), MatRef::new(&h_prev, 1, h), MatRef::new(p.dec_out.w.values(), VOCAB, h).t(), T::one(), &mut logits);
        check_finite("decoder logits", &logits)?;
        let tok = if temperature <= ARGMAX_TEMPERATURE {
            argmax(&logits)
        } else {
            let probs = softmax(&logits, T::of(temperature));
            let x: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = VOCAB - 1;
            for (i, pr) in probs.iter().enumerate() {
                acc += pr.as_f64();
                if x < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        *slot = tok as u8;
        prev = Some(tok);
    }
    Ok(MelodySequence::new(tokens, "sample"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::params::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seqs(n: usize, seed: u64) -> Vec<MelodySequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut t = [1u8; STEPS];
                for v in t.iter_mut() {
                    *v = rng.random_range(0..VOCAB as u8);
                }
                MelodySequence::new(t, "")
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_bias_statistics() {
        let mut p = ModelParams::<f64>::zeros(Dims::new(4, 3));
        p.enc_mu.b.values_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        p.enc_logvar.b.values_mut().copy_from_slice(&[0.1, 0.2, 9.0]);
        let (mu, lv) = encode(&p, &seqs(3, 1)).unwrap();
        for b in 0..3 {
            assert_eq!(mu.row(b), &[0.5, -1.0, 2.0]);
            assert_eq!(lv.row(b), &[0.1, 0.2, 8.0]);
        }
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let p = ModelParams::<f64>::init(4, Dims::new(6, 3));
        let s = seqs(1, 2);
        let batch = vec![s[0].clone(), s[0].clone()];
        let (mu, lv) = encode(&p, &batch).unwrap();
        assert_eq!(mu.row(0), mu.row(1));
        assert_eq!(lv.row(0), lv.row(1));
        let logits = decode_teacher_forced(&p, &mu, &batch).unwrap();
        let half = logits.len() / 2;
        assert_eq!(&logits.values()[..half], &logits.values()[half..]);
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let p = ModelParams::<f64>::zeros(Dims::new(4, 2));
        let z = Tensor::from_vec(&[2, 2], vec![0.3, -0.2, 1.0, 4.0]).unwrap();
        let logits = decode_teacher_forced(&p, &z, &seqs(2, 3)).unwrap();
        assert!(logits.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clamped_logvar_gives_nearly_exact_mean() {
        let mu = Tensor::<f64>::from_vec(&[1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let lv = Tensor::from_vec(&[1, 4], vec![-8.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = reparameterize(&mu, &lv, &mut rng, false);
        for (a, b) in z.values().iter().zip(mu.values()) {
            // sigma = e^-4 ~ 0.018; 6 sigma bound
            assert!((a - b).abs() < 0.12);
        }
        assert!(reparameterize(&mu, &lv, &mut rng, true).bit_eq(&mu));
    }

    #[test]
    fn greedy_decoding_is_deterministic() {
        let p = ModelParams::<f64>::init(9, Dims::new(8, 4));
        let z = [0.2, -0.4, 0.1, 0.9];
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = decode_sample(&p, &z, &mut r1, 1e-9).unwrap();
        let b = decode_sample(&p, &z, &mut r2, 1e-9).unwrap();
        assert_eq!(a, b);
        let s = decode_sample(&p, &z, &mut r1, 1.0).unwrap();
        assert!(s.tokens.iter().all(|&t| (t as usize) < VOCAB));
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f64; 90]), 0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let row: Vec<f64> = (0..90).map(|i| (i as f64 * 0.37).sin() * 20.0).collect();
        let p = softmax(&row, 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
