use melody_ce::codec::{MelodySequence, NOTE_OFF, NO_EVENT, STEPS, VOCAB};
use melody_ce::vae::{
    decode_teacher_forced, elbo_loss, encode, gradient_check, load_checkpoint, reconstruction_accuracy, reparameterize,
    save_checkpoint, Dims, GradCheckOptions, ModelParams, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn melodies(n: usize, seed: u64) -> Vec<MelodySequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut t = [NO_EVENT; STEPS];
            let mut sounding = false;
            for slot in t.iter_mut() {
                let u: f64 = rng.random();
                if u < 0.35 {
                    *slot = rng.random_range(2..VOCAB as u8);
                    sounding = true;
                } else if u < 0.45 && sounding {
                    *slot = NOTE_OFF;
                    sounding = false;
                }
            }
            MelodySequence::new(t, "m")
        })
        .collect()
}

fn log_softmax_nll(row: &[f64], target: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    lse - row[target]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elbo_matches_closed_forms(seed in any::<u64>(), batch in 1usize..4, z in 1usize..6, beta in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = melodies(batch, seed);
        let logits: Vec<f64> = (0..batch * STEPS * VOCAB).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mu: Vec<f64> = (0..batch * z).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..batch * z).map(|_| rng.random_range(-3.0..3.0)).collect();
        let l = elbo_loss(
            &Tensor::from_vec(&[batch, STEPS, VOCAB], logits.clone()).unwrap(),
            &seqs,
            &Tensor::from_vec(&[batch, z], mu.clone()).unwrap(),
            &Tensor::from_vec(&[batch, z], lv.clone()).unwrap(),
            beta,
            0.0,
        )
        .unwrap();
        let mut nll = 0.0;
        for (b, s) in seqs.iter().enumerate() {
            for (k, &t) in s.tokens.iter().enumerate() {
                let o = (b * STEPS + k) * VOCAB;
                nll += log_softmax_nll(&logits[o..o + VOCAB], t as usize);
            }
        }
        nll /= batch as f64;
        let kl: f64 = mu.iter().zip(&lv).map(|(m, v)| 0.5 * (m * m + v.exp() - 1.0 - v)).sum::<f64>() / batch as f64;
        prop_assert!((l.reconstruction_nll - nll).abs() < 1e-9 * nll.max(1.0));
        prop_assert!((l.kl_divergence - kl).abs() < 1e-9 * kl.max(1.0));
        prop_assert!((l.total - (nll + beta * kl)).abs() < 1e-8 * l.total.max(1.0));
    }
}

#[test]
fn reparameterized_samples_have_the_posterior_moments() {
    let n = 100_000;
    let mu = Tensor::from_vec(&[n, 1], vec![0.3; n]).unwrap();
    let lv = Tensor::from_vec(&[n, 1], vec![0.25f64.ln(); n]).unwrap();
    let z = reparameterize(&mu, &lv, &mut ChaCha8Rng::seed_from_u64(1), false);
    let mean = z.values().iter().sum::<f64>() / n as f64;
    let var = z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 0.3).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "{mean}");
    assert!((var - 0.25).abs() < 0.01, "{var}");
    assert_eq!(reparameterize(&mu, &lv, &mut ChaCha8Rng::seed_from_u64(1), true).values(), mu.values());
}

#[test]
fn accuracy_matches_an_argmax_oracle() {
    let model = ModelParams::<f64>::init(4, Dims::new(12, 6));
    let seqs = melodies(20, 4);
    let (mu, _) = encode(&model, &seqs).unwrap();
    let logits = decode_teacher_forced(&model, &mu, &seqs).unwrap();
    let mut correct = 0;
    for (b, s) in seqs.iter().enumerate() {
        for (k, &t) in s.tokens.iter().enumerate() {
            let row = &logits.values()[(b * STEPS + k) * VOCAB..][..VOCAB];
            let mut best = 0;
            for i in 1..VOCAB {
                if row[i] > row[best] {
                    best = i;
                }
            }
            correct += usize::from(best == t as usize);
        }
    }
    let oracle = correct as f64 / (seqs.len() * STEPS) as f64;
    assert_eq!(reconstruction_accuracy(&model, &seqs).unwrap(), oracle);
}

#[test]
fn gradient_check_small_model() {
    let model = ModelParams::<f64>::init(8, Dims::new(8, 4));
    let report = gradient_check(&model, &melodies(3, 8), &GradCheckOptions { coordinates: 300, ..Default::default() }).unwrap();
    assert_eq!(report.coordinates_checked, 300);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn single_precision_tracks_double() {
    let model = ModelParams::<f64>::init(12, Dims::new(16, 8));
    let seqs = melodies(8, 12);
    let (mu64, _) = encode(&model, &seqs).unwrap();
    let l64 = decode_teacher_forced(&model, &mu64, &seqs).unwrap();
    let m32: ModelParams<f32> = model.cast();
    let (mu32, _) = encode(&m32, &seqs).unwrap();
    let l32 = decode_teacher_forced(&m32, &mu32, &seqs).unwrap();
    let worst = l64.values().iter().zip(l32.values()).map(|(a, b)| (a - f64::from(*b)).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn checkpoint_files_round_trip_bit_exactly() {
    let model = ModelParams::<f64>::init(13, Dims::new(10, 3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let back: ModelParams<f64> = load_checkpoint(&path).unwrap();
    assert!(back.bit_eq(&model));
}
