//! End-to-end steps shared by the CLI and the acceptance run.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ExperimentConfig;
use super::corpus::{generate_corpus, GenreProfile};
use super::data::{melodies_of, song_from_midi, Song};
use super::experiment::derive_seed;
use super::render::render_pianoroll;
use super::HarnessError;
use crate::codec::{decode_tokens, MelodySequence, DEFAULT_DIVISION};
use crate::midi::{write_midi, TempoMap};
use crate::scalar::Scalar;
use crate::vae::{decode_sample, train, ModelParams, TrainLog};

/// Generates `n` songs from `profile` and parses them back, as a directory
/// ingest would.
pub fn synthetic_songs(profile: &GenreProfile, n: usize) -> Result<Vec<Song>, HarnessError> {
    generate_corpus(profile, n)?
        .iter()
        .enumerate()
        .map(|(i, bytes)| Ok(song_from_midi(&song_name(profile, i), bytes)?))
        .collect()
}

fn song_name(profile: &GenreProfile, index: usize) -> String {
    format!("{}_{index:04}", profile.name)
}

/// Writes `n` songs from `profile` as `<name>_<index>.mid` into `dir`.
pub fn write_corpus(profile: &GenreProfile, n: usize, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(n);
    for (i, bytes) in generate_corpus(profile, n)?.into_iter().enumerate() {
        let path = dir.join(format!("{}.mid", song_name(profile, i)));
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}

pub struct Pretrained {
    pub model: ModelParams<f64>,
    pub log: TrainLog,
    pub source_test: Vec<MelodySequence>,
    pub target: Vec<Song>,
}

/// Trains a fresh model on the configured source corpus. Also returns the
/// held-out source windows and the target songs used downstream.
pub fn pretrain_from_config(cfg: &ExperimentConfig) -> Result<Pretrained, HarnessError> {
    let source = melodies_of(&synthetic_songs(&cfg.source, cfg.source_songs)?);
    if source.is_empty() {
        return Err(HarnessError::NoMelodies(cfg.source.name.clone()));
    }
    let source_test = melodies_of(&synthetic_songs(&cfg.source_test, cfg.source_test_songs)?);
    let target = synthetic_songs(&cfg.target, cfg.target_songs)?;
    let init = ModelParams::init(derive_seed(cfg.seed, "init"), cfg.dims);
    let (model, log) = train(&init, &source, &cfg.pretrain)?;
    Ok(Pretrained { model, log, source_test, target })
}

/// Draws `n` latents from the prior, decodes each and writes
/// `sample_<i>.mid` and `sample_<i>.svg` into `out_dir`.
pub fn sample_and_export<T: Scalar>(
    model: &ModelParams<T>,
    n: usize,
    temperature: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<MelodySequence>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n > 0 {
        fs::create_dir_all(out_dir)?;
    }
    let tempo = TempoMap::constant_bpm(120.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<T> = (0..model.dims.latent)
            .map(|_| T::of(StandardNormal.sample(&mut rng)))
            .collect();
        let mut seq = decode_sample(model, &z, &mut rng, temperature)?;
        seq.source_id = format!("sample_{i}");
        let midi = write_midi(&decode_tokens(&seq, &tempo), &tempo, DEFAULT_DIVISION)?;
        fs::write(out_dir.join(format!("sample_{i}.mid")), midi)?;
        fs::write(out_dir.join(format!("sample_{i}.svg")), render_pianoroll(&seq))?;
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::Dims;

    #[test]
    fn samples_are_deterministic_and_reparse() {
        let model = ModelParams::<f64>::init(1, Dims::new(8, 4));
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = sample_and_export(&model, 3, 1.0, 5, a.path()).unwrap();
        let sb = sample_and_export(&model, 3, 1.0, 5, b.path()).unwrap();
        assert_eq!(sa, sb);
        for i in 0..3 {
            let bytes = fs::read(a.path().join(format!("sample_{i}.mid"))).unwrap();
            assert_eq!(bytes, fs::read(b.path().join(format!("sample_{i}.mid"))).unwrap());
            crate::midi::parse_midi(&bytes).unwrap();
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(sample_and_export(&model, 0, 1.0, 5, &empty.path().join("none")).unwrap().is_empty());
        assert!(!empty.path().join("none").exists());
    }
}
