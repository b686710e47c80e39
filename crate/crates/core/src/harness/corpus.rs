//! Synthetic monophonic corpora sampled from genre profiles.
//!
//! A song is a sequence of phrases. Each phrase samples a motif (a rhythm
//! plus a contour over the in-register scale "ladder") and repeats it,
//! transposing every repetition along the ladder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DEFAULT_DIVISION, MAX_PITCH, MIN_PITCH, STEPS_PER_QUARTER};
use crate::midi::{write_midi, MidiError, NoteEvent, TempoMap};

pub const SONG_BARS: usize = 8;
pub const STEPS_PER_BAR: usize = 16;
pub const SONG_BPM: f64 = 120.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Midi(#[from] MidiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreProfile {
    pub name: String,
    /// Lowest and highest allowed MIDI pitch.
    pub low: u8,
    pub high: u8,
    /// Pitch classes of the scale as offsets from the tonic.
    pub scale: Vec<u8>,
    /// Candidate tonic pitch classes; each song picks one.
    pub tonics: Vec<u8>,
    /// Probabilities of repeating the pitch, moving one ladder step and
    /// leaping two to four ladder steps. Sum to 1.
    pub repeat_prob: f64,
    pub step_prob: f64,
    pub leap_prob: f64,
    /// Note lengths in sixteenths with their weights.
    pub durations: Vec<(usize, f64)>,
    /// Chance that a motif slot is silent.
    pub rest_prob: f64,
    /// Motif length in sixteenths.
    pub motif_steps: usize,
    /// Occurrences of each motif within a phrase.
    pub motif_repeats: usize,
    /// Largest ladder shift applied to a repetition.
    pub max_transpose: usize,
    /// Chance that a repetition is transposed at all.
    pub transpose_prob: f64,
    pub velocity: u8,
    pub seed: u64,
}

impl GenreProfile {
    /// Mainstream pop-like melodies: wide register, major keys, leaps
    /// allowed, mostly eighth and quarter notes.
    pub fn source_pop() -> Self {
        GenreProfile {
            name: "source-pop".into(),
            low: 48,
            high: 84,
            scale: vec![0, 2, 4, 5, 7, 9, 11],
            tonics: vec![0],
            repeat_prob: 0.2,
            step_prob: 0.55,
            leap_prob: 0.25,
            durations: vec![(1, 0.1), (2, 0.5), (4, 0.3), (6, 0.05), (8, 0.05)],
            rest_prob: 0.05,
            motif_steps: 8,
            motif_repeats: 4,
            max_transpose: 0,
            transpose_prob: 0.0,
            velocity: 90,
            seed: 1,
        }
    }

    /// Folk-like melodies after the trait list: narrow register, an
    /// augmented-second mode, conjunct steps, rapid repeated notes and
    /// motifs restated at varying pitches.
    pub fn target_folk() -> Self {
        GenreProfile {
            name: "target-folk".into(),
            low: 60,
            high: 72,
            scale: vec![0, 1, 4, 5, 7, 8, 11],
            tonics: vec![0],
            repeat_prob: 0.45,
            step_prob: 0.45,
            leap_prob: 0.1,
            durations: vec![(1, 0.3), (2, 0.5), (4, 0.2)],
            rest_prob: 0.03,
            motif_steps: 8,
            motif_repeats: 4,
            max_transpose: 2,
            transpose_prob: 0.35,
            velocity: 80,
            seed: 2,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "source-pop" => Some(Self::source_pop()),
            "target-folk" => Some(Self::target_folk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidProfile(format!("{}: {m}", self.name)));
        if self.low < MIN_PITCH || self.high > MAX_PITCH || self.low >= self.high {
            return bad("register must lie within 21..=108 and be non-empty");
        }
        if self.scale.is_empty() || self.scale.iter().any(|&p| p > 11) {
            return bad("scale needs pitch classes in 0..=11");
        }
        if self.tonics.is_empty() || self.tonics.iter().any(|&p| p > 11) {
            return bad("tonics need pitch classes in 0..=11");
        }
        let probs = [self.repeat_prob, self.step_prob, self.leap_prob, self.rest_prob, self.transpose_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if (self.repeat_prob + self.step_prob + self.leap_prob - 1.0).abs() > 1e-9 {
            return bad("repeat, step and leap probabilities must sum to 1");
        }
        if self.durations.is_empty() || self.durations.iter().any(|&(d, w)| d == 0 || !(w >= 0.0)) {
            return bad("durations need positive lengths and non-negative weights");
        }
        if !(self.durations.iter().map(|d| d.1).sum::<f64>() > 0.0) {
            return bad("duration weights sum to zero");
        }
        if self.motif_steps == 0 || self.motif_repeats == 0 {
            return bad("motif length and repeats must be positive");
        }
        if self.ladder(self.tonics[0]).len() < 2 {
            return bad("register holds fewer than two scale pitches");
        }
        if !(1..=127).contains(&self.velocity) {
            return bad("velocity must be in 1..=127");
        }
        Ok(())
    }

    /// Scale pitches inside the register, ascending.
    fn ladder(&self, tonic: u8) -> Vec<u8> {
        (self.low..=self.high).filter(|p| self.scale.contains(&((p + 12 - tonic) % 12))).collect()
    }
}

struct Motif {
    /// `(length, ladder index)`; `None` is a rest.
    slots: Vec<(usize, Option<i64>)>,
}

fn weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn reflect(i: i64, len: i64) -> i64 {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * (len - 1) - i;
        } else {
            return i;
        }
    }
}

fn sample_motif<R: Rng>(p: &GenreProfile, ladder_len: i64, start: i64, rng: &mut R) -> Motif {
    let weights: Vec<f64> = p.durations.iter().map(|d| d.1).collect();
    let mut slots = Vec::new();
    let mut filled = 0;
    let mut cur = start;
    while filled < p.motif_steps {
        let len = p.durations[weighted(rng, &weights)].0.min(p.motif_steps - filled);
        let rest = !slots.is_empty() && rng.random::<f64>() < p.rest_prob;
        if rest {
            slots.push((len, None));
        } else {
            if !slots.is_empty() {
                let mv = match weighted(rng, &[p.repeat_prob, p.step_prob, p.leap_prob]) {
                    0 => 0,
                    1 => 1,
                    _ => rng.random_range(2..=4),
                };
                let sign = if rng.random::<bool>() { 1 } else { -1 };
                cur = reflect(cur + sign * mv, ladder_len);
            }
            slots.push((len, Some(cur)));
        }
        filled += len;
    }
    Motif { slots }
}

/// Notes of one song, on a [`DEFAULT_DIVISION`] grid.
pub fn generate_song(profile: &GenreProfile, index: u64) -> Result<Vec<NoteEvent>, CorpusError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(index);
    let tonic = profile.tonics[rng.random_range(0..profile.tonics.len())];
    let ladder = profile.ladder(tonic);
    let n = ladder.len() as i64;
    let step_ticks = u64::from(DEFAULT_DIVISION) / STEPS_PER_QUARTER;
    let total = SONG_BARS * STEPS_PER_BAR;
    let mut notes = Vec::new();
    let mut pos = 0usize;
    let mut anchor = rng.random_range(n / 4..=(3 * n / 4).max(n / 4));
    while pos < total {
        let motif = sample_motif(profile, n, anchor, &mut rng);
        let indices: Vec<i64> = motif.slots.iter().filter_map(|s| s.1).collect();
        let (lo, hi) = (*indices.iter().min().unwrap_or(&0), *indices.iter().max().unwrap_or(&0));
        for rep in 0..profile.motif_repeats {
            let shift = if rep == 0 || rng.random::<f64>() >= profile.transpose_prob {
                0
            } else {
                let t = profile.max_transpose as i64;
                let options: Vec<i64> = (-t..=t).filter(|&s| s != 0 && lo + s >= 0 && hi + s < n).collect();
                if options.is_empty() {
                    0
                } else {
                    options[rng.random_range(0..options.len())]
                }
            };
            for &(len, idx) in &motif.slots {
                if pos >= total {
                    break;
                }
                let len = len.min(total - pos);
                if let Some(i) = idx {
                    notes.push(NoteEvent {
                        onset_ticks: pos as u64 * step_ticks,
                        duration_ticks: len as u64 * step_ticks,
                        pitch: ladder[(i + shift) as usize],
                        velocity: profile.velocity,
                        channel: 0,
                        track_index: 0,
                    });
                }
                pos += len;
            }
        }
        anchor = reflect(*indices.last().unwrap_or(&anchor) + rng.random_range(-2..=2), n);
    }
    Ok(notes)
}

/// `n_songs` MIDI files (format 0, 120 BPM), deterministic per profile seed
/// and song index.
pub fn generate_corpus(profile: &GenreProfile, n_songs: usize) -> Result<Vec<Vec<u8>>, CorpusError> {
    profile.validate()?;
    (0..n_songs as u64)
        .map(|i| Ok(write_midi(&generate_song(profile, i)?, &TempoMap::constant_bpm(SONG_BPM), DEFAULT_DIVISION)?))
        .collect()
}

/// Mean absolute interval in semitones between consecutive notes.
pub fn mean_abs_interval(notes: &[NoteEvent]) -> f64 {
    let d: Vec<f64> = notes.windows(2).map(|w| (w[1].pitch as f64 - w[0].pitch as f64).abs()).collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        GenreProfile::source_pop().validate().unwrap();
        GenreProfile::target_folk().validate().unwrap();
        assert!(GenreProfile::preset("nope").is_none());
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = GenreProfile::target_folk();
        p.step_prob = 0.9;
        assert!(p.validate().is_err());
        let mut p = GenreProfile::target_folk();
        p.low = 10;
        assert!(p.validate().is_err());
        let mut p = GenreProfile::target_folk();
        p.durations.clear();
        assert!(generate_corpus(&p, 1).is_err());
    }

    #[test]
    fn songs_fill_eight_bars_inside_the_register() {
        for profile in [GenreProfile::source_pop(), GenreProfile::target_folk()] {
            for i in 0..20 {
                let notes = generate_song(&profile, i).unwrap();
                assert!(!notes.is_empty());
                assert!(notes.iter().all(|n| (profile.low..=profile.high).contains(&n.pitch)));
                assert!(notes.windows(2).all(|w| w[0].end_ticks() <= w[1].onset_ticks));
                assert!(notes.last().unwrap().end_ticks() <= 128 * 120);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GenreProfile::source_pop();
        assert_eq!(generate_corpus(&p, 3).unwrap(), generate_corpus(&p, 3).unwrap());
        assert!(generate_corpus(&p, 0).unwrap().is_empty());
        assert_ne!(generate_song(&p, 0).unwrap(), generate_song(&p, 1).unwrap());
    }
}
