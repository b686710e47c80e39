//! Songs as melody windows, directory ingestion and k-fold splits.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{extract_melodies, quantize, MelodySequence};
use crate::midi::{extract_notes, parse_midi, MidiError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Midi { path: PathBuf, source: MidiError },
    #[error("no melodies extracted from {0}")]
    NoMelodiesExtracted(String),
    #[error("cannot split {items} items into {k} folds")]
    InvalidFolds { items: usize, k: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One song and the melody windows cut from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub id: String,
    pub melodies: Vec<MelodySequence>,
}

/// Parses one MIDI file and cuts it into melody windows.
pub fn song_from_midi(id: &str, bytes: &[u8]) -> Result<Song, MidiError> {
    let file = parse_midi(bytes)?;
    let (notes, tempo) = extract_notes(&file);
    let grid = quantize(&notes, &tempo, file.division);
    Ok(Song { id: id.to_string(), melodies: extract_melodies(&grid, id) })
}

/// Every `.mid`/`.midi` file in `dir`, in file-name order. Files that fail
/// to parse are returned separately rather than aborting the scan.
pub fn ingest_dir(dir: &Path) -> Result<(Vec<Song>, Vec<DataError>), DataError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    paths.sort();
    let mut songs = Vec::new();
    let mut errors = Vec::new();
    for path in paths {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let bytes = std::fs::read(&path)?;
        match song_from_midi(&id, &bytes) {
            Ok(song) => songs.push(song),
            Err(source) => errors.push(DataError::Midi { path, source }),
        }
    }
    Ok((songs, errors))
}

/// All windows of the given songs, in song order.
pub fn melodies_of<'a>(songs: impl IntoIterator<Item = &'a Song>) -> Vec<MelodySequence> {
    songs.into_iter().flat_map(|s| s.melodies.iter().cloned()).collect()
}

/// SHA-256 over every window's tokens and id.
pub fn corpus_fingerprint(seqs: &[MelodySequence]) -> String {
    let mut h = Sha256::new();
    for s in seqs {
        h.update(s.tokens);
        h.update(s.source_id.as_bytes());
        h.update([0xff]);
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Shuffles `ids` by `seed` and cuts them into `k` test chunks whose sizes
/// differ by at most one; each fold trains on everything else.
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>, DataError> {
    if k < 2 || k > ids.len() {
        return Err(DataError::InvalidFolds { items: ids.len(), k });
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test_ids = order[start..start + len].to_vec();
        let train_ids = order[..start].iter().chain(&order[start + len..]).cloned().collect();
        folds.push(FoldSplit { fold_index: f, train_ids, test_ids });
        start += len;
    }
    Ok(folds)
}

/// Train and test windows of `songs` for one fold.
pub fn split_songs(songs: &[Song], fold: &FoldSplit) -> (Vec<MelodySequence>, Vec<MelodySequence>) {
    let pick = |ids: &[String]| melodies_of(songs.iter().filter(|s| ids.contains(&s.id)));
    (pick(&fold.train_ids), pick(&fold.test_ids))
}
