//! Melody tokenization: note events to 2-bar, 32-step, 90-class token
//! sequences and back.
//!
//! Token ids: `0` releases the sounding note, `1` means "no event" (sustain
//! or continued silence), `2..=89` start a note at MIDI pitch `21 + id - 2`.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::midi::{NoteEvent, TempoMap};

pub const STEPS: usize = 32;
pub const VOCAB: usize = 90;
pub const NOTE_OFF: u8 = 0;
pub const NO_EVENT: u8 = 1;
pub const MIN_PITCH: u8 = 21;
pub const MAX_PITCH: u8 = 108;
pub const STEPS_PER_QUARTER: u64 = 4;
/// Ticks per quarter note used for decoded and generated material.
pub const DEFAULT_DIVISION: u16 = 480;
pub const DEFAULT_VELOCITY: u8 = 80;
/// Windows with fewer note-ons than this are discarded.
pub const MIN_ONSETS: usize = 2;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn pitch_to_token(pitch: u8) -> u8 {
    debug_assert!((MIN_PITCH..=MAX_PITCH).contains(&pitch));
    2 + (pitch - MIN_PITCH)
}

pub fn token_to_pitch(token: u8) -> Option<u8> {
    (2..VOCAB as u8).contains(&token).then(|| token - 2 + MIN_PITCH)
}

/// Moves a pitch by octaves into the 88-key range.
pub fn fold_pitch(mut pitch: u8) -> u8 {
    while pitch < MIN_PITCH {
        pitch += 12;
    }
    while pitch > MAX_PITCH {
        pitch -= 12;
    }
    pitch
}

/// A 32-step melody window.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MelodySequence {
    pub tokens: [u8; STEPS],
    pub source_id: String,
}

impl MelodySequence {
    pub fn new(tokens: [u8; STEPS], source_id: impl Into<String>) -> Self {
        MelodySequence { tokens, source_id: source_id.into() }
    }

    pub fn onset_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t >= 2).count()
    }

    /// Checks the token range and that releases only follow a sounding note.
    pub fn is_valid(&self) -> bool {
        let mut sounding = false;
        for &t in &self.tokens {
            match t {
                NOTE_OFF if !sounding => return false,
                NOTE_OFF => sounding = false,
                NO_EVENT => {}
                t if (t as usize) < VOCAB => sounding = true,
                _ => return false,
            }
        }
        true
    }
}

impl fmt::Display for MelodySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub pitch: u8,
    pub is_onset: bool,
}

/// Monophonic sixteenth-note grid; `None` is silence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenGrid {
    pub cells: Vec<Option<Cell>>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn snap(ticks: u64, step: u64) -> u64 {
    (ticks + step / 2) / step
}

/// Snaps notes to the sixteenth grid and reduces them to one voice by
/// keeping the highest sounding pitch at every step.
///
/// The grid is metrical (a sixteenth is `division / 4` ticks regardless of
/// tempo), so the tempo map does not move step boundaries.
pub fn quantize(notes: &[NoteEvent], _tempo: &TempoMap, division: u16) -> TokenGrid {
    let step = (u64::from(division) / STEPS_PER_QUARTER).max(1);
    let spans: Vec<(u64, u64, u8)> = notes
        .iter()
        .map(|n| {
            let on = snap(n.onset_ticks, step);
            let off = snap(n.end_ticks(), step).max(on + 1);
            (on, off, n.pitch)
        })
        .collect();
    let len = spans.iter().map(|s| s.1).max().unwrap_or(0) as usize;
    let mut cells: Vec<Option<Cell>> = vec![None; len];
    for &(on, off, pitch) in &spans {
        for s in on..off {
            let onset = s == on;
            let cell = &mut cells[s as usize];
            match cell {
                Some(c) if c.pitch > pitch => {}
                Some(c) if c.pitch == pitch => c.is_onset |= onset,
                _ => *cell = Some(Cell { pitch, is_onset: onset }),
            }
        }
    }
    TokenGrid { cells }
}

fn encode_window(cells: &[Option<Cell>]) -> [u8; STEPS] {
    let mut tokens = [NO_EVENT; STEPS];
    let mut sounding: Option<u8> = None;
    for (s, cell) in cells.iter().enumerate() {
        tokens[s] = match cell {
            None => match sounding.take() {
                Some(_) => NOTE_OFF,
                None => NO_EVENT,
            },
            Some(c) => {
                let pitch = fold_pitch(c.pitch);
                if c.is_onset || sounding != Some(pitch) {
                    sounding = Some(pitch);
                    pitch_to_token(pitch)
                } else {
                    NO_EVENT
                }
            }
        };
    }
    tokens
}

/// Cuts the grid into non-overlapping 32-step windows from step 0 and
/// encodes each; windows with fewer than two note-ons are dropped.
pub fn extract_melodies(grid: &TokenGrid, source_id: &str) -> Vec<MelodySequence> {
    grid.cells
        .chunks_exact(STEPS)
        .enumerate()
        .map(|(w, cells)| MelodySequence::new(encode_window(cells), format!("{source_id}:w{w}")))
        .filter(|m| m.onset_count() >= MIN_ONSETS)
        .collect()
}

/// One-hot rows, `STEPS x VOCAB`, row-major.
pub fn encode_onehot(seq: &MelodySequence) -> Vec<[u8; VOCAB]> {
    seq.tokens
        .iter()
        .map(|&t| {
            let mut row = [0u8; VOCAB];
            row[t as usize] = 1;
            row
        })
        .collect()
}

/// Turns tokens back into notes on a [`DEFAULT_DIVISION`] grid. A note
/// sustains through no-event tokens until a release, the next note-on or
/// the end of the window. Stray releases are ignored.
pub fn decode_tokens(seq: &MelodySequence, _tempo: &TempoMap) -> Vec<NoteEvent> {
    let step = u64::from(DEFAULT_DIVISION) / STEPS_PER_QUARTER;
    let mut notes = Vec::new();
    let mut open: Option<(usize, u8)> = None;
    let close = |open: &mut Option<(usize, u8)>, end: usize, notes: &mut Vec<NoteEvent>| {
        if let Some((start, pitch)) = open.take() {
            notes.push(NoteEvent {
                onset_ticks: start as u64 * step,
                duration_ticks: (end - start) as u64 * step,
                pitch,
                velocity: DEFAULT_VELOCITY,
                channel: 0,
                track_index: 0,
            });
        }
    };
    for (s, &t) in seq.tokens.iter().enumerate() {
        match t {
            NOTE_OFF => close(&mut open, s, &mut notes),
            NO_EVENT => {}
            t => {
                close(&mut open, s, &mut notes);
                if let Some(p) = token_to_pitch(t) {
                    open = Some((s, p));
                }
            }
        }
    }
    close(&mut open, STEPS, &mut notes);
    notes
}

/// Writes sequences one per line, with the provenance as a trailing comment.
pub fn write_sequences<W: Write>(mut out: W, seqs: &[MelodySequence]) -> std::io::Result<()> {
    for s in seqs {
        if s.source_id.is_empty() {
            writeln!(out, "{s}")?;
        } else {
            writeln!(out, "{s} # {}", s.source_id)?;
        }
    }
    Ok(())
}

/// Reads the line format written by [`write_sequences`]. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_sequences<R: BufRead>(input: R) -> Result<Vec<MelodySequence>, CodecError> {
    let mut seqs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b, c.trim()),
            None => (line.as_str(), ""),
        };
        if body.trim().is_empty() {
            continue;
        }
        let err = |reason: String| CodecError::Parse { line: i + 1, reason };
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<u8>().map_err(|e| err(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let tokens: [u8; STEPS] = values
            .try_into()
            .map_err(|v: Vec<u8>| err(format!("expected {STEPS} tokens, found {}", v.len())))?;
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= VOCAB) {
            return Err(err(format!("token {bad} out of range")));
        }
        seqs.push(MelodySequence::new(tokens, comment));
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(onset: u64, dur: u64, pitch: u8) -> NoteEvent {
        NoteEvent { onset_ticks: onset, duration_ticks: dur, pitch, velocity: 90, channel: 0, track_index: 0 }
    }

    fn grid_of(cells: &[(usize, usize, u8)], len: usize) -> TokenGrid {
        let mut g = TokenGrid { cells: vec![None; len] };
        for &(on, dur, p) in cells {
            for s in on..on + dur {
                g.cells[s] = Some(Cell { pitch: p, is_onset: s == on });
            }
        }
        g
    }

    #[test]
    fn onset_snaps_to_nearest_boundary() {
        let g = quantize(&[n(10, 100, 60)], &TempoMap::default(), 480);
        assert_eq!(g.cells[0], Some(Cell { pitch: 60, is_onset: true }));
        let g = quantize(&[n(61, 10, 60)], &TempoMap::default(), 480);
        // snaps to step 1; the zero-length result still gets one step
        assert_eq!(g.len(), 2);
        assert_eq!(g.cells[0], None);
        assert!(g.cells[1].unwrap().is_onset);
    }

    #[test]
    fn skyline_keeps_highest_pitch() {
        let g = quantize(&[n(0, 480, 60), n(0, 480, 72)], &TempoMap::default(), 480);
        assert!(g.cells.iter().all(|c| c.unwrap().pitch == 72));
    }

    #[test]
    fn worked_token_example() {
        let g = grid_of(&[(0, 4, 60), (8, 2, 62)], 32);
        let seqs = extract_melodies(&g, "x");
        assert_eq!(seqs.len(), 1);
        let mut expected = [1u8; 32];
        expected[..11].copy_from_slice(&[41, 1, 1, 1, 0, 1, 1, 1, 43, 1, 0]);
        assert_eq!(seqs[0].tokens, expected);
        assert_eq!(seqs[0].source_id, "x:w0");
    }

    #[test]
    fn silent_grid_yields_nothing() {
        assert!(extract_melodies(&TokenGrid { cells: vec![None; 64] }, "s").is_empty());
        // one onset per window is also too few
        assert!(extract_melodies(&grid_of(&[(0, 3, 60), (32, 3, 60)], 64), "s").is_empty());
    }

    #[test]
    fn out_of_range_pitch_is_octave_folded() {
        assert_eq!(fold_pitch(110), 98);
        assert_eq!(fold_pitch(5), 29);
        let g = grid_of(&[(0, 2, 110), (4, 2, 60)], 32);
        let seq = &extract_melodies(&g, "f")[0];
        assert_eq!(token_to_pitch(seq.tokens[0]), Some(98));
    }

    #[test]
    fn window_count_is_floor_of_length() {
        let g = grid_of(&[(0, 2, 60), (4, 2, 62), (32, 2, 64), (36, 2, 65), (64, 2, 67), (68, 2, 69)], 90);
        let seqs = extract_melodies(&g, "w");
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[1].source_id, "w:w1");
    }

    #[test]
    fn pitch_change_without_onset_is_rearticulated() {
        // a high note ends while a lower one keeps sounding underneath
        let g = quantize(&[n(0, 960, 60), n(0, 240, 72), n(960, 120, 64), n(31 * 120, 120, 50)], &TempoMap::default(), 480);
        let seq = &extract_melodies(&g, "r")[0];
        assert_eq!(&seq.tokens[..10], &[pitch_to_token(72), 1, pitch_to_token(60), 1, 1, 1, 1, 1, pitch_to_token(64), 0]);
        assert!(seq.is_valid());
    }

    #[test]
    fn decode_sustain_rule() {
        let mut tokens = [1u8; 32];
        tokens[..4].copy_from_slice(&[41, 1, 1, 0]);
        let notes = decode_tokens(&MelodySequence::new(tokens, ""), &TempoMap::default());
        assert_eq!(notes, vec![NoteEvent { onset_ticks: 0, duration_ticks: 360, pitch: 60, velocity: DEFAULT_VELOCITY, channel: 0, track_index: 0 }]);
        assert!(decode_tokens(&MelodySequence::new([1; 32], ""), &TempoMap::default()).is_empty());
    }

    #[test]
    fn full_window_spans_four_seconds() {
        let mut tokens = [1u8; 32];
        tokens[0] = 41;
        let notes = decode_tokens(&MelodySequence::new(tokens, ""), &TempoMap::default());
        let end = notes[0].end_ticks();
        assert_eq!(TempoMap::default().seconds_at(end, DEFAULT_DIVISION), 4.0);
    }

    #[test]
    fn onehot_rows() {
        let mut tokens = [1u8; 32];
        tokens[0] = 0;
        tokens[1] = 89;
        let rows = encode_onehot(&MelodySequence::new(tokens, ""));
        assert_eq!(rows.len(), 32);
        assert_eq!(rows[0][0], 1);
        assert_eq!(rows[1][89], 1);
        assert!(rows.iter().all(|r| r.iter().map(|&v| v as u32).sum::<u32>() == 1));
    }

    #[test]
    fn text_format_round_trip_and_errors() {
        let mut tokens = [1u8; 32];
        tokens[0] = 41;
        tokens[4] = 43;
        let seqs = vec![MelodySequence::new(tokens, "song1:w0"), MelodySequence::new([1; 32], "")];
        let mut buf = Vec::new();
        write_sequences(&mut buf, &seqs).unwrap();
        let text = format!("# header comment\n\n{}", String::from_utf8(buf).unwrap());
        assert_eq!(read_sequences(text.as_bytes()).unwrap(), seqs);
        assert!(read_sequences("1 2 3\n".as_bytes()).is_err());
        let bad = format!("{}\n", ["90"; 32].join(" "));
        assert!(read_sequences(bad.as_bytes()).is_err());
    }

    #[test]
    fn validity_rule() {
        let mut t = [1u8; 32];
        t[0] = 0;
        assert!(!MelodySequence::new(t, "").is_valid());
        t[0] = 50;
        t[1] = 0;
        assert!(MelodySequence::new(t, "").is_valid());
        t[2] = 0;
        assert!(!MelodySequence::new(t, "").is_valid());
    }
}
