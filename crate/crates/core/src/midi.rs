//! Standard MIDI File (format 0 and 1) reading and writing.
//!
//! The reader keeps every event of every track (running status resolved,
//! unknown meta and sysex payloads kept opaque). [`extract_notes`] turns a
//! parsed file into absolute-time [`NoteEvent`]s and a [`TempoMap`];
//! [`write_midi`] goes the other way and always produces a format-0 file
//! with explicit status bytes.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

pub const DEFAULT_TEMPO_US: u32 = 500_000;
pub const PERCUSSION_CHANNEL: u8 = 9;

const META_END_OF_TRACK: u8 = 0x2F;
const META_TEMPO: u8 = 0x51;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division 0x{0:04x} is not supported")]
    UnsupportedDivision(u16),
    #[error("track {track} truncated at byte {offset}")]
    TruncatedTrack { track: usize, offset: usize },
    #[error("track {track}: malformed event at byte {offset}: {reason}")]
    MalformedTrack { track: usize, offset: usize, reason: &'static str },
    #[error("invalid note: {0}")]
    InvalidNote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmfFormat {
    SingleTrack = 0,
    MultiTrack = 1,
}

/// A channel voice message. Data bytes are 7-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMessage {
    NoteOff { key: u8, velocity: u8 },
    NoteOn { key: u8, velocity: u8 },
    KeyPressure { key: u8, pressure: u8 },
    Controller { controller: u8, value: u8 },
    ProgramChange { program: u8 },
    ChannelPressure { pressure: u8 },
    PitchBend { lsb: u8, msb: u8 },
}

impl ChannelMessage {
    fn data_len(status_hi: u8) -> usize {
        match status_hi {
            0xC | 0xD => 1,
            _ => 2,
        }
    }

    fn from_parts(status_hi: u8, d1: u8, d2: u8) -> Self {
        match status_hi {
            0x8 => ChannelMessage::NoteOff { key: d1, velocity: d2 },
            0x9 => ChannelMessage::NoteOn { key: d1, velocity: d2 },
            0xA => ChannelMessage::KeyPressure { key: d1, pressure: d2 },
            0xB => ChannelMessage::Controller { controller: d1, value: d2 },
            0xC => ChannelMessage::ProgramChange { program: d1 },
            0xD => ChannelMessage::ChannelPressure { pressure: d1 },
            _ => ChannelMessage::PitchBend { lsb: d1, msb: d2 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Channel { channel: u8, message: ChannelMessage },
    Meta { kind: u8, data: Vec<u8> },
    /// `status` is 0xF0 or 0xF7; the payload is kept as-is.
    SysEx { status: u8, data: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackEvent {
    pub delta: u32,
    pub kind: EventKind,
}

impl TrackEvent {
    fn is_end_of_track(&self) -> bool {
        matches!(self.kind, EventKind::Meta { kind: META_END_OF_TRACK, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiFile {
    pub format: SmfFormat,
    /// Ticks per quarter note.
    pub division: u16,
    pub tracks: Vec<Vec<TrackEvent>>,
}

/// A sounding note on an absolute tick timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub onset_ticks: u64,
    pub duration_ticks: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
    pub track_index: usize,
}

impl NoteEvent {
    pub fn end_ticks(&self) -> u64 {
        self.onset_ticks + self.duration_ticks
    }
}

/// Tempo changes as `(tick, microseconds per quarter note)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TempoMap {
    entries: Vec<(u64, u32)>,
}

impl Default for TempoMap {
    fn default() -> Self {
        TempoMap { entries: vec![(0, DEFAULT_TEMPO_US)] }
    }
}

impl TempoMap {
    /// Builds a map from arbitrary changes: sorted by tick, later entries win
    /// on equal ticks, and the default tempo is inserted at tick 0 if absent.
    pub fn from_changes(mut changes: Vec<(u64, u32)>) -> Self {
        changes.retain(|&(_, us)| us > 0);
        changes.sort_by_key(|&(t, _)| t);
        let mut entries: Vec<(u64, u32)> = Vec::with_capacity(changes.len() + 1);
        for (tick, us) in changes {
            match entries.last_mut() {
                Some(last) if last.0 == tick => last.1 = us,
                _ => entries.push((tick, us)),
            }
        }
        if entries.first().map_or(true, |e| e.0 != 0) {
            entries.insert(0, (0, DEFAULT_TEMPO_US));
        }
        TempoMap { entries }
    }

    /// Constant tempo in beats per minute.
    pub fn constant_bpm(bpm: f64) -> Self {
        TempoMap { entries: vec![(0, (60_000_000.0 / bpm).round() as u32)] }
    }

    pub fn entries(&self) -> &[(u64, u32)] {
        &self.entries
    }

    /// Tempo in effect at `tick`.
    pub fn tempo_at(&self, tick: u64) -> u32 {
        let idx = self.entries.partition_point(|e| e.0 <= tick);
        self.entries[idx.saturating_sub(1)].1
    }

    /// Wall-clock seconds from tick 0 to `tick`.
    pub fn seconds_at(&self, tick: u64, division: u16) -> f64 {
        let mut secs = 0.0;
        for (i, &(start, us)) in self.entries.iter().enumerate() {
            if start >= tick {
                break;
            }
            let end = self.entries.get(i + 1).map_or(tick, |e| e.0.min(tick));
            secs += (end - start) as f64 * us as f64 / (1e6 * division as f64);
        }
        secs
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
    track: usize,
}

impl<'a> Cursor<'a> {
    fn truncated(&self) -> MidiError {
        MidiError::TruncatedTrack { track: self.track, offset: self.pos }
    }

    fn byte(&mut self) -> Result<u8, MidiError> {
        if self.pos >= self.end {
            return Err(self.truncated());
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Result<u8, MidiError> {
        if self.pos >= self.end {
            return Err(self.truncated());
        }
        Ok(self.bytes[self.pos])
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.end - self.pos < n {
            return Err(self.truncated());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn varint(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.byte()?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::MalformedTrack {
            track: self.track,
            offset: start,
            reason: "variable-length quantity longer than 4 bytes",
        })
    }
}

/// Decodes a variable-length quantity from the front of `bytes`, returning
/// the value and the number of bytes consumed.
pub fn read_varint(bytes: &[u8]) -> Result<(u32, usize), MidiError> {
    let mut c = Cursor { bytes, pos: 0, end: bytes.len(), track: 0 };
    let v = c.varint()?;
    Ok((v, c.pos))
}

pub fn write_varint(mut value: u32, out: &mut Vec<u8>) {
    assert!(value <= 0x0FFF_FFFF, "varint out of range");
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return Err(MidiError::MalformedHeader("missing MThd chunk".into()));
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    if header_len < 6 || bytes.len() < 8 + header_len {
        return Err(MidiError::MalformedHeader(format!("bad header length {header_len}")));
    }
    let format = match be_u16(&bytes[8..10]) {
        0 => SmfFormat::SingleTrack,
        1 => SmfFormat::MultiTrack,
        f => return Err(MidiError::UnsupportedFormat(f)),
    };
    let ntracks = be_u16(&bytes[10..12]) as usize;
    let division = be_u16(&bytes[12..14]);
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedDivision(division));
    }
    if division == 0 {
        return Err(MidiError::MalformedHeader("division is zero".into()));
    }
    if format == SmfFormat::SingleTrack && ntracks != 1 {
        return Err(MidiError::MalformedHeader(format!("format 0 with {ntracks} tracks")));
    }

    let mut pos = 8 + header_len;
    let mut tracks = Vec::with_capacity(ntracks);
    while tracks.len() < ntracks {
        let track = tracks.len();
        if bytes.len() - pos < 8 {
            return Err(MidiError::TruncatedTrack { track, offset: pos });
        }
        let id = &bytes[pos..pos + 4];
        let len = be_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        if bytes.len() - body < len {
            return Err(MidiError::TruncatedTrack { track, offset: bytes.len() });
        }
        if id == b"MTrk" {
            tracks.push(parse_track(bytes, body, body + len, track)?);
        }
        // Alien chunks are skipped.
        pos = body + len;
    }
    Ok(MidiFile { format, division, tracks })
}

fn parse_track(bytes: &[u8], start: usize, end: usize, track: usize) -> Result<Vec<TrackEvent>, MidiError> {
    let mut c = Cursor { bytes, pos: start, end, track };
    let mut events = Vec::new();
    let mut running: Option<u8> = None;
    loop {
        let delta = c.varint()?;
        let at = c.pos;
        let first = c.peek()?;
        let kind = match first {
            0xFF => {
                c.byte()?;
                running = None;
                let kind = c.byte()?;
                let len = c.varint()? as usize;
                EventKind::Meta { kind, data: c.take(len)?.to_vec() }
            }
            0xF0 | 0xF7 => {
                c.byte()?;
                running = None;
                let len = c.varint()? as usize;
                EventKind::SysEx { status: first, data: c.take(len)?.to_vec() }
            }
            0xF1..=0xFE => {
                return Err(MidiError::MalformedTrack {
                    track,
                    offset: at,
                    reason: "system common/real-time byte inside a track",
                })
            }
            _ => {
                let status = if first & 0x80 != 0 {
                    c.byte()?;
                    running = Some(first);
                    first
                } else {
                    running.ok_or(MidiError::MalformedTrack {
                        track,
                        offset: at,
                        reason: "data byte without running status",
                    })?
                };
                let hi = status >> 4;
                let d1 = c.byte()?;
                let d2 = if ChannelMessage::data_len(hi) == 2 { c.byte()? } else { 0 };
                if d1 & 0x80 != 0 || d2 & 0x80 != 0 {
                    return Err(MidiError::MalformedTrack {
                        track,
                        offset: at,
                        reason: "status byte where a data byte was expected",
                    });
                }
                EventKind::Channel { channel: status & 0x0F, message: ChannelMessage::from_parts(hi, d1, d2) }
            }
        };
        let ev = TrackEvent { delta, kind };
        let done = ev.is_end_of_track();
        events.push(ev);
        if done {
            return Ok(events);
        }
    }
}

/// Pairs note-ons with note-offs (FIFO per track, channel and key), merges
/// all tracks onto one timeline and collects the tempo map. Percussion
/// (channel 9) is dropped. Notes still sounding at End-of-Track are closed
/// there.
pub fn extract_notes(file: &MidiFile) -> (Vec<NoteEvent>, TempoMap) {
    // (onset tick, track, event index) orders notes by their note-on.
    let mut notes: Vec<((u64, usize, usize), NoteEvent)> = Vec::new();
    let mut tempo_changes = Vec::new();

    for (track_index, events) in file.tracks.iter().enumerate() {
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8, usize)>> = HashMap::new();
        let mut tick = 0u64;
        let close = |notes: &mut Vec<((u64, usize, usize), NoteEvent)>, (onset, velocity, idx): (u64, u8, usize), channel, pitch, end: u64| {
            notes.push((
                (onset, track_index, idx),
                NoteEvent {
                    onset_ticks: onset,
                    duration_ticks: end.saturating_sub(onset).max(1),
                    pitch,
                    velocity,
                    channel,
                    track_index,
                },
            ));
        };
        for (idx, ev) in events.iter().enumerate() {
            tick += u64::from(ev.delta);
            match &ev.kind {
                EventKind::Meta { kind: META_TEMPO, data } if data.len() == 3 => {
                    let us = (u32::from(data[0]) << 16) | (u32::from(data[1]) << 8) | u32::from(data[2]);
                    tempo_changes.push((tick, us));
                }
                EventKind::Channel { channel, message } if *channel != PERCUSSION_CHANNEL => match *message {
                    ChannelMessage::NoteOn { key, velocity } if velocity > 0 => {
                        open.entry((*channel, key)).or_default().push_back((tick, velocity, idx));
                    }
                    ChannelMessage::NoteOn { key, .. } | ChannelMessage::NoteOff { key, .. } => {
                        if let Some(on) = open.get_mut(&(*channel, key)).and_then(VecDeque::pop_front) {
                            close(&mut notes, on, *channel, key, tick);
                        }
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        let mut dangling: Vec<_> = open
            .into_iter()
            .flat_map(|((ch, key), q)| q.into_iter().map(move |on| (on, ch, key)))
            .collect();
        dangling.sort_by_key(|&((_, _, idx), _, _)| idx);
        for (on, ch, key) in dangling {
            close(&mut notes, on, ch, key, tick);
        }
    }
    notes.sort_by_key(|&(k, _)| k);
    (notes.into_iter().map(|(_, n)| n).collect(), TempoMap::from_changes(tempo_changes))
}

fn validate_note(n: &NoteEvent) -> Result<(), MidiError> {
    if n.pitch > 127 || n.velocity == 0 || n.velocity > 127 || n.channel > 15 || n.duration_ticks == 0 {
        return Err(MidiError::InvalidNote(format!("{n:?}")));
    }
    Ok(())
}

/// Writes `notes` (sorted by onset) as a single-track format-0 file.
///
/// Simultaneous events are ordered: tempo changes, then note-offs, then
/// note-ons, each in input order. Track indices are not preserved.
pub fn write_midi(notes: &[NoteEvent], tempo: &TempoMap, division: u16) -> Result<Vec<u8>, MidiError> {
    if division == 0 || division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedDivision(division));
    }
    for n in notes {
        validate_note(n)?;
    }
    if notes.windows(2).any(|w| w[1].onset_ticks < w[0].onset_ticks) {
        return Err(MidiError::InvalidNote("notes are not sorted by onset".into()));
    }

    // (tick, class, index) with class 0 = tempo, 1 = note-off, 2 = note-on.
    let mut timeline: Vec<(u64, u8, usize)> = Vec::with_capacity(notes.len() * 2 + tempo.entries.len());
    timeline.extend(tempo.entries.iter().enumerate().map(|(i, e)| (e.0, 0, i)));
    for (i, n) in notes.iter().enumerate() {
        timeline.push((n.onset_ticks, 2, i));
        timeline.push((n.end_ticks(), 1, i));
    }
    timeline.sort_unstable();

    let mut track = Vec::with_capacity(timeline.len() * 4 + 4);
    let mut last = 0u64;
    for &(tick, class, i) in &timeline {
        let delta = u32::try_from(tick - last)
            .ok()
            .filter(|&d| d <= 0x0FFF_FFFF)
            .ok_or_else(|| MidiError::InvalidNote("delta time exceeds varint range".into()))?;
        write_varint(delta, &mut track);
        last = tick;
        match class {
            0 => {
                let us = tempo.entries[i].1;
                track.extend_from_slice(&[0xFF, META_TEMPO, 3, (us >> 16) as u8, (us >> 8) as u8, us as u8]);
            }
            1 => {
                let n = &notes[i];
                track.extend_from_slice(&[0x80 | n.channel, n.pitch, 0x40]);
            }
            _ => {
                let n = &notes[i];
                track.extend_from_slice(&[0x90 | n.channel, n.pitch, n.velocity]);
            }
        }
    }
    track.extend_from_slice(&[0x00, 0xFF, META_END_OF_TRACK, 0x00]);

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(onset: u64, dur: u64, pitch: u8) -> NoteEvent {
        NoteEvent { onset_ticks: onset, duration_ticks: dur, pitch, velocity: 64, channel: 0, track_index: 0 }
    }

    fn smf(division: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&(if tracks.len() == 1 { 0u16 } else { 1 }).to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn varint_examples() {
        assert_eq!(read_varint(&[0x81, 0x48]).unwrap(), (200, 2));
        assert_eq!(read_varint(&[0x00]).unwrap(), (0, 1));
        assert_eq!(read_varint(&[0xFF, 0xFF, 0xFF, 0x7F]).unwrap(), (0x0FFF_FFFF, 4));
        assert!(matches!(read_varint(&[0x81]), Err(MidiError::TruncatedTrack { .. })));
        assert!(matches!(read_varint(&[0x80, 0x80, 0x80, 0x80, 0x00]), Err(MidiError::MalformedTrack { .. })));
        for v in [0u32, 1, 127, 128, 200, 16383, 16384, 0x0FFF_FFFF] {
            let mut buf = Vec::new();
            write_varint(v, &mut buf);
            assert_eq!(read_varint(&buf).unwrap(), (v, buf.len()));
        }
    }

    #[test]
    fn velocity_zero_note_on_closes_note() {
        // delta 0 on(60,64); delta 480 (0x83 0x60) on(60,0); EOT
        let bytes = smf(480, &[&[0x00, 0x90, 60, 64, 0x83, 0x60, 0x90, 60, 0, 0x00, 0xFF, 0x2F, 0x00]]);
        let file = parse_midi(&bytes).unwrap();
        let (notes, tempo) = extract_notes(&file);
        assert_eq!(notes, vec![note(0, 480, 60)]);
        assert_eq!(tempo, TempoMap::default());
    }

    #[test]
    fn running_status_is_honoured() {
        // on(60) with explicit status, then on(64) and both offs under running status
        let bytes = smf(
            96,
            &[&[0x00, 0x90, 60, 100, 0x00, 64, 90, 0x60, 60, 0, 0x00, 64, 0, 0x00, 0xFF, 0x2F, 0x00]],
        );
        let (notes, _) = extract_notes(&parse_midi(&bytes).unwrap());
        assert_eq!(notes.len(), 2);
        assert_eq!((notes[0].pitch, notes[0].velocity, notes[0].duration_ticks), (60, 100, 96));
        assert_eq!((notes[1].pitch, notes[1].velocity, notes[1].duration_ticks), (64, 90, 96));
    }

    #[test]
    fn overlapping_same_pitch_pairs_fifo() {
        // on@0, on@100, off@200, off@300 on the same key
        let bytes = smf(
            480,
            &[&[0x00, 0x90, 60, 10, 0x64, 0x90, 60, 20, 0x64, 0x80, 60, 0, 0x64, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00]],
        );
        let (notes, _) = extract_notes(&parse_midi(&bytes).unwrap());
        assert_eq!(notes.len(), 2);
        assert_eq!((notes[0].onset_ticks, notes[0].duration_ticks, notes[0].velocity), (0, 200, 10));
        assert_eq!((notes[1].onset_ticks, notes[1].duration_ticks, notes[1].velocity), (100, 200, 20));
    }

    #[test]
    fn dangling_note_runs_to_end_of_track() {
        let bytes = smf(480, &[&[0x00, 0x90, 62, 50, 0x83, 0x60, 0xFF, 0x2F, 0x00]]);
        let (notes, _) = extract_notes(&parse_midi(&bytes).unwrap());
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].duration_ticks, 480);
    }

    #[test]
    fn percussion_and_meta_are_skipped() {
        let bytes = smf(
            480,
            &[&[
                0x00, 0xFF, 0x03, 0x03, b'a', b'b', b'c', // track name
                0x00, 0xF0, 0x02, 0x7E, 0xF7, // sysex kept opaque
                0x00, 0x99, 36, 100, 0x10, 0x89, 36, 0, // percussion
                0x00, 0x91, 70, 80, 0x10, 0x81, 70, 0, 0x00, 0xFF, 0x2F, 0x00,
            ]],
        );
        let file = parse_midi(&bytes).unwrap();
        assert!(file.tracks[0].contains(&TrackEvent { delta: 0, kind: EventKind::SysEx { status: 0xF0, data: vec![0x7E, 0xF7] } }));
        let (notes, _) = extract_notes(&file);
        assert_eq!(notes.len(), 1);
        assert_eq!((notes[0].pitch, notes[0].channel), (70, 1));
    }

    #[test]
    fn two_track_file_merges_by_onset() {
        let conductor: &[u8] = &[0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, 0x00, 0xFF, 0x2F, 0x00];
        let t1: &[u8] = &[0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0, 0x00, 0x90, 64, 64, 0x83, 0x60, 0x80, 64, 0, 0x00, 0xFF, 0x2F, 0x00];
        let t2: &[u8] = &[0x81, 0x70, 0x91, 67, 64, 0x83, 0x60, 0x81, 67, 0, 0x00, 0xFF, 0x2F, 0x00];
        let file = parse_midi(&smf(480, &[conductor, t1, t2])).unwrap();
        assert_eq!(file.format, SmfFormat::MultiTrack);
        let (notes, tempo) = extract_notes(&file);
        let summary: Vec<_> = notes.iter().map(|n| (n.onset_ticks, n.pitch, n.track_index)).collect();
        assert_eq!(summary, vec![(0, 60, 1), (240, 67, 2), (480, 64, 1)]);
        assert_eq!(tempo.entries(), &[(0, 500_000)]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_midi(b"RIFF0000000000"), Err(MidiError::MalformedHeader(_))));
        let mut smpte = smf(480, &[&[0x00, 0xFF, 0x2F, 0x00]]);
        smpte[12] = 0xE7;
        smpte[13] = 0x28;
        assert_eq!(parse_midi(&smpte), Err(MidiError::UnsupportedDivision(0xE728)));
        let mut f2 = smf(480, &[&[0x00, 0xFF, 0x2F, 0x00]]);
        f2[9] = 2;
        assert_eq!(parse_midi(&f2), Err(MidiError::UnsupportedFormat(2)));
    }

    #[test]
    fn every_truncation_is_a_typed_error() {
        let bytes = write_midi(&[note(0, 480, 60), note(480, 240, 62)], &TempoMap::default(), 480).unwrap();
        for cut in 0..bytes.len() {
            assert!(parse_midi(&bytes[..cut]).is_err(), "prefix of length {cut} parsed");
        }
        assert!(parse_midi(&bytes).is_ok());
    }

    #[test]
    fn empty_note_list_writes_tempo_only_track() {
        let bytes = write_midi(&[], &TempoMap::default(), 480).unwrap();
        let file = parse_midi(&bytes).unwrap();
        assert_eq!(file.tracks.len(), 1);
        assert_eq!(file.tracks[0].len(), 2);
        assert!(file.tracks[0][1].is_end_of_track());
        let (notes, tempo) = extract_notes(&file);
        assert!(notes.is_empty());
        assert_eq!(tempo, TempoMap::default());
    }

    #[test]
    fn single_note_round_trip() {
        let n = note(0, 480, 60);
        let (notes, _) = extract_notes(&parse_midi(&write_midi(&[n], &TempoMap::default(), 480).unwrap()).unwrap());
        assert_eq!(notes, vec![n]);
    }

    #[test]
    fn writer_rejects_invalid_input() {
        assert!(write_midi(&[note(10, 1, 60), note(0, 1, 60)], &TempoMap::default(), 480).is_err());
        assert!(write_midi(&[note(0, 0, 60)], &TempoMap::default(), 480).is_err());
        assert!(write_midi(&[], &TempoMap::default(), 0).is_err());
    }

    #[test]
    fn tempo_map_seconds() {
        let map = TempoMap::from_changes(vec![(960, 250_000)]);
        assert_eq!(map.entries(), &[(0, 500_000), (960, 250_000)]);
        assert_eq!(map.tempo_at(959), 500_000);
        assert_eq!(map.tempo_at(960), 250_000);
        assert!((map.seconds_at(960, 480) - 1.0).abs() < 1e-12);
        assert!((map.seconds_at(1440, 480) - 1.25).abs() < 1e-12);
        assert!((TempoMap::default().seconds_at(32 * 120, 480) - 4.0).abs() < 1e-12);
    }
}
