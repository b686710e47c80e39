//! Piano-roll SVG: time in seconds on x (0 to 4), MIDI pitch on y (0 to 127),
//! one red rectangle per note.

use std::fmt::Write;

use crate::codec::{decode_tokens, MelodySequence, DEFAULT_DIVISION};
use crate::midi::TempoMap;

pub const X_MAX_SECONDS: f64 = 4.0;
pub const Y_MAX_PITCH: u8 = 127;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 48.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 16.0;
const BOTTOM: f64 = 40.0;

fn plot_w() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn plot_h() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn x_of(seconds: f64) -> f64 {
    LEFT + seconds / X_MAX_SECONDS * plot_w()
}

/// Top edge of the row holding `pitch`; rows span the 128 pitches 0..=127.
fn y_of(pitch: f64) -> f64 {
    TOP + (1.0 - pitch / (Y_MAX_PITCH as f64 + 1.0)) * plot_h()
}

/// Renders the decoded notes of `seq` at 120 BPM (32 steps = 4 s).
pub fn render_pianoroll(seq: &MelodySequence) -> String {
    let tempo = TempoMap::constant_bpm(120.0);
    let notes = decode_tokens(seq, &tempo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="0" data-x-max="{X_MAX_SECONDS}" data-y-min="0" data-y-max="{Y_MAX_PITCH}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(&seq.source_id));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (x_of(0.0), x_of(X_MAX_SECONDS), y_of(0.0), y_of(Y_MAX_PITCH as f64 + 1.0));
    let _ = writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="ticks" font-family="sans-serif" font-size="10" text-anchor="middle">"#);
    for sec in 0..=X_MAX_SECONDS as u32 {
        let x = x_of(sec as f64);
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}">{sec}</text>"#, y0 + 16.0);
    }
    for pitch in [0u8, 32, 64, 96, 127] {
        let y = y_of(pitch as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{pitch}</text>"#, x0 - 6.0, y + 3.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">time (s)</text>"#, (x0 + x1) / 2.0, HEIGHT - 6.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})">pitch</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="notes" fill="red" stroke="darkred" stroke-width="0.5">"#);
    let row_h = plot_h() / (Y_MAX_PITCH as f64 + 1.0);
    for n in &notes {
        let start = tempo.seconds_at(n.onset_ticks, DEFAULT_DIVISION);
        let end = tempo.seconds_at(n.end_ticks(), DEFAULT_DIVISION);
        let _ = writeln!(
            s,
            r#"<rect class="note" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" data-pitch="{}" data-start="{}" data-end="{}"/>"#,
            x_of(start),
            y_of(n.pitch as f64 + 1.0),
            x_of(end) - x_of(start),
            row_h,
            n.pitch,
            start,
            end
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
