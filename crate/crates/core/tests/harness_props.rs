use std::collections::BTreeSet;

use melody_ce::baselines::BaselineKind;
use melody_ce::codec::{decode_tokens, MelodySequence, NOTE_OFF, NO_EVENT, STEPS, VOCAB};
use melody_ce::harness::corpus::{generate_corpus, generate_song, GenreProfile};
use melody_ce::harness::data::{ingest_dir, kfold_split};
use melody_ce::harness::experiment::{run_genre_analysis, Approach, ExperimentReport, FoldResult, ReportMetadata};
use melody_ce::harness::render::render_pianoroll;
use melody_ce::midi::TempoMap;
use melody_ce::vae::{Dims, ModelParams};
use proptest::prelude::*;

fn window() -> impl Strategy<Value = MelodySequence> {
    prop::collection::vec((0u8..10, 2u8..VOCAB as u8), STEPS).prop_map(|draws| {
        let mut t = [NO_EVENT; STEPS];
        let mut sounding = false;
        for (slot, (kind, pitch)) in t.iter_mut().zip(draws) {
            match kind {
                0..=2 => {
                    *slot = pitch;
                    sounding = true;
                }
                3 if sounding => {
                    *slot = NOTE_OFF;
                    sounding = false;
                }
                _ => {}
            }
        }
        MelodySequence::new(t, "w")
    })
}

proptest! {
    #[test]
    fn folds_partition_the_ids(n in 2usize..150, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let folds = kfold_split(&ids, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = BTreeSet::new();
        for f in &folds {
            prop_assert!(f.test_ids.len() == n / k || f.test_ids.len() == n / k + 1);
            prop_assert_eq!(f.test_ids.len() + f.train_ids.len(), n);
            for id in &f.test_ids {
                prop_assert!(seen.insert(id.clone()));
                prop_assert!(!f.train_ids.contains(id));
            }
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(kfold_split(&ids, k, seed).unwrap(), folds);
    }

    #[test]
    fn report_averages_are_fold_means(cells in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 10)) {
        let approaches = vec![Approach::Baseline(BaselineKind::ZeroShot), Approach::CeMcts];
        let results = cells
            .iter()
            .enumerate()
            .map(|(i, &(tr, te))| FoldResult { approach: approaches[i / 5], fold: i % 5, train_accuracy: tr, test_accuracy: te })
            .collect();
        let report = ExperimentReport {
            approaches: approaches.clone(),
            folds: 5,
            results,
            metadata: ReportMetadata { seed: 0, config_hash: "c".into(), corpus_fingerprint: "f".into(), pretrained_fingerprint: "p".into() },
        };
        for (a_i, &a) in approaches.iter().enumerate() {
            let slice = &cells[a_i * 5..a_i * 5 + 5];
            let tr = slice.iter().map(|c| c.0).sum::<f64>() / 5.0;
            let te = slice.iter().map(|c| c.1).sum::<f64>() / 5.0;
            prop_assert!((report.average(a, false).unwrap() - tr).abs() < 1e-12);
            prop_assert!((report.average(a, true).unwrap() - te).abs() < 1e-12);
        }
        let csv = report.to_csv();
        prop_assert_eq!(csv.lines().count(), 1 + 2 * 6);
    }

    #[test]
    fn piano_roll_rectangles_follow_the_decoder(seq in window()) {
        let svg = render_pianoroll(&seq);
        let notes = decode_tokens(&seq, &TempoMap::constant_bpm(120.0));
        prop_assert_eq!(svg.matches(r#"class="note""#).count(), notes.len());
        let starts: Vec<f64> = svg
            .split("data-start=\"")
            .skip(1)
            .map(|s| s.split('"').next().unwrap().parse().unwrap())
            .collect();
        let expected: Vec<f64> = notes.iter().map(|n| n.onset_ticks as f64 / 480.0 * 0.5).collect();
        prop_assert_eq!(starts, expected);
        prop_assert!(svg.contains(r#"data-x-min="0" data-x-max="4" data-y-min="0" data-y-max="127""#));
    }
}

/// Mean absolute interval computed straight from the generated notes.
fn interval_oracle(profile: &GenreProfile, n: u64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        let notes = generate_song(profile, i).unwrap();
        for w in notes.windows(2) {
            sum += (f64::from(w[1].pitch) - f64::from(w[0].pitch)).abs();
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn target_melodies_move_by_smaller_intervals() {
    let src = interval_oracle(&GenreProfile::source_pop(), 100);
    let tgt = interval_oracle(&GenreProfile::target_folk(), 100);
    assert!(tgt < src, "target {tgt} vs source {src}");
}

#[test]
fn corpora_are_reproducible_and_empty_when_asked() {
    let p = GenreProfile::target_folk();
    assert_eq!(generate_corpus(&p, 5).unwrap(), generate_corpus(&p, 5).unwrap());
    assert!(generate_corpus(&p, 0).unwrap().is_empty());
}

#[test]
fn empty_directory_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (songs, errors) = ingest_dir(dir.path()).unwrap();
    assert!(songs.is_empty() && errors.is_empty());
    let model = ModelParams::<f64>::init(1, Dims::new(4, 2));
    let rows = run_genre_analysis(&model, &[("empty".into(), Vec::new())]);
    assert!(rows[0].accuracy.is_none());
    assert!(rows[0].error.as_deref().unwrap().contains("no melodies"));
}
