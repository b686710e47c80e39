//! The genre analysis and the k-fold transfer comparison.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::data::{corpus_fingerprint, hex, kfold_split, melodies_of, split_songs, Song};
use super::HarnessError;
use crate::baselines::{run_baseline, BaselineKind, BaselineSpec, DistillConfig};
use crate::codec::MelodySequence;
use crate::expansion::{evaluate_selected, mcts_search, SearchConfig};
use crate::scalar::Scalar;
use crate::vae::{reconstruction_accuracy, save_checkpoint, write_checkpoint, ModelParams, TrainConfig};

/// Deterministic child seed for a named purpose.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Approach {
    Baseline(BaselineKind),
    CeMcts,
}

impl Approach {
    /// Reporting order.
    pub const ORDER: [Approach; 6] = [
        Approach::Baseline(BaselineKind::NonTransfer),
        Approach::Baseline(BaselineKind::ZeroShot),
        Approach::Baseline(BaselineKind::FinetuneAll),
        Approach::Baseline(BaselineKind::FinetuneLast),
        Approach::Baseline(BaselineKind::StudentTeacher),
        Approach::CeMcts,
    ];

    /// Everything but the student-teacher baseline.
    pub fn headline() -> Vec<Approach> {
        Self::ORDER.into_iter().filter(|a| *a != Approach::Baseline(BaselineKind::StudentTeacher)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::Baseline(k) => k.name(),
            Approach::CeMcts => "CE-MCTS",
        }
    }

    fn rank(self) -> usize {
        Self::ORDER.iter().position(|a| *a == self).expect("listed")
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        if norm == "cemcts" {
            return Ok(Approach::CeMcts);
        }
        s.parse::<BaselineKind>().map(Approach::Baseline).map_err(|_| format!("unknown approach {s:?}"))
    }
}

/// Parses a comma-separated approach list and sorts it into reporting order.
pub fn parse_approaches(list: &str) -> Result<Vec<Approach>, String> {
    let mut out: Vec<Approach> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let a: Approach = part.parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err("no approaches selected".into());
    }
    out.sort_by_key(|a| a.rank());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub approach: Approach,
    /// Zero-based.
    pub fold: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub corpus_fingerprint: String,
    pub pretrained_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub approaches: Vec<Approach>,
    pub folds: usize,
    pub results: Vec<FoldResult>,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    pub fn cell(&self, approach: Approach, fold: usize) -> Option<&FoldResult> {
        self.results.iter().find(|r| r.approach == approach && r.fold == fold)
    }

    fn values(&self, approach: Approach, test: bool) -> Vec<f64> {
        (0..self.folds)
            .filter_map(|f| self.cell(approach, f))
            .map(|r| if test { r.test_accuracy } else { r.train_accuracy })
            .collect()
    }

    /// Arithmetic mean over folds.
    pub fn average(&self, approach: Approach, test: bool) -> Option<f64> {
        let v = self.values(approach, test);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Raw fractions, one row per approach and fold plus an `average` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["approach", "fold", "train_accuracy", "test_accuracy"]).expect("in-memory");
        for &a in &self.approaches {
            for f in 0..self.folds {
                if let Some(r) = self.cell(a, f) {
                    w.write_record([a.name(), &(f + 1).to_string(), &r.train_accuracy.to_string(), &r.test_accuracy.to_string()])
                        .expect("in-memory");
                }
            }
            if let (Some(tr), Some(te)) = (self.average(a, false), self.average(a, true)) {
                w.write_record([a.name(), "average", &tr.to_string(), &te.to_string()]).expect("in-memory");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// Train and test tables, percentages with two decimals.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for (title, test) in [("Training reconstruction accuracy (%)", false), ("Test reconstruction accuracy (%)", true)] {
            s.push_str(&format!("### {title}\n\n| Approach |"));
            for f in 0..self.folds {
                s.push_str(&format!(" Fold {} |", f + 1));
            }
            s.push_str(" Average |\n|---|");
            s.push_str(&"---:|".repeat(self.folds + 1));
            s.push('\n');
            for &a in &self.approaches {
                s.push_str(&format!("| {a} |"));
                for f in 0..self.folds {
                    match self.cell(a, f) {
                        Some(r) => s.push_str(&format!(" {:.2} |", 100.0 * if test { r.test_accuracy } else { r.train_accuracy })),
                        None => s.push_str(" - |"),
                    }
                }
                match self.average(a, test) {
                    Some(v) => s.push_str(&format!(" {:.2} |\n", 100.0 * v)),
                    None => s.push_str(" - |\n"),
                }
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "seed {} | config {} | corpus {} | pretrained {}\n",
            self.metadata.seed,
            &self.metadata.config_hash[..12.min(self.metadata.config_hash.len())],
            &self.metadata.corpus_fingerprint[..12.min(self.metadata.corpus_fingerprint.len())],
            &self.metadata.pretrained_fingerprint[..12.min(self.metadata.pretrained_fingerprint.len())],
        ));
        s
    }
}

/// SHA-256 of a model's checkpoint serialization.
pub fn model_fingerprint<T: Scalar>(p: &ModelParams<T>) -> String {
    let mut buf = Vec::new();
    write_checkpoint(p, &mut buf).expect("in-memory");
    hex(&Sha256::digest(&buf))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSettings {
    pub approaches: Vec<Approach>,
    pub folds: usize,
    pub finetune: TrainConfig,
    pub distill: DistillConfig,
    pub search: SearchConfig,
    pub seed: u64,
    /// Recorded in the report metadata.
    pub config_hash: String,
}

/// Adapts `pretrained` to every fold of `songs` with each approach and
/// scores train and test accuracy. CE-MCTS scores are averages over its
/// selected expansions. With `out`, adapted checkpoints
/// (`<approach>_<fold>.ckpt`) and search traces are written there.
pub fn run_transfer_comparison<T: Scalar>(
    pretrained: &ModelParams<T>,
    songs: &[Song],
    settings: &ComparisonSettings,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentReport, HarnessError> {
    let ids: Vec<String> = songs.iter().map(|s| s.id.clone()).collect();
    let folds = kfold_split(&ids, settings.folds, derive_seed(settings.seed, "folds"))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut results = Vec::new();
    for fold in &folds {
        let (train, test) = split_songs(songs, fold);
        if train.is_empty() || test.is_empty() {
            return Err(HarnessError::NoMelodies(format!("fold {}", fold.fold_index + 1)));
        }
        for &approach in &settings.approaches {
            let (train_accuracy, test_accuracy) =
                run_approach(approach, pretrained, &train, &test, settings, fold.fold_index, out)?;
            progress(&format!(
                "fold {} {approach}: train {:.4} test {:.4}",
                fold.fold_index + 1,
                train_accuracy,
                test_accuracy
            ));
            results.push(FoldResult { approach, fold: fold.fold_index, train_accuracy, test_accuracy });
        }
    }
    Ok(ExperimentReport {
        approaches: settings.approaches.clone(),
        folds: folds.len(),
        results,
        metadata: ReportMetadata {
            seed: settings.seed,
            config_hash: settings.config_hash.clone(),
            corpus_fingerprint: corpus_fingerprint(&melodies_of(songs)),
            pretrained_fingerprint: model_fingerprint(pretrained),
        },
    })
}

fn run_approach<T: Scalar>(
    approach: Approach,
    pretrained: &ModelParams<T>,
    train: &[MelodySequence],
    test: &[MelodySequence],
    settings: &ComparisonSettings,
    fold: usize,
    out: Option<&Path>,
) -> Result<(f64, f64), HarnessError> {
    let tag = format!("{}_{}", approach.name(), fold + 1);
    match approach {
        Approach::Baseline(kind) => {
            let mut cfg = settings.finetune.clone();
            cfg.seed = derive_seed(settings.seed, &format!("train/{tag}"));
            let mut spec = BaselineSpec::new(kind, cfg);
            spec.init_seed = derive_seed(settings.seed, &format!("init/{tag}"));
            if kind == BaselineKind::StudentTeacher {
                spec.distill = Some(settings.distill);
            }
            let (model, _) = run_baseline(&spec, pretrained, train)?;
            if let Some(dir) = out {
                save_checkpoint(&model, &dir.join(format!("{tag}.ckpt")))?;
            }
            Ok((reconstruction_accuracy(&model, train)?, reconstruction_accuracy(&model, test)?))
        }
        Approach::CeMcts => {
            let mut cfg = settings.search.clone();
            cfg.seed = derive_seed(settings.seed, &format!("search/{tag}"));
            let result = mcts_search(pretrained, train, &cfg)?;
            let chosen: Vec<_> = result.top.iter().map(|s| s.expansion.clone()).collect();
            let train_acc = result.top.iter().map(|s| s.fitness).sum::<f64>() / result.top.len() as f64;
            let report = evaluate_selected(&chosen, pretrained, test)?;
            if let Some(dir) = out {
                fs::write(dir.join(format!("{tag}.trace.jsonl")), result.trace_jsonl())?;
                for (i, ce) in chosen.iter().enumerate() {
                    let model = crate::expansion::apply_expansion(pretrained, ce)?;
                    if i == 0 {
                        save_checkpoint(&model, &dir.join(format!("{tag}.ckpt")))?;
                    }
                    save_checkpoint(&model, &dir.join(format!("{tag}_top{}.ckpt", i + 1)))?;
                }
            }
            Ok((train_acc, report.mean))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenreRow {
    pub name: String,
    pub sequences: usize,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Reconstruction accuracy of `model` on each named melody set. Empty sets
/// are reported, not fatal.
pub fn run_genre_analysis<T: Scalar>(model: &ModelParams<T>, sets: &[(String, Vec<MelodySequence>)]) -> Vec<GenreRow> {
    sets.iter()
        .map(|(name, seqs)| {
            if seqs.is_empty() {
                return GenreRow {
                    name: name.clone(),
                    sequences: 0,
                    accuracy: None,
                    error: Some(HarnessError::NoMelodies(name.clone()).to_string()),
                };
            }
            match reconstruction_accuracy(model, seqs) {
                Ok(a) => GenreRow { name: name.clone(), sequences: seqs.len(), accuracy: Some(a), error: None },
                Err(e) => GenreRow { name: name.clone(), sequences: seqs.len(), accuracy: None, error: Some(e.to_string()) },
            }
        })
        .collect()
}

pub fn genre_table_markdown(rows: &[GenreRow]) -> String {
    let mut s = String::from("| Dataset | Melodies | Accuracy (%) |\n|---|---:|---:|\n");
    for r in rows {
        let acc = match (&r.accuracy, &r.error) {
            (Some(a), _) => format!("{:.2}", 100.0 * a),
            (None, Some(e)) => e.clone(),
            (None, None) => "-".into(),
        };
        s.push_str(&format!("| {} | {} | {} |\n", r.name, r.sequences, acc));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ExperimentReport {
        let approaches = vec![Approach::Baseline(BaselineKind::ZeroShot), Approach::CeMcts];
        let mut results = Vec::new();
        for (i, &a) in approaches.iter().enumerate() {
            for f in 0..3 {
                results.push(FoldResult { approach: a, fold: f, train_accuracy: 0.5 + 0.1 * f as f64, test_accuracy: 0.25 * i as f64 + 0.01 * f as f64 });
            }
        }
        ExperimentReport {
            approaches,
            folds: 3,
            results,
            metadata: ReportMetadata { seed: 1, config_hash: "ab".repeat(32), corpus_fingerprint: "cd".repeat(32), pretrained_fingerprint: "ef".repeat(32) },
        }
    }

    #[test]
    fn approaches_parse_and_sort() {
        let a = parse_approaches("ce-mcts, zeroshot,NonTransfer").unwrap();
        assert_eq!(a, vec![Approach::Baseline(BaselineKind::NonTransfer), Approach::Baseline(BaselineKind::ZeroShot), Approach::CeMcts]);
        assert!(parse_approaches("").is_err());
        assert!(parse_approaches("magic").is_err());
        assert_eq!(Approach::headline().len(), 5);
    }

    #[test]
    fn averages_and_tables() {
        let r = report();
        assert!((r.average(Approach::CeMcts, true).unwrap() - 0.26).abs() < 1e-12);
        let md = r.to_markdown();
        assert!(md.contains("| Approach | Fold 1 | Fold 2 | Fold 3 | Average |"));
        assert!(md.contains("| ZeroShot | 50.00 | 60.00 | 70.00 | 60.00 |"));
        let zs = md.find("| ZeroShot").unwrap();
        assert!(zs < md.find("| CE-MCTS").unwrap());
        let csv = r.to_csv();
        assert!(csv.starts_with("approach,fold,train_accuracy,test_accuracy\n"));
        assert!(csv.contains("CE-MCTS,average,0.6,0.26"));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
