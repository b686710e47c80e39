use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use melody_ce::baselines::{run_baseline, BaselineSpec};
use melody_ce::codec::{extract_melodies, quantize, read_sequences, write_sequences, MelodySequence};
use melody_ce::expansion::{apply_expansion, mcts_search};
use melody_ce::harness::config::ExperimentConfig;
use melody_ce::harness::data::{ingest_dir, melodies_of, Song};
use melody_ce::harness::experiment::{
    derive_seed, genre_table_markdown, run_genre_analysis, run_transfer_comparison, Approach,
};
use melody_ce::harness::pipeline::{pretrain_from_config, sample_and_export, synthetic_songs, write_corpus};
use melody_ce::harness::render::render_pianoroll;
use melody_ce::harness::HarnessError;
use melody_ce::midi::{extract_notes, parse_midi};
use melody_ce::vae::{load_checkpoint, reconstruction_accuracy, save_checkpoint, train, ModelParams};
use melody_ce::Params;

#[derive(Parser)]
#[command(name = "melody-ce", version, about = "Melody VAE transfer experiments with conceptual expansion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Top-level seed; overrides `[experiment] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Corpus {
    Source,
    SourceTest,
    Target,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic MIDI corpus.
    GenCorpus {
        #[arg(long, value_enum, default_value = "target")]
        profile: Corpus,
        /// Number of songs; defaults to the configured corpus size.
        #[arg(long)]
        songs: Option<usize>,
    },
    /// Extract melody windows from a MIDI directory into `melodies.txt`.
    Ingest { dir: PathBuf },
    /// Train a model on the source corpus (synthetic unless `--data` is given).
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Reconstruction accuracy per MIDI directory.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        /// Directories to score; defaults to the synthetic source test and target corpora.
        dirs: Vec<PathBuf>,
    },
    /// Adapt a pretrained model to all songs of a target set.
    Adapt {
        #[arg(long)]
        method: Approach,
        #[arg(long)]
        model: PathBuf,
        /// Target MIDI directory; defaults to the synthetic target corpus.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// k-fold comparison of every configured approach.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample melodies from the prior and export MIDI and SVG.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Render piano rolls for a MIDI file or a `melodies.txt` listing.
    Render { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let Common { seed, config, out } = cli.common;
    let cfg = match &config {
        Some(path) => ExperimentConfig::load(path, seed)?,
        None => ExperimentConfig::with_seed(seed.unwrap_or(0)),
    };
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.ini"), cfg.to_ini())?;
    let log = |m: &str| eprintln!("{m}");

    match cli.command {
        Command::GenCorpus { profile, songs } => {
            let (p, n) = match profile {
                Corpus::Source => (&cfg.source, cfg.source_songs),
                Corpus::SourceTest => (&cfg.source_test, cfg.source_test_songs),
                Corpus::Target => (&cfg.target, cfg.target_songs),
            };
            let paths = write_corpus(p, songs.unwrap_or(n), &out)?;
            log(&format!("wrote {} songs to {}", paths.len(), out.display()));
        }
        Command::Ingest { dir } => {
            let songs = ingest_songs(&dir)?;
            let seqs = melodies_of(&songs);
            write_sequences(fs::File::create(out.join("melodies.txt"))?, &seqs)?;
            log(&format!("{} songs, {} melody windows", songs.len(), seqs.len()));
        }
        Command::Pretrain { data } => {
            let (model, train_log) = match data {
                None => {
                    let pre = pretrain_from_config(&cfg)?;
                    log(&format!("held-out source accuracy {:.4}", reconstruction_accuracy(&pre.model, &pre.source_test)?));
                    (pre.model, pre.log)
                }
                Some(dir) => {
                    let seqs = melodies_of(&ingest_songs(&dir)?);
                    let init = ModelParams::init(derive_seed(cfg.seed, "init"), cfg.dims);
                    train(&init, &seqs, &cfg.pretrain)?
                }
            };
            save_checkpoint(&model, &out.join("pretrained.ckpt"))?;
            fs::write(out.join("train_log.json"), to_json(&train_log))?;
            log(&format!("{} epochs, final train accuracy {:.4}", train_log.epochs.len(), train_log.final_accuracy().unwrap_or(f64::NAN)));
        }
        Command::Analyze { model, dirs } => {
            let model: Params = load_checkpoint(&model)?;
            let sets = if dirs.is_empty() {
                vec![
                    (cfg.source_test.name.clone(), melodies_of(&synthetic_songs(&cfg.source_test, cfg.source_test_songs)?)),
                    (cfg.target.name.clone(), melodies_of(&synthetic_songs(&cfg.target, cfg.target_songs)?)),
                ]
            } else {
                let mut sets = Vec::new();
                for d in &dirs {
                    let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| d.display().to_string());
                    sets.push((name, melodies_of(&ingest_songs(d)?)));
                }
                sets
            };
            let rows = run_genre_analysis(&model, &sets);
            let table = genre_table_markdown(&rows);
            fs::write(out.join("genres.md"), &table)?;
            fs::write(out.join("genres.json"), to_json(&rows))?;
            print!("{table}");
        }
        Command::Adapt { method, model, data } => {
            let pretrained: Params = load_checkpoint(&model)?;
            let seqs = melodies_of(&target_songs(&cfg, data.as_deref())?);
            let tag = method.name();
            let adapted = match method {
                Approach::Baseline(kind) => {
                    let mut spec = BaselineSpec::new(kind, cfg.finetune.clone());
                    spec.init_seed = derive_seed(cfg.seed, &format!("init/{tag}"));
                    spec.distill = (kind == melody_ce::baselines::BaselineKind::StudentTeacher).then_some(cfg.distill);
                    let (m, train_log) = run_baseline(&spec, &pretrained, &seqs)?;
                    fs::write(out.join(format!("{tag}.log.json")), to_json(&train_log))?;
                    m
                }
                Approach::CeMcts => {
                    let result = mcts_search(&pretrained, &seqs, &cfg.search)?;
                    fs::write(out.join(format!("{tag}.trace.jsonl")), result.trace_jsonl())?;
                    fs::write(out.join(format!("{tag}.stats.json")), to_json(&result.stats))?;
                    apply_expansion(&pretrained, &result.top[0].expansion)?
                }
            };
            save_checkpoint(&adapted, &out.join(format!("{tag}.ckpt")))?;
            log(&format!("{tag}: train accuracy {:.4}", reconstruction_accuracy(&adapted, &seqs)?));
        }
        Command::Compare { model, data } => {
            let pretrained: Params = load_checkpoint(&model)?;
            let songs = target_songs(&cfg, data.as_deref())?;
            let report = run_transfer_comparison(&pretrained, &songs, &cfg.comparison_settings(), Some(&out), &mut |m| log(m))?;
            fs::write(out.join("results.csv"), report.to_csv())?;
            let md = report.to_markdown();
            fs::write(out.join("results.md"), &md)?;
            fs::write(out.join("report.json"), to_json(&report))?;
            print!("{md}");
        }
        Command::Sample { model, n, temperature } => {
            let model: Params = load_checkpoint(&model)?;
            let seqs = sample_and_export(
                &model,
                n.unwrap_or(cfg.sample_count),
                temperature.unwrap_or(cfg.sample_temperature),
                derive_seed(cfg.seed, "sample"),
                &out,
            )?;
            log(&format!("wrote {} samples to {}", seqs.len(), out.display()));
        }
        Command::Render { input } => {
            let seqs = read_render_input(&input)?;
            for (i, s) in seqs.iter().enumerate() {
                fs::write(out.join(format!("roll_{i:03}.svg")), render_pianoroll(s))?;
            }
            log(&format!("rendered {} piano rolls", seqs.len()));
        }
    }
    Ok(())
}

fn ingest_songs(dir: &Path) -> Result<Vec<Song>, HarnessError> {
    let (songs, errors) = ingest_dir(dir)?;
    for e in &errors {
        eprintln!("skipped {e}");
    }
    if melodies_of(&songs).is_empty() {
        return Err(HarnessError::NoMelodies(dir.display().to_string()));
    }
    Ok(songs)
}

fn target_songs(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<Vec<Song>, HarnessError> {
    match dir {
        Some(d) => ingest_songs(d),
        None => synthetic_songs(&cfg.target, cfg.target_songs),
    }
}

fn read_render_input(path: &Path) -> Result<Vec<MelodySequence>, HarnessError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"MThd") {
        let file = parse_midi(&bytes)?;
        let (notes, tempo) = extract_notes(&file);
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(extract_melodies(&quantize(&notes, &tempo, file.division), &id));
    }
    read_sequences(bytes.as_slice()).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}
