use std::path::Path;
use std::process::Command;

const TINY: &str = "\
[experiment]
folds = 2
source_songs = 6
source_test_songs = 3
target_songs = 6
approaches = NonTransfer, ZeroShot, FinetuneLast, CE-MCTS
[model]
hidden = 8
latent = 4
[pretrain]
max_epochs = 2
[finetune]
max_epochs = 2
[search]
iterations = 2
rollouts_per_iteration = 2
rollout_depth = 1
branching_limit = 2
top_k = 2
";

fn run(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_melody-ce"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn full_pipeline_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.ini"), TINY).unwrap();
    let common = ["--config", "tiny.ini", "--seed", "3"];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|s| s.to_string()).collect() };
    let call = |extra: &[&str]| {
        let args = with(extra);
        run(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    call(&["gen-corpus", "--profile", "target", "--out", "target"]);
    assert_eq!(std::fs::read_dir(d.join("target")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mid")).count(), 6);

    call(&["ingest", "target", "--out", "ingested"]);
    let listing = std::fs::read_to_string(d.join("ingested/melodies.txt")).unwrap();
    assert!(listing.lines().count() >= 6);

    call(&["pretrain", "--out", "pre"]);
    assert!(d.join("pre/pretrained.ckpt").exists());
    let resolved = std::fs::read_to_string(d.join("pre/config.ini")).unwrap();
    assert!(resolved.contains("seed = 3") || resolved.contains("seed=3"));

    let table = call(&["analyze", "--model", "pre/pretrained.ckpt", "target", "--out", "analysis"]);
    assert!(table.contains("| target |"));

    call(&["adapt", "--method", "FinetuneLast", "--model", "pre/pretrained.ckpt", "--data", "target", "--out", "adapt"]);
    call(&["adapt", "--method", "ce-mcts", "--model", "pre/pretrained.ckpt", "--out", "adapt"]);
    for f in ["FinetuneLast.ckpt", "CE-MCTS.ckpt", "CE-MCTS.trace.jsonl"] {
        assert!(d.join("adapt").join(f).exists(), "{f}");
    }

    let md = call(&["compare", "--model", "pre/pretrained.ckpt", "--out", "cmp"]);
    assert!(md.contains("| Approach | Fold 1 | Fold 2 | Average |"));
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Approach")).take(4).collect();
    assert!(rows[0].starts_with("| NonTransfer") && rows[3].starts_with("| CE-MCTS"), "{rows:?}");
    for f in ["results.csv", "results.md", "NonTransfer_1.ckpt", "CE-MCTS_2.ckpt", "CE-MCTS_1.trace.jsonl"] {
        assert!(d.join("cmp").join(f).exists(), "{f}");
    }

    call(&["sample", "--model", "pre/pretrained.ckpt", "--n", "2", "--out", "samples"]);
    for f in ["sample_0.mid", "sample_1.svg"] {
        assert!(d.join("samples").join(f).exists(), "{f}");
    }

    call(&["render", "samples/sample_0.mid", "--out", "rolls"]);
    call(&["render", "ingested/melodies.txt", "--out", "rolls2"]);
    assert!(d.join("rolls2/roll_000.svg").exists());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.ini"), TINY).unwrap();
    run(d, &["--config", "tiny.ini", "--seed", "5", "pretrain", "--out", "a"]);
    run(d, &["--config", "a/config.ini", "pretrain", "--out", "b"]);
    assert_eq!(std::fs::read(d.join("a/pretrained.ckpt")).unwrap(), std::fs::read(d.join("b/pretrained.ckpt")).unwrap());
    assert_eq!(std::fs::read(d.join("a/config.ini")).unwrap(), std::fs::read(d.join("b/config.ini")).unwrap());
}

#[test]
fn bad_config_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.ini"), "[search]\nepsilon = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_melody-ce"))
        .current_dir(tmp.path())
        .args(["--config", "bad.ini", "gen-corpus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
