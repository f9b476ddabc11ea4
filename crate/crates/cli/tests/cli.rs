use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moralframe"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = run(dir, &["synth", "--out", "demo", "--tweets", "40"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn demo_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for cmd in ["train", "predict", "analyze", "lexicon"] {
        let o = run(dir.path(), &["-c", "demo/config.toml", "--set", "train.epochs=2", cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
        for line in String::from_utf8(o.stdout).unwrap().lines() {
            assert!(dir.path().join(line).exists(), "{cmd} listed missing artifact {line}");
        }
    }
    let out = dir.path().join("demo/out");
    for f in [
        "params.json",
        "predictions.jsonl",
        "analysis/partisanship.tsv",
        "lexicon.tsv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn ground_reports_sizes_and_dumps_lp() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let priors = ["-c", "demo/config.toml", "--set", "paths.program=\"prior.rules\""];
    fs::write(dir.path().join("demo/prior.rules"), moralframe::dsl::PRIOR_PROGRAM).unwrap();
    let o = run(dir.path(), &[&priors[..], &["ground"]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("atoms "), "{text}");

    let o = run(
        dir.path(),
        &[&priors[..], &["ground", "--dump", "--out", "g.lp"]].concat(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read_to_string(dir.path().join("g.lp")).unwrap().starts_with('\\'));
}

#[test]
fn config_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = run(dir.path(), &["-c", "demo/config.toml", "--set", "folds=1", "train"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("folds"));

    let o = run(
        dir.path(),
        &["-c", "demo/config.toml", "--set", "train.epochs=\"many\"", "train"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.epochs"), "{}", stderr(&o));

    let o = run(dir.path(), &["-c", "nowhere.toml", "train"]);
    assert_eq!(code(&o), 2);

    let o = run(dir.path(), &["train"]);
    assert_eq!(code(&o), 2);

    let o = run(dir.path(), &["-c", "demo/config.toml", "--jobs", "0", "train"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn data_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = run(dir.path(), &["-c", "demo/config.toml", "analyze"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("moralframe predict"), "{}", stderr(&o));

    let o = run(dir.path(), &["-c", "demo/config.toml", "predict"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("moralframe train"), "{}", stderr(&o));

    fs::write(dir.path().join("demo/corpus.jsonl"), "{not json\n").unwrap();
    let o = run(dir.path(), &["-c", "demo/config.toml", "train"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn sequential_and_parallel_runs_match() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut outputs = Vec::new();
    for (name, extra) in [("par", None), ("seq", Some("--sequential"))] {
        let set = format!("paths.output=\"{name}\"");
        let mut args = vec!["-c", "demo/config.toml", "--set", &set, "--set", "train.epochs=2"];
        args.extend(extra);
        for cmd in ["train", "predict"] {
            let o = run(dir.path(), &[&args[..], &[cmd]].concat());
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        outputs.push(fs::read(dir.path().join("demo").join(name).join("predictions.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
