use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causal_crowds::dataset::{read_split, write_predictions, PredictionSet, RemovalKey, MANIFEST_FILE, SCENES_FILE};
use causal_crowds::learn::{prepare, Normalizer, ToyModel};
use causal_crowds::seed::mix;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_causal-crowds"));
    c.env_remove("CAUSAL_CROWDS_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("split");
    let mut args = vec!["generate", "--split", "id", "--scenes", "5", "--seed", "3", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn report_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).filter(|r| r.starts_with(' ')))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn help_succeeds_for_every_subcommand() {
    assert_eq!(code(&run(&["--help"])), 0);
    for sub in ["generate", "evaluate", "train-toy", "predict-toy"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn invalid_arguments_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for args in [
        vec!["generate", "--split", "id", "--scenes", "0", "--out", s(&out)],
        vec!["generate", "--split", "mall", "--scenes", "3", "--out", s(&out)],
        vec!["generate", "--split", "id", "--scenes", "3", "--out", s(&out), "--epsilon", "0.5"],
        vec!["train-toy", "--mode", "bogus", "--data", s(&out)],
        vec!["train-toy", "--mode", "ranking", "--data", s(&out), "--tau", "0"],
        vec!["--threads", "0", "generate", "--split", "id", "--scenes", "3", "--out", s(&out)],
        vec!["frobnicate"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn generate_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "8", "8"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = run(&[
            "--threads",
            threads,
            "generate",
            "--split",
            "ood_context",
            "--scenes",
            "6",
            "--seed",
            "11",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push((
            fs::read(out.join(SCENES_FILE)).unwrap(),
            fs::read(out.join(MANIFEST_FILE)).unwrap(),
            o.stdout,
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let (records, manifest) = read_split(&dir.path().join("run0")).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(manifest.rng_seed, 11);
}

#[test]
fn thread_count_is_also_read_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), &[]);
    let b = dir.path().join("env");
    let o = bin()
        .env("CAUSAL_CROWDS_THREADS", "2")
        .args(["generate", "--split", "id", "--scenes", "5", "--seed", "3", "--out", s(&b)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join(SCENES_FILE)).unwrap(), fs::read(b.join(SCENES_FILE)).unwrap());
}

#[test]
fn zero_epoch_training_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), &[]);
    let model = dir.path().join("m.model");
    let o = run(&[
        "train-toy",
        "--mode",
        "baseline",
        "--data",
        s(&data),
        "--epochs",
        "0",
        "--seed",
        "9",
        "--out",
        s(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (records, manifest) = read_split(&data).unwrap();
    let samples = prepare(&records, manifest.spec.branch).unwrap();
    let expected = ToyModel::init(mix(&[9, 0x1417]), Normalizer::fit(samples.iter().map(|s| &s.factual)));
    assert_eq!(ToyModel::load(&model).unwrap(), expected);
    let log = fs::read_to_string(dir.path().join("m.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn training_is_reproducible_and_writes_log_and_ood_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), &[]);
    let ood = dir.path().join("ood");
    assert_eq!(
        code(&run(&[
            "generate",
            "--split",
            "ood_density",
            "--scenes",
            "2",
            "--seed",
            "4",
            "--out",
            s(&ood)
        ])),
        0
    );
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let model = dir.path().join(format!("{name}.model"));
        let o = run(&[
            "train-toy",
            "--mode",
            "ranking",
            "--data",
            s(&data),
            "--epochs",
            "2",
            "--seed",
            "5",
            "--out",
            s(&model),
            "--eval-ood",
            s(&ood),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let log = fs::read_to_string(dir.path().join(format!("{name}.log.csv"))).unwrap();
        assert_eq!(log.lines().count(), 3);
        let report = fs::read_to_string(dir.path().join(format!("{name}.ood.txt"))).unwrap();
        assert!(report_value(&report, "ace").is_finite());
        texts.push((fs::read(&model).unwrap(), log, report));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn cv_predictions_cover_every_world_and_match_true_effects_with_shared_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), &["--branch", "history-end"]);
    let preds = dir.path().join("cv.ndjson");
    let o = run(&["predict-toy", "--model", "cv", "--data", s(&data), "--out", s(&preds)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (records, _) = read_split(&data).unwrap();
    let sets = causal_crowds::dataset::read_predictions(&preds, &records).unwrap();
    let expected: usize = records.iter().map(|r| r.annotations.len() + 1).sum();
    assert_eq!(sets.iter().map(|s| s.entries.len()).sum::<usize>(), expected);
    for set in &sets {
        let f = set.factual().unwrap();
        assert!(set.entries.values().all(|p| p == f), "{}", set.scene_id);
    }
    // Identical predictions in every world: each estimated effect is zero,
    // so ACE equals the mean true effect.
    let out = dir.path().join("report");
    let o = run(&["evaluate", "--data", s(&data), "--predictions", s(&preds), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), text);
    let ace = report_value(&text, "ace");
    assert!((ace - report_value(&text, "mean_true_effect")).abs() < 1e-6);
    assert!(ace > 0.0);
    let csv = fs::read_to_string(out.join("scenes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + records.len() + 1);
}

#[test]
fn noncausal_flag_adds_one_entry_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), &[]);
    let preds = dir.path().join("cv.ndjson");
    let o = run(&[
        "predict-toy",
        "--model",
        "cv",
        "--data",
        s(&data),
        "--out",
        s(&preds),
        "--noncausal",
    ]);
    assert_eq!(code(&o), 0);
    let (records, _) = read_split(&data).unwrap();
    let sets = causal_crowds::dataset::read_predictions(&preds, &records).unwrap();
    assert!(sets.iter().all(|s| s.get(RemovalKey::NonCausal).is_some()));
    let out = dir.path().join("report");
    let o = run(&["evaluate", "--data", s(&data), "--predictions", s(&preds), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report_value(&text, "delta_abs") >= 0.0);
}

#[test]
fn oracle_predictions_score_zero_causal_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), &[]);
    let (records, _) = read_split(&data).unwrap();
    let sets: Vec<PredictionSet> = records
        .iter()
        .map(|r| {
            let mut set = PredictionSet::new(r.scene_id.clone());
            set.entries.insert(RemovalKey::Factual, r.ego_future().to_vec());
            for a in &r.annotations {
                set.entries.insert(RemovalKey::Agent(a.agent_id), a.counterfactual_future.clone());
            }
            set
        })
        .collect();
    let preds = dir.path().join("oracle.ndjson");
    write_predictions(&preds, &sets).unwrap();
    let out = dir.path().join("report");
    let o = run(&[
        "evaluate",
        "--data",
        s(&data),
        "--predictions",
        s(&preds),
        "--out",
        s(&out),
        "--fig",
        "joint",
        "--max-k",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report_value(&text, "ade"), 0.0);
    assert_eq!(report_value(&text, "ace"), 0.0);
    assert_eq!(text.lines().filter(|l| l.starts_with("joint k=")).count(), 3);
    assert_eq!(fs::read_to_string(out.join("joint.csv")).unwrap().lines().count(), 4);
    assert!(fs::read_to_string(out.join("joint.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn runtime_failures_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), &[]);
    let preds = dir.path().join("p.ndjson");

    let o = run(&[
        "predict-toy",
        "--model",
        s(&dir.path().join("absent.model")),
        "--data",
        s(&data),
        "--out",
        s(&preds),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error:"));

    let o = run(&["train-toy", "--mode", "baseline", "--data", s(&dir.path().join("nowhere"))]);
    assert_eq!(code(&o), 1);

    let o = run(&["predict-toy", "--model", "cv", "--data", s(&data), "--out", s(&preds)]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&preds).unwrap();
    let kept: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&preds, kept).unwrap();
    let (records, _) = read_split(&data).unwrap();
    let o = run(&[
        "evaluate",
        "--data",
        s(&data),
        "--predictions",
        s(&preds),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(&records[0].scene_id), "{}", stderr(&o));
}
