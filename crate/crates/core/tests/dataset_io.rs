use std::fs;
use std::path::Path;

use causal_crowds::dataset::{
    self, digest_hex, read_predictions, read_split, write_predictions, write_split, DatasetError, Manifest, PredictionSet, RemovalKey,
    MANIFEST_FILE, SCENES_FILE,
};
use causal_crowds::scenario::{generate_split, SceneRecord, Split, SplitSpec};
use glam::DVec2;
use serde_json::Value;

fn split(n: usize, seed: u64) -> (Vec<SceneRecord>, Manifest) {
    let spec = SplitSpec::new(Split::Id, n, seed);
    let (records, _) = generate_split(&spec).unwrap();
    let manifest = Manifest::new(&spec, &records).unwrap();
    (records, manifest)
}

fn written(n: usize) -> (tempfile::TempDir, Vec<SceneRecord>, Manifest) {
    let dir = tempfile::tempdir().unwrap();
    let (records, manifest) = split(n, 5);
    write_split(dir.path(), &records, &manifest).unwrap();
    (dir, records, manifest)
}

/// Rewrite the scenes file through `edit` and fix the manifest digest so only
/// the structural checks can object.
fn edit_scene(dir: &Path, index: usize, edit: impl FnOnce(&mut Value)) {
    let path = dir.join(SCENES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut v: Value = serde_json::from_str(&lines[index]).unwrap();
    edit(&mut v);
    lines[index] = serde_json::to_string(&v).unwrap();
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    fs::write(&path, &body).unwrap();
    let mpath = dir.join(MANIFEST_FILE);
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    m["digest"] = Value::String(digest_hex(body.as_bytes()));
    fs::write(&mpath, serde_json::to_string_pretty(&m).unwrap()).unwrap();
}

#[test]
fn write_then_read_round_trips() {
    let (dir, records, manifest) = written(6);
    let (back, m) = read_split(dir.path()).unwrap();
    assert_eq!(back, records);
    assert_eq!(m, manifest);
    assert_eq!(back.len(), m.num_scenes);
}

#[test]
fn writing_twice_is_byte_identical() {
    let (records, manifest) = split(4, 9);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_split(a.path(), &records, &manifest).unwrap();
    write_split(b.path(), &records, &manifest).unwrap();
    for f in [SCENES_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn files_use_bare_newlines_and_one_scene_per_line() {
    let (dir, records, _) = written(3);
    let bytes = fs::read(dir.path().join(SCENES_FILE)).unwrap();
    assert!(!bytes.contains(&b'\r'));
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), records.len());
    assert_eq!(*bytes.last().unwrap(), b'\n');
}

#[test]
fn digest_covers_the_scenes_file_bytes() {
    let (dir, _, manifest) = written(3);
    let bytes = fs::read(dir.path().join(SCENES_FILE)).unwrap();
    assert_eq!(digest_hex(&bytes), manifest.digest);
}

#[test]
fn tampered_line_is_a_digest_mismatch() {
    let (dir, _, _) = written(3);
    let path = dir.path().join(SCENES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    // Same structure, one digit changed.
    let pos = text.find("\"effect\":").unwrap() + "\"effect\":".len();
    let mut bytes = text.into_bytes();
    let digit = (pos..bytes.len()).find(|&i| bytes[i].is_ascii_digit() && bytes[i] != b'0').unwrap();
    bytes[digit] = if bytes[digit] == b'9' { b'8' } else { bytes[digit] + 1 };
    fs::write(&path, bytes).unwrap();
    assert!(matches!(read_split(dir.path()), Err(DatasetError::DigestMismatch { .. })));
}

#[test]
fn nineteen_step_trajectory_is_an_invariant_violation() {
    let (dir, _, _) = written(3);
    edit_scene(dir.path(), 1, |v| {
        v["trajectories"][0].as_array_mut().unwrap().pop();
    });
    match read_split(dir.path()) {
        Err(DatasetError::InvariantViolation(m)) => assert!(m.contains("19 steps"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn inconsistent_category_is_an_invariant_violation() {
    let (dir, records, _) = written(3);
    let nc = records[0].annotations.iter().position(|a| a.effect > 0.2).expect("a causal agent");
    edit_scene(dir.path(), 0, |v| {
        v["annotations"][nc]["category"] = Value::String("non_causal".into());
    });
    assert!(matches!(read_split(dir.path()), Err(DatasetError::InvariantViolation(_))));
}

#[test]
fn missing_manifest_is_an_io_failure() {
    let (dir, _, _) = written(2);
    fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(matches!(read_split(dir.path()), Err(DatasetError::Io { .. })));
}

#[test]
fn malformed_line_reports_its_number() {
    let (dir, _, _) = written(3);
    let path = dir.path().join(SCENES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{\"scene_id\": ";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(read_split(dir.path()), Err(DatasetError::Parse { line: 2, .. })));
}

#[test]
fn wrong_format_version_is_rejected() {
    let (dir, _, _) = written(2);
    let mpath = dir.path().join(MANIFEST_FILE);
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    m["format_version"] = Value::from(2);
    fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
    match read_split(dir.path()) {
        Err(DatasetError::InvariantViolation(msg)) => assert!(msg.contains("format_version")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn scene_count_must_match_manifest() {
    let (dir, _, _) = written(3);
    let path = dir.path().join(SCENES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let kept: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(&path, &kept).unwrap();
    let mpath = dir.path().join(MANIFEST_FILE);
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    m["digest"] = Value::String(digest_hex(kept.as_bytes()));
    fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
    assert!(matches!(read_split(dir.path()), Err(DatasetError::InvariantViolation(_))));
}

#[test]
fn write_rejects_a_stale_manifest() {
    let (records, manifest) = split(3, 2);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        write_split(dir.path(), &records[..2], &manifest),
        Err(DatasetError::DigestMismatch { .. })
    ));
}

#[test]
fn manifest_keys_are_in_fixed_order() {
    let (dir, _, _) = written(2);
    let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let order = [
        "format_version",
        "split",
        "num_scenes",
        "rng_seed",
        "spec",
        "category_means",
        "digest",
    ];
    let pos: Vec<usize> = order.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn stored_trajectories_match_resimulation() {
    let (records, _) = split(3, 4);
    for r in &records {
        dataset::verify_resimulation(r).unwrap();
    }
}

fn line_of(r: &SceneRecord, dx: f64) -> Vec<DVec2> {
    r.ego_future().iter().map(|p| *p + DVec2::new(dx, 0.0)).collect()
}

fn oracle_sets(records: &[SceneRecord]) -> Vec<PredictionSet> {
    records
        .iter()
        .map(|r| {
            let mut s = PredictionSet::new(r.scene_id.clone());
            s.entries.insert(RemovalKey::Factual, line_of(r, 0.0));
            for a in &r.annotations {
                s.entries.insert(RemovalKey::Agent(a.agent_id), a.counterfactual_future.clone());
            }
            s
        })
        .collect()
}

#[test]
fn predictions_round_trip() {
    let (records, _) = split(3, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ndjson");
    let sets = oracle_sets(&records);
    write_predictions(&path, &sets).unwrap();
    let back = read_predictions(&path, &records).unwrap();
    assert_eq!(back, sets);
    assert_eq!(back.len(), records.len());
}

#[test]
fn predictions_for_an_absent_scene_are_rejected() {
    let (records, _) = split(2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ndjson");
    let mut sets = oracle_sets(&records);
    sets[1].scene_id = "id-999999".into();
    write_predictions(&path, &sets).unwrap();
    match read_predictions(&path, &records) {
        Err(DatasetError::UnknownScene(id)) => assert_eq!(id, "id-999999"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn predictions_without_factual_are_rejected() {
    let (records, _) = split(2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ndjson");
    let mut sets = oracle_sets(&records);
    sets[0].entries.remove(&RemovalKey::Factual);
    write_predictions(&path, &sets).unwrap();
    assert!(matches!(read_predictions(&path, &records), Err(DatasetError::MissingFactual(_))));
}

#[test]
fn predictions_for_unknown_agents_are_rejected() {
    let (records, _) = split(2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ndjson");
    for bad in [0, records[0].num_agents()] {
        let mut sets = oracle_sets(&records);
        sets[0].entries.insert(RemovalKey::Agent(bad), line_of(&records[0], 0.0));
        write_predictions(&path, &sets).unwrap();
        assert!(
            matches!(read_predictions(&path, &records), Err(DatasetError::UnknownAgent { agent, .. }) if agent == bad),
            "agent {bad}"
        );
    }
}

#[test]
fn predictions_with_wrong_length_or_duplicate_keys_are_rejected() {
    let (records, _) = split(1, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ndjson");
    let mut sets = oracle_sets(&records);
    sets[0].entries.get_mut(&RemovalKey::Factual).unwrap().pop();
    write_predictions(&path, &sets).unwrap();
    assert!(matches!(
        read_predictions(&path, &records),
        Err(DatasetError::InvariantViolation(_))
    ));

    let sets = oracle_sets(&records);
    let line = dataset::prediction_line(&sets[0]);
    let dup = line.replacen("{\"key\":\"1\"", "{\"key\":\"factual\"", 1);
    fs::write(&path, dup + "\n").unwrap();
    assert!(matches!(
        read_predictions(&path, &records),
        Err(DatasetError::Parse { line: 1, .. })
    ));
}
