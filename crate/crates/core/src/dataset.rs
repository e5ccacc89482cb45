//! On-disk split format: `scenes.ndjson` (one scene per line), `manifest.json`,
//! and `predictions.ndjson` for predictor outputs. See FORMAT.md.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use glam::DVec2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::counterfactual::categorize;
use crate::scenario::{SceneRecord, Split, SplitSpec, SplitSummary};
use crate::sim::{self, AgentId, EGO};

pub const FORMAT_VERSION: u32 = 1;
pub const SCENES_FILE: &str = "scenes.ndjson";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("digest mismatch: manifest has {expected}, content hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("{0}")]
    InvariantViolation(String),
    #[error("unknown scene {0}")]
    UnknownScene(String),
    #[error("scene {scene_id}: unknown agent {agent}")]
    UnknownAgent { scene_id: String, agent: AgentId },
    #[error("scene {0}: no factual prediction")]
    MissingFactual(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn violation(msg: impl Into<String>) -> DatasetError {
    DatasetError::InvariantViolation(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub split: Split,
    pub num_scenes: usize,
    pub rng_seed: u64,
    pub spec: SplitSpec,
    pub category_means: SplitSummary,
    /// Lowercase hex SHA-256 of the scenes file bytes.
    pub digest: String,
}

impl Manifest {
    /// Manifest describing `records` as generated from `spec`.
    pub fn new(spec: &SplitSpec, records: &[SceneRecord]) -> Result<Self, DatasetError> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            split: spec.split,
            num_scenes: records.len(),
            rng_seed: spec.rng_seed,
            spec: *spec,
            category_means: SplitSummary::of(records),
            digest: digest_hex(scenes_bytes(records)?.as_bytes()),
        })
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One scene as a single JSON line, without the trailing newline.
pub fn scene_line(record: &SceneRecord) -> Result<String, DatasetError> {
    serde_json::to_string(record).map_err(|e| violation(format!("scene {}: {e}", record.scene_id)))
}

/// Exact contents of the scenes file for `records`.
pub fn scenes_bytes(records: &[SceneRecord]) -> Result<String, DatasetError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&scene_line(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn manifest_bytes(manifest: &Manifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

/// Write `records` and `manifest` into `dir`, creating it if needed. The
/// manifest must describe exactly these records.
pub fn write_split(dir: &Path, records: &[SceneRecord], manifest: &Manifest) -> Result<(), DatasetError> {
    let scenes = scenes_bytes(records)?;
    let actual = digest_hex(scenes.as_bytes());
    if actual != manifest.digest {
        return Err(DatasetError::DigestMismatch {
            expected: manifest.digest.clone(),
            actual,
        });
    }
    if manifest.num_scenes != records.len() {
        return Err(violation(format!(
            "manifest lists {} scenes, {} given",
            manifest.num_scenes,
            records.len()
        )));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let scenes_path = dir.join(SCENES_FILE);
    fs::write(&scenes_path, scenes).map_err(io_err(&scenes_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest_bytes(manifest)).map_err(io_err(&manifest_path))?;
    Ok(())
}

/// Read and validate a split directory.
pub fn read_split(dir: &Path) -> Result<(Vec<SceneRecord>, Manifest), DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        line: e.line(),
        message: format!("{MANIFEST_FILE}: {e}"),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(violation(format!("unsupported format_version {}", manifest.format_version)));
    }

    let scenes_path = dir.join(SCENES_FILE);
    let bytes = fs::read(&scenes_path).map_err(io_err(&scenes_path))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| DatasetError::Parse {
        line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1,
        message: "invalid UTF-8".into(),
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let record: SceneRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }

    let actual = digest_hex(&bytes);
    if actual != manifest.digest {
        return Err(DatasetError::DigestMismatch {
            expected: manifest.digest,
            actual,
        });
    }
    if records.len() != manifest.num_scenes {
        return Err(violation(format!(
            "manifest lists {} scenes, file holds {}",
            manifest.num_scenes,
            records.len()
        )));
    }
    for r in &records {
        validate_record(r, &manifest)?;
    }
    Ok((records, manifest))
}

/// Structural invariants of one record against its manifest.
pub fn validate_record(r: &SceneRecord, manifest: &Manifest) -> Result<(), DatasetError> {
    let id = &r.scene_id;
    let bad = |m: String| Err(violation(format!("scene {id}: {m}")));
    if r.split != manifest.split {
        return bad(format!("split {} differs from manifest", r.split.as_str()));
    }
    if let Err(e) = r.config.validate() {
        return bad(e.to_string());
    }
    if let Err(e) = r.scene.validate() {
        return bad(e.to_string());
    }
    let (steps, future) = (r.config.total_steps, r.config.future_steps);
    let n = r.scene.agents.len();
    if n == 0 {
        return bad("no agents".into());
    }
    if r.trajectories.len() != n {
        return bad(format!("{} trajectories for {n} agents", r.trajectories.len()));
    }
    for (a, t) in r.trajectories.iter().enumerate() {
        if t.len() != steps {
            return bad(format!("agent {a} has {} steps, expected {steps}", t.len()));
        }
        if t.iter().any(|p| !p.is_finite()) {
            return bad(format!("agent {a} has a non-finite position"));
        }
    }
    if r.annotations.len() != n - 1 {
        return bad(format!("{} annotations for {} neighbours", r.annotations.len(), n - 1));
    }
    for (k, a) in r.annotations.iter().enumerate() {
        if a.agent_id != k + 1 {
            return bad(format!("annotation {k} is for agent {}, expected {}", a.agent_id, k + 1));
        }
        if !(a.effect >= 0.0 && a.effect.is_finite()) {
            return bad(format!(
                "agent {}: effect {} is not a finite non-negative number",
                a.agent_id, a.effect
            ));
        }
        if a.direct_mask.len() != steps {
            return bad(format!("agent {}: direct mask has {} steps", a.agent_id, a.direct_mask.len()));
        }
        if a.counterfactual_future.len() != future {
            return bad(format!(
                "agent {}: counterfactual future has {} steps",
                a.agent_id,
                a.counterfactual_future.len()
            ));
        }
        if categorize(a.effect, &a.direct_mask, &manifest.spec.thresholds) != a.category {
            return bad(format!("agent {}: category inconsistent with effect and mask", a.agent_id));
        }
    }
    if r.noncausal_future.len() != future {
        return bad(format!("non-causal future has {} steps", r.noncausal_future.len()));
    }
    Ok(())
}

/// Re-run the stored initial conditions and compare bit for bit.
pub fn verify_resimulation(r: &SceneRecord) -> Result<(), DatasetError> {
    let rollout = sim::rollout(&r.scene, &r.config).map_err(|e| violation(format!("scene {}: {e}", r.scene_id)))?;
    let same = rollout.positions.len() == r.trajectories.len()
        && rollout.positions.iter().zip(&r.trajectories).all(|(a, b)| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.y.to_bits() == q.y.to_bits())
        });
    if same {
        Ok(())
    } else {
        Err(violation(format!("scene {}: trajectories differ from re-simulation", r.scene_id)))
    }
}

/// Which world a prediction is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RemovalKey {
    Factual,
    Agent(AgentId),
    /// All non-causal neighbours removed together.
    NonCausal,
}

impl fmt::Display for RemovalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RemovalKey::Factual => f.write_str("factual"),
            RemovalKey::Agent(id) => write!(f, "{id}"),
            RemovalKey::NonCausal => f.write_str("noncausal"),
        }
    }
}

impl FromStr for RemovalKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "factual" => Ok(RemovalKey::Factual),
            "noncausal" => Ok(RemovalKey::NonCausal),
            // Canonical decimal only, so keys round-trip byte for byte.
            _ if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0')) => {
                s.parse().map(RemovalKey::Agent).map_err(|e| format!("bad key {s:?}: {e}"))
            }
            _ => Err(format!("bad key {s:?}")),
        }
    }
}

impl Serialize for RemovalKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RemovalKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A predictor's ego futures for one scene, keyed by removal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub scene_id: String,
    pub entries: BTreeMap<RemovalKey, Vec<DVec2>>,
}

impl PredictionSet {
    pub fn new(scene_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: RemovalKey) -> Option<&[DVec2]> {
        self.entries.get(&key).map(Vec::as_slice)
    }

    pub fn factual(&self) -> Option<&[DVec2]> {
        self.get(RemovalKey::Factual)
    }
}

#[derive(Serialize, Deserialize)]
struct WireEntry {
    key: RemovalKey,
    future: Vec<DVec2>,
}

#[derive(Serialize, Deserialize)]
struct WireSet {
    scene_id: String,
    entries: Vec<WireEntry>,
}

pub fn prediction_line(set: &PredictionSet) -> String {
    let wire = WireSet {
        scene_id: set.scene_id.clone(),
        entries: set
            .entries
            .iter()
            .map(|(k, v)| WireEntry {
                key: *k,
                future: v.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&wire).expect("predictions serialize")
}

pub fn write_predictions(path: &Path, sets: &[PredictionSet]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for s in sets {
        out.push_str(&prediction_line(s));
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Read predictions and check every set against the loaded split.
pub fn read_predictions(path: &Path, records: &[SceneRecord]) -> Result<Vec<PredictionSet>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let by_id: HashMap<&str, &SceneRecord> = records.iter().map(|r| (r.scene_id.as_str(), r)).collect();
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |message: String| DatasetError::Parse { line: i + 1, message };
        let wire: WireSet = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let mut set = PredictionSet::new(wire.scene_id);
        for e in wire.entries {
            if set.entries.insert(e.key, e.future).is_some() {
                return Err(parse_err(format!("duplicate key {}", e.key)));
            }
        }
        check_predictions(&set, by_id.get(set.scene_id.as_str()).copied())?;
        sets.push(set);
    }
    Ok(sets)
}

/// Cross-check one prediction set against its scene.
pub fn check_predictions(set: &PredictionSet, record: Option<&SceneRecord>) -> Result<(), DatasetError> {
    let record = record.ok_or_else(|| DatasetError::UnknownScene(set.scene_id.clone()))?;
    if set.factual().is_none() {
        return Err(DatasetError::MissingFactual(set.scene_id.clone()));
    }
    let future = record.config.future_steps;
    for (key, pred) in &set.entries {
        if let RemovalKey::Agent(id) = key {
            if *id == EGO || *id >= record.num_agents() {
                return Err(DatasetError::UnknownAgent {
                    scene_id: set.scene_id.clone(),
                    agent: *id,
                });
            }
        }
        if pred.len() != future {
            return Err(violation(format!(
                "scene {}: prediction {key} has {} steps, expected {future}",
                set.scene_id,
                pred.len()
            )));
        }
        if pred.iter().any(|p| !p.is_finite()) {
            return Err(violation(format!("scene {}: prediction {key} is not finite", set.scene_id)));
        }
    }
    Ok(())
}
