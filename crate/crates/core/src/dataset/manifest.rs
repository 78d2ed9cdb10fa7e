//! TOML manifest describing objects, folds and pairs.
//!
//! ```toml
//! format = "stackdet-manifest"
//! version = 1
//!
//! [[objects]]
//! id = "bowl"
//! fold = "train"          # train | dev | test
//! container = true        # default false
//! expressions = ["small red bowl", "plastic bowl"]
//!
//! [[pairs]]
//! grasped = "cup"
//! target = "bowl"
//! relation = "in"         # in | on
//! source = "robot"        # robot | annotation
//! label = "yes"           # optional when votes are given
//! votes = ["yes", "no", "maybe", "yes-if-rotated"]   # optional
//! trials = ["trials/cup-in-bowl/0", ...]             # robot pairs: exactly 5, relative to the manifest
//! ```
//!
//! When both `label` and `votes` are present they must agree under [`aggregate_votes`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    aggregate_votes, validate_folds, Dataset, Label, ObjectCatalog, ObjectRecord, PairRecord, Relation, Source, Vote,
    VoteOrigin, VoteSet, TRIALS_PER_PAIR,
};
use crate::error::{CoreError, Result};

pub const MANIFEST_FORMAT: &str = "stackdet-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    format: String,
    version: u32,
    #[serde(default)]
    objects: Vec<ObjectRecord>,
    #[serde(default)]
    pairs: Vec<RawPair>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    grasped: String,
    target: String,
    relation: Relation,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    votes: Vec<Vote>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    trials: Vec<String>,
}

/// Parses manifest text. Trial paths resolve against `root`; when `check_trials`
/// is set each must be an existing directory.
pub fn parse_manifest(text: &str, root: &Path, check_trials: bool) -> Result<Dataset> {
    let raw: RawManifest = toml::from_str(text).map_err(|e| CoreError::format("manifest", e.to_string()))?;
    if raw.format != MANIFEST_FORMAT {
        return Err(CoreError::format("manifest", format!("format {:?}, expected {MANIFEST_FORMAT:?}", raw.format)));
    }
    if raw.version != MANIFEST_VERSION {
        return Err(CoreError::format("manifest", format!("unsupported version {}", raw.version)));
    }
    let catalog = ObjectCatalog::new(raw.objects)?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(raw.pairs.len());
    for (i, rp) in raw.pairs.into_iter().enumerate() {
        let name = format!("pair #{i} ({} {} {}, {:?})", rp.grasped, rp.relation, rp.target, rp.source);
        let err = |d: String| CoreError::Data(format!("{name}: {d}"));
        for id in [&rp.grasped, &rp.target] {
            if catalog.get(id).is_err() {
                return Err(err(format!("unknown object {id:?}")));
            }
        }
        if !seen.insert((rp.grasped.clone(), rp.target.clone(), rp.relation, rp.source)) {
            return Err(err("listed twice".into()));
        }
        let label = match (rp.label, rp.votes.is_empty()) {
            (None, true) => return Err(err("needs a label or votes".into())),
            (label, false) => {
                let origin = match rp.source {
                    Source::Robot => VoteOrigin::RobotTrials,
                    Source::Annotation => VoteOrigin::Crowd,
                };
                let set = VoteSet::new(rp.votes.clone(), origin).map_err(|e| err(e.to_string()))?;
                let agg = aggregate_votes(&set)?;
                if label.is_some_and(|l| l != agg) {
                    return Err(err(format!("label {label:?} disagrees with aggregated votes {agg:?}")));
                }
                agg
            }
            (Some(l), true) => l,
        };
        let expected = if rp.source == Source::Robot { TRIALS_PER_PAIR } else { 0 };
        if rp.trials.len() != expected {
            return Err(err(format!("{} trials listed, expected {expected}", rp.trials.len())));
        }
        let mut trials = Vec::with_capacity(rp.trials.len());
        for t in &rp.trials {
            let p = root.join(t);
            if check_trials && !p.is_dir() {
                return Err(err(format!("trial directory {} is missing", p.display())));
            }
            trials.push(p);
        }
        pairs.push(PairRecord {
            grasped: rp.grasped,
            target: rp.target,
            relation: rp.relation,
            label,
            source: rp.source,
            votes: rp.votes,
            trials,
        });
    }
    validate_folds(&catalog, &pairs)?;
    Ok(Dataset { root: root.to_path_buf(), catalog, pairs })
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&text, &root, true).map_err(|e| match e {
        CoreError::Format { detail, .. } => CoreError::format(path.display().to_string(), detail),
        other => other,
    })
}

/// Serializes a dataset; trial paths are written relative to `dataset.root`.
pub fn render_manifest(dataset: &Dataset) -> Result<String> {
    let mut pairs = Vec::with_capacity(dataset.pairs.len());
    for p in &dataset.pairs {
        let trials = p
            .trials
            .iter()
            .map(|t| {
                let rel = t.strip_prefix(&dataset.root).unwrap_or(t);
                rel.to_str()
                    .map(|s| s.replace('\\', "/"))
                    .ok_or_else(|| CoreError::Data(format!("{}: non-UTF-8 trial path", p.describe())))
            })
            .collect::<Result<Vec<_>>>()?;
        pairs.push(RawPair {
            grasped: p.grasped.clone(),
            target: p.target.clone(),
            relation: p.relation,
            source: p.source,
            label: Some(p.label),
            votes: p.votes.clone(),
            trials,
        });
    }
    let raw = RawManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        objects: dataset.catalog.objects().to_vec(),
        pairs,
    };
    toml::to_string(&raw).map_err(|e| CoreError::format("manifest", e.to_string()))
}

pub fn write_manifest(path: &Path, dataset: &Dataset) -> Result<()> {
    fs::write(path, render_manifest(dataset)?).map_err(|e| CoreError::io(path, e))
}
