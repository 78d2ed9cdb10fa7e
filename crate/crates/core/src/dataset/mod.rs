//! Object catalog, folds, pair enumeration and annotation aggregation.

mod language;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use language::{language_stats, tokenize, LanguageStats};
pub use manifest::{load_manifest, parse_manifest, render_manifest, write_manifest, MANIFEST_FORMAT, MANIFEST_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Dev,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Dev, Fold::Test];

    pub fn name(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Dev => "dev",
            Fold::Test => "test",
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    In,
    On,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::In, Relation::On];

    pub fn name(self) -> &'static str {
        match self {
            Relation::In => "in",
            Relation::On => "on",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "in" => Ok(Relation::In),
            "on" => Ok(Relation::On),
            other => Err(CoreError::Argument(format!("unknown relation {other:?}, expected \"in\" or \"on\""))),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary outcome; class index 0 is `No`, 1 is `Yes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    No,
    Yes,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::No
        } else {
            Label::Yes
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::No => Label::Yes,
            Label::Yes => Label::No,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Robot,
    Annotation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Vote {
    Yes,
    No,
    Maybe,
    YesIfRotated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoteOrigin {
    RobotTrials,
    Crowd,
}

pub const MIN_CROWD_VOTES: usize = 3;
pub const TRIALS_PER_PAIR: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteSet {
    votes: Vec<Vote>,
    origin: VoteOrigin,
}

impl VoteSet {
    pub fn new(votes: Vec<Vote>, origin: VoteOrigin) -> Result<Self> {
        if origin == VoteOrigin::Crowd && votes.len() < MIN_CROWD_VOTES {
            return Err(CoreError::Argument(format!(
                "crowd vote set needs at least {MIN_CROWD_VOTES} votes, got {}",
                votes.len()
            )));
        }
        Ok(Self { votes, origin })
    }

    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    pub fn origin(&self) -> VoteOrigin {
        self.origin
    }
}

/// `Yes` only on unanimous plain-`Yes` votes. `Maybe` and `YesIfRotated` count as `No`.
pub fn aggregate_votes(v: &VoteSet) -> Result<Label> {
    if v.votes.is_empty() {
        return Err(CoreError::Argument("cannot aggregate an empty vote set".into()));
    }
    Ok(if v.votes.iter().all(|&x| x == Vote::Yes) { Label::Yes } else { Label::No })
}

/// Label predicted by at least three of exactly five trials.
pub fn majority_vote(predictions: &[Label]) -> Result<Label> {
    if predictions.len() != TRIALS_PER_PAIR {
        return Err(CoreError::Argument(format!(
            "majority vote needs exactly {TRIALS_PER_PAIR} predictions, got {}",
            predictions.len()
        )));
    }
    let yes = predictions.iter().filter(|&&p| p == Label::Yes).count();
    Ok(if 2 * yes > TRIALS_PER_PAIR { Label::Yes } else { Label::No })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub fold: Fold,
    #[serde(default)]
    pub container: bool,
    #[serde(default)]
    pub expressions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObjectCatalog {
    objects: Vec<ObjectRecord>,
    index: HashMap<String, usize>,
}

impl ObjectCatalog {
    pub fn new(objects: Vec<ObjectRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            if o.id.is_empty() {
                return Err(CoreError::Data(format!("object #{i} has an empty id")));
            }
            if index.insert(o.id.clone(), i).is_some() {
                return Err(CoreError::Data(format!("duplicate object id {:?}", o.id)));
            }
        }
        Ok(Self { objects, index })
    }

    pub fn get(&self, id: &str) -> Result<&ObjectRecord> {
        self.index.get(id).map(|&i| &self.objects[i]).ok_or_else(|| CoreError::UnknownObject(id.to_string()))
    }

    pub fn objects(&self) -> &[ObjectRecord] {
        &self.objects
    }

    pub fn in_fold(&self, fold: Fold) -> impl Iterator<Item = &ObjectRecord> {
        self.objects.iter().filter(move |o| o.fold == fold)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub grasped: String,
    pub target: String,
    pub relation: Relation,
    pub label: Label,
    pub source: Source,
    /// Original annotations when the manifest lists them.
    pub votes: Vec<Vote>,
    /// Resolved trial directories; five for robot pairs, empty otherwise.
    pub trials: Vec<PathBuf>,
}

impl PairRecord {
    pub fn describe(&self) -> String {
        format!("({} {} {}, {:?})", self.grasped, self.relation, self.target, self.source)
    }
}

/// Ordered `(grasped, target)` pairs within one fold, self-pairs excluded.
/// `in` pairs draw targets from the containers, `on` pairs from every object.
pub fn enumerate_pairs(catalog: &ObjectCatalog, fold: Fold, relation: Relation) -> Vec<(String, String)> {
    let members: Vec<&ObjectRecord> = catalog.in_fold(fold).collect();
    let mut out = Vec::new();
    for g in &members {
        for t in &members {
            if g.id == t.id || (relation == Relation::In && !t.container) {
                continue;
            }
            out.push((g.id.clone(), t.id.clone()));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FoldCounts {
    pub objects: usize,
    pub containers: usize,
    pub robot_in: usize,
    pub robot_on: usize,
    pub all_pairs_in: usize,
    pub all_pairs_on: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FoldReport {
    pub counts: BTreeMap<Fold, FoldCounts>,
}

impl FoldReport {
    pub fn get(&self, fold: Fold) -> FoldCounts {
        self.counts.get(&fold).copied().unwrap_or_default()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("fold   objects  containers  robot-in  robot-on  all-in  all-on\n");
        for fold in Fold::ALL {
            let c = self.get(fold);
            s.push_str(&format!(
                "{:<6} {:>7}  {:>10}  {:>8}  {:>8}  {:>6}  {:>6}\n",
                fold.name(),
                c.objects,
                c.containers,
                c.robot_in,
                c.robot_on,
                c.all_pairs_in,
                c.all_pairs_on
            ));
        }
        s
    }
}

/// Counts objects and pairs per fold and enforces the pair-fold and container rules.
pub fn validate_folds(catalog: &ObjectCatalog, pairs: &[PairRecord]) -> Result<FoldReport> {
    let mut report = FoldReport::default();
    for fold in Fold::ALL {
        report.counts.insert(fold, FoldCounts::default());
    }
    for o in catalog.objects() {
        let c = report.counts.get_mut(&o.fold).expect("all folds present");
        c.objects += 1;
        c.containers += o.container as usize;
    }
    let mut violations = Vec::new();
    for p in pairs {
        let (g, t) = match (catalog.get(&p.grasped), catalog.get(&p.target)) {
            (Ok(g), Ok(t)) => (g, t),
            _ => {
                violations.push(format!("{} references an unknown object", p.describe()));
                continue;
            }
        };
        if g.fold != t.fold {
            violations.push(format!("{} spans folds {} and {}", p.describe(), g.fold, t.fold));
            continue;
        }
        if p.relation == Relation::In && !t.container {
            violations.push(format!("{} has a non-container target", p.describe()));
            continue;
        }
        if p.source == Source::Robot && p.trials.len() != TRIALS_PER_PAIR {
            violations.push(format!("{} has {} trials, expected {TRIALS_PER_PAIR}", p.describe(), p.trials.len()));
            continue;
        }
        let c = report.counts.get_mut(&g.fold).expect("all folds present");
        match (p.source, p.relation) {
            (Source::Robot, Relation::In) => c.robot_in += 1,
            (Source::Robot, Relation::On) => c.robot_on += 1,
            (Source::Annotation, Relation::In) => c.all_pairs_in += 1,
            (Source::Annotation, Relation::On) => c.all_pairs_on += 1,
        }
    }
    if violations.is_empty() {
        Ok(report)
    } else {
        Err(CoreError::Validation(violations))
    }
}

/// Pairs of one fold, relation and source, in manifest order.
pub fn select_pairs<'a>(
    catalog: &ObjectCatalog,
    pairs: &'a [PairRecord],
    fold: Fold,
    relation: Relation,
    source: Source,
) -> Vec<&'a PairRecord> {
    pairs
        .iter()
        .filter(|p| p.relation == relation && p.source == source)
        .filter(|p| catalog.get(&p.grasped).map(|o| o.fold == fold).unwrap_or(false))
        .collect()
}

/// A loaded manifest with every trial path resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub root: PathBuf,
    pub catalog: ObjectCatalog,
    pub pairs: Vec<PairRecord>,
}

impl Dataset {
    pub fn select(&self, fold: Fold, relation: Relation, source: Source) -> Vec<&PairRecord> {
        select_pairs(&self.catalog, &self.pairs, fold, relation, source)
    }
}
