//! Sample manifests: loading, validation and split indexing.
//!
//! A manifest is a JSON Lines document. The first non-blank line is a header
//! object, every following non-blank line is one sample record:
//!
//! ```text
//! {"version":1,"K":2,"known_classes":["a","b"],"feature_dim":3}
//! {"sample_id":"s1","split":"val","category":"a","group":"known","class_index":0,"logits":[2.0,0.1]}
//! {"sample_id":"s2","split":"test","category":"bubbles","group":"non_target_unknown","feature":[0.1,0.2,0.3]}
//! ```
//!
//! Floats are written with the shortest representation that round-trips.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error reading manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest is empty (missing header line)")]
    MissingHeader,
    #[error("line {line}: unsupported manifest version {found} (expected {expected})")]
    Version { line: usize, found: u32, expected: u32 },
    #[error("line {line}: duplicate sample_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: sample {id:?} has class_index {index} but K = {k}")]
    ClassIndexOutOfRange {
        line: usize,
        id: String,
        index: usize,
        k: usize,
    },
    #[error("line {line}: sample {id:?} has neither logits nor feature")]
    NoPayload { line: usize, id: String },
    #[error("line {line}: sample {id:?} has {found} logits, expected K = {expected}")]
    LogitDimension {
        line: usize,
        id: String,
        found: usize,
        expected: usize,
    },
    #[error("line {line}: sample {id:?} has feature length {found}, expected {expected}")]
    FeatureDimension {
        line: usize,
        id: String,
        found: usize,
        expected: usize,
    },
    #[error("line {line}: sample {id:?}: {message}")]
    Record {
        line: usize,
        id: String,
        message: String,
    },
    #[error("validation-unknown and test-unknown categories overlap: {overlap:?}")]
    DisjointnessViolation { overlap: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Known/unknown role of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Known { class_index: usize },
    TargetUnknown,
    NonTargetUnknown,
}

/// Coarse group label without the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Known,
    TargetUnknown,
    NonTargetUnknown,
}

impl GroupKind {
    pub const ALL: [GroupKind; 3] = [
        GroupKind::Known,
        GroupKind::TargetUnknown,
        GroupKind::NonTargetUnknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupKind::Known => "known",
            GroupKind::TargetUnknown => "target_unknown",
            GroupKind::NonTargetUnknown => "non_target_unknown",
        }
    }

    pub fn is_unknown(self) -> bool {
        self != GroupKind::Known
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GroupKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "known" => Ok(GroupKind::Known),
            "target_unknown" => Ok(GroupKind::TargetUnknown),
            "non_target_unknown" => Ok(GroupKind::NonTargetUnknown),
            other => Err(format!("unknown group {other:?}")),
        }
    }
}

impl Group {
    pub fn kind(self) -> GroupKind {
        match self {
            Group::Known { .. } => GroupKind::Known,
            Group::TargetUnknown => GroupKind::TargetUnknown,
            Group::NonTargetUnknown => GroupKind::NonTargetUnknown,
        }
    }

    pub fn is_unknown(self) -> bool {
        !matches!(self, Group::Known { .. })
    }

    pub fn class_index(self) -> Option<usize> {
        match self {
            Group::Known { class_index } => Some(class_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub split: Split,
    pub category: String,
    pub group: Group,
    pub logits: Option<Vec<f64>>,
    pub feature: Option<Vec<f64>>,
}

/// Header line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    #[serde(rename = "K")]
    pub num_known: usize,
    pub known_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    /// Declares that validation-unknown and test-unknown categories must not overlap.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub disjoint_unknowns: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRecord {
    sample_id: String,
    split: Split,
    category: String,
    group: GroupKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

const HEADER_FIELDS: &[&str] = &["version", "K", "known_classes", "feature_dim", "disjoint_unknowns"];
const RECORD_FIELDS: &[&str] = &[
    "sample_id",
    "split",
    "category",
    "group",
    "class_index",
    "logits",
    "feature",
];

/// Parsing options for [`load_samples`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestSchema {
    pub version: u32,
    /// Reject objects carrying keys outside the documented field set.
    pub reject_unknown_fields: bool,
}

impl Default for ManifestSchema {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            reject_unknown_fields: true,
        }
    }
}

/// Immutable, validated collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub records: Vec<SampleRecord>,
    pub known_classes: Vec<String>,
    pub feature_dim: Option<usize>,
    pub disjoint_unknowns: bool,
    split_index: [Vec<usize>; 3],
}

impl SampleSet {
    /// Builds a set from already-validated parts, checking every record invariant.
    pub fn new(
        known_classes: Vec<String>,
        feature_dim: Option<usize>,
        disjoint_unknowns: bool,
        records: Vec<SampleRecord>,
    ) -> Result<Self, IngestError> {
        let mut builder = Builder::new(known_classes.len(), feature_dim);
        for (i, r) in records.iter().enumerate() {
            builder.check(i + 1, r)?;
        }
        let feature_dim = builder.feature_dim;
        Ok(Self::assemble(known_classes, feature_dim, disjoint_unknowns, records))
    }

    fn assemble(
        known_classes: Vec<String>,
        feature_dim: Option<usize>,
        disjoint_unknowns: bool,
        records: Vec<SampleRecord>,
    ) -> Self {
        let mut split_index: [Vec<usize>; 3] = Default::default();
        for (i, r) in records.iter().enumerate() {
            split_index[r.split.slot()].push(i);
        }
        Self {
            records,
            known_classes,
            feature_dim,
            disjoint_unknowns,
            split_index,
        }
    }

    pub fn num_known(&self) -> usize {
        self.known_classes.len()
    }

    /// Record indices belonging to `split`, in manifest order.
    pub fn split(&self, split: Split) -> &[usize] {
        &self.split_index[split.slot()]
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader {
            version: MANIFEST_VERSION,
            num_known: self.known_classes.len(),
            known_classes: self.known_classes.clone(),
            feature_dim: self.feature_dim,
            disjoint_unknowns: self.disjoint_unknowns,
        }
    }

    /// Serializes the set in manifest format.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header())?;
        out.write_all(b"\n")?;
        for r in &self.records {
            let raw = RawRecord {
                sample_id: r.sample_id.clone(),
                split: r.split,
                category: r.category.clone(),
                group: r.group.kind(),
                class_index: r.group.class_index(),
                logits: r.logits.clone(),
                feature: r.feature.clone(),
            };
            serde_json::to_writer(&mut out, &raw)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_manifest_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_manifest(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("manifest is valid UTF-8")
    }
}

struct Builder {
    k: usize,
    feature_dim: Option<usize>,
    seen: HashSet<String>,
}

impl Builder {
    fn new(k: usize, feature_dim: Option<usize>) -> Self {
        Self {
            k,
            feature_dim,
            seen: HashSet::new(),
        }
    }

    fn check(&mut self, line: usize, r: &SampleRecord) -> Result<(), IngestError> {
        let id = || r.sample_id.clone();
        if !self.seen.insert(r.sample_id.clone()) {
            return Err(IngestError::DuplicateId { line, id: id() });
        }
        if let Group::Known { class_index } = r.group {
            if class_index >= self.k {
                return Err(IngestError::ClassIndexOutOfRange {
                    line,
                    id: id(),
                    index: class_index,
                    k: self.k,
                });
            }
        }
        if r.logits.is_none() && r.feature.is_none() {
            return Err(IngestError::NoPayload { line, id: id() });
        }
        if let Some(logits) = &r.logits {
            if logits.len() != self.k {
                return Err(IngestError::LogitDimension {
                    line,
                    id: id(),
                    found: logits.len(),
                    expected: self.k,
                });
            }
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::Record {
                    line,
                    id: id(),
                    message: "non-finite logit".into(),
                });
            }
        }
        if let Some(feature) = &r.feature {
            match self.feature_dim {
                Some(d) if d != feature.len() => {
                    return Err(IngestError::FeatureDimension {
                        line,
                        id: id(),
                        found: feature.len(),
                        expected: d,
                    })
                }
                Some(_) => {}
                None => self.feature_dim = Some(feature.len()),
            }
            if feature.is_empty() {
                return Err(IngestError::Record {
                    line,
                    id: id(),
                    message: "empty feature vector".into(),
                });
            }
            if feature.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::Record {
                    line,
                    id: id(),
                    message: "non-finite feature value".into(),
                });
            }
        }
        Ok(())
    }
}

fn check_fields(
    line: usize,
    value: &serde_json::Value,
    allowed: &[&str],
) -> Result<(), IngestError> {
    let obj = value.as_object().ok_or_else(|| IngestError::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(IngestError::Parse {
                line,
                message: format!("unknown field {key:?}"),
            });
        }
    }
    Ok(())
}

fn parse_line<T: serde::de::DeserializeOwned>(
    line: usize,
    text: &str,
    schema: &ManifestSchema,
    allowed: &[&str],
) -> Result<T, IngestError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| IngestError::Parse {
        line,
        message: e.to_string(),
    })?;
    if schema.reject_unknown_fields {
        check_fields(line, &value, allowed)?;
    }
    serde_json::from_value(value).map_err(|e| IngestError::Parse {
        line,
        message: e.to_string(),
    })
}

/// Parses a manifest from any buffered reader.
pub fn read_samples<R: BufRead>(reader: R, schema: &ManifestSchema) -> Result<SampleSet, IngestError> {
    let mut header: Option<(ManifestHeader, Builder)> = None;
    let mut records = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match &mut header {
            None => {
                let h: ManifestHeader = parse_line(line_no, text, schema, HEADER_FIELDS)?;
                if h.version != schema.version {
                    return Err(IngestError::Version {
                        line: line_no,
                        found: h.version,
                        expected: schema.version,
                    });
                }
                if h.num_known != h.known_classes.len() {
                    return Err(IngestError::Parse {
                        line: line_no,
                        message: format!(
                            "K = {} but {} known class names given",
                            h.num_known,
                            h.known_classes.len()
                        ),
                    });
                }
                if h.num_known == 0 {
                    return Err(IngestError::Parse {
                        line: line_no,
                        message: "K must be at least 1".into(),
                    });
                }
                let distinct: BTreeSet<&String> = h.known_classes.iter().collect();
                if distinct.len() != h.known_classes.len() {
                    return Err(IngestError::Parse {
                        line: line_no,
                        message: "known_classes contains duplicates".into(),
                    });
                }
                let builder = Builder::new(h.num_known, h.feature_dim);
                header = Some((h, builder));
            }
            Some((_, builder)) => {
                let raw: RawRecord = parse_line(line_no, text, schema, RECORD_FIELDS)?;
                let group = match (raw.group, raw.class_index) {
                    (GroupKind::Known, Some(class_index)) => Group::Known { class_index },
                    (GroupKind::Known, None) => {
                        return Err(IngestError::Record {
                            line: line_no,
                            id: raw.sample_id,
                            message: "known sample without class_index".into(),
                        })
                    }
                    (_, Some(_)) => {
                        return Err(IngestError::Record {
                            line: line_no,
                            id: raw.sample_id,
                            message: "unknown sample must not carry class_index".into(),
                        })
                    }
                    (GroupKind::TargetUnknown, None) => Group::TargetUnknown,
                    (GroupKind::NonTargetUnknown, None) => Group::NonTargetUnknown,
                };
                let record = SampleRecord {
                    sample_id: raw.sample_id,
                    split: raw.split,
                    category: raw.category,
                    group,
                    logits: raw.logits,
                    feature: raw.feature,
                };
                builder.check(line_no, &record)?;
                records.push(record);
            }
        }
    }

    let (h, builder) = header.ok_or(IngestError::MissingHeader)?;
    Ok(SampleSet::assemble(
        h.known_classes,
        builder.feature_dim,
        h.disjoint_unknowns,
        records,
    ))
}

pub fn parse_samples(text: &str, schema: &ManifestSchema) -> Result<SampleSet, IngestError> {
    read_samples(text.as_bytes(), schema)
}

/// Loads a manifest file. Loading is order-preserving and deterministic.
pub fn load_samples(path: &Path, schema: &ManifestSchema) -> Result<SampleSet, IngestError> {
    let file = std::fs::File::open(path)?;
    read_samples(std::io::BufReader::new(file), schema)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupInventory {
    pub count: usize,
    /// category name → sample count
    pub categories: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitInventory {
    pub total: usize,
    pub known: GroupInventory,
    pub target_unknown: GroupInventory,
    pub non_target_unknown: GroupInventory,
}

impl SplitInventory {
    fn group_mut(&mut self, kind: GroupKind) -> &mut GroupInventory {
        match kind {
            GroupKind::Known => &mut self.known,
            GroupKind::TargetUnknown => &mut self.target_unknown,
            GroupKind::NonTargetUnknown => &mut self.non_target_unknown,
        }
    }

    fn unknown_categories(&self) -> BTreeSet<String> {
        self.target_unknown
            .categories
            .keys()
            .chain(self.non_target_unknown.categories.keys())
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessCheck {
    pub checked: bool,
    pub overlap: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub num_known: usize,
    pub known_classes: Vec<String>,
    pub feature_dim: Option<usize>,
    pub train: SplitInventory,
    pub val: SplitInventory,
    pub test: SplitInventory,
    pub disjointness: DisjointnessCheck,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn split(&self, split: Split) -> &SplitInventory {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Summarizes per-split inventories and checks unknown-category disjointness.
///
/// The check runs when `require_disjoint_unknowns` is set or the manifest
/// header declares `disjoint_unknowns`; an overlap is then an error.
pub fn validate_splits(
    s: &SampleSet,
    require_disjoint_unknowns: bool,
) -> Result<ValidationReport, IngestError> {
    let mut inv: [SplitInventory; 3] = Default::default();
    for r in &s.records {
        let split = &mut inv[r.split.slot()];
        split.total += 1;
        let g = split.group_mut(r.group.kind());
        g.count += 1;
        *g.categories.entry(r.category.clone()).or_insert(0) += 1;
    }

    let mut warnings = Vec::new();
    for split in Split::ALL {
        if inv[split.slot()].total == 0 {
            warnings.push(format!("{split} split is empty"));
        }
    }
    if inv[Split::Val.slot()].total > 0
        && inv[Split::Val.slot()].target_unknown.count + inv[Split::Val.slot()].non_target_unknown.count == 0
    {
        warnings.push("val split has no unknown samples".into());
    }
    for (k, name) in s.known_classes.iter().enumerate() {
        let has_train = s
            .split(Split::Train)
            .iter()
            .any(|&i| s.records[i].group.class_index() == Some(k));
        if !has_train {
            warnings.push(format!("known class {name:?} has no train samples"));
        }
    }

    let checked = require_disjoint_unknowns || s.disjoint_unknowns;
    let val_unknown = inv[Split::Val.slot()].unknown_categories();
    let test_unknown = inv[Split::Test.slot()].unknown_categories();
    let overlap: Vec<String> = val_unknown.intersection(&test_unknown).cloned().collect();
    if checked && !overlap.is_empty() {
        return Err(IngestError::DisjointnessViolation { overlap });
    }

    let [train, val, test] = inv;
    Ok(ValidationReport {
        num_known: s.num_known(),
        known_classes: s.known_classes.clone(),
        feature_dim: s.feature_dim,
        train,
        val,
        test,
        disjointness: DisjointnessCheck { checked, overlap },
        warnings,
    })
}
