//! Preference data: instances, datasets, routing configurations, and label
//! application.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::sha256_hex;
use crate::seed;

/// A preference judgment between two responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "B")]
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::A, Label::B, Label::Tie];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::Tie => "tie",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::A => 0,
            Label::B => 1,
            Label::Tie => 2,
        }
    }

    /// The label obtained by swapping the two responses.
    pub fn swapped(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
            Label::Tie => Label::Tie,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Label::A),
            "B" => Ok(Label::B),
            "tie" => Ok(Label::Tie),
            other => Err(Error::validation(format!(
                "unknown label {other:?}; expected \"A\", \"B\" or \"tie\""
            ))),
        }
    }
}

/// Value of one descriptive dimension as supplied with the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DescriptiveValue {
    Flag(bool),
    One(String),
    Many(Vec<String>),
}

impl DescriptiveValue {
    /// Non-empty values in input order.
    pub fn values(&self) -> Vec<&str> {
        match self {
            DescriptiveValue::Flag(_) => Vec::new(),
            DescriptiveValue::One(s) => {
                if s.trim().is_empty() {
                    Vec::new()
                } else {
                    vec![s.as_str()]
                }
            }
            DescriptiveValue::Many(v) => v
                .iter()
                .map(String::as_str)
                .filter(|s| !s.trim().is_empty())
                .collect(),
        }
    }

    /// Whether the dimension counts as present for presence-only dimensions.
    pub fn is_present(&self) -> bool {
        match self {
            DescriptiveValue::Flag(b) => *b,
            _ => !self.values().is_empty(),
        }
    }
}

pub type DescriptiveMap = BTreeMap<String, DescriptiveValue>;

/// One prompt with two candidate responses and up to two labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceInstance {
    pub id: String,
    pub prompt: String,
    pub response_a: String,
    pub response_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptive_tags: Option<DescriptiveMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities_a: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities_b: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_prompt: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_embeddings_a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_embeddings_b: Option<Vec<Vec<f64>>>,
    /// Fields this crate does not interpret, kept for round trips.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl PreferenceInstance {
    /// Minimal instance with no labels or side information.
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        response_a: impl Into<String>,
        response_b: impl Into<String>,
    ) -> Self {
        PreferenceInstance {
            id: id.into(),
            prompt: prompt.into(),
            response_a: response_a.into(),
            response_b: response_b.into(),
            human_label: None,
            lm_label: None,
            descriptive_tags: None,
            entities_a: None,
            entities_b: None,
            embedding_prompt: None,
            embedding_a: None,
            embedding_b: None,
            token_embeddings_a: None,
            token_embeddings_b: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with_labels(mut self, human: Label, lm: Label) -> Self {
        self.human_label = Some(human);
        self.lm_label = Some(lm);
        self
    }

    fn embedding_dims(&self) -> impl Iterator<Item = usize> + '_ {
        let flat = [&self.embedding_prompt, &self.embedding_a, &self.embedding_b]
            .into_iter()
            .flatten()
            .map(Vec::len);
        let tokens = [&self.token_embeddings_a, &self.token_embeddings_b]
            .into_iter()
            .flatten()
            .flat_map(|seq| seq.iter().map(Vec::len));
        flat.chain(tokens)
    }

    fn check_texts(&self) -> std::result::Result<(), String> {
        for (name, text) in [
            ("prompt", &self.prompt),
            ("response_a", &self.response_a),
            ("response_b", &self.response_b),
        ] {
            if text.is_empty() {
                return Err(format!("instance {:?}: field `{name}` is empty", self.id));
            }
        }
        Ok(())
    }
}

/// On-disk layout of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// One JSON record per line.
    #[default]
    Jsonl,
    /// A single JSON array of records.
    JsonArray,
}

/// Ordered collection of preference instances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub instances: Vec<PreferenceInstance>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset, checking the uniqueness and shape invariants.
    pub fn new(instances: Vec<PreferenceInstance>, provenance: impl Into<String>) -> Result<Self> {
        let d = Dataset {
            instances,
            provenance: provenance.into(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.id.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.instances.len());
        let mut dim: Option<usize> = None;
        for inst in &self.instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate instance id {:?}",
                    inst.id
                )));
            }
            inst.check_texts().map_err(Error::Validation)?;
            for d in inst.embedding_dims() {
                match dim {
                    None => dim = Some(d),
                    Some(prev) if prev != d => {
                        return Err(Error::validation(format!(
                            "instance {:?}: embedding dimensionality {d} differs from {prev}",
                            inst.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Content hash over the canonical line-delimited serialization.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_jsonl(&self.instances, &mut buf).expect("in-memory write");
        sha256_hex(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write_jsonl(&self.instances, &mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_jsonl(&self.instances, &mut buf).expect("in-memory write");
        buf
    }
}

fn write_jsonl<W: Write>(instances: &[PreferenceInstance], mut w: W) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io("<buffer>", e))?;
    }
    Ok(())
}

/// Reads a dataset file, preserving record order.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let instances = match format {
        DatasetFormat::Jsonl => parse_jsonl(BufReader::new(file), &name)?,
        DatasetFormat::JsonArray => {
            let mut text = String::new();
            BufReader::new(file)
                .read_to_string(&mut text)
                .map_err(|e| Error::io(path, e))?;
            if text.trim().is_empty() {
                Vec::new()
            } else {
                let v: Vec<PreferenceInstance> =
                    serde_json::from_str(&text).map_err(|e| Error::Parse {
                        path: name.clone(),
                        line: e.line(),
                        message: e.to_string(),
                    })?;
                v
            }
        }
    };
    let d = Dataset {
        instances,
        provenance: name,
    };
    d.validate()?;
    Ok(d)
}

/// Parses line-delimited records; blank lines are skipped but still counted.
pub fn parse_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Vec<PreferenceInstance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: PreferenceInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        inst.check_texts().map_err(|message| Error::Parse {
            path: source.to_string(),
            line: lineno,
            message,
        })?;
        if !seen.insert(inst.id.clone()) {
            return Err(Error::validation(format!(
                "{source}: line {lineno}: duplicate instance id {:?}",
                inst.id
            )));
        }
        out.push(inst);
    }
    Ok(out)
}

fn require_both_labels(d: &Dataset) -> Result<()> {
    let missing: Vec<&str> = d
        .instances
        .iter()
        .filter(|i| i.human_label.is_none() || i.lm_label.is_none())
        .map(|i| i.id.as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{} instance(s) lack a human or LM label: {}",
            missing.len(),
            missing.join(", ")
        )))
    }
}

/// Drops every instance that either source labeled a tie.
pub fn filter_ties(d: &Dataset) -> Result<Dataset> {
    require_both_labels(d)?;
    let instances = d
        .instances
        .iter()
        .filter(|i| i.human_label != Some(Label::Tie) && i.lm_label != Some(Label::Tie))
        .cloned()
        .collect();
    Ok(Dataset {
        instances,
        provenance: d.provenance.clone(),
    })
}

/// Uniform sample of `n` instances without replacement, kept in dataset order.
pub fn subsample(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > d.len() {
        return Err(Error::validation(format!(
            "cannot subsample {n} instances from a dataset of {}",
            d.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut picked = index::sample(&mut rng, d.len(), n).into_vec();
    picked.sort_unstable();
    Ok(Dataset {
        instances: picked.into_iter().map(|i| d.instances[i].clone()).collect(),
        provenance: d.provenance.clone(),
    })
}

/// Per-instance label source decision; bit 0 picks the human label, 1 the LM label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingConfiguration {
    pub instance_ids: Vec<String>,
    pub assignments: Vec<u8>,
}

impl RoutingConfiguration {
    pub fn all_lm(ids: &[String]) -> Self {
        RoutingConfiguration {
            instance_ids: ids.to_vec(),
            assignments: vec![1; ids.len()],
        }
    }

    pub fn all_human(ids: &[String]) -> Self {
        RoutingConfiguration {
            instance_ids: ids.to_vec(),
            assignments: vec![0; ids.len()],
        }
    }

    /// Configuration whose human set is exactly the given positions.
    pub fn from_human_positions(ids: &[String], human: &[usize]) -> Self {
        let mut z = vec![1u8; ids.len()];
        for &p in human {
            z[p] = 0;
        }
        RoutingConfiguration {
            instance_ids: ids.to_vec(),
            assignments: z,
        }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Number of instances routed to humans.
    pub fn human_count(&self) -> usize {
        self.assignments.iter().filter(|&&z| z == 0).count()
    }

    pub fn human_positions(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &z)| z == 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.instance_ids.len() != self.assignments.len() {
            return Err(Error::Alignment(format!(
                "{} ids but {} assignments",
                self.instance_ids.len(),
                self.assignments.len()
            )));
        }
        if let Some(bad) = self.assignments.iter().find(|&&z| z > 1) {
            return Err(Error::validation(format!(
                "routing bit {bad} is not 0 or 1"
            )));
        }
        Ok(())
    }

    /// Bits reordered to match `d`; ids decide, position is only a fast path.
    pub fn aligned_to(&self, d: &Dataset) -> Result<Vec<u8>> {
        self.validate()?;
        if self.len() != d.len() {
            return Err(Error::Alignment(format!(
                "configuration covers {} instances, dataset has {}",
                self.len(),
                d.len()
            )));
        }
        if self
            .instance_ids
            .iter()
            .zip(&d.instances)
            .all(|(id, inst)| *id == inst.id)
        {
            return Ok(self.assignments.clone());
        }
        let by_id: HashMap<&str, u8> = self
            .instance_ids
            .iter()
            .map(String::as_str)
            .zip(self.assignments.iter().copied())
            .collect();
        if by_id.len() != self.len() {
            return Err(Error::Alignment(
                "configuration repeats an instance id".into(),
            ));
        }
        d.instances
            .iter()
            .map(|inst| {
                by_id.get(inst.id.as_str()).copied().ok_or_else(|| {
                    Error::Alignment(format!("instance {:?} missing from configuration", inst.id))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    Lm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutedLabel {
    pub id: String,
    pub label: Label,
    pub source: LabelSource,
}

/// Chooses each instance's label from the source its routing bit names.
pub fn apply_routing(d: &Dataset, z: &RoutingConfiguration) -> Result<Vec<RoutedLabel>> {
    require_both_labels(d)?;
    let bits = z.aligned_to(d)?;
    Ok(d.instances
        .iter()
        .zip(bits)
        .map(|(inst, bit)| {
            let (label, source) = if bit == 0 {
                (inst.human_label.expect("checked"), LabelSource::Human)
            } else {
                (inst.lm_label.expect("checked"), LabelSource::Lm)
            };
            RoutedLabel {
                id: inst.id.clone(),
                label,
                source,
            }
        })
        .collect())
}
