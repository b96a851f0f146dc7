//! Instance tags: discretized textual measurements and descriptive
//! dimensions, collected into a vocabulary that fixes feature order.

pub mod descriptive;
pub mod metrics;
pub mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::sha256_strings;
use crate::model::{Dataset, DescriptiveMap, PreferenceInstance};

use descriptive::{DescriptiveTag, DescriptiveTagger, TaggerFailure};
use text::{heuristic_entities, HashingEmbedder, Tokenizer, TokenizerKind};

/// One of the three equal-width bins over [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bin {
    Low,
    Mid,
    High,
}

impl Bin {
    pub const ALL: [Bin; 3] = [Bin::Low, Bin::Mid, Bin::High];

    pub fn label(self) -> &'static str {
        match self {
            Bin::Low => "[0,0.33)",
            Bin::Mid => "[0.33,0.67)",
            Bin::High => "[0.67,1]",
        }
    }

    /// Boundaries belong to the higher bin; values outside [0, 1] saturate.
    pub fn of(x: f64) -> Bin {
        if x < 1.0 / 3.0 {
            Bin::Low
        } else if x < 2.0 / 3.0 {
            Bin::Mid
        } else {
            Bin::High
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Already a score in [0, 1]; out-of-range values are clamped.
    Clamp,
    /// Min-max normalized over the dataset first.
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binned {
    pub bins: Vec<Bin>,
    /// Set when a min-max normalized metric had no spread; every value went to the middle bin.
    pub constant: bool,
}

pub fn normalize_and_bin(values: &[f64], norm: Normalization) -> Result<Binned> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("cannot bin non-finite value {v}")));
    }
    match norm {
        Normalization::Clamp => Ok(Binned {
            bins: values.iter().map(|&v| Bin::of(v.clamp(0.0, 1.0))).collect(),
            constant: false,
        }),
        Normalization::MinMax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if values.is_empty() || lo == hi {
                return Ok(Binned {
                    bins: vec![Bin::Mid; values.len()],
                    constant: !values.is_empty(),
                });
            }
            Ok(Binned {
                bins: values
                    .iter()
                    .map(|&v| Bin::of((v - lo) / (hi - lo)))
                    .collect(),
                constant: false,
            })
        }
    }
}

/// A discretized textual measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextualDim {
    Bertscore,
    BertscoreLengthAdjusted,
    RougeL,
    CosineSimilarity,
    EntitySimilarity,
    PromptLen,
    ShorterResponseLen,
    LongerResponseLen,
    LengthDiff,
}

impl TextualDim {
    pub const ALL: [TextualDim; 9] = [
        TextualDim::Bertscore,
        TextualDim::BertscoreLengthAdjusted,
        TextualDim::RougeL,
        TextualDim::CosineSimilarity,
        TextualDim::EntitySimilarity,
        TextualDim::PromptLen,
        TextualDim::ShorterResponseLen,
        TextualDim::LongerResponseLen,
        TextualDim::LengthDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextualDim::Bertscore => "bertscore",
            TextualDim::BertscoreLengthAdjusted => "bertscore_length_adjusted",
            TextualDim::RougeL => "rouge_l",
            TextualDim::CosineSimilarity => "cosine_similarity",
            TextualDim::EntitySimilarity => "entity_similarity",
            TextualDim::PromptLen => "prompt_len",
            TextualDim::ShorterResponseLen => "shorter_response_len",
            TextualDim::LongerResponseLen => "longer_response_len",
            TextualDim::LengthDiff => "length_diff",
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            TextualDim::PromptLen
            | TextualDim::ShorterResponseLen
            | TextualDim::LongerResponseLen
            | TextualDim::LengthDiff => Normalization::MinMax,
            _ => Normalization::Clamp,
        }
    }

    pub fn tag(self, bin: Bin) -> String {
        format!("{}:{}", self.name(), bin.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub tag: String,
    pub dimension: String,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tags: Vec<VocabEntry>,
}

/// Ordered tag list; position `j` is feature index `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct TagVocabulary {
    tags: Vec<String>,
    dimensions: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for TagVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tags == other.tags && self.dimensions == other.dimensions
    }
}

impl TryFrom<VocabRepr> for TagVocabulary {
    type Error = Error;
    fn try_from(r: VocabRepr) -> Result<Self> {
        TagVocabulary::new(r.tags)
    }
}

impl From<TagVocabulary> for VocabRepr {
    fn from(v: TagVocabulary) -> Self {
        VocabRepr { tags: v.entries() }
    }
}

impl TagVocabulary {
    pub fn new(entries: Vec<VocabEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut tags = Vec::with_capacity(entries.len());
        let mut dimensions = Vec::with_capacity(entries.len());
        for (j, e) in entries.into_iter().enumerate() {
            if index.insert(e.tag.clone(), j).is_some() {
                return Err(Error::validation(format!(
                    "duplicate tag {:?} in vocabulary",
                    e.tag
                )));
            }
            tags.push(e.tag);
            dimensions.push(e.dimension);
        }
        Ok(TagVocabulary {
            tags,
            dimensions,
            index,
        })
    }

    /// Vocabulary whose tags are their own dimensions.
    pub fn from_tags<S: AsRef<str>>(tags: &[S]) -> Result<Self> {
        Self::new(
            tags.iter()
                .map(|t| VocabEntry {
                    tag: t.as_ref().to_string(),
                    dimension: t.as_ref().to_string(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn dimension(&self, j: usize) -> &str {
        &self.dimensions[j]
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn entries(&self) -> Vec<VocabEntry> {
        self.tags
            .iter()
            .zip(&self.dimensions)
            .map(|(t, d)| VocabEntry {
                tag: t.clone(),
                dimension: d.clone(),
            })
            .collect()
    }

    pub fn fingerprint(&self) -> String {
        sha256_strings(
            self.tags
                .iter()
                .zip(&self.dimensions)
                .flat_map(|(t, d)| [t.as_str(), d.as_str()]),
        )
    }
}

/// Tags and raw measurements of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub id: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub raw_metrics: BTreeMap<String, f64>,
}

/// Vocabulary plus per-instance assignments in dataset order, with the tag
/// lists resolved to feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    vocabulary: TagVocabulary,
    assignments: Vec<TagAssignment>,
    indices: Vec<Vec<usize>>,
}

impl TagTable {
    pub fn new(vocabulary: TagVocabulary, assignments: Vec<TagAssignment>) -> Result<Self> {
        let mut indices = Vec::with_capacity(assignments.len());
        for a in &assignments {
            let mut idx = Vec::with_capacity(a.tags.len());
            for t in &a.tags {
                let j = vocabulary.index_of(t).ok_or_else(|| {
                    Error::Consistency(format!(
                        "instance {:?} carries tag {t:?} missing from the vocabulary",
                        a.id
                    ))
                })?;
                idx.push(j);
            }
            idx.sort_unstable();
            idx.dedup();
            indices.push(idx);
        }
        Ok(TagTable {
            vocabulary,
            assignments,
            indices,
        })
    }

    pub fn vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }

    pub fn assignments(&self) -> &[TagAssignment] {
        &self.assignments
    }

    /// Feature indices of instance `i`, ascending.
    pub fn tag_indices(&self, i: usize) -> &[usize] {
        &self.indices[i]
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.assignments.iter().map(|a| a.id.clone()).collect()
    }

    /// Whole-dataset count per tag.
    pub fn tag_totals(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.vocabulary.len()];
        for idx in &self.indices {
            for &j in idx {
                c[j] += 1;
            }
        }
        c
    }

    /// Checks that assignments line up with the dataset by id and position.
    pub fn check_aligned(&self, d: &Dataset) -> Result<()> {
        if self.len() != d.len() {
            return Err(Error::Alignment(format!(
                "{} tag assignments for {} instances",
                self.len(),
                d.len()
            )));
        }
        for (a, inst) in self.assignments.iter().zip(&d.instances) {
            if a.id != inst.id {
                return Err(Error::Alignment(format!(
                    "tag assignment {:?} where dataset has {:?}",
                    a.id, inst.id
                )));
            }
        }
        Ok(())
    }
}

/// Precomputed vectors keyed by instance id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub id: String,
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
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingSidecar {
    by_id: HashMap<String, SidecarRecord>,
}

impl EmbeddingSidecar {
    pub fn from_records(records: Vec<SidecarRecord>) -> Self {
        EmbeddingSidecar {
            by_id: records.into_iter().map(|r| (r.id.clone(), r)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::from_records(records))
    }

    pub fn get(&self, id: &str) -> Option<&SidecarRecord> {
        self.by_id.get(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggingOptions {
    pub textual: Vec<TextualDim>,
    pub descriptive: bool,
    pub tokenizer: TokenizerKind,
    /// Used for any instance without supplied vectors; `None` makes supplied vectors mandatory.
    pub fallback_embedding: Option<HashingEmbedder>,
    pub entity_heuristic: bool,
}

impl Default for TaggingOptions {
    fn default() -> Self {
        TaggingOptions {
            textual: TextualDim::ALL.to_vec(),
            descriptive: true,
            tokenizer: TokenizerKind::default(),
            fallback_embedding: Some(HashingEmbedder::default()),
            entity_heuristic: true,
        }
    }
}

#[derive(Default, Clone, Copy)]
pub struct TaggingResources<'a> {
    pub sidecar: Option<&'a EmbeddingSidecar>,
    pub tagger: Option<&'a dyn DescriptiveTagger>,
    pub tagger_retries: usize,
    pub tagger_max_in_flight: usize,
}

#[derive(Debug, Clone)]
pub struct TaggingOutput {
    pub table: TagTable,
    pub warnings: Vec<String>,
    pub failures: Vec<TaggerFailure>,
    /// How many instances took their vectors from each source.
    pub embedding_sources: BTreeMap<String, usize>,
}

type TokenVectors = Vec<Vec<f64>>;

struct InstanceMetrics {
    values: Vec<f64>,
    raw: BTreeMap<String, f64>,
    sources: Vec<String>,
}

struct Env<'a> {
    opts: &'a TaggingOptions,
    tok: &'a dyn Tokenizer,
    sidecar: Option<&'a EmbeddingSidecar>,
}

impl Env<'_> {
    fn response_vectors(&self, inst: &PreferenceInstance) -> Result<(Vec<f64>, Vec<f64>, String)> {
        if let (Some(a), Some(b)) = (&inst.embedding_a, &inst.embedding_b) {
            return Ok((a.clone(), b.clone(), "inline".into()));
        }
        if let Some(r) = self.sidecar.and_then(|s| s.get(&inst.id)) {
            if let (Some(a), Some(b)) = (&r.embedding_a, &r.embedding_b) {
                return Ok((a.clone(), b.clone(), "sidecar".into()));
            }
        }
        match &self.opts.fallback_embedding {
            Some(h) => Ok((
                h.sentence_vector(&self.tok.tokenize(&inst.response_a)),
                h.sentence_vector(&self.tok.tokenize(&inst.response_b)),
                h.describe(),
            )),
            None => Err(Error::Config(format!(
                "metric cosine_similarity needs response embeddings; instance {:?} has none inline or in the sidecar and the fallback is disabled",
                inst.id
            ))),
        }
    }

    fn token_vectors(
        &self,
        inst: &PreferenceInstance,
    ) -> Result<(TokenVectors, TokenVectors, String)> {
        if let (Some(a), Some(b)) = (&inst.token_embeddings_a, &inst.token_embeddings_b) {
            return Ok((a.clone(), b.clone(), "inline".into()));
        }
        if let Some(r) = self.sidecar.and_then(|s| s.get(&inst.id)) {
            if let (Some(a), Some(b)) = (&r.token_embeddings_a, &r.token_embeddings_b) {
                return Ok((a.clone(), b.clone(), "sidecar".into()));
            }
        }
        match &self.opts.fallback_embedding {
            Some(h) => Ok((
                h.token_vectors(&self.tok.tokenize(&inst.response_a)),
                h.token_vectors(&self.tok.tokenize(&inst.response_b)),
                h.describe(),
            )),
            None => Err(Error::Config(format!(
                "metric bertscore needs token embeddings; instance {:?} has none inline or in the sidecar and the fallback is disabled",
                inst.id
            ))),
        }
    }

    fn entities(&self, inst: &PreferenceInstance) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
        let norm = |v: &Vec<String>| v.iter().map(|e| e.trim().to_lowercase()).collect();
        match (&inst.entities_a, &inst.entities_b) {
            (Some(a), Some(b)) => Ok((norm(a), norm(b))),
            _ if self.opts.entity_heuristic => Ok((
                heuristic_entities(&inst.response_a),
                heuristic_entities(&inst.response_b),
            )),
            _ => Err(Error::Config(format!(
                "metric entity_similarity needs entity sets; instance {:?} has none and the heuristic is disabled",
                inst.id
            ))),
        }
    }

    fn measure(&self, inst: &PreferenceInstance) -> Result<InstanceMetrics> {
        let mut values = Vec::with_capacity(self.opts.textual.len());
        let mut raw = BTreeMap::new();
        let mut sources = Vec::new();
        let flag = |raw: &mut BTreeMap<String, f64>, dim: TextualDim| {
            raw.insert(format!("{}_flagged", dim.name()), 1.0);
        };
        let lengths = metrics::length_metrics(inst, self.tok);
        let mut token_cache = None;
        for &dim in &self.opts.textual {
            let v = match dim {
                TextualDim::Bertscore | TextualDim::BertscoreLengthAdjusted => {
                    if token_cache.is_none() {
                        let (a, b, src) = self.token_vectors(inst)?;
                        sources.push(src);
                        token_cache = Some((a, b));
                    }
                    let (a, b) = token_cache.as_ref().expect("filled");
                    let adj = dim == TextualDim::BertscoreLengthAdjusted;
                    match metrics::compute_bertscore(a, b, adj) {
                        Some(s) => s,
                        None => {
                            flag(&mut raw, dim);
                            0.0
                        }
                    }
                }
                TextualDim::RougeL => {
                    let a = self.tok.tokenize(&inst.response_a);
                    let b = self.tok.tokenize(&inst.response_b);
                    match metrics::rouge_l(&a, &b) {
                        Some(s) => s,
                        None => {
                            flag(&mut raw, dim);
                            0.0
                        }
                    }
                }
                TextualDim::CosineSimilarity => {
                    let (a, b, src) = self.response_vectors(inst)?;
                    sources.push(src);
                    match metrics::compute_cosine(&a, &b) {
                        Ok(s) => s,
                        Err(Error::UndefinedSimilarity(_)) => {
                            flag(&mut raw, dim);
                            0.0
                        }
                        Err(e) => return Err(e),
                    }
                }
                TextualDim::EntitySimilarity => {
                    let (a, b) = self.entities(inst)?;
                    if a.is_empty() && b.is_empty() {
                        flag(&mut raw, dim);
                    }
                    metrics::compute_entity_iou(&a, &b)
                }
                TextualDim::PromptLen => lengths.prompt_len as f64,
                TextualDim::ShorterResponseLen => lengths.shorter_response_len as f64,
                TextualDim::LongerResponseLen => lengths.longer_response_len as f64,
                TextualDim::LengthDiff => lengths.length_diff as f64,
            };
            raw.insert(dim.name().to_string(), v);
            values.push(v);
        }
        Ok(InstanceMetrics {
            values,
            raw,
            sources,
        })
    }
}

/// Tags every instance of `d`.
pub fn tag_dataset(
    d: &Dataset,
    resources: TaggingResources<'_>,
    options: &TaggingOptions,
) -> Result<TaggingOutput> {
    let tokenizer = options.tokenizer.build();
    let env = Env {
        opts: options,
        tok: tokenizer.as_ref(),
        sidecar: resources.sidecar,
    };
    let measured: Vec<InstanceMetrics> = d
        .instances
        .par_iter()
        .map(|inst| env.measure(inst))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut embedding_sources = BTreeMap::new();
    for m in &measured {
        for s in &m.sources {
            *embedding_sources.entry(s.clone()).or_insert(0) += 1;
        }
    }

    let mut textual_tags: Vec<Vec<String>> = vec![Vec::new(); d.len()];
    for (k, &dim) in options.textual.iter().enumerate() {
        let column: Vec<f64> = measured.iter().map(|m| m.values[k]).collect();
        let binned = normalize_and_bin(&column, dim.normalization())?;
        if binned.constant {
            let w = format!(
                "metric {} is constant over the dataset; all instances binned to the middle",
                dim.name()
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        for (i, b) in binned.bins.into_iter().enumerate() {
            textual_tags[i].push(dim.tag(b));
        }
    }

    let mut descriptive: Vec<Vec<DescriptiveTag>> = vec![Vec::new(); d.len()];
    let mut failures = Vec::new();
    if options.descriptive {
        let mut fetched: HashMap<usize, DescriptiveMap> = HashMap::new();
        if let Some(client) = resources.tagger {
            let todo: Vec<(usize, (&str, &str))> = d
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| i.descriptive_tags.is_none())
                .map(|(k, i)| (k, (i.id.as_str(), i.prompt.as_str())))
                .collect();
            let items: Vec<(&str, &str)> = todo.iter().map(|(_, p)| *p).collect();
            let results = descriptive::request_many(
                client,
                &items,
                resources.tagger_retries,
                resources.tagger_max_in_flight.max(1),
            );
            for ((k, _), r) in todo.into_iter().zip(results) {
                match r {
                    Ok(m) => {
                        fetched.insert(k, m);
                    }
                    Err(f) => failures.push(f),
                }
            }
        }
        for (k, inst) in d.instances.iter().enumerate() {
            let map = inst.descriptive_tags.as_ref().or_else(|| fetched.get(&k));
            if let Some(map) = map {
                descriptive[k] = descriptive::ingest_descriptive_tags(&inst.id, map, &mut warnings);
            }
        }
    }

    let mut entries: Vec<VocabEntry> = Vec::new();
    for &dim in &options.textual {
        for b in Bin::ALL {
            entries.push(VocabEntry {
                tag: dim.tag(b),
                dimension: dim.name().to_string(),
            });
        }
    }
    let desc_vocab: BTreeSet<&DescriptiveTag> = descriptive.iter().flatten().collect();
    for t in desc_vocab {
        entries.push(VocabEntry {
            tag: t.tag.clone(),
            dimension: t.dimension.clone(),
        });
    }
    let vocabulary = TagVocabulary::new(entries)?;

    let assignments: Vec<TagAssignment> = d
        .instances
        .iter()
        .zip(measured)
        .zip(textual_tags.into_iter().zip(descriptive))
        .map(|((inst, m), (tt, dt))| {
            let mut tags: Vec<String> = tt;
            tags.extend(dt.into_iter().map(|t| t.tag));
            tags.sort_by_key(|t| vocabulary.index_of(t));
            TagAssignment {
                id: inst.id.clone(),
                tags,
                raw_metrics: m.raw,
            }
        })
        .collect();

    Ok(TaggingOutput {
        table: TagTable::new(vocabulary, assignments)?,
        warnings,
        failures,
        embedding_sources,
    })
}

/// Header of a tag file; records follow as [`TagAssignment`] lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagFileHeader {
    pub dataset_fingerprint: String,
    pub vocabulary_fingerprint: String,
    pub vocabulary: TagVocabulary,
    pub options: TaggingOptions,
}

pub fn write_tag_file(
    path: &Path,
    dataset_fingerprint: &str,
    table: &TagTable,
    options: &TaggingOptions,
) -> Result<()> {
    let header = TagFileHeader {
        dataset_fingerprint: dataset_fingerprint.to_string(),
        vocabulary_fingerprint: table.vocabulary().fingerprint(),
        vocabulary: table.vocabulary().clone(),
        options: options.clone(),
    };
    crate::io::write_jsonl_with_header(path, &header, table.assignments())
}

pub fn read_tag_file(path: &Path) -> Result<(TagFileHeader, TagTable)> {
    let (h, records): (TagFileHeader, Vec<TagAssignment>) =
        crate::io::read_jsonl_with_header(path)?;
    if h.vocabulary.fingerprint() != h.vocabulary_fingerprint {
        return Err(Error::Consistency(format!(
            "{}: vocabulary fingerprint does not match its tag list",
            path.display()
        )));
    }
    let table = TagTable::new(h.vocabulary.clone(), records)?;
    Ok((h, table))
}
