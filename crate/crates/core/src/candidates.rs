//! Candidate routing configurations sampled by accreting whole tag groups,
//! and their tag-count feature vectors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RoutingConfiguration;
use crate::seed;
use crate::tagging::{TagAssignment, TagTable, TagVocabulary};

/// Tag → positions of the instances carrying it, in dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagIndex {
    ids: Vec<String>,
    by_tag: BTreeMap<String, Vec<usize>>,
}

pub fn build_tag_index(assignments: &[TagAssignment]) -> TagIndex {
    let mut by_tag: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, a) in assignments.iter().enumerate() {
        for t in &a.tags {
            let g = by_tag.entry(t.clone()).or_default();
            if g.last() != Some(&i) {
                g.push(i);
            }
        }
    }
    TagIndex {
        ids: assignments.iter().map(|a| a.id.clone()).collect(),
        by_tag,
    }
}

impl TagIndex {
    pub fn n_instances(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_empty(&self) -> bool {
        self.by_tag.is_empty()
    }

    pub fn group(&self, tag: &str) -> Option<&[usize]> {
        self.by_tag.get(tag).map(Vec::as_slice)
    }

    pub fn group_ids(&self, tag: &str) -> Vec<&str> {
        self.group(tag)
            .map(|g| g.iter().map(|&i| self.ids[i].as_str()).collect())
            .unwrap_or_default()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.by_tag.iter().map(|(t, g)| (t.as_str(), g.as_slice()))
    }

    pub fn largest_group(&self) -> usize {
        self.by_tag.values().map(Vec::len).max().unwrap_or(0)
    }
}

/// Per-tag counts over a human-routed subset, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub counts: Vec<u32>,
    pub vocabulary_fingerprint: String,
}

impl FeatureVector {
    pub fn zeros(vocab: &TagVocabulary) -> Self {
        FeatureVector {
            counts: vec![0; vocab.len()],
            vocabulary_fingerprint: vocab.fingerprint(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Counts of each tag among the instances at `human` positions.
pub fn featurize(human: &[usize], table: &TagTable) -> FeatureVector {
    let mut counts = vec![0u32; table.vocabulary().len()];
    for &i in human {
        for &j in table.tag_indices(i) {
            counts[j] += 1;
        }
    }
    FeatureVector {
        counts,
        vocabulary_fingerprint: table.vocabulary().fingerprint(),
    }
}

/// [`featurize`] for a subset named by instance ids.
pub fn featurize_ids<S: AsRef<str>>(ids: &[S], table: &TagTable) -> Result<FeatureVector> {
    Ok(featurize(&positions_of(ids, table)?, table))
}

fn positions_of<S: AsRef<str>>(ids: &[S], table: &TagTable) -> Result<Vec<usize>> {
    let lookup: HashMap<&str, usize> = table
        .assignments()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.as_str(), i))
        .collect();
    let mut out = ids
        .iter()
        .map(|id| {
            lookup.get(id.as_ref()).copied().ok_or_else(|| {
                Error::Consistency(format!("instance {:?} has no tag assignment", id.as_ref()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// The human set chosen by one run of the sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSubset {
    pub budget: usize,
    /// Ascending positions.
    pub human: Vec<usize>,
}

/// Samples one human set: draw a budget (unless fixed), shuffle the tags, and
/// add whole tag groups until the set reaches the budget.
///
/// The budget is checked after each group, so the set overshoots by less than
/// one group. If every group is exhausted first, the union of all groups is
/// returned.
pub fn sample_human_subset(
    index: &TagIndex,
    rng: &mut seed::Rng,
    fixed_budget: Option<usize>,
) -> Result<SampledSubset> {
    let n = index.n_instances();
    let budget = match fixed_budget {
        Some(b) if b > n => {
            return Err(Error::validation(format!(
                "fixed budget {b} exceeds dataset size {n}"
            )))
        }
        Some(b) => b,
        None => {
            if n < 2 {
                return Err(Error::validation(format!(
                    "sampling a random budget needs at least 2 instances, have {n}"
                )));
            }
            rng.random_range(1..n)
        }
    };
    let mut groups: Vec<&[usize]> = index.by_tag.values().map(Vec::as_slice).collect();
    groups.shuffle(rng);
    let mut member = vec![false; n];
    let mut size = 0usize;
    if budget > 0 {
        for g in groups {
            for &i in g {
                if !member[i] {
                    member[i] = true;
                    size += 1;
                }
            }
            if size >= budget {
                break;
            }
        }
    }
    Ok(SampledSubset {
        budget,
        human: (0..n).filter(|&i| member[i]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceSource {
    Measured,
    Oracle,
    Absent,
}

/// A sampled routing configuration, its features, and its performance if known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate_id: String,
    pub budget: usize,
    pub realized_size: usize,
    /// Ids routed to humans, in dataset order.
    pub human_subset: Vec<String>,
    pub features: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<f64>,
    pub performance_source: PerformanceSource,
}

impl CandidateRecord {
    pub fn from_positions(
        candidate_id: impl Into<String>,
        budget: usize,
        human: &[usize],
        table: &TagTable,
    ) -> Self {
        let ids = table.assignments();
        CandidateRecord {
            candidate_id: candidate_id.into(),
            budget,
            realized_size: human.len(),
            human_subset: human.iter().map(|&i| ids[i].id.clone()).collect(),
            features: featurize(human, table).counts,
            performance: None,
            performance_source: PerformanceSource::Absent,
        }
    }

    pub fn human_positions(&self, table: &TagTable) -> Result<Vec<usize>> {
        positions_of(&self.human_subset, table)
    }

    pub fn routing(&self, table: &TagTable) -> Result<RoutingConfiguration> {
        Ok(RoutingConfiguration::from_human_positions(
            &table.ids(),
            &self.human_positions(table)?,
        ))
    }

    pub fn feature_vector(&self, vocab: &TagVocabulary) -> FeatureVector {
        FeatureVector {
            counts: self.features.clone(),
            vocabulary_fingerprint: vocab.fingerprint(),
        }
    }
}

pub const ALL_HUMAN_ID: &str = "all-human";
pub const ALL_LM_ID: &str = "all-lm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub count: usize,
    pub include_endpoints: bool,
    pub fixed_budget: Option<usize>,
    /// Resampling attempts for a candidate that duplicates an earlier one.
    pub max_retries: usize,
    pub id_prefix: String,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            count: 200,
            include_endpoints: true,
            fixed_budget: None,
            max_retries: 16,
            id_prefix: "cand-".into(),
        }
    }
}

/// Samples `opts.count` distinct candidates, then appends the endpoints.
///
/// Candidate `k` draws from a seed derived from `(seed, k)`; duplicates of
/// earlier candidates are redrawn from `(seed, k, attempt)`.
pub fn generate_candidate_set(
    index: &TagIndex,
    table: &TagTable,
    opts: &GenerateOptions,
    seed_value: u64,
) -> Result<(Vec<CandidateRecord>, Vec<String>)> {
    if index.n_instances() != table.len() {
        return Err(Error::Consistency(format!(
            "tag index covers {} instances, tag table {}",
            index.n_instances(),
            table.len()
        )));
    }
    let draw = |ordinal: usize, attempt: usize| -> Result<SampledSubset> {
        let s = seed::child(seed::child(seed_value, ordinal as u64), attempt as u64);
        sample_human_subset(index, &mut seed::rng(s), opts.fixed_budget)
    };
    let first: Vec<SampledSubset> = (0..opts.count)
        .into_par_iter()
        .map(|k| draw(k, 0))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::with_capacity(opts.count + 2);
    for (k, mut s) in first.into_iter().enumerate() {
        let mut attempt = 0;
        while seen.contains(&s.human) && attempt < opts.max_retries {
            attempt += 1;
            s = draw(k, attempt)?;
        }
        if !seen.insert(s.human.clone()) {
            let w = format!(
                "candidate {k} still duplicates an earlier candidate after {} retries; kept",
                opts.max_retries
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        out.push(CandidateRecord::from_positions(
            format!("{}{k:04}", opts.id_prefix),
            s.budget,
            &s.human,
            table,
        ));
    }
    if opts.include_endpoints {
        let n = table.len();
        let all: Vec<usize> = (0..n).collect();
        if !seen.contains(&all) {
            out.push(CandidateRecord::from_positions(
                ALL_HUMAN_ID,
                n,
                &all,
                table,
            ));
        }
        if !seen.contains(&Vec::new()) {
            out.push(CandidateRecord::from_positions(ALL_LM_ID, 0, &[], table));
        }
    }
    Ok((out, warnings))
}

/// Header of a candidate set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSetHeader {
    pub dataset_fingerprint: String,
    pub vocabulary_fingerprint: String,
    pub n_instances: usize,
    pub seed: u64,
}

pub fn write_candidate_set(
    path: &Path,
    header: &CandidateSetHeader,
    records: &[CandidateRecord],
) -> Result<()> {
    crate::io::write_jsonl_with_header(path, header, records)
}

pub fn read_candidate_set(path: &Path) -> Result<(CandidateSetHeader, Vec<CandidateRecord>)> {
    crate::io::read_jsonl_with_header(path)
}

/// Feature matrix as CSV: `candidate_id`, one column per tag, `performance`.
pub fn feature_matrix_csv(records: &[CandidateRecord], vocab: &TagVocabulary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["candidate_id".to_string()];
    head.extend(vocab.tags().iter().cloned());
    head.push("performance".into());
    w.write_record(&head).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.candidate_id.clone()];
        row.extend(r.features.iter().map(u32::to_string));
        row.push(r.performance.map(|p| p.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::validation(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv: {e}"))
}

/// Reads `candidate_id,performance` rows.
pub fn read_performance_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("{}: no `{name}` column", path.display())))
    };
    let (ci, pi) = (col("candidate_id")?, col("performance")?);
    let mut out = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let id = rec.get(ci).unwrap_or_default().to_string();
        let p: f64 = rec
            .get(pi)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: line + 2,
                message: format!("performance {:?} is not a number", rec.get(pi)),
            })?;
        if out.insert(id.clone(), p).is_some() {
            return Err(Error::validation(format!(
                "duplicate candidate_id {id:?} in scores"
            )));
        }
    }
    Ok(out)
}

/// Joins measured scores onto candidates by id; returns how many matched.
pub fn attach_performance(records: &mut [CandidateRecord], scores: &HashMap<String, f64>) -> usize {
    let mut matched = 0;
    for r in records {
        if let Some(&p) = scores.get(&r.candidate_id) {
            r.performance = Some(p);
            r.performance_source = PerformanceSource::Measured;
            matched += 1;
        }
    }
    matched
}
