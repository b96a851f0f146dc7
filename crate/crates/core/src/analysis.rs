//! Gain reports, label agreement, and aspect-rating binarization.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::csv_err;
use crate::error::{Error, Result};
use crate::model::{Dataset, Label};
use crate::routing::{instance_gains, random_positions, Scorer};
use crate::seed;
use crate::tagging::TagTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGain {
    pub id: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub fraction_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagGain {
    pub tag: String,
    /// Gain of routing the sampled set, divided by its size; `None` when no
    /// instance carries the tag.
    pub gain: Option<f64>,
    pub n_routed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub model_fingerprint: String,
    pub per_instance: Vec<InstanceGain>,
    pub summary: GainSummary,
    pub histogram: Histogram,
    pub per_tag: Vec<TagGain>,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<GainSummary> {
    if values.is_empty() {
        return Err(Error::validation("cannot summarize an empty gain list"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(GainSummary {
        n: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        min: s[0],
        q25: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q75: quantile(&s, 0.75),
        max: s[s.len() - 1],
        fraction_positive: s.iter().filter(|&&v| v > 0.0).count() as f64 / s.len() as f64,
    })
}

/// Equal-width histogram over the data range.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        let (lo, hi) = if values.is_empty() {
            (0.0, 0.0)
        } else {
            (lo, hi)
        };
        return Histogram {
            edges: vec![lo, hi],
            counts: vec![values.len()],
        };
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
    edges.push(hi);
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Gain of routing each instance alone, with summary statistics.
pub fn gain_distribution(
    scorer: &Scorer,
    table: &TagTable,
    bins: usize,
) -> Result<(Vec<InstanceGain>, GainSummary, Histogram)> {
    let gains = instance_gains(scorer, table);
    let per_instance = table
        .assignments()
        .iter()
        .zip(&gains)
        .map(|(a, &gain)| InstanceGain {
            id: a.id.clone(),
            gain,
        })
        .collect();
    Ok((per_instance, summarize(&gains)?, histogram(&gains, bins)))
}

/// Normalized gain of one tag: route up to `n_route` random carriers of the
/// tag as one set, take the gain over all-LM, and divide by the set size.
/// With `repeats > 1` the normalized gains of independent draws are averaged.
pub fn tag_gain(
    scorer: &Scorer,
    table: &TagTable,
    tag: &str,
    n_route: usize,
    repeats: usize,
    seed_value: u64,
) -> Result<TagGain> {
    let j = table.vocabulary().index_of(tag).ok_or_else(|| {
        Error::validation(format!("tag {tag:?} is not in the dataset vocabulary"))
    })?;
    let carriers: Vec<usize> = (0..table.len())
        .filter(|&i| table.tag_indices(i).contains(&j))
        .collect();
    let k = n_route.min(carriers.len());
    if k == 0 {
        return Ok(TagGain {
            tag: tag.to_string(),
            gain: None,
            n_routed: 0,
        });
    }
    let base = scorer.baseline();
    let tag_seed = seed::derive(seed_value, tag);
    let repeats = repeats.max(1);
    let mut total = 0.0;
    for r in 0..repeats {
        let pick = random_positions(carriers.len(), k, seed::child(tag_seed, r as u64));
        let set: Vec<usize> = pick.iter().map(|&p| carriers[p]).collect();
        total += (scorer.score_positions(table, &set) - base) / k as f64;
    }
    Ok(TagGain {
        tag: tag.to_string(),
        gain: Some(total / repeats as f64),
        n_routed: k,
    })
}

/// [`tag_gain`] for every dataset tag, sorted by descending gain; tags with
/// undefined gain go last.
pub fn per_tag_gains(
    scorer: &Scorer,
    table: &TagTable,
    n_route: usize,
    repeats: usize,
    seed_value: u64,
) -> Result<Vec<TagGain>> {
    let mut out: Vec<TagGain> = table
        .vocabulary()
        .tags()
        .par_iter()
        .map(|t| tag_gain(scorer, table, t, n_route, repeats, seed_value))
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| match (a.gain, b.gain) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.tag.cmp(&b.tag)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.tag.cmp(&b.tag),
    });
    Ok(out)
}

pub fn gain_report(
    scorer: &Scorer,
    table: &TagTable,
    n_route: usize,
    repeats: usize,
    bins: usize,
    seed_value: u64,
) -> Result<GainReport> {
    let (per_instance, summary, histogram) = gain_distribution(scorer, table, bins)?;
    Ok(GainReport {
        model_fingerprint: scorer.model().fingerprint(),
        per_instance,
        summary,
        histogram,
        per_tag: per_tag_gains(scorer, table, n_route, repeats, seed_value)?,
    })
}

fn csv_bytes(head: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(head).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::validation(e.to_string()))
}

impl GainReport {
    pub fn per_instance_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["id", "gain"],
            self.per_instance
                .iter()
                .map(|g| vec![g.id.clone(), g.gain.to_string()]),
        )
    }

    pub fn per_tag_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["tag", "gain", "n_routed"],
            self.per_tag.iter().map(|g| {
                vec![
                    g.tag.clone(),
                    g.gain.map(|v| v.to_string()).unwrap_or_default(),
                    g.n_routed.to_string(),
                ]
            }),
        )
    }

    pub fn histogram_csv(&self) -> Result<Vec<u8>> {
        let h = &self.histogram;
        csv_bytes(
            &["bin_lo", "bin_hi", "count"],
            h.counts.iter().enumerate().map(|(k, c)| {
                vec![
                    h.edges[k].to_string(),
                    h.edges[k + 1].to_string(),
                    c.to_string(),
                ]
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub percent_agreement: f64,
    pub expected_agreement: f64,
    /// `None` when chance agreement is 1.
    pub cohen_kappa: Option<f64>,
    /// Rows are the first sequence, columns the second, in `labels` order.
    pub confusion: [[usize; 3]; 3],
    pub labels: [String; 3],
}

pub fn agreement(a: &[Label], b: &[Label]) -> Result<AgreementReport> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "agreement of {} and {} labels",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("agreement needs at least one pair"));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (x, y) in a.iter().zip(b) {
        confusion[x.index()][y.index()] += 1;
    }
    let n = a.len() as f64;
    let p_o = (0..3).map(|c| confusion[c][c]).sum::<usize>() as f64 / n;
    let p_e: f64 = (0..3)
        .map(|c| {
            let row: usize = confusion[c].iter().sum();
            let col: usize = (0..3).map(|r| confusion[r][c]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    let cohen_kappa = if (1.0 - p_e).abs() < 1e-15 {
        None
    } else {
        Some((p_o - p_e) / (1.0 - p_e))
    };
    Ok(AgreementReport {
        n: a.len(),
        percent_agreement: p_o,
        expected_agreement: p_e,
        cohen_kappa,
        confusion,
        labels: Label::ALL.map(|l| l.as_str().to_string()),
    })
}

pub const ASPECTS: [&str; 5] = [
    "helpfulness",
    "correctness",
    "coherence",
    "complexity",
    "verbosity",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AspectWeights {
    pub helpfulness: f64,
    pub correctness: f64,
    pub coherence: f64,
    pub complexity: f64,
    pub verbosity: f64,
}

impl Default for AspectWeights {
    fn default() -> Self {
        AspectWeights {
            helpfulness: 0.65,
            correctness: 0.8,
            coherence: 0.45,
            complexity: 0.55,
            verbosity: -0.40,
        }
    }
}

impl AspectWeights {
    fn as_array(&self) -> [f64; 5] {
        [
            self.helpfulness,
            self.correctness,
            self.coherence,
            self.complexity,
            self.verbosity,
        ]
    }
}

pub type AspectRatings = BTreeMap<String, f64>;

/// Weighted sum of the five aspect ratings, each in `[0, 4]`.
pub fn overall_score(r: &AspectRatings, w: &AspectWeights) -> Result<f64> {
    let mut total = 0.0;
    for (name, weight) in ASPECTS.iter().zip(w.as_array()) {
        let v = *r
            .get(*name)
            .ok_or_else(|| Error::validation(format!("aspect rating `{name}` is missing")))?;
        if !(0.0..=4.0).contains(&v) {
            return Err(Error::validation(format!(
                "aspect rating `{name}` = {v} outside [0, 4]"
            )));
        }
        total += weight * v;
    }
    Ok(total)
}

/// Preference between two rated responses; sums equal after rounding to
/// 1e-9 are a tie.
pub fn binarize_aspects(
    r1: &AspectRatings,
    r2: &AspectRatings,
    w: &AspectWeights,
) -> Result<Label> {
    let a = (overall_score(r1, w)? * 1e9).round();
    let b = (overall_score(r2, w)? * 1e9).round();
    Ok(if a > b {
        Label::A
    } else if a < b {
        Label::B
    } else {
        Label::Tie
    })
}

/// Sets each instance's human label from rating objects stored under
/// `field_a` and `field_b`.
pub fn binarize_dataset(
    d: &Dataset,
    w: &AspectWeights,
    field_a: &str,
    field_b: &str,
) -> Result<Dataset> {
    let mut out = d.clone();
    for inst in &mut out.instances {
        let get = |field: &str| -> Result<AspectRatings> {
            let v = inst.extra.get(field).ok_or_else(|| {
                Error::validation(format!("instance {:?} has no `{field}` ratings", inst.id))
            })?;
            serde_json::from_value(v.clone()).map_err(|e| {
                Error::validation(format!(
                    "instance {:?}: `{field}` is not a rating map: {e}",
                    inst.id
                ))
            })
        };
        let (ra, rb) = (get(field_a)?, get(field_b)?);
        let label = binarize_aspects(&ra, &rb, w)
            .map_err(|e| Error::validation(format!("instance {:?}: {e}", inst.id)))?;
        inst.human_label = Some(label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratings(v: [f64; 5]) -> AspectRatings {
        ASPECTS.iter().map(|s| s.to_string()).zip(v).collect()
    }

    #[test]
    fn weighted_sum_examples() {
        let w = AspectWeights::default();
        assert!(
            (overall_score(&ratings([4.0, 4.0, 4.0, 4.0, 0.0]), &w).unwrap() - 9.8).abs() < 1e-12
        );
        let v = ratings([0.0, 0.0, 0.0, 0.0, 4.0]);
        assert!((overall_score(&v, &w).unwrap() + 1.6).abs() < 1e-12);
        assert_eq!(
            binarize_aspects(&v, &ratings([0.0; 5]), &w).unwrap(),
            Label::B
        );
        assert_eq!(binarize_aspects(&v, &v, &w).unwrap(), Label::Tie);
    }

    #[test]
    fn missing_aspect_is_named() {
        let mut r = ratings([1.0; 5]);
        r.remove("coherence");
        let e = binarize_aspects(&r, &ratings([1.0; 5]), &AspectWeights::default()).unwrap_err();
        assert!(e.to_string().contains("coherence"));
    }

    #[test]
    fn agreement_examples() {
        let a = [Label::A, Label::B, Label::A];
        let r = agreement(&a, &a).unwrap();
        assert_eq!(r.percent_agreement, 1.0);
        assert!((r.cohen_kappa.unwrap() - 1.0).abs() < 1e-12);

        let mut x = Vec::new();
        let mut y = Vec::new();
        for (l1, l2, c) in [
            (Label::A, Label::A, 40),
            (Label::B, Label::B, 30),
            (Label::A, Label::B, 20),
            (Label::B, Label::A, 10),
        ] {
            for _ in 0..c {
                x.push(l1);
                y.push(l2);
            }
        }
        let r = agreement(&x, &y).unwrap();
        assert!((r.percent_agreement - 0.7).abs() < 1e-12);
        assert!((r.expected_agreement - 0.5).abs() < 1e-12);
        assert!((r.cohen_kappa.unwrap() - 0.4).abs() < 1e-9);
        assert_eq!(r.confusion[0][1], 20);

        let c = agreement(&[Label::A; 4], &[Label::A; 4]).unwrap();
        assert_eq!(c.cohen_kappa, None);
        assert_eq!(c.percent_agreement, 1.0);
        assert!(agreement(&a, &a[..2]).is_err());
    }

    #[test]
    fn summary_and_histogram() {
        let s = summarize(&[0.0, -1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.min, s.max, s.median), (-1.0, 3.0, 1.0));
        assert_eq!(s.fraction_positive, 0.5);
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(h.counts, [1, 3]);
        assert_eq!(h.edges, [0.0, 0.5, 1.0]);
        assert_eq!(histogram(&[2.0, 2.0], 5).counts, [2]);
    }

    #[test]
    fn binarize_from_extra_fields() {
        let mut inst = crate::model::PreferenceInstance::new("x", "p", "a", "b");
        inst.extra.insert(
            "ratings_a".into(),
            serde_json::to_value(ratings([4.0, 4.0, 4.0, 4.0, 0.0])).unwrap(),
        );
        inst.extra.insert(
            "ratings_b".into(),
            serde_json::to_value(ratings([0.0; 5])).unwrap(),
        );
        let d = Dataset::new(vec![inst], "t").unwrap();
        let out =
            binarize_dataset(&d, &AspectWeights::default(), "ratings_a", "ratings_b").unwrap();
        assert_eq!(out.instances[0].human_label, Some(Label::A));
        assert_eq!(d.instances[0].human_label, None);
    }
}
