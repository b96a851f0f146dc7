//! Routing strategies: simulated search over sampled candidates, top-k
//! instance gain, random fractions, and the two endpoints.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{sample_human_subset, SampledSubset, TagIndex, ALL_HUMAN_ID, ALL_LM_ID};
use crate::error::{Error, Result};
use crate::model::RoutingConfiguration;
use crate::ppm::PpmModel;
use crate::seed;
use crate::tagging::TagTable;

/// Scores dataset-space count vectors with a model trained on a possibly
/// different vocabulary.
///
/// Tags are matched by identifier string. Counts are divided by the size of
/// the dataset being routed, so a model transfers across dataset sizes.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    model: &'a PpmModel,
    /// Dataset tag index → model feature index.
    map: Vec<Option<usize>>,
    n: usize,
    coverage: f64,
    dropped: Vec<String>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a PpmModel, table: &TagTable) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::validation("cannot route an empty dataset"));
        }
        let vocab = table.vocabulary();
        let map: Vec<Option<usize>> = vocab
            .tags()
            .iter()
            .map(|t| model.vocabulary.index_of(t))
            .collect();
        let dropped: Vec<String> = vocab
            .tags()
            .iter()
            .zip(&map)
            .filter(|(_, m)| m.is_none())
            .map(|(t, _)| t.clone())
            .collect();
        let totals = table.tag_totals();
        let mass: u64 = totals.iter().map(|&c| c as u64).sum();
        let known: u64 = totals
            .iter()
            .zip(&map)
            .filter(|(_, m)| m.is_some())
            .map(|(&c, _)| c as u64)
            .sum();
        let coverage = if mass == 0 {
            1.0
        } else {
            known as f64 / mass as f64
        };
        if !dropped.is_empty() {
            log::warn!(
                "{} dataset tags unknown to the model are ignored (coverage {:.3})",
                dropped.len(),
                coverage
            );
        }
        Ok(Scorer {
            model,
            map,
            n: table.len(),
            coverage,
            dropped,
        })
    }

    pub fn model(&self) -> &PpmModel {
        self.model
    }

    /// Fraction of the dataset's tag occurrences the model knows.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// Dataset tags the model does not know.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    /// Prediction for per-tag counts in dataset vocabulary order.
    pub fn score_counts(&self, counts: &[u32]) -> f64 {
        let mut x = vec![0.0; self.model.vocabulary.len()];
        for (c, m) in counts.iter().zip(&self.map) {
            if let Some(j) = m {
                x[*j] += *c as f64 / self.n as f64;
            }
        }
        self.model.predict_scaled(&x)
    }

    /// Prediction for a human set given as dataset positions.
    pub fn score_positions(&self, table: &TagTable, human: &[usize]) -> f64 {
        let mut counts = vec![0u32; table.vocabulary().len()];
        for &i in human {
            for &j in table.tag_indices(i) {
                counts[j] += 1;
            }
        }
        self.score_counts(&counts)
    }

    pub fn baseline(&self) -> f64 {
        self.model
            .predict_scaled(&vec![0.0; self.model.vocabulary.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Simulated,
    TopkGain,
    RandomFraction,
    AllHuman,
    AllLm,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Simulated => "simulated",
            Strategy::TopkGain => "topk_gain",
            Strategy::RandomFraction => "random_fraction",
            Strategy::AllHuman => "all_human",
            Strategy::AllLm => "all_lm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingResult {
    pub strategy: Strategy,
    pub configuration: RoutingConfiguration,
    pub predicted_performance: Option<f64>,
    pub budget_requested: Option<usize>,
    pub budget_realized: usize,
    pub n_simulations: usize,
    pub seed: Option<u64>,
    /// Per-instance gains, when the strategy computed them.
    pub gains: Option<Vec<f64>>,
}

/// One scored member of the simulated pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate_id: String,
    pub realized_size: usize,
    pub predicted_performance: f64,
    #[serde(skip)]
    pub human: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateOptions {
    pub n_sims: usize,
    pub budget: Option<usize>,
    /// Relative half-width of the accepted budget window.
    pub slack: f64,
    /// Draws per simulation before it is abandoned.
    pub max_attempts: usize,
    pub include_endpoints: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            n_sims: 500,
            budget: None,
            slack: 0.05,
            max_attempts: 64,
            include_endpoints: false,
        }
    }
}

/// Inclusive budget window `[floor(b(1-s)), ceil(b(1+s))]`, clipped to `[0, n]`.
pub fn budget_window(budget: usize, slack: f64, n: usize) -> (usize, usize) {
    let b = budget as f64;
    let lo = (b * (1.0 - slack)).floor().max(0.0) as usize;
    let hi = ((b * (1.0 + slack)).ceil() as usize).min(n);
    (lo.min(hi), hi)
}

fn draw_in_window(
    index: &TagIndex,
    seed_value: u64,
    ordinal: usize,
    window: Option<(usize, usize)>,
    max_attempts: usize,
) -> Result<Option<SampledSubset>> {
    let base = seed::child(seed_value, ordinal as u64);
    match window {
        None => Ok(Some(sample_human_subset(
            index,
            &mut seed::rng(base),
            None,
        )?)),
        Some((lo, hi)) => {
            for attempt in 0..max_attempts.max(1) {
                let mut rng = seed::rng(seed::child(base, attempt as u64));
                let b = rng.random_range(lo..=hi);
                let s = sample_human_subset(index, &mut rng, Some(b))?;
                if (lo..=hi).contains(&s.human.len()) {
                    return Ok(Some(s));
                }
            }
            Ok(None)
        }
    }
}

fn better(a: &ScoredCandidate, b: &ScoredCandidate) -> bool {
    a.predicted_performance > b.predicted_performance
        || (a.predicted_performance == b.predicted_performance && a.realized_size < b.realized_size)
}

/// Samples a pool of candidate human sets, scores each, and keeps the best.
///
/// Simulation `k` draws from a seed derived from `(seed, k)`, so a larger
/// pool extends a smaller one. `injected` human sets are scored after the
/// samples and endpoints. Ties prefer the smaller human set, then the earlier
/// pool member.
pub fn route_simulated(
    table: &TagTable,
    index: &TagIndex,
    scorer: &Scorer,
    opts: &SimulateOptions,
    seed_value: u64,
    injected: &[(String, Vec<usize>)],
) -> Result<(RoutingResult, Vec<ScoredCandidate>)> {
    let n = table.len();
    if index.n_instances() != n {
        return Err(Error::Consistency(format!(
            "tag index covers {} instances, tag table {n}",
            index.n_instances()
        )));
    }
    if let Some(b) = opts.budget {
        if b > n {
            return Err(Error::validation(format!(
                "budget {b} exceeds dataset size {n}"
            )));
        }
    }
    if !(opts.slack >= 0.0 && opts.slack.is_finite()) {
        return Err(Error::validation(format!(
            "slack {} must be >= 0",
            opts.slack
        )));
    }
    let window = opts.budget.map(|b| budget_window(b, opts.slack, n));
    let sampled: Vec<Option<SampledSubset>> = (0..opts.n_sims)
        .into_par_iter()
        .map(|k| draw_in_window(index, seed_value, k, window, opts.max_attempts))
        .collect::<Result<_>>()?;
    let abandoned = sampled.iter().filter(|s| s.is_none()).count();
    if abandoned > 0 {
        log::warn!("{abandoned} simulations found no human set inside the budget window");
    }

    let mut members: Vec<(String, Vec<usize>)> = sampled
        .into_iter()
        .enumerate()
        .filter_map(|(k, s)| s.map(|s| (format!("sim-{k:04}"), s.human)))
        .collect();
    let n_simulations = members.len();
    let in_window = |size: usize| window.is_none_or(|(lo, hi)| (lo..=hi).contains(&size));
    if opts.include_endpoints {
        if in_window(n) {
            members.push((ALL_HUMAN_ID.to_string(), (0..n).collect()));
        }
        if in_window(0) {
            members.push((ALL_LM_ID.to_string(), Vec::new()));
        }
    }
    members.extend(injected.iter().cloned());
    if members.is_empty() {
        let msg = match window {
            Some((lo, hi)) => format!(
                "no candidate landed in the budget window [{lo}, {hi}] after {} attempts each; \
                 try a larger slack",
                opts.max_attempts
            ),
            None => "the candidate pool is empty".to_string(),
        };
        return Err(Error::validation(msg));
    }

    let pool: Vec<ScoredCandidate> = members
        .into_par_iter()
        .map(|(candidate_id, human)| ScoredCandidate {
            predicted_performance: scorer.score_positions(table, &human),
            realized_size: human.len(),
            candidate_id,
            human,
        })
        .collect();
    if let Some(c) = pool.iter().find(|c| !c.predicted_performance.is_finite()) {
        return Err(Error::Numeric(format!(
            "model produced a non-finite score for {}",
            c.candidate_id
        )));
    }
    let mut best = 0;
    for (k, c) in pool.iter().enumerate().skip(1) {
        if better(c, &pool[best]) {
            best = k;
        }
    }
    let winner = &pool[best];
    let result = RoutingResult {
        strategy: Strategy::Simulated,
        configuration: RoutingConfiguration::from_human_positions(&table.ids(), &winner.human),
        predicted_performance: Some(winner.predicted_performance),
        budget_requested: opts.budget,
        budget_realized: winner.realized_size,
        n_simulations,
        seed: Some(seed_value),
        gains: None,
    };
    Ok((result, pool))
}

/// Predicted improvement from routing instance `i` alone to humans.
pub fn instance_gain(scorer: &Scorer, table: &TagTable, i: usize) -> f64 {
    scorer.score_positions(table, &[i]) - scorer.baseline()
}

pub fn instance_gains(scorer: &Scorer, table: &TagTable) -> Vec<f64> {
    (0..table.len())
        .into_par_iter()
        .map(|i| instance_gain(scorer, table, i))
        .collect()
}

/// Positions of the `k` highest-gain instances, earlier instances first on ties.
pub fn topk_positions(gains: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut top = order[..k.min(gains.len())].to_vec();
    top.sort_unstable();
    top
}

/// Routes the `k` instances with the largest individual gain to humans.
pub fn route_topk(table: &TagTable, scorer: &Scorer, k: usize) -> Result<RoutingResult> {
    let n = table.len();
    if k > n {
        return Err(Error::validation(format!(
            "k = {k} exceeds dataset size {n}"
        )));
    }
    let gains = instance_gains(scorer, table);
    let human = topk_positions(&gains, k);
    Ok(RoutingResult {
        strategy: Strategy::TopkGain,
        configuration: RoutingConfiguration::from_human_positions(&table.ids(), &human),
        predicted_performance: Some(scorer.score_positions(table, &human)),
        budget_requested: Some(k),
        budget_realized: human.len(),
        n_simulations: 0,
        seed: None,
        gains: Some(gains),
    })
}

/// Routes `floor(fraction * n)` uniformly chosen instances to humans.
pub fn route_random_fraction(
    ids: &[String],
    fraction: f64,
    seed_value: u64,
) -> Result<RoutingResult> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::validation(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    let n = ids.len();
    let k = ((fraction * n as f64).floor() as usize).min(n);
    let human = random_positions(n, k, seed_value);
    Ok(RoutingResult {
        strategy: Strategy::RandomFraction,
        configuration: RoutingConfiguration::from_human_positions(ids, &human),
        predicted_performance: None,
        budget_requested: Some(k),
        budget_realized: k,
        n_simulations: 0,
        seed: Some(seed_value),
        gains: None,
    })
}

/// `k` distinct positions out of `n`, ascending.
pub fn random_positions(n: usize, k: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed_value);
    let mut v = rand::seq::index::sample(&mut rng, n, k).into_vec();
    v.sort_unstable();
    v
}

pub fn route_endpoint(ids: &[String], all_human: bool) -> RoutingResult {
    let (strategy, configuration) = if all_human {
        (Strategy::AllHuman, RoutingConfiguration::all_human(ids))
    } else {
        (Strategy::AllLm, RoutingConfiguration::all_lm(ids))
    };
    RoutingResult {
        strategy,
        budget_realized: configuration.human_count(),
        configuration,
        predicted_performance: None,
        budget_requested: None,
        n_simulations: 0,
        seed: None,
        gains: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingHeader {
    pub strategy: Strategy,
    pub seed: Option<u64>,
    pub n_simulations: usize,
    pub predicted_performance: Option<f64>,
    pub budget_requested: Option<usize>,
    pub budget_realized: usize,
    pub model_fingerprint: Option<String>,
    pub dataset_fingerprint: String,
    pub vocabulary_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub id: String,
    pub z: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

impl RoutingResult {
    pub fn header(
        &self,
        dataset_fingerprint: &str,
        vocabulary_fingerprint: Option<&str>,
        model_fingerprint: Option<&str>,
    ) -> RoutingHeader {
        RoutingHeader {
            strategy: self.strategy,
            seed: self.seed,
            n_simulations: self.n_simulations,
            predicted_performance: self.predicted_performance,
            budget_requested: self.budget_requested,
            budget_realized: self.budget_realized,
            model_fingerprint: model_fingerprint.map(str::to_string),
            dataset_fingerprint: dataset_fingerprint.to_string(),
            vocabulary_fingerprint: vocabulary_fingerprint.map(str::to_string),
        }
    }

    pub fn records(&self) -> Vec<RoutingRecord> {
        let c = &self.configuration;
        c.instance_ids
            .iter()
            .zip(&c.assignments)
            .enumerate()
            .map(|(i, (id, &z))| RoutingRecord {
                id: id.clone(),
                z,
                gain: self.gains.as_ref().map(|g| g[i]),
            })
            .collect()
    }
}

pub fn write_routing_result(
    path: &Path,
    header: &RoutingHeader,
    result: &RoutingResult,
) -> Result<()> {
    crate::io::write_jsonl_with_header(path, header, &result.records())
}

pub fn read_routing_result(path: &Path) -> Result<(RoutingHeader, RoutingConfiguration)> {
    let (h, recs): (RoutingHeader, Vec<RoutingRecord>) = crate::io::read_jsonl_with_header(path)?;
    let z = RoutingConfiguration {
        instance_ids: recs.iter().map(|r| r.id.clone()).collect(),
        assignments: recs.iter().map(|r| r.z).collect(),
    };
    z.validate()?;
    if z.human_count() != h.budget_realized {
        return Err(Error::Consistency(format!(
            "{}: header reports {} human instances, records have {}",
            path.display(),
            h.budget_realized,
            z.human_count()
        )));
    }
    Ok((h, z))
}

pub fn write_scored_pool(
    path: &Path,
    header: &RoutingHeader,
    pool: &[ScoredCandidate],
) -> Result<()> {
    crate::io::write_jsonl_with_header(path, header, pool)
}
