//! Synthetic performance oracle and end-to-end evaluation harness.
//!
//! The oracle stands in for training and benchmarking a reward model on each
//! candidate: a planted function of the scaled tag counts plus noise keyed to
//! the candidate id.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    build_tag_index, generate_candidate_set, write_candidate_set, CandidateRecord,
    CandidateSetHeader, GenerateOptions, PerformanceSource, TagIndex,
};
use crate::error::{Error, Result};
use crate::model::{Dataset, Label, PreferenceInstance};
use crate::ppm::{evaluate_holdout, rmse, FitReport, ModelKind, PpmModel, PpmSettings};
use crate::routing::{
    random_positions, route_simulated, route_topk, Scorer, SimulateOptions, Strategy,
};
use crate::seed;
use crate::tagging::{TagAssignment, TagTable, TagVocabulary, VocabEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Linear,
    /// Diagonal second-order terms on every tag.
    Quadratic,
    /// Diagonal second-order terms on a random subset of tags.
    SparseQuadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Share of tags with nonzero coefficients; `None` means all tags, or a
    /// quarter of them for the sparse kind.
    pub influential_fraction: Option<f64>,
    pub intercept: f64,
    /// Mean of the standardized per-tag linear effects.
    pub effect_mean: f64,
    /// Total size of the linear part when every tag is routed.
    pub linear_scale: f64,
    /// Total size of the second-order part when every tag is routed.
    pub quadratic_scale: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            kind: OracleKind::Quadratic,
            seed: 0,
            noise_sigma: 0.01,
            influential_fraction: None,
            intercept: 0.4,
            effect_mean: 1.0,
            linear_scale: 0.4,
            quadratic_scale: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScore {
    pub value: f64,
    pub clamped: bool,
}

/// Planted function over counts scaled by the dataset size:
/// `clamp(intercept + Σ w_j x_j + Σ q_j x_j² + ε)`.
///
/// Coefficients are divided by the tag's share of the dataset (its square
/// for `q`), so routing a whole tag group moves the score by a
/// share-independent amount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub spec: OracleSpec,
    pub n: usize,
    pub vocabulary_fingerprint: String,
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
    pub influential: Vec<bool>,
}

pub fn make_oracle(table: &TagTable, spec: &OracleSpec) -> Result<Oracle> {
    let p = table.vocabulary().len();
    if p == 0 {
        return Err(Error::validation("oracle needs a non-empty vocabulary"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::validation(format!(
            "noise sigma {} must be >= 0",
            spec.noise_sigma
        )));
    }
    let fraction = spec.influential_fraction.unwrap_or(match spec.kind {
        OracleKind::SparseQuadratic => 0.25,
        _ => 1.0,
    });
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "influential fraction {fraction} outside (0, 1]"
        )));
    }
    let n = table.len();
    let totals = table.tag_totals();
    let mut rng = seed::rng(seed::derive(spec.seed, "coefficients"));
    let n_inf = ((fraction * p as f64).round() as usize).clamp(1, p);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut influential = vec![false; p];
    for &j in &order[..n_inf] {
        influential[j] = true;
    }
    let mut linear = vec![0.0; p];
    let mut quadratic = vec![0.0; p];
    let a = spec.linear_scale / n_inf as f64;
    let b = spec.quadratic_scale / n_inf as f64;
    for j in 0..p {
        let g: f64 = spec.effect_mean + rng.sample::<f64, _>(StandardNormal);
        let h: f64 = rng.sample(StandardNormal);
        if !influential[j] || totals[j] == 0 {
            continue;
        }
        let share = totals[j] as f64 / n as f64;
        linear[j] = a * g / share;
        if spec.kind != OracleKind::Linear {
            quadratic[j] = b * h / (share * share);
        }
    }
    Ok(Oracle {
        spec: spec.clone(),
        n,
        vocabulary_fingerprint: table.vocabulary().fingerprint(),
        linear,
        quadratic,
        influential,
    })
}

impl Oracle {
    /// Planted value before noise and clamping.
    pub fn raw(&self, counts: &[u32]) -> f64 {
        let mut s = self.spec.intercept;
        for (j, &c) in counts.iter().enumerate() {
            let x = c as f64 / self.n as f64;
            s += self.linear[j] * x + self.quadratic[j] * x * x;
        }
        s
    }

    fn clamp(v: f64) -> OracleScore {
        OracleScore {
            value: v.clamp(0.0, 1.0),
            clamped: !(0.0..=1.0).contains(&v),
        }
    }

    pub fn noise(&self, candidate_id: &str) -> f64 {
        if self.spec.noise_sigma == 0.0 {
            return 0.0;
        }
        let s = seed::derive(seed::derive(self.spec.seed, "noise"), candidate_id);
        Normal::new(0.0, self.spec.noise_sigma)
            .expect("sigma checked")
            .sample(&mut seed::rng(s))
    }

    pub fn score(&self, counts: &[u32], candidate_id: &str) -> OracleScore {
        Self::clamp(self.raw(counts) + self.noise(candidate_id))
    }

    pub fn score_noiseless(&self, counts: &[u32]) -> OracleScore {
        Self::clamp(self.raw(counts))
    }

    pub fn score_positions(&self, table: &TagTable, human: &[usize]) -> OracleScore {
        self.score_noiseless(&crate::candidates::featurize(human, table).counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub n_tags: usize,
    pub mean_tags: f64,
    /// Zipf exponent of tag popularity; 0 makes every tag equally likely.
    pub skew: f64,
    /// Probability that the LM label matches the human label.
    pub lm_agreement: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 1000,
            n_tags: 90,
            mean_tags: 3.0,
            skew: 1.0,
            lm_agreement: 0.7,
        }
    }
}

pub struct SynthData {
    pub dataset: Dataset,
    pub table: TagTable,
    pub index: TagIndex,
}

pub fn synth_tag_name(j: usize) -> String {
    format!("synth:tag_{j:03}")
}

/// Random tagged dataset. Each instance draws `1 + Poisson(mean_tags - 1)`
/// distinct tags by popularity weight; the vocabulary keeps tags that occur.
pub fn synth_dataset(spec: &SynthSpec, seed_value: u64) -> Result<SynthData> {
    if spec.n < 2 || spec.n_tags == 0 {
        return Err(Error::validation(
            "synthetic data needs n >= 2 and n_tags >= 1",
        ));
    }
    if !(spec.mean_tags >= 1.0 && spec.mean_tags.is_finite()) {
        return Err(Error::validation(format!(
            "mean tags {} must be >= 1",
            spec.mean_tags
        )));
    }
    let weights: Vec<f64> = (0..spec.n_tags)
        .map(|j| ((j + 1) as f64).powf(-spec.skew))
        .collect();
    let extra = (spec.mean_tags > 1.0)
        .then(|| Poisson::new(spec.mean_tags - 1.0))
        .transpose()
        .map_err(|e| Error::validation(format!("poisson: {e}")))?;
    let mut rng = seed::rng(seed_value);
    let mut instances = Vec::with_capacity(spec.n);
    let mut tag_sets = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let k = 1 + extra.map_or(0, |d| d.sample(&mut rng) as usize);
        let k = k.min(spec.n_tags);
        let chosen = rand::seq::index::sample_weighted(&mut rng, spec.n_tags, |j| weights[j], k)
            .map_err(|e| Error::validation(format!("tag sampling: {e}")))?;
        let mut tags: Vec<usize> = chosen.into_vec();
        tags.sort_unstable();
        tag_sets.push(tags);
        let human = if rng.random_bool(0.5) {
            Label::A
        } else {
            Label::B
        };
        let lm = if rng.random_bool(spec.lm_agreement) {
            human
        } else {
            human.swapped()
        };
        instances.push(
            PreferenceInstance::new(
                format!("s{i:06}"),
                format!("synthetic prompt {i}"),
                format!("synthetic response a {i}"),
                format!("synthetic response b {i}"),
            )
            .with_labels(human, lm),
        );
    }
    let mut used = vec![false; spec.n_tags];
    tag_sets.iter().flatten().for_each(|&j| used[j] = true);
    let vocab = TagVocabulary::new(
        (0..spec.n_tags)
            .filter(|&j| used[j])
            .map(|j| VocabEntry {
                tag: synth_tag_name(j),
                dimension: "synthetic".into(),
            })
            .collect(),
    )?;
    let assignments: Vec<TagAssignment> = instances
        .iter()
        .zip(&tag_sets)
        .map(|(inst, tags)| TagAssignment {
            id: inst.id.clone(),
            tags: tags.iter().map(|&j| synth_tag_name(j)).collect(),
            raw_metrics: BTreeMap::new(),
        })
        .collect();
    let index = build_tag_index(&assignments);
    let table = TagTable::new(vocab, assignments)?;
    Ok(SynthData {
        dataset: Dataset::new(instances, "synthetic")?,
        table,
        index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub seed: u64,
    pub dataset: SynthSpec,
    /// The oracle seed is derived from `seed` unless given here.
    pub oracle: OracleSpec,
    pub oracle_seed: Option<u64>,
    pub n_train: usize,
    pub n_holdout: usize,
    pub include_endpoints: bool,
    pub models: Vec<PpmSettings>,
    /// Fitted model used for routing.
    pub routing_model: ModelKind,
    /// Budgets as fractions of the dataset size.
    pub budgets: Vec<f64>,
    pub n_sims: usize,
    pub slack: f64,
    pub max_attempts: usize,
    pub baseline_draws: usize,
    /// Where to persist candidates, models, routes and reports.
    pub out_dir: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            seed: 0,
            dataset: SynthSpec::default(),
            oracle: OracleSpec::default(),
            oracle_seed: None,
            n_train: 200,
            n_holdout: 16,
            include_endpoints: true,
            models: [ModelKind::Linear, ModelKind::Quadratic, ModelKind::Gbt]
                .map(PpmSettings::of_kind)
                .to_vec(),
            routing_model: ModelKind::Quadratic,
            budgets: vec![0.25, 0.5, 0.75],
            n_sims: 500,
            slack: 0.05,
            max_attempts: 64,
            baseline_draws: 1000,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub kind: ModelKind,
    pub holdout: FitReport,
    pub train_rmse: f64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub budget_realized: usize,
    pub predicted_performance: Option<f64>,
    pub oracle_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub budget: usize,
    pub draws: usize,
    pub mean: f64,
    pub p95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEvaluation {
    pub fraction: f64,
    pub budget_requested: usize,
    pub simulated: StrategyOutcome,
    pub topk: StrategyOutcome,
    /// Random configurations at the simulated run's realized budget.
    pub random: RandomBaseline,
    pub simulated_beats_p95: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: HarnessConfig,
    pub dataset_fingerprint: String,
    pub vocabulary_size: usize,
    pub oracle_seed: u64,
    pub oracle_scored: usize,
    pub oracle_clamped: usize,
    pub fits: Vec<ModelEvaluation>,
    pub all_human_score: f64,
    pub all_lm_score: f64,
    pub budgets: Vec<BudgetEvaluation>,
    /// Wall-clock seconds per stage; varies between runs.
    pub timings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvaluationReport {
    /// Report without the wall-clock timings, for reproducibility checks.
    pub fn without_timings(&self) -> EvaluationReport {
        EvaluationReport {
            timings: BTreeMap::new(),
            ..self.clone()
        }
    }

    /// Rows `fraction,budget,strategy,oracle_score`.
    pub fn budget_curve_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::validation(format!("csv: {e}"));
        w.write_record(["fraction", "budget", "strategy", "oracle_score"])
            .map_err(err)?;
        let n = self.config.dataset.n;
        for b in &self.budgets {
            let rows = [
                (
                    b.simulated.budget_realized,
                    "simulated",
                    b.simulated.oracle_score,
                ),
                (b.topk.budget_realized, "topk_gain", b.topk.oracle_score),
                (b.random.budget, "random_mean", b.random.mean),
                (b.random.budget, "random_p95", b.random.p95),
            ];
            for (budget, name, score) in rows {
                w.write_record([
                    (budget as f64 / n as f64).to_string(),
                    budget.to_string(),
                    name.to_string(),
                    score.to_string(),
                ])
                .map_err(err)?;
            }
        }
        for (frac, name, score) in [
            (1.0, "all_human", self.all_human_score),
            (0.0, "all_lm", self.all_lm_score),
        ] {
            let budget = (frac * n as f64) as usize;
            w.write_record([
                frac.to_string(),
                budget.to_string(),
                name.to_string(),
                score.to_string(),
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::validation(e.to_string()))
    }
}

/// Runs synth → candidates → oracle → fits → routing for each budget.
///
/// With `out_dir` set, intermediate artifacts are written as they are
/// produced and a partial report is written if a stage fails.
pub fn run_end_to_end(config: &HarnessConfig) -> Result<EvaluationReport> {
    let oracle_seed = config
        .oracle_seed
        .unwrap_or_else(|| seed::derive(config.seed, seed::STAGE_ORACLE));
    let mut report = EvaluationReport {
        config: config.clone(),
        dataset_fingerprint: String::new(),
        vocabulary_size: 0,
        oracle_seed,
        oracle_scored: 0,
        oracle_clamped: 0,
        fits: Vec::new(),
        all_human_score: f64::NAN,
        all_lm_score: f64::NAN,
        budgets: Vec::new(),
        timings: BTreeMap::new(),
        error: None,
    };
    match run_stages(config, oracle_seed, &mut report) {
        Ok(()) => {
            if let Some(dir) = &config.out_dir {
                crate::io::write_atomic(
                    &dir.join("report.json"),
                    &crate::io::json_document(&report)?,
                )?;
                crate::io::write_atomic(
                    &dir.join("budget_curve.csv"),
                    &report.budget_curve_csv()?,
                )?;
            }
            Ok(report)
        }
        Err(e) => {
            if let Some(dir) = &config.out_dir {
                report.error = Some(e.to_string());
                if let Ok(bytes) = crate::io::json_document(&report) {
                    let _ = crate::io::write_atomic(&dir.join("report.partial.json"), &bytes);
                }
            }
            Err(e)
        }
    }
}

fn timed<T>(
    report: &mut EvaluationReport,
    stage: &str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let t = Instant::now();
    let out = f();
    report
        .timings
        .insert(stage.to_string(), t.elapsed().as_secs_f64());
    out
}

fn run_stages(
    config: &HarnessConfig,
    oracle_seed: u64,
    report: &mut EvaluationReport,
) -> Result<()> {
    if config.n_train == 0 || config.budgets.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(
            "harness needs n_train >= 1 and budgets within [0, 1]".into(),
        ));
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let data = timed(report, "synth", || {
        synth_dataset(
            &config.dataset,
            seed::derive(config.seed, seed::STAGE_SYNTH),
        )
    })?;
    let (table, index) = (&data.table, &data.index);
    let n = table.len();
    report.dataset_fingerprint = data.dataset.fingerprint();
    report.vocabulary_size = table.vocabulary().len();

    let oracle = make_oracle(
        table,
        &OracleSpec {
            seed: oracle_seed,
            ..config.oracle.clone()
        },
    )?;

    let cand_seed = seed::derive(config.seed, seed::STAGE_CANDIDATES);
    let mut candidates = timed(report, "candidates", || {
        let opts = GenerateOptions {
            count: config.n_train + config.n_holdout,
            include_endpoints: config.include_endpoints,
            ..Default::default()
        };
        Ok(generate_candidate_set(index, table, &opts, cand_seed)?.0)
    })?;
    let clamped = candidates
        .par_iter_mut()
        .map(|c| {
            let s = oracle.score(&c.features, &c.candidate_id);
            c.performance = Some(s.value);
            c.performance_source = PerformanceSource::Oracle;
            s.clamped as usize
        })
        .sum::<usize>();
    report.oracle_scored = candidates.len();
    report.oracle_clamped = clamped;
    if clamped > 0 {
        log::warn!(
            "{clamped} of {} oracle scores were clamped to [0, 1]",
            candidates.len()
        );
    }
    if let Some(dir) = &config.out_dir {
        let header = CandidateSetHeader {
            dataset_fingerprint: report.dataset_fingerprint.clone(),
            vocabulary_fingerprint: table.vocabulary().fingerprint(),
            n_instances: n,
            seed: cand_seed,
        };
        write_candidate_set(&dir.join("candidates.jsonl"), &header, &candidates)?;
    }
    let sampled = config.n_train + config.n_holdout;
    let holdout: Vec<CandidateRecord> = candidates[config.n_train..sampled].to_vec();
    let train: Vec<CandidateRecord> = candidates[..config.n_train]
        .iter()
        .chain(&candidates[sampled..])
        .cloned()
        .collect();

    let mut models = Vec::new();
    for settings in &config.models {
        let label = format!("fit_{}", settings.kind.name());
        let (model, eval) = timed(report, &label, || {
            let m = PpmModel::fit(settings, table.vocabulary(), n, &train, Some(config.seed))?;
            let holdout_report = evaluate_holdout(&m, &holdout)?;
            let pred: Vec<f64> = train
                .iter()
                .map(|c| m.predict(&c.feature_vector(table.vocabulary())))
                .collect::<Result<_>>()?;
            let actual: Vec<f64> = train.iter().map(|c| c.performance.unwrap()).collect();
            let eval = ModelEvaluation {
                kind: settings.kind,
                holdout: holdout_report,
                train_rmse: rmse(&pred, &actual)?,
                fingerprint: m.fingerprint(),
            };
            Ok((m, eval))
        })?;
        if let Some(dir) = &config.out_dir {
            model.save(&dir.join(format!("model_{}.json", settings.kind.name())))?;
        }
        report.fits.push(eval);
        models.push(model);
    }

    let all: Vec<usize> = (0..n).collect();
    report.all_human_score = oracle.score_positions(table, &all).value;
    report.all_lm_score = oracle.score_positions(table, &[]).value;

    if config.budgets.is_empty() {
        return Ok(());
    }
    let model = models
        .iter()
        .find(|m| m.kind() == config.routing_model)
        .ok_or_else(|| {
            Error::Config(format!(
                "routing model {} is not among the fitted models",
                config.routing_model.name()
            ))
        })?;
    let scorer = Scorer::new(model, table)?;
    let route_seed = seed::derive(config.seed, seed::STAGE_ROUTING);
    let base_seed = seed::derive(config.seed, seed::STAGE_BASELINE);
    let dfp = report.dataset_fingerprint.clone();
    for (bi, &fraction) in config.budgets.iter().enumerate() {
        let budget = (fraction * n as f64).round() as usize;
        let eval = timed(report, &format!("route_{fraction}"), || {
            let opts = SimulateOptions {
                n_sims: config.n_sims,
                budget: Some(budget),
                slack: config.slack,
                max_attempts: config.max_attempts,
                include_endpoints: false,
            };
            let (sim, _) = route_simulated(
                table,
                index,
                &scorer,
                &opts,
                seed::child(route_seed, bi as u64),
                &[],
            )?;
            let realized = sim.budget_realized;
            let topk = route_topk(table, &scorer, realized)?;
            if let Some(dir) = &config.out_dir {
                let vfp = table.vocabulary().fingerprint();
                let mfp = model.fingerprint();
                for r in [&sim, &topk] {
                    let h = r.header(&dfp, Some(&vfp), Some(&mfp));
                    let p = dir.join(format!("route_{}_{fraction}.jsonl", r.strategy.name()));
                    crate::routing::write_routing_result(&p, &h, r)?;
                }
            }
            let score_of = |r: &crate::routing::RoutingResult| {
                oracle
                    .score_positions(table, &r.configuration.human_positions())
                    .value
            };
            let draw_seed = seed::child(base_seed, bi as u64);
            let mut draws: Vec<f64> = (0..config.baseline_draws)
                .into_par_iter()
                .map(|d| {
                    let h = random_positions(n, realized, seed::child(draw_seed, d as u64));
                    oracle.score_positions(table, &h).value
                })
                .collect();
            draws.sort_by(f64::total_cmp);
            let random = if draws.is_empty() {
                RandomBaseline {
                    budget: realized,
                    draws: 0,
                    mean: f64::NAN,
                    p95: f64::NAN,
                    max: f64::NAN,
                }
            } else {
                let pos = 0.95 * (draws.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                RandomBaseline {
                    budget: realized,
                    draws: draws.len(),
                    mean: draws.iter().sum::<f64>() / draws.len() as f64,
                    p95: draws[lo] + (draws[hi] - draws[lo]) * (pos - lo as f64),
                    max: draws[draws.len() - 1],
                }
            };
            let simulated = StrategyOutcome {
                strategy: Strategy::Simulated,
                budget_realized: realized,
                predicted_performance: sim.predicted_performance,
                oracle_score: score_of(&sim),
            };
            Ok(BudgetEvaluation {
                fraction,
                budget_requested: budget,
                simulated_beats_p95: simulated.oracle_score >= random.p95,
                simulated,
                topk: StrategyOutcome {
                    strategy: Strategy::TopkGain,
                    budget_realized: topk.budget_realized,
                    predicted_performance: topk.predicted_performance,
                    oracle_score: score_of(&topk),
                },
                random,
            })
        })?;
        report.budgets.push(eval);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthData {
        synth_dataset(
            &SynthSpec {
                n: 200,
                n_tags: 12,
                ..Default::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn zero_vector_scores_intercept() {
        let d = small();
        let spec = OracleSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let o = make_oracle(&d.table, &spec).unwrap();
        assert_eq!(
            o.score(&vec![0; d.table.vocabulary().len()], "x").value,
            spec.intercept
        );
    }

    #[test]
    fn linear_oracle_is_additive() {
        let d = small();
        let o = make_oracle(
            &d.table,
            &OracleSpec {
                kind: OracleKind::Linear,
                noise_sigma: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let f = |h: &[usize]| o.raw(&crate::candidates::featurize(h, &d.table).counts);
        let (a, b): (Vec<usize>, Vec<usize>) = (0..20).partition(|i| i % 2 == 0);
        let ab: Vec<usize> = (0..20).collect();
        assert!((f(&ab) - f(&a) - f(&b) + f(&[])).abs() < 1e-12);
    }

    #[test]
    fn noise_is_keyed_by_candidate() {
        let d = small();
        let o = make_oracle(&d.table, &OracleSpec::default()).unwrap();
        let c = vec![1; d.table.vocabulary().len()];
        assert_eq!(o.score(&c, "cand-0001"), o.score(&c, "cand-0001"));
        assert_ne!(o.noise("cand-0001"), o.noise("cand-0002"));
        let again = make_oracle(&d.table, &OracleSpec::default()).unwrap();
        assert_eq!(o, again);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_dataset(
            &SynthSpec {
                n: 10,
                n_tags: 3,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let b = synth_dataset(
            &SynthSpec {
                n: 10,
                n_tags: 3,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.table, b.table);
        assert!(a.table.vocabulary().len() <= 3);
        assert!(a
            .dataset
            .instances
            .iter()
            .all(|i| i.human_label != Some(Label::Tie)));
    }

    #[test]
    fn synth_mean_tag_count() {
        let d = synth_dataset(
            &SynthSpec {
                n: 10_000,
                n_tags: 90,
                mean_tags: 2.0,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let total: usize = (0..d.table.len())
            .map(|i| d.table.tag_indices(i).len())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 2.0).abs() / 2.0 < 0.05, "mean {mean}");
    }
}
