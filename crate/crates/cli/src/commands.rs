use std::collections::HashSet;
use std::path::{Path, PathBuf};

use prefroute::analysis::{agreement, binarize_dataset, gain_report};
use prefroute::candidates::{
    attach_performance, build_tag_index, feature_matrix_csv, generate_candidate_set,
    read_candidate_set, read_performance_csv, write_candidate_set, CandidateRecord,
    CandidateSetHeader, GenerateOptions, ALL_HUMAN_ID, ALL_LM_ID,
};
use prefroute::model::{filter_ties, load_dataset, subsample, Dataset, DatasetFormat, Label};
use prefroute::oracle::{run_end_to_end, HarnessConfig};
use prefroute::ppm::{evaluate_holdout, read_training_matrix, FitReport, PpmModel};
use prefroute::routing::{
    random_positions, read_routing_result, route_endpoint, route_random_fraction, route_simulated,
    route_topk, write_routing_result, write_scored_pool, RoutingResult, Scorer, SimulateOptions,
    Strategy,
};
use prefroute::seed;
use prefroute::tagging::descriptive::{DescriptiveTagger, HttpTagger};
use prefroute::tagging::{
    read_tag_file, tag_dataset, write_tag_file, EmbeddingSidecar, TagFileHeader, TagTable,
    TaggingResources,
};
use prefroute::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{persist, PipelineConfig, RouteStrategy};
use crate::{
    AgreeArgs, BinarizeArgs, Cli, Command, ExportArgs, FitArgs, GainArgs, IngestArgs, OracleArgs,
    RouteArgs, SampleArgs, TagArgs,
};

pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

trait Staged<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Staged<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

struct Ctx {
    force: bool,
    pretty: bool,
}

impl Ctx {
    /// Errors on a broken fingerprint chain unless `--force` was given.
    fn chain(&self, what: &str, expected: &str, found: &str) -> Result<()> {
        if expected == found {
            return Ok(());
        }
        if self.force {
            log::warn!("{what} fingerprint mismatch ignored (--force)");
            return Ok(());
        }
        Err(Error::FingerprintMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }

    fn emit(&self, summary: Value) {
        if self.pretty {
            if let Value::Object(m) = &summary {
                for (k, v) in m {
                    match v {
                        Value::String(s) => println!("{k}: {s}"),
                        other => println!("{k}: {other}"),
                    }
                }
                return;
            }
        }
        println!("{summary}");
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), StageError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).stage("config")?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .stage("config")?;
    }
    let ctx = Ctx {
        force: cli.force,
        pretty: cli.pretty,
    };
    match cli.command {
        Command::Tag(a) => cmd_tag(&ctx, cfg, a).stage("tag"),
        Command::Sample(a) => cmd_sample(&ctx, cfg, a).stage("sample"),
        Command::IngestPerf(a) => cmd_ingest_perf(&ctx, cfg, a).stage("ingest-perf"),
        Command::ExportFeatures(a) => cmd_export(&ctx, cfg, a).stage("export-features"),
        Command::Fit(a) => cmd_fit(&ctx, cfg, a).stage("fit"),
        Command::Route(a) => cmd_route(&ctx, cfg, a).stage("route"),
        Command::Gain(a) => cmd_gain(&ctx, cfg, a).stage("gain"),
        Command::Agree(a) => cmd_agree(&ctx, cfg, a).stage("agree"),
        Command::Binarize(a) => cmd_binarize(&ctx, cfg, a).stage("binarize"),
        Command::OracleEval(a) => cmd_oracle_eval(&ctx, cfg, a, cli.seed).stage("oracle-eval"),
    }
}

fn require(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("--{name} is required (or set it under [paths])")))
}

/// Refuses to write an output over one of the command's inputs.
fn check_output(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    let o = canon(out);
    for i in inputs {
        if *i == out || (o.is_some() && o == canon(i)) {
            return Err(Error::Config(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(())
}

fn dataset_format(path: &Path) -> DatasetFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => DatasetFormat::JsonArray,
        _ => DatasetFormat::Jsonl,
    }
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, dataset_format(path))
}

fn load_tags(ctx: &Ctx, tags: &Path, dataset: Option<&Path>) -> Result<(TagFileHeader, TagTable)> {
    let (h, table) = read_tag_file(tags)?;
    if let Some(d) = dataset {
        let d = load(d)?;
        ctx.chain("tag file dataset", &d.fingerprint(), &h.dataset_fingerprint)?;
        if !ctx.force {
            table.check_aligned(&d)?;
        }
    }
    Ok((h, table))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    prefroute::io::write_atomic(path, &prefroute::io::json_document(value)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_tag(ctx: &Ctx, mut cfg: PipelineConfig, a: TagArgs) -> Result<()> {
    let dataset = require(a.dataset, &cfg.paths.dataset, "dataset")?;
    let out = require(a.out, &cfg.paths.tags, "out")?;
    let sidecar = a.sidecar.or(cfg.paths.sidecar.clone());
    check_output(&out, &[&dataset])?;
    if a.no_descriptive {
        cfg.tagging.descriptive = false;
    }
    if a.no_fallback_embedding {
        cfg.tagging.fallback_embedding = None;
    } else if a.embedding_seed.is_some() || a.embedding_dim.is_some() {
        let e = cfg
            .tagging
            .fallback_embedding
            .get_or_insert_with(Default::default);
        if let Some(s) = a.embedding_seed {
            e.seed = s;
        }
        if let Some(d) = a.embedding_dim {
            e.dim = d;
        }
    }
    if let Some(url) = a.tagger_url {
        cfg.tagger.get_or_insert_with(Default::default).base_url = url;
    }
    cfg.prepare.filter_ties |= a.filter_ties;
    if a.subsample.is_some() {
        cfg.prepare.subsample = a.subsample;
    }
    let prepared_out = match (&a.prepared_out, cfg.prepare.is_identity()) {
        (Some(p), _) => {
            check_output(p, &[&dataset, &out])?;
            Some(p.clone())
        }
        (None, true) => None,
        (None, false) => {
            return Err(Error::Config(
                "--prepared-out is required with --filter-ties or --subsample".into(),
            ))
        }
    };
    cfg.paths.dataset = Some(dataset.clone());
    cfg.paths.tags = Some(out.clone());
    cfg.paths.sidecar = sidecar.clone();

    let format = if a.json_array {
        DatasetFormat::JsonArray
    } else {
        dataset_format(&dataset)
    };
    let mut d = load_dataset(&dataset, format)?;
    if cfg.prepare.filter_ties {
        let before = d.len();
        d = filter_ties(&d)?;
        log::info!("dropped {} tie-labeled instances", before - d.len());
    }
    if let Some(n) = cfg.prepare.subsample {
        d = subsample(&d, n, seed::derive(cfg.seed, seed::STAGE_SUBSAMPLE))?;
    }
    if let Some(p) = &prepared_out {
        d.save(p)?;
    }
    let sc = sidecar.as_deref().map(EmbeddingSidecar::load).transpose()?;
    let tagger = match &cfg.tagger {
        Some(ep) if cfg.tagging.descriptive && !ep.base_url.is_empty() => {
            Some(HttpTagger::new(ep.clone())?)
        }
        _ => None,
    };
    let resources = TaggingResources {
        sidecar: sc.as_ref(),
        tagger: tagger.as_ref().map(|t| t as &dyn DescriptiveTagger),
        tagger_retries: cfg.tagger.as_ref().map_or(0, |e| e.retries),
        tagger_max_in_flight: cfg.tagger.as_ref().map_or(1, |e| e.max_in_flight),
    };
    let output = tag_dataset(&d, resources, &cfg.tagging)?;
    let fp = d.fingerprint();
    write_tag_file(&out, &fp, &output.table, &cfg.tagging)?;
    let report = json!({
        "dataset_fingerprint": fp,
        "prepared_dataset": prepared_out.as_ref().map(|p| p.display().to_string()),
        "n_instances": output.table.len(),
        "vocabulary_size": output.table.vocabulary().len(),
        "embedding_sources": output.embedding_sources,
        "warnings": output.warnings,
        "tagger_failures": output.failures,
    });
    write_json(&sibling(&out, ".report.json"), &report)?;
    persist(&out, "tag", &cfg)?;
    ctx.emit(json!({
        "tags": out.display().to_string(),
        "n_instances": output.table.len(),
        "vocabulary_size": output.table.vocabulary().len(),
        "tagger_failures": output.failures.len(),
    }));
    Ok(())
}

fn cmd_sample(ctx: &Ctx, mut cfg: PipelineConfig, a: SampleArgs) -> Result<()> {
    let tags = require(a.tags, &cfg.paths.tags, "tags")?;
    let out = require(a.out, &cfg.paths.candidates, "out")?;
    let dataset = a.dataset.or(cfg.paths.dataset.clone());
    check_output(&out, &[&tags])?;
    if let Some(c) = a.count {
        cfg.sampling.count = c;
    }
    if a.endpoints {
        cfg.sampling.endpoints = true;
    }
    if a.no_endpoints {
        cfg.sampling.endpoints = false;
    }
    if a.budget.is_some() {
        cfg.sampling.fixed_budget = a.budget;
    }
    cfg.paths.tags = Some(tags.clone());
    cfg.paths.candidates = Some(out.clone());
    cfg.paths.dataset = dataset.clone();

    let (h, table) = load_tags(ctx, &tags, dataset.as_deref())?;
    let index = build_tag_index(table.assignments());
    let stage_seed = seed::derive(cfg.seed, seed::STAGE_CANDIDATES);
    let opts = GenerateOptions {
        count: cfg.sampling.count,
        include_endpoints: cfg.sampling.endpoints,
        fixed_budget: cfg.sampling.fixed_budget,
        max_retries: cfg.sampling.max_retries,
        ..Default::default()
    };
    let (records, warnings) = generate_candidate_set(&index, &table, &opts, stage_seed)?;
    let header = CandidateSetHeader {
        dataset_fingerprint: h.dataset_fingerprint.clone(),
        vocabulary_fingerprint: table.vocabulary().fingerprint(),
        n_instances: table.len(),
        seed: stage_seed,
    };
    write_candidate_set(&out, &header, &records)?;
    persist(&out, "sample", &cfg)?;
    ctx.emit(json!({
        "candidates": out.display().to_string(),
        "n_candidates": records.len(),
        "warnings": warnings.len(),
    }));
    Ok(())
}

fn cmd_ingest_perf(ctx: &Ctx, mut cfg: PipelineConfig, a: IngestArgs) -> Result<()> {
    let cands = require(a.candidates, &cfg.paths.candidates, "candidates")?;
    let scores = require(a.scores, &cfg.paths.scores, "scores")?;
    let out = a
        .out
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    check_output(&out, &[&cands, &scores])?;
    cfg.paths.candidates = Some(cands.clone());
    cfg.paths.scores = Some(scores.clone());

    let (header, mut records) = read_candidate_set(&cands)?;
    let perf = read_performance_csv(&scores)?;
    let matched = attach_performance(&mut records, &perf);
    let known: HashSet<&str> = records.iter().map(|r| r.candidate_id.as_str()).collect();
    let unknown = perf.keys().filter(|k| !known.contains(k.as_str())).count();
    if unknown > 0 {
        log::warn!("{unknown} scored ids do not name a candidate");
    }
    if matched < records.len() {
        log::warn!("{} candidates have no score", records.len() - matched);
    }
    write_candidate_set(&out, &header, &records)?;
    persist(&out, "ingest-perf", &cfg)?;
    ctx.emit(json!({
        "candidates": out.display().to_string(),
        "matched": matched,
        "unmatched_candidates": records.len() - matched,
        "unknown_scores": unknown,
    }));
    Ok(())
}

fn cmd_export(ctx: &Ctx, mut cfg: PipelineConfig, a: ExportArgs) -> Result<()> {
    let cands = require(a.candidates, &cfg.paths.candidates, "candidates")?;
    let tags = require(a.tags, &cfg.paths.tags, "tags")?;
    let out = a
        .out
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    check_output(&out, &[&cands, &tags])?;
    cfg.paths.candidates = Some(cands.clone());
    cfg.paths.tags = Some(tags.clone());
    let (th, table) = read_tag_file(&tags)?;
    let (ch, records) = read_candidate_set(&cands)?;
    ctx.chain(
        "candidate vocabulary",
        &th.vocabulary_fingerprint,
        &ch.vocabulary_fingerprint,
    )?;
    prefroute::io::write_atomic(&out, &feature_matrix_csv(&records, table.vocabulary())?)?;
    persist(&out, "export-features", &cfg)?;
    ctx.emit(json!({"matrix": out.display().to_string(), "rows": records.len()}));
    Ok(())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    kind: &'a str,
    model_fingerprint: String,
    vocabulary_fingerprint: &'a str,
    n_train: usize,
    holdout_ids: Vec<String>,
    rank_deficient: bool,
    holdout: Option<FitReport>,
}

fn cmd_fit(ctx: &Ctx, mut cfg: PipelineConfig, a: FitArgs) -> Result<()> {
    let tags = require(a.tags, &cfg.paths.tags, "tags")?;
    let out = require(a.out, &cfg.paths.model, "out")?;
    let settings = &mut cfg.fit.model;
    if let Some(k) = a.kind {
        settings.kind = k;
    }
    if a.ridge.is_some() {
        settings.ridge = a.ridge;
    }
    if let Some(e) = a.expansion {
        settings.expansion = e;
    }
    if let Some(t) = a.trees {
        settings.gbt.n_trees = t;
    }
    if let Some(d) = a.depth {
        settings.gbt.max_depth = d;
    }
    if let Some(l) = a.learning_rate {
        settings.gbt.learning_rate = l;
    }
    if let Some(m) = a.min_leaf {
        settings.gbt.min_leaf = m;
    }
    if let Some(h) = a.holdout {
        cfg.fit.holdout = h;
    }
    let (_, table) = read_tag_file(&tags)?;
    let vocab = table.vocabulary();
    let (records, dataset_size, source) = match a.matrix {
        Some(m) => {
            check_output(&out, &[&tags, &m])?;
            (read_training_matrix(&m, vocab)?, table.len(), m)
        }
        None => {
            let c = require(a.candidates, &cfg.paths.candidates, "candidates")?;
            check_output(&out, &[&tags, &c])?;
            let (h, recs) = read_candidate_set(&c)?;
            ctx.chain(
                "candidate vocabulary",
                &vocab.fingerprint(),
                &h.vocabulary_fingerprint,
            )?;
            cfg.paths.candidates = Some(c.clone());
            (recs, h.n_instances, c)
        }
    };
    cfg.paths.tags = Some(tags.clone());
    cfg.paths.model = Some(out.clone());

    let scored: Vec<CandidateRecord> = records
        .into_iter()
        .filter(|r| r.performance.is_some())
        .collect();
    if scored.is_empty() {
        return Err(Error::validation(format!(
            "{}: no candidate has a performance value",
            source.display()
        )));
    }
    let eligible: Vec<usize> = (0..scored.len())
        .filter(|&i| ![ALL_HUMAN_ID, ALL_LM_ID].contains(&scored[i].candidate_id.as_str()))
        .collect();
    let n_hold = cfg.fit.holdout;
    if n_hold > 0 && n_hold + 2 > scored.len().min(eligible.len() + 2) {
        return Err(Error::validation(format!(
            "cannot hold out {n_hold} of {} sampled candidates and keep 2 for training",
            eligible.len()
        )));
    }
    let picked: HashSet<usize> =
        random_positions(eligible.len(), n_hold, seed::derive(cfg.seed, "holdout"))
            .into_iter()
            .map(|p| eligible[p])
            .collect();
    let (holdout, train): (Vec<_>, Vec<_>) = scored
        .into_iter()
        .enumerate()
        .partition(|(i, _)| picked.contains(i));
    let holdout: Vec<CandidateRecord> = holdout.into_iter().map(|(_, r)| r).collect();
    let train: Vec<CandidateRecord> = train.into_iter().map(|(_, r)| r).collect();

    let model = PpmModel::fit(&cfg.fit.model, vocab, dataset_size, &train, Some(cfg.seed))?;
    let report = if holdout.is_empty() {
        None
    } else {
        Some(evaluate_holdout(&model, &holdout)?)
    };
    model.save(&out)?;
    let report_path = a.report.unwrap_or_else(|| sibling(&out, ".report.json"));
    let vfp = vocab.fingerprint();
    let fit_out = FitOutput {
        kind: model.kind().name(),
        model_fingerprint: model.fingerprint(),
        vocabulary_fingerprint: &vfp,
        n_train: train.len(),
        holdout_ids: holdout.iter().map(|r| r.candidate_id.clone()).collect(),
        rank_deficient: model.training.rank_deficient,
        holdout: report.clone(),
    };
    write_json(&report_path, &fit_out)?;
    persist(&out, "fit", &cfg)?;
    ctx.emit(json!({
        "model": out.display().to_string(),
        "kind": model.kind().name(),
        "n_train": train.len(),
        "n_holdout": holdout.len(),
        "spearman_rho": report.as_ref().and_then(|r| r.spearman_rho),
        "rmse": report.as_ref().map(|r| r.rmse),
    }));
    Ok(())
}

fn load_model(ctx: &Ctx, path: &Path, table: &TagTable, allow_remap: bool) -> Result<PpmModel> {
    let m = PpmModel::load(path)?;
    if !allow_remap {
        ctx.chain(
            "model vocabulary (use --allow-remap to transfer across vocabularies)",
            &table.vocabulary().fingerprint(),
            &m.vocabulary_fingerprint,
        )?;
    }
    Ok(m)
}

fn cmd_route(ctx: &Ctx, mut cfg: PipelineConfig, a: RouteArgs) -> Result<()> {
    let r = &mut cfg.routing;
    if let Some(s) = a.strategy {
        r.strategy = s;
    }
    if a.budget.is_some() || a.fraction.is_some() {
        r.budget = a.budget;
        r.fraction = a.fraction;
    }
    if let Some(n) = a.n_sims {
        r.n_sims = n;
    }
    if let Some(s) = a.slack {
        r.slack = s;
    }
    r.endpoints |= a.endpoints;
    r.allow_remap |= a.allow_remap;
    let out = require(a.out, &cfg.paths.routing, "out")?;
    let tags = a.tags.or(cfg.paths.tags.clone());
    let dataset = a.dataset.or(cfg.paths.dataset.clone());
    let model_path = a.model.or(cfg.paths.model.clone());
    let inputs: Vec<&Path> = [&tags, &dataset, &model_path]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    check_output(&out, &inputs)?;
    if let Some(p) = &a.pool_out {
        check_output(p, &inputs)?;
    }
    cfg.paths.tags = tags.clone();
    cfg.paths.dataset = dataset.clone();
    cfg.paths.routing = Some(out.clone());
    let strategy = cfg.routing.strategy;
    let route_seed = seed::derive(cfg.seed, seed::STAGE_ROUTING);

    let needs_model = matches!(strategy, RouteStrategy::Simulated | RouteStrategy::Topk);
    if !needs_model {
        cfg.paths.model = None;
    }
    let (result, dfp, vfp, mfp, pool) =
        if matches!(strategy, RouteStrategy::AllHuman | RouteStrategy::AllLm)
            || (strategy == RouteStrategy::Random && tags.is_none())
        {
            let (ids, dfp, vfp) = match (&tags, &dataset) {
                (Some(t), _) => {
                    let (h, table) = load_tags(ctx, t, dataset.as_deref())?;
                    (
                        table.ids(),
                        h.dataset_fingerprint,
                        Some(h.vocabulary_fingerprint),
                    )
                }
                (None, Some(d)) => {
                    let d = load(d)?;
                    (d.ids(), d.fingerprint(), None)
                }
                (None, None) => {
                    return Err(Error::Config("--tags or --dataset is required".into()))
                }
            };
            let result = match strategy {
                RouteStrategy::AllHuman => route_endpoint(&ids, true),
                RouteStrategy::AllLm => route_endpoint(&ids, false),
                _ => random_route(&ids, &cfg, route_seed)?,
            };
            (result, dfp, vfp, None, None)
        } else {
            let t = tags
                .as_ref()
                .ok_or_else(|| Error::Config("--tags is required".into()))?;
            let (h, table) = load_tags(ctx, t, dataset.as_deref())?;
            let n = table.len();
            let budget = match (cfg.routing.budget, cfg.routing.fraction) {
                (Some(b), _) => Some(b),
                (None, Some(f)) if (0.0..=1.0).contains(&f) => {
                    Some((f * n as f64).floor() as usize)
                }
                (None, Some(f)) => {
                    return Err(Error::validation(format!("fraction {f} outside [0, 1]")))
                }
                (None, None) => None,
            };
            let (result, mfp, pool) = if strategy == RouteStrategy::Random {
                (random_route(&table.ids(), &cfg, route_seed)?, None, None)
            } else {
                let mp = model_path
                    .clone()
                    .ok_or_else(|| Error::Config("--model is required for this strategy".into()))?;
                cfg.paths.model = Some(mp.clone());
                let model = load_model(ctx, &mp, &table, cfg.routing.allow_remap)?;
                let scorer = Scorer::new(&model, &table)?;
                let mfp = Some(model.fingerprint());
                if strategy == RouteStrategy::Topk {
                    let k = budget
                        .ok_or_else(|| Error::Config("topk needs --budget or --fraction".into()))?;
                    (route_topk(&table, &scorer, k)?, mfp, None)
                } else {
                    let opts = SimulateOptions {
                        n_sims: cfg.routing.n_sims,
                        budget,
                        slack: cfg.routing.slack,
                        max_attempts: cfg.routing.max_attempts,
                        include_endpoints: cfg.routing.endpoints,
                    };
                    let index = build_tag_index(table.assignments());
                    let (r, pool) =
                        route_simulated(&table, &index, &scorer, &opts, route_seed, &[])?;
                    (r, mfp, Some(pool))
                }
            };
            (
                result,
                h.dataset_fingerprint,
                Some(h.vocabulary_fingerprint),
                mfp,
                pool,
            )
        };

    let header = result.header(&dfp, vfp.as_deref(), mfp.as_deref());
    write_routing_result(&out, &header, &result)?;
    if let (Some(p), Some(pool)) = (&a.pool_out, &pool) {
        write_scored_pool(p, &header, pool)?;
    }
    persist(&out, "route", &cfg)?;
    ctx.emit(json!({
        "routing": out.display().to_string(),
        "strategy": result.strategy.name(),
        "budget_realized": result.budget_realized,
        "n_instances": result.configuration.len(),
        "predicted_performance": result.predicted_performance,
    }));
    Ok(())
}

fn random_route(ids: &[String], cfg: &PipelineConfig, route_seed: u64) -> Result<RoutingResult> {
    match (cfg.routing.budget, cfg.routing.fraction) {
        (Some(k), _) => {
            if k > ids.len() {
                return Err(Error::validation(format!(
                    "budget {k} exceeds dataset size {}",
                    ids.len()
                )));
            }
            let mut r = route_random_fraction(ids, 0.0, route_seed)?;
            let human = random_positions(ids.len(), k, route_seed);
            r.configuration =
                prefroute::model::RoutingConfiguration::from_human_positions(ids, &human);
            r.budget_requested = Some(k);
            r.budget_realized = k;
            debug_assert_eq!(r.strategy, Strategy::RandomFraction);
            Ok(r)
        }
        (None, Some(f)) => route_random_fraction(ids, f, route_seed),
        (None, None) => Err(Error::Config(
            "random routing needs --budget or --fraction".into(),
        )),
    }
}

fn cmd_gain(ctx: &Ctx, mut cfg: PipelineConfig, a: GainArgs) -> Result<()> {
    let tags = require(a.tags, &cfg.paths.tags, "tags")?;
    let model_path = require(a.model, &cfg.paths.model, "model")?;
    let out_dir = require(a.out_dir, &cfg.paths.results, "out-dir")?;
    if let Some(n) = a.n_route {
        cfg.gain.n_route = n;
    }
    if let Some(r) = a.repeats {
        cfg.gain.repeats = r;
    }
    if let Some(b) = a.bins {
        cfg.gain.bins = b;
    }
    cfg.routing.allow_remap |= a.allow_remap;
    cfg.paths.tags = Some(tags.clone());
    cfg.paths.model = Some(model_path.clone());
    cfg.paths.results = Some(out_dir.clone());

    let (h, table) = read_tag_file(&tags)?;
    let model = load_model(ctx, &model_path, &table, cfg.routing.allow_remap)?;
    let scorer = Scorer::new(&model, &table)?;
    let g = &cfg.gain;
    let report = gain_report(
        &scorer,
        &table,
        g.n_route,
        g.repeats,
        g.bins,
        seed::derive(cfg.seed, seed::STAGE_GAIN),
    )?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let write =
        |name: &str, bytes: Vec<u8>| prefroute::io::write_atomic(&out_dir.join(name), &bytes);
    write("gain_instances.csv", report.per_instance_csv()?)?;
    write("gain_tags.csv", report.per_tag_csv()?)?;
    write("gain_histogram.csv", report.histogram_csv()?)?;
    let summary_path = out_dir.join("gain_summary.json");
    write_json(
        &summary_path,
        &json!({
            "dataset_fingerprint": h.dataset_fingerprint,
            "vocabulary_fingerprint": h.vocabulary_fingerprint,
            "model_fingerprint": report.model_fingerprint,
            "coverage": scorer.coverage(),
            "dropped_tags": scorer.dropped(),
            "summary": report.summary,
        }),
    )?;
    persist(&summary_path, "gain", &cfg)?;
    let top: Vec<&str> = report
        .per_tag
        .iter()
        .take(5)
        .map(|t| t.tag.as_str())
        .collect();
    ctx.emit(json!({
        "out_dir": out_dir.display().to_string(),
        "mean_gain": report.summary.mean,
        "fraction_positive": report.summary.fraction_positive,
        "top_tags": top,
    }));
    Ok(())
}

fn cmd_agree(ctx: &Ctx, mut cfg: PipelineConfig, a: AgreeArgs) -> Result<()> {
    let dataset = require(a.dataset, &cfg.paths.dataset, "dataset")?;
    let routing = a.routing.or(cfg.paths.routing.clone());
    if let Some(o) = &a.out {
        let mut inputs = vec![dataset.as_path()];
        inputs.extend(routing.as_deref());
        check_output(o, &inputs)?;
    }
    cfg.paths.dataset = Some(dataset.clone());
    cfg.paths.routing = routing.clone();
    let d = load(&dataset)?;
    let keep: Vec<bool> = match &routing {
        Some(r) => {
            let (h, z) = read_routing_result(r)?;
            ctx.chain("routing dataset", &d.fingerprint(), &h.dataset_fingerprint)?;
            z.aligned_to(&d)?.into_iter().map(|b| b == 0).collect()
        }
        None => vec![true; d.len()],
    };
    let mut human: Vec<Label> = Vec::new();
    let mut lm: Vec<Label> = Vec::new();
    for (inst, k) in d.instances.iter().zip(keep) {
        if !k {
            continue;
        }
        match (inst.human_label, inst.lm_label) {
            (Some(h), Some(l)) => {
                human.push(h);
                lm.push(l);
            }
            _ => {
                return Err(Error::validation(format!(
                    "instance {:?} lacks a human or LM label",
                    inst.id
                )))
            }
        }
    }
    let report = agreement(&human, &lm)?;
    if let Some(o) = &a.out {
        write_json(o, &report)?;
        persist(o, "agree", &cfg)?;
    }
    ctx.emit(serde_json::to_value(&report)?);
    Ok(())
}

fn cmd_binarize(ctx: &Ctx, mut cfg: PipelineConfig, a: BinarizeArgs) -> Result<()> {
    let dataset = require(a.dataset, &cfg.paths.dataset, "dataset")?;
    let out = a
        .out
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    check_output(&out, &[&dataset])?;
    if let Some(f) = a.field_a {
        cfg.binarize.field_a = f;
    }
    if let Some(f) = a.field_b {
        cfg.binarize.field_b = f;
    }
    cfg.paths.dataset = Some(dataset.clone());
    let d = load(&dataset)?;
    let b = &cfg.binarize;
    let labeled = binarize_dataset(&d, &b.weights, &b.field_a, &b.field_b)?;
    labeled.save(&out)?;
    persist(&out, "binarize", &cfg)?;
    let count = |l: Label| {
        labeled
            .instances
            .iter()
            .filter(|i| i.human_label == Some(l))
            .count()
    };
    ctx.emit(json!({
        "dataset": out.display().to_string(),
        "a": count(Label::A),
        "b": count(Label::B),
        "tie": count(Label::Tie),
    }));
    Ok(())
}

fn cmd_oracle_eval(
    ctx: &Ctx,
    mut cfg: PipelineConfig,
    a: OracleArgs,
    seed_flag: Option<u64>,
) -> Result<()> {
    if let Some(p) = &a.harness {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.harness = toml::from_str::<HarnessConfig>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    if let Some(s) = seed_flag {
        cfg.harness.seed = s;
    }
    if a.out_dir.is_some() {
        cfg.harness.out_dir = a.out_dir;
    }
    let report = run_end_to_end(&cfg.harness)?;
    if let Some(dir) = &cfg.harness.out_dir {
        persist(&dir.join("report.json"), "oracle-eval", &cfg)?;
    }
    let fits: Vec<Value> = report
        .fits
        .iter()
        .map(|f| {
            json!({
                "kind": f.kind.name(),
                "spearman_rho": f.holdout.spearman_rho,
                "rmse": f.holdout.rmse,
            })
        })
        .collect();
    let budgets: Vec<Value> = report
        .budgets
        .iter()
        .map(|b| {
            json!({
                "fraction": b.fraction,
                "simulated": b.simulated.oracle_score,
                "topk": b.topk.oracle_score,
                "random_p95": b.random.p95,
                "beats_p95": b.simulated_beats_p95,
            })
        })
        .collect();
    ctx.emit(json!({
        "fits": fits,
        "budgets": budgets,
        "oracle_clamped": report.oracle_clamped,
    }));
    Ok(())
}
