use prefroute::candidates::{
    attach_performance, build_tag_index, generate_candidate_set, read_candidate_set,
    write_candidate_set, CandidateSetHeader, GenerateOptions, PerformanceSource,
};
use prefroute::model::{Dataset, Label, PreferenceInstance};
use prefroute::oracle::{run_end_to_end, HarnessConfig};
use prefroute::ppm::{ModelKind, PpmModel, PpmSettings};
use prefroute::routing::{route_simulated, Scorer, SimulateOptions};
use prefroute::tagging::{
    read_tag_file, tag_dataset, write_tag_file, TagAssignment, TagTable, TaggingOptions,
    TaggingResources,
};

fn dataset(n: usize) -> Dataset {
    let words = [
        "alpha", "beta", "gamma", "delta", "river", "stone", "Paris", "quickly",
    ];
    let text = |i: usize, k: usize| -> String {
        (0..k)
            .map(|j| words[(i * 7 + j * 3) % words.len()])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let instances = (0..n)
        .map(|i| {
            PreferenceInstance::new(
                format!("p{i:02}"),
                text(i, 4 + i % 5),
                text(i + 1, 3 + i % 11),
                text(i + 2, 2 + i % 7),
            )
            .with_labels(
                if i % 2 == 0 { Label::A } else { Label::B },
                if i % 3 == 0 { Label::B } else { Label::A },
            )
        })
        .collect();
    Dataset::new(instances, "test").unwrap()
}

#[test]
fn tag_sample_fit_route_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(40);
    let opts = TaggingOptions::default();
    let out = tag_dataset(&d, TaggingResources::default(), &opts).unwrap();
    assert_eq!(out.table.len(), 40);
    assert!(out.failures.is_empty());

    let tags = dir.path().join("tags.jsonl");
    write_tag_file(&tags, &d.fingerprint(), &out.table, &opts).unwrap();
    let (header, table) = read_tag_file(&tags).unwrap();
    assert_eq!(table, out.table);
    assert_eq!(header.dataset_fingerprint, d.fingerprint());

    let index = build_tag_index(table.assignments());
    let gen = GenerateOptions {
        count: 30,
        ..Default::default()
    };
    let (mut recs, _) = generate_candidate_set(&index, &table, &gen, 11).unwrap();
    let scores = recs
        .iter()
        .map(|r| {
            (
                r.candidate_id.clone(),
                0.5 + 0.001 * r.features.iter().take(5).sum::<u32>() as f64,
            )
        })
        .collect();
    assert_eq!(attach_performance(&mut recs, &scores), recs.len());
    assert!(recs
        .iter()
        .all(|r| r.performance_source == PerformanceSource::Measured));

    let cands = dir.path().join("cands.jsonl");
    let ch = CandidateSetHeader {
        dataset_fingerprint: d.fingerprint(),
        vocabulary_fingerprint: table.vocabulary().fingerprint(),
        n_instances: table.len(),
        seed: 11,
    };
    write_candidate_set(&cands, &ch, &recs).unwrap();
    let (ch2, recs2) = read_candidate_set(&cands).unwrap();
    assert_eq!(ch2, ch);
    assert_eq!(recs2, recs);

    let model = PpmModel::fit(
        &PpmSettings::of_kind(ModelKind::Linear),
        table.vocabulary(),
        table.len(),
        &recs,
        Some(1),
    )
    .unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = PpmModel::load(&path).unwrap();
    assert_eq!(loaded.to_json().unwrap(), model.to_json().unwrap());

    let scorer = Scorer::new(&loaded, &table).unwrap();
    let opts = SimulateOptions {
        n_sims: 50,
        budget: Some(10),
        slack: 0.2,
        ..Default::default()
    };
    let (r, pool) = route_simulated(&table, &index, &scorer, &opts, 3, &[]).unwrap();
    assert!(!pool.is_empty());
    assert!((8..=12).contains(&r.budget_realized));
    assert_eq!(r.configuration.len(), 40);
}

#[test]
fn transfer_scoring_reports_dropped_tags() {
    let d = dataset(20);
    let out = tag_dataset(&d, TaggingResources::default(), &TaggingOptions::default()).unwrap();
    let table = out.table;
    let index = build_tag_index(table.assignments());
    let (mut recs, _) = generate_candidate_set(
        &index,
        &table,
        &GenerateOptions {
            count: 25,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    for (k, r) in recs.iter_mut().enumerate() {
        r.performance = Some(0.5 + 0.01 * (k % 7) as f64);
    }
    let model = PpmModel::fit(
        &PpmSettings::of_kind(ModelKind::Linear),
        table.vocabulary(),
        table.len(),
        &recs,
        None,
    )
    .unwrap();

    // a target dataset with one tag the model never saw
    let mut vocab_tags: Vec<String> = table.vocabulary().tags().to_vec();
    vocab_tags.push("novel:tag".into());
    let assignments: Vec<TagAssignment> = table
        .assignments()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut a = a.clone();
            if i % 4 == 0 {
                a.tags.push("novel:tag".into());
            }
            a
        })
        .collect();
    let target = TagTable::new(
        prefroute::tagging::TagVocabulary::from_tags(&vocab_tags).unwrap(),
        assignments,
    )
    .unwrap();
    let scorer = Scorer::new(&model, &target).unwrap();
    assert_eq!(scorer.dropped(), ["novel:tag".to_string()]);
    assert!(scorer.coverage() < 1.0 && scorer.coverage() > 0.9);
    // the unseen tag contributes nothing
    let with = scorer.score_positions(&target, &[0]);
    let without = Scorer::new(&model, &table)
        .unwrap()
        .score_positions(&table, &[0]);
    assert!((with - without).abs() < 1e-12);
}

#[test]
fn harness_is_reproducible_and_persists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let small = |out| HarnessConfig {
        seed: 4,
        dataset: prefroute::oracle::SynthSpec {
            n: 300,
            n_tags: 30,
            ..Default::default()
        },
        n_train: 60,
        n_sims: 100,
        baseline_draws: 100,
        models: vec![PpmSettings::of_kind(ModelKind::Quadratic)],
        out_dir: out,
        ..Default::default()
    };
    let a = run_end_to_end(&small(Some(dir.path().to_path_buf()))).unwrap();
    let b = run_end_to_end(&small(None)).unwrap();
    let strip = |r: &prefroute::oracle::EvaluationReport| {
        let mut r = r.without_timings();
        r.config.out_dir = None;
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(strip(&a), strip(&b));
    for f in [
        "candidates.jsonl",
        "model_quadratic.json",
        "report.json",
        "budget_curve.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let curve = std::fs::read_to_string(dir.path().join("budget_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4 * a.budgets.len() + 2);
}
