//! Acceptance suite. Each criterion runs at its stated tolerance and prints one
//! PASS or FAIL line; the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use prefroute::analysis::{agreement, overall_score, AspectRatings, AspectWeights, ASPECTS};
use prefroute::candidates::{
    build_tag_index, featurize, generate_candidate_set, sample_human_subset, CandidateRecord,
    GenerateOptions, PerformanceSource, TagIndex, ALL_HUMAN_ID, ALL_LM_ID,
};
use prefroute::model::Label;
use prefroute::oracle::{run_end_to_end, HarnessConfig, OracleKind};
use prefroute::ppm::{rmse, spearman, ModelForm, ModelKind, PpmModel, PpmSettings};
use prefroute::routing::{instance_gain, instance_gains, topk_positions, Scorer};
use prefroute::seed;
use prefroute::tagging::metrics::{compute_bertscore, compute_cosine, compute_entity_iou, rouge_l};
use prefroute::tagging::{TagAssignment, TagTable, TagVocabulary};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------------------
// brute-force references

fn lcs_exhaustive(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| a[i])
            .collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == x)) {
            best = sub.len();
        }
    }
    best
}

fn rouge_reference(a: &[u8], b: &[u8]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let l = lcs_exhaustive(a, b) as f64;
    // F = 2 l / (|a| + |b|) is the harmonic mean of l/|a| and l/|b|
    Some(2.0 * l / (a.len() + b.len()) as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_reference(u: &[f64], v: &[f64]) -> Option<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    // through the distance between unit vectors
    let d2: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (a / nu - b / nv).powi(2))
        .sum();
    Some((1.0 - d2 / 2.0).clamp(-1.0, 1.0))
}

fn iou_reference(a: &BTreeSet<String>, b: &BTreeSet<String>, universe: &[String]) -> f64 {
    let (mut both, mut either) = (0, 0);
    for u in universe {
        let (x, y) = (a.contains(u), b.contains(u));
        both += (x && y) as usize;
        either += (x || y) as usize;
    }
    if either == 0 {
        1.0
    } else {
        both as f64 / either as f64
    }
}

fn bertscore_reference(ta: &[Vec<f64>], tb: &[Vec<f64>], adjusted: bool) -> Option<f64> {
    if ta.is_empty() || tb.is_empty() {
        return None;
    }
    let sim: Vec<Vec<f64>> = ta
        .iter()
        .map(|x| {
            tb.iter()
                .map(|y| cosine_reference(x, y).unwrap_or(0.0))
                .collect()
        })
        .collect();
    let mut p = 0.0;
    for row in &sim {
        let mut sorted = row.clone();
        sorted.sort_by(f64::total_cmp);
        p += sorted[sorted.len() - 1];
    }
    p /= ta.len() as f64;
    let mut r = 0.0;
    for j in 0..tb.len() {
        let mut col: Vec<f64> = sim.iter().map(|row| row[j]).collect();
        col.sort_by(f64::total_cmp);
        r += col[col.len() - 1];
    }
    r /= tb.len() as f64;
    let f = if p > 0.0 && r > 0.0 {
        (2.0 * p * r / (p + r)).min(1.0)
    } else {
        0.0
    };
    let ratio = if adjusted {
        ta.len().min(tb.len()) as f64 / ta.len().max(tb.len()) as f64
    } else {
        1.0
    };
    Some(f * ratio)
}

fn ranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn spearman_reference(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (ranks_by_counting(a), ranks_by_counting(b));
    let n = a.len() as f64;
    let (mut sab, mut saa, mut sbb, mut sa, mut sb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += x * y;
        saa += x * x;
        sbb += y * y;
        sa += x;
        sb += y;
    }
    let cov = sab - sa * sb / n;
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va.abs() < 1e-12 || vb.abs() < 1e-12 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

fn kappa_reference(a: &[Label], b: &[Label]) -> Option<f64> {
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut chance = 0.0;
    for l in Label::ALL {
        let pa = a.iter().filter(|x| **x == l).count() as f64 / n;
        let pb = b.iter().filter(|x| **x == l).count() as f64 / n;
        chance += pa * pb;
    }
    if chance == 1.0 {
        None
    } else {
        Some((agree - chance) / (1.0 - chance))
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn opt_close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let trials = 1000;
    for t in 0..trials {
        let alphabet = rng.random_range(1..5u8);
        let la = rng.random_range(0..9);
        let lb = rng.random_range(0..9);
        let a: Vec<u8> = (0..la).map(|_| rng.random_range(0..alphabet)).collect();
        let b: Vec<u8> = (0..lb).map(|_| rng.random_range(0..alphabet)).collect();
        let (got, want) = (rouge_l(&a, &b), rouge_reference(&a, &b));
        check(opt_close(got, want, 1e-9), || {
            format!("rouge-l trial {t}: {got:?} vs {want:?} on {a:?} {b:?}")
        })?;

        let dim = rng.random_range(1..8);
        let u = random_vec(&mut rng, dim);
        let v = if t % 10 == 0 {
            u.iter().map(|x| -2.0 * x).collect()
        } else {
            random_vec(&mut rng, dim)
        };
        let got = compute_cosine(&u, &v).ok();
        check(opt_close(got, cosine_reference(&u, &v), 1e-9), || {
            format!("cosine trial {t}")
        })?;

        let universe: Vec<String> = (0..6).map(|i| format!("e{i}")).collect();
        let pick = |rng: &mut prefroute::seed::Rng| -> BTreeSet<String> {
            universe
                .iter()
                .filter(|_| rng.random_bool(0.4))
                .cloned()
                .collect()
        };
        let (ea, eb) = (pick(&mut rng), pick(&mut rng));
        check(
            close(
                compute_entity_iou(&ea, &eb),
                iou_reference(&ea, &eb, &universe),
                1e-9,
            ),
            || format!("entity iou trial {t}"),
        )?;

        let (na, nb) = (rng.random_range(0..6), rng.random_range(0..6));
        let ta: Vec<Vec<f64>> = (0..na).map(|_| random_vec(&mut rng, 4)).collect();
        let tb: Vec<Vec<f64>> = (0..nb).map(|_| random_vec(&mut rng, 4)).collect();
        for adjusted in [false, true] {
            let got = compute_bertscore(&ta, &tb, adjusted);
            let want = bertscore_reference(&ta, &tb, adjusted);
            check(opt_close(got, want, 1e-6), || {
                format!("bertscore trial {t}: {got:?} vs {want:?}")
            })?;
        }

        let n = rng.random_range(2..12);
        let levels = rng.random_range(2..6);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = spearman(&x, &y).map_err(|e| e.to_string())?;
        check(opt_close(got, spearman_reference(&x, &y), 1e-9), || {
            format!("spearman trial {t}")
        })?;

        let ss: f64 = x.iter().zip(&y).map(|(p, a)| (p - a) * (p - a)).sum();
        let got = rmse(&x, &y).map_err(|e| e.to_string())?;
        check(close(got, (ss / n as f64).sqrt(), 1e-9), || {
            format!("rmse trial {t}")
        })?;

        let m = rng.random_range(1..15);
        let draw = |rng: &mut prefroute::seed::Rng, k: usize| Label::ALL[rng.random_range(0..k)];
        let k = rng.random_range(1..4);
        let la: Vec<Label> = (0..m).map(|_| draw(&mut rng, k)).collect();
        let lb: Vec<Label> = (0..m).map(|_| draw(&mut rng, k)).collect();
        let got = agreement(&la, &lb).map_err(|e| e.to_string())?.cohen_kappa;
        let want = kappa_reference(&la, &lb);
        check(opt_close(got, want, 1e-9), || {
            format!("kappa trial {t}: {got:?} vs {want:?}")
        })?;

        let w = AspectWeights::default();
        let vals: Vec<f64> = (0..5).map(|_| rng.random_range(0..=4) as f64).collect();
        let ratings: AspectRatings = ASPECTS
            .iter()
            .map(|s| s.to_string())
            .zip(vals.iter().copied())
            .collect();
        let want =
            0.65 * vals[0] + 0.8 * vals[1] + 0.45 * vals[2] + 0.55 * vals[3] - 0.40 * vals[4];
        let got = overall_score(&ratings, &w).map_err(|e| e.to_string())?;
        check(close(got, want, 1e-9), || format!("weighted sum trial {t}"))?;
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "{trials} random inputs per metric, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// sampler and features

fn random_table(rng: &mut impl Rng, n: usize, n_tags: usize, p: f64) -> TagTable {
    let names: Vec<String> = (0..n_tags).map(|j| format!("t{j}")).collect();
    let vocab = TagVocabulary::from_tags(&names).unwrap();
    let assignments = (0..n)
        .map(|i| TagAssignment {
            id: format!("i{i:03}"),
            tags: names
                .iter()
                .filter(|_| rng.random_bool(p))
                .cloned()
                .collect(),
            raw_metrics: BTreeMap::new(),
        })
        .collect();
    TagTable::new(vocab, assignments).unwrap()
}

fn permutations(items: &[Vec<usize>]) -> Vec<Vec<Vec<usize>>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

/// Every (budget, human set) pair the group-adding procedure can produce.
fn reachable(index: &TagIndex, n: usize) -> HashSet<(usize, Vec<usize>)> {
    let groups: Vec<Vec<usize>> = index.groups().map(|(_, g)| g.to_vec()).collect();
    let mut out = HashSet::new();
    for order in permutations(&groups) {
        for b in 0..=n {
            let mut set = BTreeSet::new();
            if b > 0 {
                for g in &order {
                    set.extend(g.iter().copied());
                    if set.len() >= b {
                        break;
                    }
                }
            }
            out.insert((b, set.into_iter().collect()));
        }
    }
    out
}

fn criterion_group_sampler() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(202);
    let mut checked = 0usize;
    for t in 0..150 {
        let n = rng.random_range(2..=12);
        let n_tags = rng.random_range(1..=4);
        let table = random_table(&mut rng, n, n_tags, 0.35);
        let index = build_tag_index(table.assignments());
        let reach = reachable(&index, n);
        let union: BTreeSet<usize> = index
            .groups()
            .flat_map(|(_, g)| g.iter().copied())
            .collect();
        let largest = index.largest_group();
        let verify = |budget: usize, human: &[usize]| -> Result<(), String> {
            check(reach.contains(&(budget, human.to_vec())), || {
                format!("table {t}: set {human:?} for budget {budget} is not reachable")
            })?;
            if human.len() >= budget {
                check(budget == 0 || human.len() - budget < largest.max(1), || {
                    format!(
                        "table {t}: overshoot {} with largest group {largest}",
                        human.len() - budget
                    )
                })
            } else {
                check(human.iter().copied().eq(union.iter().copied()), || {
                    format!("table {t}: budget {budget} missed without exhausting the groups")
                })
            }
        };
        let opts = GenerateOptions {
            count: 20,
            include_endpoints: false,
            ..Default::default()
        };
        let (recs, _) =
            generate_candidate_set(&index, &table, &opts, t).map_err(|e| e.to_string())?;
        for r in &recs {
            verify(
                r.budget,
                &r.human_positions(&table).map_err(|e| e.to_string())?,
            )?;
            checked += 1;
        }
        for b in 0..=n {
            let mut r = seed::rng(seed::child(t, b as u64));
            let s = sample_human_subset(&index, &mut r, Some(b)).map_err(|e| e.to_string())?;
            verify(b, &s.human)?;
            checked += 1;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "{checked} samples against exhaustive enumeration, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_featurize() -> Outcome {
    let mut rng = seed::rng(303);
    for t in 0..200 {
        let n = rng.random_range(1..=200);
        let n_tags = rng.random_range(1..30);
        let table = random_table(&mut rng, n, n_tags, 0.15);
        let human: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let got = featurize(&human, &table).counts;
        let tags = table.vocabulary().tags();
        for (j, tag) in tags.iter().enumerate() {
            let want = human
                .iter()
                .filter(|&&i| table.assignments()[i].tags.contains(tag))
                .count() as u32;
            check(got[j] == want, || {
                format!("dataset {t}, tag {tag}: {} vs {want}", got[j])
            })?;
        }
    }
    Ok("200 random datasets, exact counts".into())
}

// ---------------------------------------------------------------------------
// oracle harness

fn criterion_ppm_recovery() -> Outcome {
    let start = Instant::now();
    let cfg = HarnessConfig {
        seed: 0,
        models: vec![PpmSettings::of_kind(ModelKind::Quadratic)],
        budgets: Vec::new(),
        ..Default::default()
    };
    let report = run_end_to_end(&cfg).map_err(|e| e.to_string())?;
    let fit = &report.fits[0].holdout;
    let rho = fit.spearman_rho.unwrap_or(f64::NAN);
    check(rho >= 0.9, || format!("quadratic rho {rho:.4} < 0.9"))?;
    check(fit.rmse <= 0.02, || {
        format!("quadratic rmse {:.4} > 0.02", fit.rmse)
    })?;

    let mut lin = HarnessConfig {
        seed: 0,
        models: vec![PpmSettings::of_kind(ModelKind::Linear)],
        budgets: Vec::new(),
        ..Default::default()
    };
    lin.oracle.kind = OracleKind::Linear;
    lin.oracle.noise_sigma = 0.0;
    let lr = run_end_to_end(&lin).map_err(|e| e.to_string())?;
    let lrho = lr.fits[0].holdout.spearman_rho.unwrap_or(f64::NAN);
    check(lrho >= 0.999, || format!("linear rho {lrho:.6} < 0.999"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "vocabulary {}, quadratic rho {rho:.4} rmse {:.4}, linear rho {lrho:.6}, {:.1}s",
        report.vocabulary_size,
        fit.rmse,
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_routing_beats_random() -> Outcome {
    let start = Instant::now();
    let mut wins = Vec::new();
    for s in 0..5 {
        let cfg = HarnessConfig {
            seed: s,
            models: vec![PpmSettings::of_kind(ModelKind::Quadratic)],
            ..Default::default()
        };
        let r = run_end_to_end(&cfg).map_err(|e| e.to_string())?;
        let w = r.budgets.iter().filter(|b| b.simulated_beats_p95).count();
        check(
            r.budgets.len() == 3 && r.budgets.iter().all(|b| b.random.draws == 1000),
            || format!("seed {s}: unexpected budget layout"),
        )?;
        wins.push(w);
    }
    check(wins.iter().all(|&w| w >= 2), || {
        format!("wins per seed {wins:?}")
    })?;
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "budgets above random p95 per seed {wins:?}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// gains

fn fitted_linear(rng: &mut impl Rng, table: &TagTable) -> PpmModel {
    let n = table.len();
    let recs: Vec<CandidateRecord> = (0..40)
        .map(|k| {
            let human: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            let mut r =
                CandidateRecord::from_positions(format!("c{k}"), human.len(), &human, table);
            r.performance = Some(rng.random_range(0.3..0.9));
            r.performance_source = PerformanceSource::Oracle;
            r
        })
        .collect();
    let settings = PpmSettings {
        ridge: Some(0.01),
        ..PpmSettings::of_kind(ModelKind::Linear)
    };
    PpmModel::fit(&settings, table.vocabulary(), n, &recs, None).unwrap()
}

fn criterion_gain_identities() -> Outcome {
    let mut rng = seed::rng(606);
    let mut tagless = 0;
    for t in 0..100 {
        let n = rng.random_range(5..60);
        let n_tags = rng.random_range(1..8);
        let table = random_table(&mut rng, n, n_tags, 0.25);
        let model = fitted_linear(&mut rng, &table);
        let scorer = Scorer::new(&model, &table).map_err(|e| e.to_string())?;
        let ModelForm::Linear { weights, .. } = &model.form else {
            return Err("linear fit produced another form".into());
        };
        for i in 0..n {
            let g = instance_gain(&scorer, &table, i);
            let idx = table.tag_indices(i);
            if idx.is_empty() {
                tagless += 1;
                check(g == 0.0, || {
                    format!("table {t}: tagless instance {i} has gain {g}")
                })?;
            }
            let want: f64 = idx.iter().map(|&j| weights[j] / n as f64).sum();
            check(close(g, want, 1e-9), || {
                format!("table {t}, instance {i}: {g} vs {want}")
            })?;
        }
        let gains = instance_gains(&scorer, &table);
        let mut prev: HashSet<usize> = HashSet::new();
        for k in 0..=n {
            let cur: HashSet<usize> = topk_positions(&gains, k).into_iter().collect();
            check(cur.len() == k && prev.is_subset(&cur), || {
                format!("table {t}: top-{k} not nested")
            })?;
            prev = cur;
        }
    }
    Ok(format!("100 random tables, {tagless} tagless instances"))
}

// ---------------------------------------------------------------------------
// determinism of the binary

fn write_dataset(path: &Path) {
    let mut rng = seed::rng(707);
    let words = [
        "river", "cat", "red", "sat", "mat", "quickly", "over", "under", "the", "a", "blue",
        "theorem", "proof", "market", "code",
    ];
    let names = ["Paris", "Rust", "Alice", "London", "Turing"];
    let text = |rng: &mut prefroute::seed::Rng, lo: usize, hi: usize| {
        let k = rng.random_range(lo..hi);
        let mut s: Vec<&str> = (0..k)
            .map(|_| words[rng.random_range(0..words.len())])
            .collect();
        s.push(names[rng.random_range(0..names.len())]);
        s.join(" ")
    };
    let mut lines = String::new();
    for i in 0..48 {
        let (h, l) = (
            ["A", "B"][rng.random_range(0..2)],
            ["A", "B"][rng.random_range(0..2)],
        );
        let mut inst = serde_json::json!({
            "id": format!("q{i:03}"),
            "prompt": text(&mut rng, 3, 12),
            "response_a": text(&mut rng, 2, 30),
            "response_b": text(&mut rng, 2, 30),
            "human_label": h,
            "lm_label": l,
        });
        if i % 3 == 0 {
            let subject = ["math", "history"][rng.random_range(0..2)];
            inst["descriptive_tags"] = serde_json::json!({
                "subject_of_expertise": [subject],
                "safety_concern": "safe",
            });
        }
        lines.push_str(&inst.to_string());
        lines.push('\n');
    }
    std::fs::write(path, lines).unwrap();
}

fn prefroute(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_prefroute"))
        .current_dir(dir)
        .args(["--seed", "7"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn scores_for(dir: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(dir.join("cands.jsonl")).map_err(|e| e.to_string())?;
    let mut csv = String::from("candidate_id,performance\n");
    for line in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let f = v["features"].as_array().unwrap();
        let perf: f64 = 0.5
            + f.iter()
                .enumerate()
                .map(|(j, c)| ((j % 5) as f64 - 2.0) * 1e-3 * c.as_f64().unwrap())
                .sum::<f64>();
        csv.push_str(&format!("{},{perf}\n", v["candidate_id"].as_str().unwrap()));
    }
    std::fs::write(dir.join("scores.csv"), csv).map_err(|e| e.to_string())
}

fn chain(dir: &Path) -> Result<(), String> {
    write_dataset(&dir.join("data.jsonl"));
    prefroute(
        dir,
        &["tag", "--dataset", "data.jsonl", "--out", "tags.jsonl"],
    )?;
    prefroute(
        dir,
        &[
            "sample",
            "--tags",
            "tags.jsonl",
            "--count",
            "40",
            "--out",
            "cands.jsonl",
        ],
    )?;
    scores_for(dir)?;
    prefroute(
        dir,
        &[
            "ingest-perf",
            "--candidates",
            "cands.jsonl",
            "--scores",
            "scores.csv",
            "--out",
            "scored.jsonl",
        ],
    )?;
    prefroute(
        dir,
        &[
            "fit",
            "--candidates",
            "scored.jsonl",
            "--tags",
            "tags.jsonl",
            "--holdout",
            "8",
            "--out",
            "model.json",
        ],
    )?;
    prefroute(
        dir,
        &[
            "route",
            "--strategy",
            "simulated",
            "--tags",
            "tags.jsonl",
            "--model",
            "model.json",
            "--fraction",
            "0.3",
            "--n-sims",
            "100",
            "--slack",
            "0.1",
            "--pool-out",
            "pool.jsonl",
            "--out",
            "route.jsonl",
        ],
    )?;
    prefroute(
        dir,
        &[
            "gain",
            "--tags",
            "tags.jsonl",
            "--model",
            "model.json",
            "--n-route",
            "5",
            "--out-dir",
            "gain",
        ],
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    chain(a.path())?;
    chain(b.path())?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    check(ta.keys().eq(tb.keys()), || {
        "runs wrote different file sets".into()
    })?;
    for (name, bytes) in &ta {
        check(tb[name] == *bytes, || {
            format!("{name} differs between runs")
        })?;
    }
    Ok(format!("{} files byte-identical", ta.len()))
}

fn criterion_endpoints() -> Outcome {
    let mut rng = seed::rng(808);
    for t in 0..100 {
        let n = rng.random_range(2..80);
        let n_tags = rng.random_range(1..20);
        let table = random_table(&mut rng, n, n_tags, 0.2);
        let index = build_tag_index(table.assignments());
        let opts = GenerateOptions {
            count: 5,
            ..Default::default()
        };
        let (recs, _) =
            generate_candidate_set(&index, &table, &opts, t).map_err(|e| e.to_string())?;
        let mut totals = vec![0u32; table.vocabulary().len()];
        for a in table.assignments() {
            for tag in &a.tags {
                totals[table.vocabulary().index_of(tag).unwrap()] += 1;
            }
        }
        // a sampled set equal to an endpoint stands in for it
        let all_human = recs.iter().find(|r| r.human_subset.len() == n);
        let all_lm = recs.iter().find(|r| r.human_subset.is_empty());
        check(
            recs.iter().any(|r| r.candidate_id == ALL_HUMAN_ID) || all_human.is_some(),
            || format!("table {t}: no all-human candidate"),
        )?;
        check(all_human.is_some_and(|r| r.features == totals), || {
            format!("table {t}: all-human features")
        })?;
        check(
            recs.iter().any(|r| r.candidate_id == ALL_LM_ID) || all_lm.is_some(),
            || format!("table {t}: no all-LM candidate"),
        )?;
        check(
            all_lm.is_some_and(|r| r.features.iter().all(|&c| c == 0)),
            || format!("table {t}: all-LM features"),
        )?;
    }
    Ok("100 random datasets, exact".into())
}

fn main() {
    let criteria: [(&str, Criterion); 8] = [
        ("1 metric oracles", criterion_metrics),
        ("2 group sampler conformance", criterion_group_sampler),
        ("3 featurization equivalence", criterion_featurize),
        ("4 predictor recovery", criterion_ppm_recovery),
        ("5 routing beats random", criterion_routing_beats_random),
        ("6 gain identities", criterion_gain_identities),
        ("7 pipeline determinism", criterion_determinism),
        ("8 endpoint candidates", criterion_endpoints),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
