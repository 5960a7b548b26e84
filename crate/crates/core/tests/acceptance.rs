//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments to
//! run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use calda::data::{generate, inject_proportion_noise, Dataset, Shift, SyntheticSpec};
use calda::experiment::{run_protocol, summarize, ExperimentConfig, MethodSpec, ProtocolOptions, ResultRow};
use calda::gradcheck::run_suite;
use calda::losses::{contrastive_objective, weak_supervision_loss, LabelProportions};
use calda::pairing::{build_auxiliary, build_pair_sets, candidate_sets, BatchMember, PairSets, Sampling, SamplingConfig, Strategy};
use calda::Tensor;

const STRATEGIES: [Strategy; 3] = [Strategy::Within, Strategy::Any, Strategy::Cross];
const SAMPLINGS: [Sampling; 2] = [Sampling::Hard, Sampling::Random];

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn variants() -> Vec<(Strategy, Sampling, bool)> {
    let mut v = Vec::new();
    for s in STRATEGIES {
        for m in SAMPLINGS {
            for pl in [false, true] {
                v.push((s, m, pl));
            }
        }
    }
    v
}

/// Random batch: domain 0 is the unlabeled target, sources are 1..=domains.
fn random_batch(rng: &mut ChaCha8Rng, max_rows: usize, domains: usize, classes: usize, proj: usize, pl: bool) -> Vec<BatchMember> {
    let rows = rng.random_range(1..=max_rows);
    let dom: Vec<usize> = (0..rows).map(|_| rng.random_range(0..=domains)).collect();
    let labels: Vec<Option<usize>> = dom
        .iter()
        .map(|&d| (d != 0).then(|| rng.random_range(0..classes)))
        .collect();
    let z: Vec<f64> = (0..rows * proj).map(|_| StandardNormal.sample(rng)).collect();
    let mut lp = Vec::with_capacity(rows * classes);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..classes).map(|_| { let v: f64 = StandardNormal.sample(rng); 2.0 * v }).collect();
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        lp.extend(logits.iter().map(|v| v - lse));
    }
    build_auxiliary(
        &Tensor::new(vec![rows, proj], z).unwrap(),
        &labels,
        &dom,
        &Tensor::new(vec![rows, classes], lp).unwrap(),
        pl,
    )
    .unwrap()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Positive and negative candidates built by set algebra over label and
/// domain buckets.
fn brute_force_sets(q: usize, k: &[BatchMember], strategy: Strategy) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let all: BTreeSet<usize> = (0..k.len()).collect();
    let same_label: BTreeSet<usize> = all.iter().copied().filter(|&i| k[i].label == k[q].label).collect();
    let same_domain: BTreeSet<usize> = all.iter().copied().filter(|&i| k[i].domain == k[q].domain).collect();
    let allowed: BTreeSet<usize> = match strategy {
        Strategy::Within => same_domain,
        Strategy::Any => all.clone(),
        Strategy::Cross => all.difference(&same_domain).copied().collect(),
    };
    let mut pos: BTreeSet<usize> = same_label.intersection(&allowed).copied().collect();
    pos.remove(&q);
    let neg: BTreeSet<usize> = allowed.difference(&same_label).copied().collect();
    (pos, neg)
}

/// Per-query loss in the literal form of the contrastive pseudocode, summed
/// per query domain and averaged over that domain's valid queries.
fn nested_loop_objective(k: &[BatchMember], pairs: &[PairSets], tau: f64, pl: bool) -> f64 {
    let mut per_domain: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ps in pairs {
        let q = &k[ps.query];
        if q.is_target && !pl {
            continue;
        }
        if ps.positives.is_empty() || ps.negatives.is_empty() {
            continue;
        }
        let mut loss_query = 0.0;
        for &p in &ps.positives {
            let loss_p = (cosine(&k[p].z, &q.z) / tau).exp();
            let mut loss_n = 0.0;
            for &n in &ps.negatives {
                loss_n += (cosine(&k[n].z, &q.z) / tau).exp();
            }
            loss_query += -(loss_p / (loss_p + loss_n)).ln();
        }
        let e = per_domain.entry(q.domain).or_insert((0.0, 0));
        e.0 += loss_query / ps.positives.len() as f64;
        e.1 += 1;
    }
    per_domain.values().map(|(sum, count)| sum / *count as f64).sum()
}

/// Hard selection written out directly: sort by cross-entropy, take a prefix.
fn hard_oracle(q: usize, k: &[BatchMember], strategy: Strategy, k1: usize, k2: usize) -> (Vec<usize>, Vec<usize>) {
    let (pos, neg) = brute_force_sets(q, k, strategy);
    let mut pos: Vec<usize> = pos.into_iter().collect();
    let mut neg: Vec<usize> = neg.into_iter().collect();
    let yq = k[q].label;
    pos.sort_by(|&a, &b| (-k[b].task_log_probs[k[b].label]).total_cmp(&-k[a].task_log_probs[k[a].label]));
    neg.sort_by(|&a, &b| (-k[a].task_log_probs[yq]).total_cmp(&-k[b].task_log_probs[yq]));
    pos.truncate(k1);
    neg.truncate(k2);
    (pos, neg)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let reports = match run_suite(1) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Outcome::new(
        failed.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, worst relative error {worst:.2e}, {:.1}s, failed {failed:?}",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vars = variants();
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for b in 0..100 {
        let (strategy, sampling, pl) = vars[b % vars.len()];
        let tau = [0.01, 0.05, 0.1, 0.5][rng.random_range(0..4)];
        let k = random_batch(&mut rng, 24, 3, 3, 4, pl);
        let cfg = SamplingConfig {
            k1: rng.random_range(1..6),
            k2: rng.random_range(1..11),
            pl,
            tau,
            ..SamplingConfig::new(strategy, sampling)
        };
        let pairs = build_pair_sets(&k, &cfg, &mut ChaCha8Rng::seed_from_u64(b as u64));
        if sampling == Sampling::Hard {
            for ps in &pairs {
                let (p, n) = hard_oracle(ps.query, &k, strategy, cfg.k1, cfg.k2);
                if p != ps.positives || n != ps.negatives {
                    problems.push(format!("batch {b}: hard selection differs for query {}", ps.query));
                }
            }
        }
        let fast = contrastive_objective(&k, &pairs, tau, pl).unwrap().loss;
        let slow = nested_loop_objective(&k, &pairs, tau, pl);
        worst = worst.max((fast - slow).abs());
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-9 && problems.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "100 batches, max |difference| {worst:.2e}, {:.2}s{}",
            elapsed.as_secs_f64(),
            problems.first().map(|p| format!(", {p}")).unwrap_or_default()
        ),
    )
}

fn verify_pairs(ps: &PairSets, k: &[BatchMember], cfg: &SamplingConfig) -> Result<(), String> {
    let (pos, neg) = brute_force_sets(ps.query, k, cfg.strategy);
    let p: BTreeSet<usize> = ps.positives.iter().copied().collect();
    let n: BTreeSet<usize> = ps.negatives.iter().copied().collect();
    if p.len() != ps.positives.len() || n.len() != ps.negatives.len() {
        return Err("duplicate selection".into());
    }
    if !p.is_subset(&pos) || !n.is_subset(&neg) {
        return Err("selection outside the candidate sets".into());
    }
    if p.contains(&ps.query) || n.contains(&ps.query) || !p.is_disjoint(&n) {
        return Err("query selected or sets overlap".into());
    }
    if p.len() != pos.len().min(cfg.k1) || n.len() != neg.len().min(cfg.k2) {
        return Err(format!("sizes {} / {} for budgets {} / {}", p.len(), n.len(), cfg.k1, cfg.k2));
    }
    if cfg.sampling == Sampling::Hard {
        let yq = k[ps.query].label;
        let ce_pos = |i: usize| -k[i].task_log_probs[k[i].label];
        let ce_neg = |i: usize| -k[i].task_log_probs[yq];
        let min_chosen = p.iter().map(|&i| ce_pos(i)).fold(f64::INFINITY, f64::min);
        if pos.difference(&p).any(|&i| ce_pos(i) > min_chosen) {
            return Err("a harder positive was left out".into());
        }
        let max_chosen = n.iter().map(|&i| ce_neg(i)).fold(f64::NEG_INFINITY, f64::max);
        if neg.difference(&n).any(|&i| ce_neg(i) < max_chosen) {
            return Err("a harder negative was left out".into());
        }
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vars = variants();
    let mut checked = 0usize;
    let mut problems = Vec::new();
    for b in 0..500 {
        let (strategy, sampling, pl) = vars[b % vars.len()];
        let k = random_batch(&mut rng, 10, 3, 2, 2, pl);
        for q in 0..k.len() {
            let (p, n) = candidate_sets(q, &k, strategy);
            let (bp, bn) = brute_force_sets(q, &k, strategy);
            if p.iter().copied().collect::<BTreeSet<_>>() != bp || n.iter().copied().collect::<BTreeSet<_>>() != bn {
                problems.push(format!("batch {b} query {q}: candidate sets differ"));
            }
            checked += 1;
        }
        let cfg = SamplingConfig {
            k1: rng.random_range(1..4),
            k2: rng.random_range(1..6),
            pl,
            ..SamplingConfig::new(strategy, sampling)
        };
        let pairs = build_pair_sets(&k, &cfg, &mut ChaCha8Rng::seed_from_u64(b as u64));
        let expected_queries: Vec<usize> = (0..k.len()).filter(|&i| pl || !k[i].is_target).collect();
        if pairs.iter().map(|ps| ps.query).collect::<Vec<_>>() != expected_queries {
            problems.push(format!("batch {b}: wrong query list"));
        }
        if !pl && k.iter().any(|m| m.is_target) {
            problems.push(format!("batch {b}: unlabeled target row in the auxiliary set"));
        }
        for ps in &pairs {
            if let Err(e) = verify_pairs(ps, &k, &cfg) {
                problems.push(format!("batch {b} query {}: {e}", ps.query));
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        problems.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "500 batches, {checked} queries, {} mismatches, {:.2}s{}",
            problems.len(),
            elapsed.as_secs_f64(),
            problems.first().map(|p| format!(", first: {p}")).unwrap_or_default()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut problems = Vec::new();
    let mut worst = 0.0f64;
    let mut b = 0;
    for strategy in STRATEGIES {
        for pl in [false, true] {
            for _ in 0..20 {
                let k = random_batch(&mut rng, 20, 3, 3, 4, pl);
                let all = SamplingConfig {
                    k1: k.len(),
                    k2: k.len(),
                    pl,
                    ..SamplingConfig::new(strategy, Sampling::Hard)
                };
                let hard = build_pair_sets(&k, &all, &mut ChaCha8Rng::seed_from_u64(b));
                let random = build_pair_sets(
                    &k,
                    &SamplingConfig {
                        sampling: Sampling::Random,
                        ..all
                    },
                    &mut ChaCha8Rng::seed_from_u64(b + 1000),
                );
                for (h, r) in hard.iter().zip(&random) {
                    let sorted = |v: &[usize]| {
                        let mut v = v.to_vec();
                        v.sort_unstable();
                        v
                    };
                    if h.query != r.query || sorted(&h.positives) != sorted(&r.positives) || sorted(&h.negatives) != sorted(&r.negatives) {
                        problems.push(format!("batch {b} query {}", h.query));
                    }
                }
                let lh = contrastive_objective(&k, &hard, 0.1, pl).unwrap().loss;
                let lr = contrastive_objective(&k, &random, 0.1, pl).unwrap().loss;
                worst = worst.max((lh - lr).abs());
                b += 1;
            }
        }
    }
    Outcome::new(
        problems.is_empty() && worst <= 1e-12,
        format!("{b} batches, {} multiset mismatches, max loss difference {worst:.1e}", problems.len()),
    )
}

fn acceptance_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.iterations = 3000;
    cfg.batch_size = 32;
    cfg.lambda_c = 1.0;
    cfg.tau = 0.5;
    cfg.filters = Some(vec![16, 32, 16]);
    cfg.widths = Some(vec![8, 5, 3]);
    cfg.domain_hidden = Some(64);
    cfg.proj_dim = Some(64);
    cfg
}

fn gmm2(shift: Shift) -> SyntheticSpec {
    SyntheticSpec {
        shift,
        shift_magnitude: 4.0,
        class_separation: 0.2,
        ..SyntheticSpec::new(calda::data::Scenario::Gmm2)
    }
}

fn method(name: &str) -> MethodSpec {
    name.parse().expect("known method name")
}

fn protocol_means(spec: &SyntheticSpec, methods: &[&str]) -> (Vec<f64>, Vec<ResultRow>) {
    let dataset: Dataset = generate(spec).expect("generator spec is valid");
    let base = ExperimentConfig {
        synthetic: Some(spec.clone()),
        ..acceptance_config()
    };
    let methods: Vec<MethodSpec> = methods.iter().map(|m| method(m)).collect();
    let rows = run_protocol(&base, &dataset, &methods, &[6], ProtocolOptions::default()).expect("protocol runs");
    let summary = summarize(&rows);
    let means = methods
        .iter()
        .map(|m| summary.iter().find(|s| s.method == m.to_string()).expect("method summarized").mean)
        .collect();
    (means, rows)
}

struct Shifted {
    calda: f64,
    adversary: f64,
    none: f64,
    no_adversary: f64,
}

fn run_shifted() -> Shifted {
    let (m, _) = protocol_means(&gmm2(Shift::InterTranslate), &["calda-xs-h", "codats", "no-adaptation", "calda-xs-h-noadv"]);
    Shifted {
        calda: m[0],
        adversary: m[1],
        none: m[2],
        no_adversary: m[3],
    }
}

fn criterion_5(shifted: &Shifted) -> Outcome {
    let start = Instant::now();
    let (flat, _) = protocol_means(&gmm2(Shift::None), &["calda-xs-h", "codats", "no-adaptation"]);
    let spread = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max) - flat.iter().copied().fold(f64::INFINITY, f64::min);
    let s = shifted;
    let ordered = s.calda >= s.adversary && s.adversary >= s.none && s.calda >= s.none + 0.03;
    Outcome::new(
        ordered && spread <= 0.03,
        format!(
            "shifted: calda {:.4}, adversary-only {:.4}, no-adaptation {:.4}; no shift: {:.4} / {:.4} / {:.4} (spread {spread:.4}); no-shift runs {:.0}s",
            s.calda,
            s.adversary,
            s.none,
            flat[0],
            flat[1],
            flat[2],
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_7(shifted: &Shifted) -> Outcome {
    Outcome::new(
        shifted.no_adversary < shifted.calda,
        format!("calda {:.4}, without adversary {:.4}", shifted.calda, shifted.no_adversary),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let target = 0;
    // larger domains so the minority class and the target test split are not tiny
    let mut spec = SyntheticSpec {
        windows_per_class: 300,
        ..gmm2(Shift::InterTranslate)
    };
    spec.class_weights.insert(target, vec![0.6, 0.3, 0.1]);
    let dataset = generate(&spec).expect("generator spec is valid");
    let seeds = [0u64, 1, 2];
    let trial = |name: &str, seed: u64, budget: f64| -> f64 {
        let cfg = ExperimentConfig {
            synthetic: Some(spec.clone()),
            method: method(name),
            n_sources: 6,
            target,
            source_set_seed: seed,
            model_seed: seed,
            ws_noise_budget: budget,
            ..acceptance_config()
        };
        let data = calda::experiment::prepare_trial(&cfg, &dataset).expect("trial data");
        calda::experiment::run_trial(&cfg, &data).expect("trial runs").target_test_acc
    };
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let plain = mean(seeds.iter().map(|&s| trial("calda-xs-h", s, 0.0)).collect());
    let budgets = [0.0, 0.1, 0.2, 0.4];
    let ws: Vec<f64> = budgets
        .iter()
        .map(|&b| mean(seeds.iter().map(|&s| trial("calda-xs-h-ws", s, b)).collect()))
        .collect();
    let benefit = ws[0] >= plain + 0.01;
    let trend = ws.windows(2).all(|w| w[1] <= w[0] + 0.01);
    Outcome::new(
        benefit && trend,
        format!(
            "calda {plain:.4}, calda-ws {:.4}; ws by budget {budgets:?}: {:?}; {:.0}s",
            ws[0],
            ws.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_kl = 0.0f64;
    for _ in 0..100 {
        let classes = rng.random_range(2..7);
        let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let y: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        // rows y ± δ around the target so that their mean is exactly y
        let rows = 2 * rng.random_range(1..5);
        let mut lp = Vec::new();
        for _ in 0..rows / 2 {
            let mut delta: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = delta.iter().sum::<f64>() / classes as f64;
            delta.iter_mut().for_each(|d| *d -= m);
            let scale = y.iter().zip(&delta).map(|(p, d)| if d.abs() > 0.0 { p / d.abs() } else { f64::INFINITY }).fold(f64::INFINITY, f64::min) * 0.5;
            for sign in [1.0, -1.0] {
                lp.extend(y.iter().zip(&delta).map(|(p, d)| (p + sign * scale * d).ln()));
            }
        }
        let (kl, _) = weak_supervision_loss(
            &LabelProportions::new(y.clone()).unwrap_or_else(|_| LabelProportions::from_counts(&y).unwrap()),
            &Tensor::new(vec![rows, classes], lp).unwrap(),
        )
        .unwrap();
        worst_kl = worst_kl.max(kl.abs());
    }
    let p = LabelProportions::new(vec![0.6, 0.3, 0.1]).unwrap();
    let mut noise = Vec::new();
    for budget in [0.05, 0.1, 0.2, 0.4] {
        let mean = (0..100)
            .map(|_| inject_proportion_noise(&p, budget, &mut rng).unwrap().1)
            .sum::<f64>()
            / 100.0;
        noise.push((budget, mean));
    }
    let noise_ok = noise.iter().all(|(b, m)| (m - b).abs() <= 0.03);
    Outcome::new(
        worst_kl <= 1e-9 && noise_ok,
        format!(
            "max |KL| at matching means {worst_kl:.1e}; mean realized noise {}",
            noise.iter().map(|(b, m)| format!("{b}->{m:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn calda_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_calda"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_owned();
    let data = d.join("data");
    let config = d.join("train.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "synthetic": {"scenario": "gmm2", "n_domains": 4, "windows_per_class": 20, "window_len": 20, "shift": "inter_translate"},
            "method": "calda-any-r-pl-ws",
            "n_sources": 2,
            "target": 0,
            "ws_noise_budget": 0.1,
            "iterations": 30,
            "batch_size": 12,
            "eval_every": 10,
            "filters": [4, 4],
            "widths": [3, 3]
        })
        .to_string(),
    )
    .expect("write config");
    let run = || -> Result<Vec<Vec<u8>>, String> {
        let mut outs = Vec::new();
        for i in 0..2 {
            let train_csv = d.join(format!("train{i}.csv"));
            calda_cli(&["train", "--config", &s(&config), "--out", &s(&train_csv)])?;
            let protocol_csv = d.join(format!("protocol{i}.csv"));
            calda_cli(&[
                "protocol", "--dataset", &s(&data), "--method", "no-adaptation,codats,calda-xs-h", "--n-list", "1,2",
                "--targets", "2", "--sets", "2", "--seed", "5", "--config", &s(&config), "--out", &s(&protocol_csv),
            ])?;
            outs.push(std::fs::read(&train_csv).map_err(|e| e.to_string())?);
            outs.push(std::fs::read(&protocol_csv).map_err(|e| e.to_string())?);
        }
        Ok(outs)
    };
    let result = calda_cli(&[
        "generate", "--scenario", "gmm2", "--shift", "inter_translate", "--domains", "4", "--windows-per-class", "20",
        "--window-len", "20", "--out", &s(&data),
    ])
    .and_then(|_| run());
    match result {
        Ok(o) => {
            let same = o[0] == o[2] && o[1] == o[3];
            Outcome::new(
                same && !o[0].is_empty() && !o[1].is_empty(),
                format!("train csv {} bytes, protocol csv {} bytes, identical across runs: {same}", o[0].len(), o[1].len()),
            )
        }
        Err(e) => Outcome::new(false, format!("cli failed: {}", e.trim())),
    }
}

fn main() -> ExitCode {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut outcomes: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        outcomes.push((n, o));
    };
    for (n, f) in [(1, criterion_1 as fn() -> Outcome), (2, criterion_2), (3, criterion_3), (4, criterion_4), (8, criterion_8), (9, criterion_9)] {
        if run(n) {
            report(n, f());
        }
    }
    if run(5) || run(7) {
        let shifted = run_shifted();
        if run(5) {
            report(5, criterion_5(&shifted));
        }
        if run(7) {
            report(7, criterion_7(&shifted));
        }
    }
    if run(6) {
        report(6, criterion_6());
    }
    let failed = outcomes.iter().filter(|(_, o)| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
