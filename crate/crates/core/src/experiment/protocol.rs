//! Multi-trial protocols and the results table.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, MethodSpec};
use super::train::{prepare_trial, run_trial, TrialResult};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 14] = [
    "dataset",
    "method",
    "strategy",
    "sampling",
    "pl",
    "ws",
    "dg",
    "n_sources",
    "target",
    "source_set",
    "seed",
    "target_test_acc",
    "source_valid_acc",
    "realized_ws_noise",
];

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: MethodSpec,
    pub n_sources: usize,
    pub target: usize,
    pub source_set: Vec<usize>,
    pub seed: u64,
    pub target_test_acc: f64,
    pub source_valid_acc: f64,
    pub realized_ws_noise: f64,
}

impl ResultRow {
    pub fn from_trial(method: MethodSpec, result: &TrialResult) -> Self {
        Self {
            dataset: result.dataset.clone(),
            method,
            n_sources: result.sources.len(),
            target: result.target,
            source_set: result.sources.clone(),
            seed: result.model_seed,
            target_test_acc: result.target_test_acc,
            source_valid_acc: result.source_valid_acc,
            realized_ws_noise: result.realized_ws_noise,
        }
    }

    fn record(&self) -> [String; 14] {
        let m = &self.method;
        let (strategy, sampling) = if m.uses_contrastive() {
            (m.strategy.to_string(), m.sampling.to_string())
        } else {
            (String::new(), String::new())
        };
        let set = self.source_set.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
        [
            self.dataset.clone(),
            m.to_string(),
            strategy,
            sampling,
            m.pl.to_string(),
            m.ws.to_string(),
            m.dg.to_string(),
            self.n_sources.to_string(),
            self.target.to_string(),
            set,
            self.seed.to_string(),
            format!("{:.6}", self.target_test_acc),
            format!("{:.6}", self.source_valid_acc),
            format!("{:.6}", self.realized_ws_noise),
        ]
    }
}

/// Writes the header and rows as CSV.
pub fn write_results(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn results_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_results(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Protocol size knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolOptions {
    pub n_targets: usize,
    pub sets_per_target: usize,
    pub seed: u64,
}

impl ProtocolOptions {
    pub const PAPER_TARGETS: usize = 10;
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            n_targets: 3,
            sets_per_target: 3,
            seed: 0,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Up to `count` distinct sorted `n`-subsets of `candidates`, fewer only when
/// fewer exist.
pub fn distinct_source_sets(candidates: &[usize], n: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 || n > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot draw {n} sources from {} candidate domains",
            candidates.len()
        )));
    }
    let wanted = (count as u128).min(binomial(candidates.len(), n)) as usize;
    let mut seen = BTreeSet::new();
    let mut sets = Vec::with_capacity(wanted);
    let mut pool = candidates.to_vec();
    while sets.len() < wanted {
        pool.shuffle(rng);
        let mut set = pool[..n].to_vec();
        set.sort_unstable();
        if seen.insert(set.clone()) {
            sets.push(set);
        }
    }
    Ok(sets)
}

/// Trains every method on `n_targets` random targets times
/// `sets_per_target` random source sets for each `n`. All methods share the
/// same targets and source sets; the `j`-th source set of a target trains
/// with model seed `base.model_seed + j`.
pub fn run_protocol(
    base: &ExperimentConfig,
    dataset: &Dataset,
    methods: &[MethodSpec],
    n_values: &[usize],
    opts: ProtocolOptions,
) -> Result<Vec<ResultRow>> {
    let ids = dataset.domain_ids();
    if opts.n_targets == 0 || opts.n_targets > ids.len() {
        return Err(Error::invalid(format!(
            "{} targets requested from {} domains",
            opts.n_targets,
            ids.len()
        )));
    }
    if let Some(&n) = n_values.iter().find(|&&n| n >= ids.len()) {
        return Err(Error::invalid(format!("n = {n} leaves no domain for the target among {}", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    for &n in n_values {
        let mut targets = ids.clone();
        targets.shuffle(&mut rng);
        targets.truncate(opts.n_targets);
        for &target in &targets {
            let others: Vec<usize> = ids.iter().copied().filter(|&d| d != target).collect();
            let sets = distinct_source_sets(&others, n, opts.sets_per_target, &mut rng)?;
            for (rep, set) in sets.into_iter().enumerate() {
                for &method in methods {
                    let cfg = ExperimentConfig {
                        dataset: base.dataset.clone(),
                        synthetic: base.synthetic.clone(),
                        method,
                        n_sources: n,
                        target,
                        sources: Some(set.clone()),
                        model_seed: base.model_seed + rep as u64,
                        checkpoint: None,
                        ..base.clone()
                    };
                    let data = prepare_trial(&cfg, dataset)?;
                    let result = run_trial(&cfg, &data)?;
                    log::info!(
                        "{method} n={n} target={target} sources={set:?}: target test {:.4}",
                        result.target_test_acc
                    );
                    rows.push(ResultRow::from_trial(method, &result));
                }
            }
        }
    }
    Ok(rows)
}

/// Trains each method once per noise budget on the base config's target and
/// sources.
pub fn ws_noise_sweep(base: &ExperimentConfig, dataset: &Dataset, budgets: &[f64], methods: &[MethodSpec]) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &budget in budgets {
        for &method in methods {
            let cfg = ExperimentConfig {
                method,
                ws_noise_budget: budget,
                checkpoint: None,
                ..base.clone()
            };
            let data = prepare_trial(&cfg, dataset)?;
            let result = run_trial(&cfg, &data)?;
            log::info!(
                "{method} budget {budget}: realized {:.4}, target test {:.4}",
                result.realized_ws_noise,
                result.target_test_acc
            );
            rows.push(ResultRow::from_trial(method, &result));
        }
    }
    Ok(rows)
}

/// Aggregate accuracy of one method at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub n_sources: usize,
    pub trials: usize,
    pub mean: f64,
    /// Mean over targets of the population standard deviation across that
    /// target's source sets.
    pub deviation: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Groups rows by method and `n` in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<Summary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let k = (r.method.to_string(), r.n_sources);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, n)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.method.to_string() == method && r.n_sources == n).collect();
            let accs: Vec<f64> = group.iter().map(|r| r.target_test_acc).collect();
            let mut targets: Vec<usize> = group.iter().map(|r| r.target).collect();
            targets.dedup();
            targets.sort_unstable();
            targets.dedup();
            let deviation = mean(
                &targets
                    .iter()
                    .map(|&t| {
                        let per: Vec<f64> = group.iter().filter(|r| r.target == t).map(|r| r.target_test_acc).collect();
                        population_std(&per)
                    })
                    .collect::<Vec<_>>(),
            );
            Summary {
                method,
                n_sources: n,
                trials: accs.len(),
                mean: mean(&accs),
                deviation,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::MethodKind;

    fn row(target: usize, acc: f64) -> ResultRow {
        ResultRow {
            dataset: "d".into(),
            method: MethodSpec::new(MethodKind::NoAdaptation),
            n_sources: 2,
            target,
            source_set: vec![1, 4],
            seed: 0,
            target_test_acc: acc,
            source_valid_acc: 0.5,
            realized_ws_noise: 0.0,
        }
    }

    #[test]
    fn eleven_candidates_give_three_distinct_ten_sets() {
        let cands: Vec<usize> = (1..12).collect();
        let sets = distinct_source_sets(&cands, 10, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(sets.len(), 3);
        assert_eq!(sets.iter().collect::<BTreeSet<_>>().len(), 3);
        assert!(sets.iter().all(|s| s.len() == 10 && s.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn source_sets_capped_by_combinations() {
        let sets = distinct_source_sets(&[1, 2], 2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(sets, vec![vec![1, 2]]);
        assert!(distinct_source_sets(&[1, 2], 3, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn single_trial_summary_is_its_accuracy() {
        let s = summarize(&[row(0, 0.73)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean, 0.73);
        assert_eq!(s[0].deviation, 0.0);
    }

    #[test]
    fn deviation_averages_per_target_std() {
        let rows = [row(0, 0.5), row(0, 0.5), row(0, 0.5), row(1, 0.2), row(1, 0.4), row(1, 0.6)];
        let s = &summarize(&rows)[0];
        let std1 = ((0.04f64 + 0.0 + 0.04) / 3.0).sqrt();
        assert!((s.deviation - std1 / 2.0).abs() < 1e-12);
        assert!((s.mean - 2.7 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let csv = results_to_csv(&[row(3, 0.25)]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "d,no-adaptation,,,false,false,false,2,3,1;4,0,0.250000,0.500000,0.000000"
        );
        assert!(!csv.contains('\r'));
    }
}
