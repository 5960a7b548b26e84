//! Positive/negative set construction for the contrastive loss.
//!
//! All sets are built per mini-batch over the auxiliary set `K`: every
//! labeled source row plus, when pseudo-labeling is on, every target row
//! carrying its argmax prediction. Indices in [`PairSets`] point into `K`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Domain constraint on positives and negatives relative to the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Same domain as the query.
    Within,
    /// No constraint.
    Any,
    /// A different domain than the query.
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Hard,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Within => "within",
            Strategy::Any => "any",
            Strategy::Cross => "cross",
        })
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Hard => "hard",
            Sampling::Random => "random",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within" | "in" => Ok(Strategy::Within),
            "any" => Ok(Strategy::Any),
            "cross" | "xs" => Ok(Strategy::Cross),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" | "h" => Ok(Sampling::Hard),
            "random" | "r" => Ok(Sampling::Random),
            other => Err(Error::invalid(format!("unknown sampling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub sampling: Sampling,
    /// Maximum positives per query.
    pub k1: usize,
    /// Maximum negatives per query.
    pub k2: usize,
    pub pl: bool,
    pub tau: f64,
}

impl SamplingConfig {
    pub fn new(strategy: Strategy, sampling: Sampling) -> Self {
        Self {
            strategy,
            sampling,
            k1: 5,
            k2: 10,
            pl: false,
            tau: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::invalid("k1 and k2 must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// One element of the auxiliary set.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMember {
    /// Batch row.
    pub index: usize,
    pub z: Vec<f64>,
    /// 0 for the target, `i` for source `i`.
    pub domain: usize,
    /// True label for sources, pseudo-label for targets.
    pub label: usize,
    pub task_log_probs: Vec<f64>,
    pub is_target: bool,
}

impl BatchMember {
    /// Task cross-entropy of this member's prediction against `label`.
    pub fn cross_entropy(&self, label: usize) -> f64 {
        -self.task_log_probs[label]
    }
}

/// Positives and negatives selected for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSets {
    pub query: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Builds `K` from batch rows. Without pseudo-labeling target rows (domain 0)
/// are left out entirely since they carry no label.
pub fn build_auxiliary(
    z: &Tensor,
    labels: &[Option<usize>],
    domains: &[usize],
    task_log_probs: &Tensor,
    pl: bool,
) -> Result<Vec<BatchMember>> {
    let rows = domains.len();
    if labels.len() != rows || z.rank() != 2 || z.dim(0) != rows || task_log_probs.rank() != 2 || task_log_probs.dim(0) != rows {
        return Err(Error::shape(
            "build_auxiliary",
            format!(
                "{} labels, {rows} domains, z {:?}, log-probs {:?}",
                labels.len(),
                z.shape(),
                task_log_probs.shape()
            ),
        ));
    }
    let mut members = Vec::with_capacity(rows);
    for i in 0..rows {
        let is_target = domains[i] == 0;
        let lp = task_log_probs.row(i);
        let label = if is_target {
            if !pl {
                continue;
            }
            argmax(lp)
        } else {
            labels[i].ok_or_else(|| Error::invalid(format!("source row {i} has no label")))?
        };
        if label >= lp.len() {
            return Err(Error::invalid(format!("row {i}: label {label} out of range")));
        }
        members.push(BatchMember {
            index: i,
            z: z.row(i).to_vec(),
            domain: domains[i],
            label,
            task_log_probs: lp.to_vec(),
            is_target,
        });
    }
    Ok(members)
}

/// Query set of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    pub domain: usize,
    /// Indices into `K`.
    pub members: Vec<usize>,
}

/// Per-domain query sets in ascending domain order. The target query set is
/// present only with pseudo-labeling.
pub fn build_queries(members: &[BatchMember], pl: bool) -> Vec<QuerySet> {
    let mut sets: Vec<QuerySet> = Vec::new();
    for (k, m) in members.iter().enumerate() {
        if m.is_target && !pl {
            continue;
        }
        match sets.iter_mut().find(|s| s.domain == m.domain) {
            Some(s) => s.members.push(k),
            None => sets.push(QuerySet {
                domain: m.domain,
                members: vec![k],
            }),
        }
    }
    sets.sort_by_key(|s| s.domain);
    sets
}

/// Full positive and negative sets for `query` before sampling, in `K` order.
pub fn candidate_sets(query: usize, members: &[BatchMember], strategy: Strategy) -> (Vec<usize>, Vec<usize>) {
    let q = &members[query];
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (k, m) in members.iter().enumerate() {
        if k == query {
            continue;
        }
        let domain_ok = match strategy {
            Strategy::Within => m.domain == q.domain,
            Strategy::Any => true,
            Strategy::Cross => m.domain != q.domain,
        };
        if !domain_ok {
            continue;
        }
        if m.label == q.label {
            positives.push(k);
        } else {
            negatives.push(k);
        }
    }
    (positives, negatives)
}

/// Selects at most `k1` positives and `k2` negatives.
///
/// Hard mode ranks positives by descending task cross-entropy under their own
/// label and negatives by ascending cross-entropy under the query's label,
/// breaking ties by batch row. Random mode shuffles positives then negatives
/// with `rng`.
pub fn sample_pairs(
    query: usize,
    mut positives: Vec<usize>,
    mut negatives: Vec<usize>,
    members: &[BatchMember],
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
) -> PairSets {
    match cfg.sampling {
        Sampling::Hard => {
            let y_q = members[query].label;
            let by_index = |a: &usize, b: &usize| members[*a].index.cmp(&members[*b].index);
            positives.sort_by(|a, b| {
                let (ma, mb) = (&members[*a], &members[*b]);
                mb.cross_entropy(mb.label)
                    .total_cmp(&ma.cross_entropy(ma.label))
                    .then_with(|| by_index(a, b))
            });
            negatives.sort_by(|a, b| {
                members[*a]
                    .cross_entropy(y_q)
                    .total_cmp(&members[*b].cross_entropy(y_q))
                    .then_with(|| by_index(a, b))
            });
        }
        Sampling::Random => {
            positives.shuffle(rng);
            negatives.shuffle(rng);
        }
    }
    positives.truncate(cfg.k1);
    negatives.truncate(cfg.k2);
    PairSets {
        query,
        positives,
        negatives,
    }
}

/// Candidate construction and sampling for every query, in `K` order.
pub fn build_pair_sets(members: &[BatchMember], cfg: &SamplingConfig, rng: &mut impl Rng) -> Vec<PairSets> {
    let mut out = Vec::new();
    for (k, m) in members.iter().enumerate() {
        if m.is_target && !cfg.pl {
            continue;
        }
        let (p, n) = candidate_sets(k, members, cfg.strategy);
        out.push(sample_pairs(k, p, n, members, cfg, rng));
    }
    out
}

/// Re-derives the structural guarantees of a `PairSets` against `K`.
pub fn check_pair_invariants(ps: &PairSets, members: &[BatchMember], cfg: &SamplingConfig) -> std::result::Result<(), String> {
    let q = &members[ps.query];
    if ps.positives.len() > cfg.k1 || ps.negatives.len() > cfg.k2 {
        return Err(format!("budget exceeded: {} / {}", ps.positives.len(), ps.negatives.len()));
    }
    for (set, same_label) in [(&ps.positives, true), (&ps.negatives, false)] {
        let mut seen = std::collections::HashSet::new();
        for &k in set {
            if k == ps.query {
                return Err("query appears in its own pair sets".into());
            }
            if !seen.insert(k) {
                return Err(format!("member {k} selected twice"));
            }
            let m = &members[k];
            if (m.label == q.label) != same_label {
                return Err(format!("member {k} has the wrong label relation"));
            }
            let domain_ok = match cfg.strategy {
                Strategy::Within => m.domain == q.domain,
                Strategy::Any => true,
                Strategy::Cross => m.domain != q.domain,
            };
            if !domain_ok {
                return Err(format!("member {k} violates the {} domain constraint", cfg.strategy));
            }
        }
    }
    Ok(())
}
