use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Rows per domain in one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub target: usize,
    /// One entry per source, in source order.
    pub sources: Vec<usize>,
}

fn split_evenly(total: usize, parts: usize) -> Vec<usize> {
    let mut out = vec![total / parts; parts];
    out[0] += total % parts;
    out
}

/// Divides `batch_size` rows among domains.
///
/// With weak supervision half the batch goes to the target and the rest is
/// shared by the sources; otherwise the target counts as one more domain in
/// an even split; without target data only the sources share it. Remainders
/// go to the first listed domain (the target, or the first source).
pub fn assemble_batch(batch_size: usize, n_sources: usize, ws: bool, dg: bool) -> Result<BatchPlan> {
    if n_sources == 0 {
        return Err(Error::invalid("no source domains"));
    }
    let plan = if dg {
        BatchPlan {
            target: 0,
            sources: split_evenly(batch_size, n_sources),
        }
    } else if ws {
        let target = batch_size.div_ceil(2);
        BatchPlan {
            target,
            sources: split_evenly(batch_size - target, n_sources),
        }
    } else {
        let mut all = split_evenly(batch_size, n_sources + 1);
        let target = all.remove(0);
        BatchPlan { target, sources: all }
    };
    if plan.sources.contains(&0) || (!dg && plan.target == 0) {
        return Err(Error::invalid(format!(
            "batch size {batch_size} leaves a domain without rows"
        )));
    }
    Ok(plan)
}

/// Endless shuffled pass over one training split.
#[derive(Debug, Clone)]
pub struct DomainSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl DomainSampler {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("empty training split"));
        }
        Ok(Self {
            order: (0..len).collect(),
            cursor: len,
        })
    }

    pub fn take(&mut self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}
