//! Binary checkpoint of model weights, Adam moments and batch-norm buffers.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CALDACKPT1"  u64 tensor-count
//! per tensor:   u32 name-len, name (UTF-8), u32 rank, u64 extent × rank,
//!               f64 × product(extents)
//! ```
//!
//! Weights use the names of [`ParamSet::named`]; Adam moments are stored as
//! `adam.m.<name>` and `adam.v.<name>`, the step counter as `adam.step`, and
//! running batch-norm statistics as `conv<i>.bn.running_mean` / `running_var`.
//! The architecture is recovered from the stored shapes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AdamState, ConvBlock, Linear, ModelConfig, ModelParams, Norm, ParamSet, RunningStats};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 10] = b"CALDACKPT1";

const MAX_RANK: usize = 8;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    for (name, t) in params.weights.named() {
        entries.push((name, t.clone()));
    }
    for (name, t) in params.adam.first.named() {
        entries.push((format!("adam.m.{name}"), t.clone()));
    }
    for (name, t) in params.adam.second.named() {
        entries.push((format!("adam.v.{name}"), t.clone()));
    }
    entries.push((
        "adam.step".into(),
        Tensor::new(vec![1], vec![params.adam.step as f64]).expect("scalar tensor"),
    ));
    for (i, rs) in params.running.iter().enumerate() {
        if let Some(rs) = rs {
            let mean = Tensor::from_vec(rs.mean.clone()).expect("non-empty running mean");
            let var = Tensor::from_vec(rs.var.clone()).expect("non-empty running var");
            entries.push((format!("conv{i}.bn.running_mean"), mean));
            entries.push((format!("conv{i}.bn.running_var"), var));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses raw `(name, tensor)` entries without interpreting them.
pub fn parse_entries(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u64("tensor count")?;
    let mut out = BTreeMap::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len: usize = 1;
        for _ in 0..rank {
            let e = usize::try_from(r.u64("extent")?).map_err(|_| Error::Checkpoint(format!("{name}: extent overflow")))?;
            if e == 0 {
                return Err(Error::Checkpoint(format!("{name}: zero extent")));
            }
            len = len
                .checked_mul(e)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: element count overflow")))?;
            shape.push(e);
        }
        if len > r.remaining() / 8 {
            return Err(Error::Checkpoint(format!("{name}: {len} values exceed the remaining data")));
        }
        let raw = r.take(len * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

struct Entries {
    map: BTreeMap<String, Tensor>,
}

impl Entries {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.map
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    fn take_rank(&mut self, name: &str, rank: usize) -> Result<Tensor> {
        let t = self.take(name)?;
        if t.rank() != rank {
            return Err(Error::Checkpoint(format!("{name}: expected rank {rank}, got {:?}", t.shape())));
        }
        Ok(t)
    }

    fn linear(&mut self, prefix: &str, inp: usize) -> Result<Linear> {
        let w = self.take_rank(&format!("{prefix}.w"), 2)?;
        let b = self.take_rank(&format!("{prefix}.b"), 1)?;
        if w.dim(0) != inp || b.dim(0) != w.dim(1) {
            return Err(Error::Checkpoint(format!(
                "{prefix}: weight {:?} and bias {:?} do not fit input {inp}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(Linear { w, b })
    }

    fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }
}

fn read_weights(e: &mut Entries) -> Result<(ModelConfig, ParamSet)> {
    let mut conv_blocks = Vec::new();
    let mut filters = Vec::new();
    let mut widths = Vec::new();
    let mut in_channels = None;
    let batch_norm = e.has("conv0.bn.gamma");
    let mut i = 0;
    while e.has(&format!("conv{i}.kernels")) {
        let kernels = e.take_rank(&format!("conv{i}.kernels"), 3)?;
        let bias = e.take_rank(&format!("conv{i}.bias"), 1)?;
        let (out, ch_in, width) = (kernels.dim(0), kernels.dim(1), kernels.dim(2));
        let expected_in = *filters.last().unwrap_or(&ch_in);
        if ch_in != expected_in || bias.dim(0) != out {
            return Err(Error::Checkpoint(format!("conv{i}: inconsistent shapes")));
        }
        in_channels.get_or_insert(ch_in);
        let norm = if batch_norm {
            let gamma = e.take_rank(&format!("conv{i}.bn.gamma"), 1)?;
            let beta = e.take_rank(&format!("conv{i}.bn.beta"), 1)?;
            if gamma.dim(0) != out || beta.dim(0) != out {
                return Err(Error::Checkpoint(format!("conv{i}: batch norm extent mismatch")));
            }
            Some(Norm { gamma, beta })
        } else {
            None
        };
        filters.push(out);
        widths.push(width);
        conv_blocks.push(ConvBlock { kernels, bias, norm });
        i += 1;
    }
    let in_channels = in_channels.ok_or_else(|| Error::Checkpoint("no conv blocks".into()))?;
    let feat = *filters.last().expect("at least one block");
    let task_head = e.linear("task", feat)?;
    let d0 = e.linear("domain0", feat)?;
    let d1 = e.linear("domain1", d0.w.dim(1))?;
    let contrastive_head = e.linear("contrastive", feat)?;
    let config = ModelConfig {
        in_channels,
        filters,
        widths,
        n_classes: task_head.w.dim(1),
        n_domains: d1.w.dim(1),
        domain_hidden: d0.w.dim(1),
        proj_dim: contrastive_head.w.dim(1),
        batch_norm,
    };
    Ok((
        config,
        ParamSet {
            conv_blocks,
            task_head,
            domain_head: vec![d0, d1],
            contrastive_head,
        },
    ))
}

fn read_moments(e: &mut Entries, prefix: &str, like: &ParamSet) -> Result<ParamSet> {
    let mut out = like.zeros_like();
    let names: Vec<String> = like.named().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(out.tensors_mut()) {
        let t = e.take(&format!("{prefix}.{name}"))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{prefix}.{name}: shape {:?}, parameter has {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut e = Entries {
        map: parse_entries(bytes)?,
    };
    let (config, weights) = read_weights(&mut e)?;
    config.validate().map_err(|err| Error::Checkpoint(err.to_string()))?;
    let first = read_moments(&mut e, "adam.m", &weights)?;
    let second = read_moments(&mut e, "adam.v", &weights)?;
    let step = e.take("adam.step")?;
    let step = match step.data() {
        [s] if *s >= 0.0 && s.fract() == 0.0 && *s <= u64::MAX as f64 => *s as u64,
        _ => return Err(Error::Checkpoint(format!("bad adam.step {step:?}"))),
    };
    let mut running = Vec::with_capacity(config.filters.len());
    for (i, &c) in config.filters.iter().enumerate() {
        if config.batch_norm {
            let mean = e.take_rank(&format!("conv{i}.bn.running_mean"), 1)?;
            let var = e.take_rank(&format!("conv{i}.bn.running_var"), 1)?;
            if mean.dim(0) != c || var.dim(0) != c {
                return Err(Error::Checkpoint(format!("conv{i}: running stats extent mismatch")));
            }
            running.push(Some(RunningStats {
                mean: mean.into_data(),
                var: var.into_data(),
            }));
        } else {
            running.push(None);
        }
    }
    if let Some(extra) = e.map.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(ModelParams {
        config,
        weights,
        running,
        adam: AdamState { step, first, second },
    })
}

pub fn checkpoint_save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<ModelParams> {
    from_bytes(&std::fs::read(path)?)
}
