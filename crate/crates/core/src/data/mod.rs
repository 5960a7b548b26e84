//! Datasets of labeled multichannel windows grouped by domain.

mod io;
mod noise;
mod synthetic;

pub use io::{load_dataset, parse_manifest, parse_split_csv, save_dataset, write_split_csv, Manifest, SignalLayout, WindowLen};
pub use noise::inject_proportion_noise;
pub use synthetic::{generate, generate_gmm, generate_sw, sw_frequency_means, Scenario, Shift, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabelProportions;

/// One window, stored channel-major: `values[c * time + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub values: Vec<f64>,
    pub channels: usize,
    pub label: Option<usize>,
    pub domain: usize,
}

impl LabeledWindow {
    pub fn new(values: Vec<f64>, channels: usize, label: Option<usize>, domain: usize) -> Result<Self> {
        if channels == 0 || values.is_empty() || values.len() % channels != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form {channels} channels",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window values".into()));
        }
        Ok(Self {
            values,
            channels,
            label,
            domain,
        })
    }

    pub fn time_len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let t = self.time_len();
        &self.values[c * t..(c + 1) * t]
    }
}

/// Per-channel train-split statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub id: usize,
    pub train: Vec<LabeledWindow>,
    pub valid: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    /// Set by [`normalize`].
    pub norm_stats: Option<NormStats>,
}

impl DomainDataset {
    pub fn splits(&self) -> [(&'static str, &[LabeledWindow]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }

    /// Class frequencies of the training split.
    pub fn proportions(&self, n_classes: usize) -> Result<LabelProportions> {
        label_proportions(&self.train, n_classes)
    }
}

/// A collection of domains sharing channels and classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub n_channels: usize,
    pub window_len: WindowLen,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub layout: SignalLayout,
    pub domains: Vec<DomainDataset>,
}

impl Dataset {
    pub fn domain(&self, id: usize) -> Result<&DomainDataset> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::invalid(format!("dataset {} has no domain {id}", self.name)))
    }

    pub fn domain_ids(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.id).collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.name.clone(),
            n_channels: self.n_channels,
            window_len: self.window_len,
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
            domains: self.domain_ids(),
            layout: self.layout,
        }
    }

    /// Normalizes every domain with its own training statistics.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for d in &mut out.domains {
            *d = normalize(d)?;
        }
        Ok(out)
    }
}

fn channel_stats(windows: &[LabeledWindow]) -> Result<NormStats> {
    let channels = windows
        .first()
        .ok_or_else(|| Error::invalid("cannot normalize with an empty training split"))?
        .channels;
    let mut sum = vec![0.0; channels];
    let mut count = 0usize;
    for w in windows {
        if w.channels != channels {
            return Err(Error::shape("normalize", format!("{} vs {channels} channels", w.channels)));
        }
        for (c, s) in sum.iter_mut().enumerate() {
            *s += w.channel(c).iter().sum::<f64>();
        }
        count += w.time_len();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; channels];
    for w in windows {
        for (c, s) in sq.iter_mut().enumerate() {
            *s += w.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let std = sq
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let sd = (s / count as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                log::warn!("channel {c} is constant in the training split; using std 1");
                1.0
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

fn apply_stats(windows: &[LabeledWindow], stats: &NormStats) -> Result<Vec<LabeledWindow>> {
    windows
        .iter()
        .map(|w| {
            if w.channels != stats.mean.len() {
                return Err(Error::shape("normalize", format!("{} vs {} channels", w.channels, stats.mean.len())));
            }
            let t = w.time_len();
            let values = w
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let c = i / t;
                    (v - stats.mean[c]) / stats.std[c]
                })
                .collect();
            Ok(LabeledWindow { values, ..w.clone() })
        })
        .collect()
}

/// Zero-mean unit-variance per channel using training-split statistics only.
pub fn normalize(dataset: &DomainDataset) -> Result<DomainDataset> {
    let stats = channel_stats(&dataset.train)?;
    Ok(DomainDataset {
        id: dataset.id,
        train: apply_stats(&dataset.train, &stats)?,
        valid: apply_stats(&dataset.valid, &stats)?,
        test: apply_stats(&dataset.test, &stats)?,
        norm_stats: Some(stats),
    })
}

/// Empirical class frequencies of a fully labeled split.
pub fn label_proportions(split: &[LabeledWindow], n_classes: usize) -> Result<LabelProportions> {
    let mut counts = vec![0.0; n_classes];
    for (i, w) in split.iter().enumerate() {
        let y = w
            .label
            .ok_or_else(|| Error::invalid(format!("window {i} is unlabeled")))?;
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::invalid(format!("window {i}: label {y} outside 0..{n_classes}")))? += 1.0;
    }
    LabelProportions::from_counts(&counts)
}

/// 80/20 train/test, then 80/20 train/valid, after a seeded shuffle.
pub fn split_windows(
    mut windows: Vec<LabeledWindow>,
    rng: &mut impl Rng,
) -> (Vec<LabeledWindow>, Vec<LabeledWindow>, Vec<LabeledWindow>) {
    windows.shuffle(rng);
    let n_test = windows.len() / 5;
    let test = windows.split_off(windows.len() - n_test);
    let n_valid = windows.len() / 5;
    let valid = windows.split_off(windows.len() - n_valid);
    (windows, valid, test)
}
