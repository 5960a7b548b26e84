//! Sine-wave (SW) and Gaussian-mixture (GMM) synthetic domains.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{split_windows, Dataset, DomainDataset, LabeledWindow, SignalLayout, WindowLen};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Sw,
    Gmm1,
    Gmm2,
    Gmm3,
}

impl Scenario {
    pub fn channels(self, layout: SignalLayout) -> usize {
        match (self, layout) {
            (Scenario::Sw, SignalLayout::Components) => 2,
            (Scenario::Sw, SignalLayout::Summed) => 1,
            _ => 9,
        }
    }

    fn components(self) -> usize {
        match self {
            Scenario::Sw | Scenario::Gmm1 => 1,
            Scenario::Gmm2 => 2,
            Scenario::Gmm3 => 3,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Sw => "sw",
            Scenario::Gmm1 => "gmm1",
            Scenario::Gmm2 => "gmm2",
            Scenario::Gmm3 => "gmm3",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sw" => Ok(Scenario::Sw),
            "gmm1" | "1gmm" => Ok(Scenario::Gmm1),
            "gmm2" | "2gmm" => Ok(Scenario::Gmm2),
            "gmm3" | "3gmm" => Ok(Scenario::Gmm3),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

/// How domains differ from one another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    None,
    /// Every class of a domain moves by the same offset.
    InterTranslate,
    /// Each class of a domain moves by its own offset.
    IntraTranslate,
    /// All class means of a domain rotate together about the common center.
    InterRotate,
    /// Class means rotate in alternating directions.
    IntraRotate,
}

impl FromStr for Shift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(Shift::None),
            "inter_translate" => Ok(Shift::InterTranslate),
            "intra_translate" => Ok(Shift::IntraTranslate),
            "inter_rotate" => Ok(Shift::InterRotate),
            "intra_rotate" => Ok(Shift::IntraRotate),
            other => Err(Error::invalid(format!("unknown shift {other:?}"))),
        }
    }
}

fn default_domains() -> usize {
    12
}
fn default_classes() -> usize {
    3
}
fn default_window() -> usize {
    50
}
fn default_rate() -> f64 {
    250.0
}
fn default_shift() -> Shift {
    Shift::IntraTranslate
}
fn default_magnitude() -> f64 {
    1.0
}
fn default_windows_per_class() -> usize {
    100
}
fn default_class_separation() -> f64 {
    1.0
}
fn default_frequency_std() -> f64 {
    2.0
}

/// Generator parameters. SW magnitudes are in Hz per domain step for
/// translations and in units of 10° per domain step for rotations; GMM
/// magnitudes scale per-domain offsets of 0.5 component standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub scenario: Scenario,
    #[serde(default = "default_domains")]
    pub n_domains: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_shift")]
    pub shift: Shift,
    #[serde(default = "default_magnitude")]
    pub shift_magnitude: f64,
    #[serde(default = "default_windows_per_class")]
    pub windows_per_class: usize,
    /// Spread of GMM class base means, in component standard deviations.
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    /// Per-window spread of SW frequencies around the class mean, Hz.
    #[serde(default = "default_frequency_std")]
    pub frequency_std: f64,
    #[serde(default)]
    pub layout: SignalLayout,
    /// Class weights for selected domains; other domains are balanced.
    #[serde(default)]
    pub class_weights: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            n_domains: default_domains(),
            n_classes: default_classes(),
            window_len: default_window(),
            sample_rate_hz: default_rate(),
            shift: default_shift(),
            shift_magnitude: default_magnitude(),
            windows_per_class: default_windows_per_class(),
            class_separation: default_class_separation(),
            frequency_std: default_frequency_std(),
            layout: SignalLayout::Components,
            class_weights: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0 || self.n_classes == 0 || self.window_len == 0 || self.windows_per_class == 0 {
            return Err(Error::invalid("domains, classes, window length and windows per class must be positive"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !self.shift_magnitude.is_finite() || self.shift_magnitude < 0.0 {
            return Err(Error::invalid("shift magnitude must be non-negative"));
        }
        if self.scenario != Scenario::Sw && self.layout == SignalLayout::Summed {
            return Err(Error::invalid("summed layout applies to the SW scenario only"));
        }
        for (d, w) in &self.class_weights {
            if w.len() != self.n_classes || w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid(format!("bad class weights for domain {d}: {w:?}")));
            }
        }
        Ok(())
    }

    fn class_counts(&self, domain: usize) -> Vec<usize> {
        match self.class_weights.get(&domain) {
            None => vec![self.windows_per_class; self.n_classes],
            Some(w) => {
                let total = (self.windows_per_class * self.n_classes) as f64;
                let sum: f64 = w.iter().sum();
                w.iter().map(|v| ((v / sum) * total).round() as usize).collect()
            }
        }
    }
}

fn domain_rng(seed: u64, domain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain as u64 + 1);
    rng
}

fn finish(spec: &SyntheticSpec, domains: Vec<DomainDataset>) -> Dataset {
    Dataset {
        name: format!("{}-{}", spec.scenario, shift_name(spec.shift)),
        n_channels: spec.scenario.channels(spec.layout),
        window_len: WindowLen::Fixed(spec.window_len),
        n_classes: spec.n_classes,
        class_names: (0..spec.n_classes).map(|c| format!("class{c}")).collect(),
        layout: spec.layout,
        domains,
    }
}

fn shift_name(s: Shift) -> &'static str {
    match s {
        Shift::None => "none",
        Shift::InterTranslate => "inter_translate",
        Shift::IntraTranslate => "intra_translate",
        Shift::InterRotate => "inter_rotate",
        Shift::IntraRotate => "intra_rotate",
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    match spec.scenario {
        Scenario::Sw => generate_sw(spec),
        _ => generate_gmm(spec),
    }
}

const SW_CENTER: (f64, f64) = (30.0, 30.0);
const SW_RADIUS: f64 = 10.0;

/// Class-mean frequency pairs of one domain.
pub fn sw_frequency_means(spec: &SyntheticSpec, domain: usize) -> Vec<(f64, f64)> {
    let l = spec.n_classes as f64;
    let step = domain as f64 * spec.shift_magnitude;
    (0..spec.n_classes)
        .map(|c| {
            let mut angle = 2.0 * PI * c as f64 / l + PI / 4.0;
            let mut center = SW_CENTER;
            match spec.shift {
                Shift::None => {}
                Shift::InterTranslate => {
                    center.0 += step;
                    center.1 += step;
                }
                Shift::IntraTranslate => {
                    // class-specific direction
                    let dir = 2.0 * PI * (c as f64 + 0.5) / l;
                    center.0 += step * dir.cos();
                    center.1 += step * dir.sin();
                }
                Shift::InterRotate => angle += step * PI / 18.0,
                Shift::IntraRotate => angle += step * PI / 18.0 * if c % 2 == 0 { 1.0 } else { -1.0 },
            }
            (center.0 + SW_RADIUS * angle.cos(), center.1 + SW_RADIUS * angle.sin())
        })
        .collect()
}

/// `x[t] = sin(2π f t / rate)`.
fn sine(f: f64, rate: f64, len: usize) -> impl Iterator<Item = f64> {
    (0..len).map(move |t| (2.0 * PI * f * t as f64 / rate).sin())
}

pub fn generate_sw(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.scenario != Scenario::Sw {
        return Err(Error::invalid("generate_sw needs the SW scenario"));
    }
    let nyquist = spec.sample_rate_hz / 2.0;
    let jitter = Normal::new(0.0, spec.frequency_std).map_err(|e| Error::invalid(e.to_string()))?;
    let channels = spec.scenario.channels(spec.layout);
    let mut domains = Vec::with_capacity(spec.n_domains);
    for d in 0..spec.n_domains {
        let mut rng = domain_rng(spec.seed, d);
        let means = sw_frequency_means(spec, d);
        let mut windows = Vec::new();
        for (c, &count) in spec.class_counts(d).iter().enumerate() {
            for _ in 0..count {
                let f1 = means[c].0 + jitter.sample(&mut rng);
                let f2 = means[c].1 + jitter.sample(&mut rng);
                for f in [f1, f2] {
                    if f.abs() >= nyquist {
                        return Err(Error::invalid(format!(
                            "domain {d} class {c}: frequency {f:.2} Hz reaches the Nyquist limit {nyquist} Hz"
                        )));
                    }
                }
                let values: Vec<f64> = match spec.layout {
                    SignalLayout::Components => sine(f1, spec.sample_rate_hz, spec.window_len)
                        .chain(sine(f2, spec.sample_rate_hz, spec.window_len))
                        .collect(),
                    SignalLayout::Summed => sine(f1, spec.sample_rate_hz, spec.window_len)
                        .zip(sine(f2, spec.sample_rate_hz, spec.window_len))
                        .map(|(a, b)| a + b)
                        .collect(),
                };
                windows.push(LabeledWindow::new(values, channels, Some(c), d)?);
            }
        }
        let (train, valid, test) = split_windows(windows, &mut rng);
        domains.push(DomainDataset {
            id: d,
            train,
            valid,
            test,
            norm_stats: None,
        });
    }
    Ok(finish(spec, domains))
}

/// Mixture parameters for one (domain, class, channel).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mixture {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Mixture {
    #[cfg(test)]
    pub fn mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let m = rng.random_range(0..self.means.len());
        let z: f64 = StandardNormal.sample(rng);
        self.means[m] + self.stds[m] * z
    }
}

pub(crate) const GMM_CHANNELS: usize = 9;

/// Mixture table indexed `[domain][class][channel]`.
pub(crate) fn gmm_mixtures(spec: &SyntheticSpec) -> Result<Vec<Vec<Vec<Mixture>>>> {
    let k = spec.scenario.components();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // base[class][channel]
    let mut base = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let mut per_channel = Vec::with_capacity(GMM_CHANNELS);
        for _ in 0..GMM_CHANNELS {
            let means = (0..k)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.class_separation * z
                })
                .collect();
            let stds = (0..k).map(|_| rng.random_range(0.5..1.0)).collect();
            per_channel.push(Mixture { means, stds });
        }
        base.push(per_channel);
    }

    let mut out = Vec::with_capacity(spec.n_domains);
    for d in 0..spec.n_domains {
        let mut drng = domain_rng(spec.seed ^ 0x5eed, d);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..GMM_CHANNELS)
                .map(|_| (0..k).map(|_| StandardNormal.sample(&mut *rng)).collect())
                .collect()
        };
        let common = draw(&mut drng);
        let mut per_class = Vec::with_capacity(spec.n_classes);
        for class_base in &base {
            let own = draw(&mut drng);
            let mut per_channel = Vec::with_capacity(GMM_CHANNELS);
            for (ch, mix) in class_base.iter().enumerate() {
                let offsets = match spec.shift {
                    Shift::None => vec![0.0; k],
                    Shift::InterTranslate | Shift::InterRotate => common[ch].clone(),
                    Shift::IntraTranslate | Shift::IntraRotate => own[ch].clone(),
                };
                let scale: f64 = StandardNormal.sample(&mut drng);
                let spread = if spec.shift == Shift::None { 0.0 } else { 0.1 * spec.shift_magnitude * scale };
                let stds: Vec<f64> = mix.stds.iter().map(|s| s * spread.exp()).collect();
                if stds.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::invalid(format!("domain {d}: nonpositive mixture std")));
                }
                let means = mix
                    .means
                    .iter()
                    .zip(&mix.stds)
                    .zip(&offsets)
                    .map(|((m, s), o)| m + spec.shift_magnitude * 0.5 * s * o)
                    .collect();
                per_channel.push(Mixture { means, stds });
            }
            per_class.push(per_channel);
        }
        out.push(per_class);
    }
    Ok(out)
}

pub fn generate_gmm(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.scenario == Scenario::Sw {
        return Err(Error::invalid("generate_gmm needs a GMM scenario"));
    }
    let mixtures = gmm_mixtures(spec)?;
    let mut domains = Vec::with_capacity(spec.n_domains);
    for (d, per_class) in mixtures.iter().enumerate() {
        let mut rng = domain_rng(spec.seed, d);
        let mut windows = Vec::new();
        for (c, &count) in spec.class_counts(d).iter().enumerate() {
            for _ in 0..count {
                let mut values = Vec::with_capacity(GMM_CHANNELS * spec.window_len);
                for mix in &per_class[c] {
                    values.extend((0..spec.window_len).map(|_| mix.sample(&mut rng)));
                }
                windows.push(LabeledWindow::new(values, GMM_CHANNELS, Some(c), d)?);
            }
        }
        let (train, valid, test) = split_windows(windows, &mut rng);
        domains.push(DomainDataset {
            id: d,
            train,
            valid,
            test,
            norm_stats: None,
        });
    }
    Ok(finish(spec, domains))
}
