use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{AdamConfig, ModelConfig};
use crate::pairing::{Sampling, SamplingConfig, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Source-only training of F and C.
    NoAdaptation,
    /// Adversarial alignment without the contrastive term.
    AdversaryOnly,
    Calda,
}

/// A training variant, written as e.g. `calda-xs-h`, `calda-any-r-pl`,
/// `codats-ws`, `no-adaptation` or `calda-xs-h-dg-noadv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub strategy: Strategy,
    pub sampling: Sampling,
    /// Pseudo-labeled target rows join the contrastive sets.
    pub pl: bool,
    /// Weak supervision from target label proportions.
    pub ws: bool,
    /// Domain generalization: no target data during training.
    pub dg: bool,
    /// Adversary trained but its gradient never reaches the feature extractor.
    pub no_adversary: bool,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            strategy: Strategy::Cross,
            sampling: Sampling::Hard,
            pl: false,
            ws: false,
            dg: false,
            no_adversary: false,
        }
    }

    pub fn calda(strategy: Strategy, sampling: Sampling) -> Self {
        Self {
            strategy,
            sampling,
            ..Self::new(MethodKind::Calda)
        }
    }

    pub fn uses_adversary(&self) -> bool {
        self.kind != MethodKind::NoAdaptation
    }

    pub fn uses_contrastive(&self) -> bool {
        self.kind == MethodKind::Calda
    }

    pub fn validate(&self) -> Result<()> {
        if self.dg && (self.ws || self.pl) {
            return Err(Error::invalid(format!("{self}: domain generalization uses no target data")));
        }
        if self.pl && self.kind != MethodKind::Calda {
            return Err(Error::invalid(format!("{self}: pseudo-labeling applies to the contrastive loss only")));
        }
        if self.no_adversary && self.kind == MethodKind::NoAdaptation {
            return Err(Error::invalid(format!("{self}: no adversary to remove")));
        }
        Ok(())
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MethodKind::NoAdaptation => f.write_str("no-adaptation")?,
            MethodKind::AdversaryOnly => f.write_str("codats")?,
            MethodKind::Calda => {
                let s = match self.strategy {
                    Strategy::Within => "in",
                    Strategy::Any => "any",
                    Strategy::Cross => "xs",
                };
                let m = match self.sampling {
                    Sampling::Hard => "h",
                    Sampling::Random => "r",
                };
                write!(f, "calda-{s}-{m}")?;
            }
        }
        for (on, tag) in [(self.pl, "-pl"), (self.ws, "-ws"), (self.dg, "-dg"), (self.no_adversary, "-noadv")] {
            if on {
                f.write_str(tag)?;
            }
        }
        Ok(())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::invalid(format!("unknown method {s:?}"));
        let (mut spec, rest) = if let Some(rest) = lower.strip_prefix("no-adaptation") {
            (MethodSpec::new(MethodKind::NoAdaptation), rest)
        } else if let Some(rest) = lower.strip_prefix("adversary-only") {
            (MethodSpec::new(MethodKind::AdversaryOnly), rest)
        } else if let Some(rest) = lower.strip_prefix("codats") {
            (MethodSpec::new(MethodKind::AdversaryOnly), rest)
        } else if let Some(rest) = lower.strip_prefix("calda-") {
            let mut parts = rest.splitn(3, '-');
            let strategy: Strategy = parts.next().ok_or_else(bad)?.parse()?;
            let sampling: Sampling = parts.next().ok_or_else(bad)?.parse()?;
            let tail = parts.next().unwrap_or("");
            return parse_flags(MethodSpec::calda(strategy, sampling), tail, s);
        } else {
            return Err(bad());
        };
        spec = parse_flags(spec, rest, s)?;
        Ok(spec)
    }
}

fn parse_flags(mut spec: MethodSpec, rest: &str, original: &str) -> Result<MethodSpec> {
    for flag in rest.split('-').filter(|f| !f.is_empty()) {
        match flag {
            "pl" => spec.pl = true,
            "ws" => spec.ws = true,
            "dg" => spec.dg = true,
            "noadv" => spec.no_adversary = true,
            other => return Err(Error::invalid(format!("unknown flag {other:?} in method {original:?}"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

impl TryFrom<String> for MethodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> Self {
        m.to_string()
    }
}

/// Which validation data drives best-model selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Union of the source validation splits.
    #[default]
    SourceValid,
    /// Target validation split, for oracle studies only.
    TargetValid,
}

fn d_method() -> MethodSpec {
    MethodSpec::calda(Strategy::Cross, Sampling::Hard)
}
fn d_n_sources() -> usize {
    2
}
fn d_iterations() -> usize {
    3000
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    1e-3
}
fn d_lambda_c() -> f64 {
    10.0
}
fn d_tau() -> f64 {
    0.1
}
fn d_k1() -> usize {
    5
}
fn d_r() -> usize {
    2
}
fn d_eval_every() -> usize {
    100
}

/// One training trial, stored as flat JSON. Exactly one of `dataset` and
/// `synthetic` names the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "d_method")]
    pub method: MethodSpec,
    #[serde(default = "d_n_sources")]
    pub n_sources: usize,
    #[serde(default)]
    pub target: usize,
    /// Explicit source domains; drawn with `source_set_seed` when absent.
    #[serde(default)]
    pub sources: Option<Vec<usize>>,
    #[serde(default)]
    pub source_set_seed: u64,
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_lambda_c")]
    pub lambda_c: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_k1")]
    pub k1: usize,
    #[serde(default = "d_r")]
    pub r: usize,
    #[serde(default)]
    pub ws_noise_budget: f64,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub selection: Selection,
    /// Conv filters per block; the default architecture when absent.
    #[serde(default)]
    pub filters: Option<Vec<usize>>,
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub domain_hidden: Option<usize>,
    #[serde(default)]
    pub proj_dim: Option<usize>,
    #[serde(default)]
    pub batch_norm: bool,
    /// Where to write the best checkpoint, if anywhere.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Keep the per-iteration loss breakdown in the result.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub const PAPER_ITERATIONS: usize = 30_000;
    pub const PAPER_BATCH: usize = 128;

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn paper_scale(mut self) -> Self {
        self.iterations = Self::PAPER_ITERATIONS;
        self.batch_size = Self::PAPER_BATCH;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::invalid("set only one of dataset and synthetic")),
            (None, None) => return Err(Error::invalid("set dataset or synthetic")),
            _ => {}
        }
        self.method.validate()?;
        if self.n_sources < 1 {
            return Err(Error::invalid("need at least one source domain"));
        }
        if let Some(s) = &self.sources {
            if s.len() != self.n_sources {
                return Err(Error::invalid(format!("{} sources listed, n_sources is {}", s.len(), self.n_sources)));
            }
            if s.contains(&self.target) {
                return Err(Error::invalid("the target cannot also be a source"));
            }
        }
        if self.iterations == 0 || self.eval_every == 0 {
            return Err(Error::invalid("iterations and eval_every must be positive"));
        }
        let domains = self.n_sources + usize::from(!self.method.dg);
        let per_domain_min = if self.method.ws { 2 * self.n_sources.max(1) } else { domains };
        if self.batch_size < per_domain_min {
            return Err(Error::invalid(format!(
                "batch size {} cannot give every domain a row",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0) || !(self.lambda_c >= 0.0) {
            return Err(Error::invalid("lr must be positive and lambda_c non-negative"));
        }
        if !(0.0..=1.0).contains(&self.ws_noise_budget) {
            return Err(Error::invalid("ws_noise_budget must lie in [0, 1]"));
        }
        self.sampling().validate()
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            strategy: self.method.strategy,
            sampling: self.method.sampling,
            k1: self.k1,
            k2: self.r * self.k1,
            pl: self.method.pl,
            tau: self.tau,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn model_config(&self, in_channels: usize, n_classes: usize) -> ModelConfig {
        let n_domains = self.n_sources + usize::from(!self.method.dg);
        let mut cfg = ModelConfig::new(in_channels, n_classes, n_domains);
        if let Some(f) = &self.filters {
            cfg.filters = f.clone();
        }
        if let Some(w) = &self.widths {
            cfg.widths = w.clone();
        }
        if let Some(h) = self.domain_hidden {
            cfg.domain_hidden = h;
        }
        if let Some(p) = self.proj_dim {
            cfg.proj_dim = p;
        }
        cfg.batch_norm = self.batch_norm;
        cfg
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for name in [
            "no-adaptation",
            "codats",
            "codats-ws",
            "codats-dg",
            "calda-xs-h",
            "calda-in-r",
            "calda-any-r-pl",
            "calda-xs-h-ws",
            "calda-xs-h-dg",
            "calda-xs-h-noadv",
        ] {
            let m: MethodSpec = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        let m: MethodSpec = "adversary-only".parse().unwrap();
        assert_eq!(m.kind, MethodKind::AdversaryOnly);
        let m: MethodSpec = "CALDA-Any-R".parse().unwrap();
        assert_eq!((m.strategy, m.sampling), (Strategy::Any, Sampling::Random));
    }

    #[test]
    fn bad_methods_are_rejected() {
        for name in ["", "calda", "calda-xs", "calda-up-h", "calda-xs-q", "codats-zz", "calda-xs-h-dg-ws", "codats-pl", "no-adaptation-noadv"] {
            assert!(name.parse::<MethodSpec>().is_err(), "{name}");
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"synthetic":{"scenario":"gmm2"},"method":"calda-any-r","target":3}"#).unwrap();
        assert_eq!(cfg.iterations, 3000);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.sampling().k2, 10);
        assert_eq!(cfg.clone().paper_scale().iterations, 30000);
        assert!(ExperimentConfig::from_json(r#"{"method":"codats"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"synthetic":{"scenario":"sw"},"bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"synthetic":{"scenario":"sw"},"sources":[0],"n_sources":1}"#).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig {
            synthetic: Some(SyntheticSpec::new(crate::data::Scenario::Sw)),
            ..ExperimentConfig::default()
        };
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.model_seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn dg_drops_target_from_domain_head() {
        let cfg = ExperimentConfig {
            method: "calda-xs-h-dg".parse().unwrap(),
            n_sources: 3,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.model_config(2, 3).n_domains, 3);
        let cfg = ExperimentConfig {
            n_sources: 3,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.model_config(2, 3).n_domains, 4);
    }
}
