//! Dataset directories: `manifest.json` plus one CSV per domain and split.
//!
//! Each CSV row holds the label (−1 when unlabeled) followed by the window
//! flattened channel-major. Fixed-length datasets use the header
//! `label,ch0_t0,...,ch{K-1}_t{H-1}`; variable-length datasets use
//! `label,values` and infer each row's length from its field count.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Dataset, DomainDataset, LabeledWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowLen {
    Fixed(usize),
    Variable,
}

impl Serialize for WindowLen {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WindowLen::Fixed(n) => s.serialize_u64(*n as u64),
            WindowLen::Variable => s.serialize_str("variable"),
        }
    }
}

impl<'de> Deserialize<'de> for WindowLen {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = WindowLen;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"variable\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<WindowLen, E> {
                match usize::try_from(v) {
                    Ok(n) if n > 0 => Ok(WindowLen::Fixed(n)),
                    _ => Err(E::custom(format!("window_len must be positive, got {v}"))),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<WindowLen, E> {
                u64::try_from(v)
                    .map_err(|_| E::custom(format!("window_len must be positive, got {v}")))
                    .and_then(|v| self.visit_u64(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<WindowLen, E> {
                if v == "variable" {
                    Ok(WindowLen::Variable)
                } else {
                    Err(E::custom(format!("unknown window_len {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// How SW frequency pairs map onto channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalLayout {
    /// One channel per component wave (or the native channels for other data).
    #[default]
    Components,
    /// A single channel holding the summed signal.
    Summed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub n_channels: usize,
    pub window_len: WindowLen,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub domains: Vec<usize>,
    #[serde(default)]
    pub layout: SignalLayout,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(Error::Format("manifest: n_channels must be positive".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Format("manifest: n_classes must be positive".into()));
        }
        if self.class_names.len() != self.n_classes {
            return Err(Error::Format(format!(
                "manifest: {} class names for {} classes",
                self.class_names.len(),
                self.n_classes
            )));
        }
        let mut seen = self.domains.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.domains.len() {
            return Err(Error::Format("manifest: duplicate domain ids".into()));
        }
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["label".to_string()];
        match self.window_len {
            WindowLen::Fixed(t) => {
                for c in 0..self.n_channels {
                    for i in 0..t {
                        h.push(format!("ch{c}_t{i}"));
                    }
                }
            }
            WindowLen::Variable => h.push("values".into()),
        }
        h
    }

    /// Compares without materializing the expected header, whose length the
    /// manifest alone does not bound.
    fn header_matches(&self, header: &[String]) -> bool {
        match self.window_len {
            WindowLen::Variable => header == ["label", "values"],
            WindowLen::Fixed(t) => {
                if self.n_channels.checked_mul(t).and_then(|n| n.checked_add(1)) != Some(header.len()) {
                    return false;
                }
                header[0] == "label"
                    && header[1..]
                        .iter()
                        .enumerate()
                        .all(|(j, h)| *h == format!("ch{}_t{}", j / t, j % t))
            }
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    m.validate()?;
    Ok(m)
}

/// Parses one split file. `domain` is attached to every window; `context`
/// names the file in error messages.
pub fn parse_split_csv(bytes: &[u8], manifest: &Manifest, domain: usize, context: &str) -> Result<Vec<LabeledWindow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{context}: header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if !manifest.header_matches(&header) {
        let preview: Vec<_> = header.iter().take(4).collect();
        return Err(Error::Format(format!("{context}: unexpected header starting {preview:?}")));
    }
    let k = manifest.n_channels;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Format(format!("{context}: row {row}: {e}")))?;
        let mut fields = record.iter();
        let label_text = fields
            .next()
            .ok_or_else(|| Error::Format(format!("{context}: row {row}: empty row")))?;
        let label = match label_text.trim().parse::<i64>() {
            Ok(-1) => None,
            Ok(y) if y >= 0 && (y as u64) < manifest.n_classes as u64 => Some(y as usize),
            Ok(y) => {
                return Err(Error::Format(format!(
                    "{context}: row {row}: label {y} outside 0..{}",
                    manifest.n_classes
                )))
            }
            Err(_) => return Err(Error::Format(format!("{context}: row {row}: bad label {label_text:?}"))),
        };
        let values = fields
            .enumerate()
            .map(|(j, f)| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Format(format!("{context}: row {row}, field {}: bad value {f:?}", j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let ok = match manifest.window_len {
            WindowLen::Fixed(t) => values.len() == k * t,
            WindowLen::Variable => !values.is_empty() && values.len() % k == 0,
        };
        if !ok {
            return Err(Error::Format(format!(
                "{context}: row {row}: {} values do not match {k} channels and window length {:?}",
                values.len(),
                manifest.window_len
            )));
        }
        out.push(LabeledWindow::new(values, k, label, domain).map_err(|e| Error::Format(format!("{context}: row {row}: {e}")))?);
    }
    Ok(out)
}

pub fn write_split_csv(windows: &[LabeledWindow], manifest: &Manifest) -> Result<String> {
    let mut s = manifest.header().join(",");
    s.push('\n');
    for (i, w) in windows.iter().enumerate() {
        if w.channels != manifest.n_channels {
            return Err(Error::Format(format!("window {i}: {} channels, manifest has {}", w.channels, manifest.n_channels)));
        }
        if let WindowLen::Fixed(t) = manifest.window_len {
            if w.time_len() != t {
                return Err(Error::Format(format!("window {i}: length {}, manifest has {t}", w.time_len())));
            }
        }
        match w.label {
            Some(y) => write!(s, "{y}").expect("write to string"),
            None => s.push_str("-1"),
        }
        for v in &w.values {
            write!(s, ",{v:?}").expect("write to string");
        }
        s.push('\n');
    }
    Ok(s)
}

fn split_path(dir: &Path, domain: usize, split: &str) -> std::path::PathBuf {
    dir.join(format!("d{domain}_{split}.csv"))
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = dataset.manifest();
    manifest.validate()?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for d in &dataset.domains {
        for (split, windows) in d.splits() {
            std::fs::write(split_path(dir, d.id, split), write_split_csv(windows, &manifest)?)?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = parse_manifest(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut domains = Vec::with_capacity(manifest.domains.len());
    for &id in &manifest.domains {
        let load = |split: &str| -> Result<Vec<LabeledWindow>> {
            let path = split_path(dir, id, split);
            let bytes = std::fs::read(&path)?;
            parse_split_csv(&bytes, &manifest, id, &path.display().to_string())
        };
        domains.push(DomainDataset {
            id,
            train: load("train")?,
            valid: load("valid")?,
            test: load("test")?,
            norm_stats: None,
        });
    }
    Ok(Dataset {
        name: manifest.name,
        n_channels: manifest.n_channels,
        window_len: manifest.window_len,
        n_classes: manifest.n_classes,
        class_names: manifest.class_names,
        layout: manifest.layout,
        domains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Scenario, SyntheticSpec};

    fn manifest(window_len: WindowLen) -> Manifest {
        Manifest {
            name: "toy".into(),
            n_channels: 2,
            window_len,
            n_classes: 2,
            class_names: vec!["a".into(), "b".into()],
            domains: vec![0],
            layout: SignalLayout::Components,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let spec = SyntheticSpec {
            n_domains: 3,
            windows_per_class: 6,
            ..SyntheticSpec::new(Scenario::Gmm2)
        };
        let ds = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn unlabeled_rows_and_header() {
        let m = manifest(WindowLen::Fixed(2));
        let w = vec![
            LabeledWindow::new(vec![0.1, 0.2, 0.3, 1e-300], 2, None, 0).unwrap(),
            LabeledWindow::new(vec![1.0, -2.0, 3.5, 4.0], 2, Some(1), 0).unwrap(),
        ];
        let text = write_split_csv(&w, &m).unwrap();
        assert!(text.starts_with("label,ch0_t0,ch0_t1,ch1_t0,ch1_t1\n-1,"));
        assert!(!text.contains('\r'));
        assert_eq!(parse_split_csv(text.as_bytes(), &m, 0, "x").unwrap(), w);
    }

    #[test]
    fn channel_mismatch_names_row() {
        let m = Manifest {
            n_channels: 9,
            ..manifest(WindowLen::Fixed(1))
        };
        let mut text = m.header().join(",");
        text.push_str("\n0,1,2,3,4,5,6,7,8,9\n1,1,2,3,4,5,6,7,8\n");
        let err = parse_split_csv(text.as_bytes(), &m, 0, "d0_train.csv").unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn variable_length_rows() {
        let m = manifest(WindowLen::Variable);
        let text = "label,values\n0,1,2,3,4\n1,1,2,3,4,5,6\n";
        let w = parse_split_csv(text.as_bytes(), &m, 0, "x").unwrap();
        assert_eq!((w[0].time_len(), w[1].time_len()), (2, 3));
        let fixed = manifest(WindowLen::Fixed(2));
        assert!(parse_split_csv(b"label,values\n0,1,2,3,4\n", &fixed, 0, "x").is_err());
        assert!(parse_split_csv(b"label,values\n0,1,2,3\n", &m, 0, "x").is_err());
    }

    #[test]
    fn bad_labels_and_values() {
        let m = manifest(WindowLen::Variable);
        assert!(parse_split_csv(b"label,values\n2,1,2\n", &m, 0, "x").is_err());
        assert!(parse_split_csv(b"label,values\n-2,1,2\n", &m, 0, "x").is_err());
        assert!(parse_split_csv(b"label,values\nx,1,2\n", &m, 0, "x").is_err());
        assert!(parse_split_csv(b"label,values\n0,1,nan\n", &m, 0, "x").is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest(
            r#"{"name":"n","n_channels":9,"window_len":"variable","n_classes":1,"class_names":["x"],"domains":[0,3]}"#,
        )
        .unwrap();
        assert_eq!(m.window_len, WindowLen::Variable);
        assert_eq!(m.layout, SignalLayout::Components);
        let m = parse_manifest(
            r#"{"name":"n","n_channels":2,"window_len":50,"n_classes":1,"class_names":["x"],"domains":[0],"layout":"summed"}"#,
        )
        .unwrap();
        assert_eq!(m.window_len, WindowLen::Fixed(50));
        for bad in [
            r#"{"name":"n","n_channels":0,"window_len":5,"n_classes":1,"class_names":["x"],"domains":[0]}"#,
            r#"{"name":"n","n_channels":1,"window_len":0,"n_classes":1,"class_names":["x"],"domains":[0]}"#,
            r#"{"name":"n","n_channels":1,"window_len":"fixed","n_classes":1,"class_names":["x"],"domains":[0]}"#,
            r#"{"name":"n","n_channels":1,"window_len":5,"n_classes":2,"class_names":["x"],"domains":[0]}"#,
            r#"{"name":"n","n_channels":1,"window_len":5,"n_classes":1,"class_names":["x"],"domains":[0,0]}"#,
        ] {
            assert!(parse_manifest(bad).is_err(), "{bad}");
        }
    }
}
