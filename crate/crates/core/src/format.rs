//! Line-oriented text container shared by checkpoints and importance files.
//!
//! ```text
//! dampen-ckpt-v1
//! key value
//! array name 3
//! 1.0000000000000000e0 -2.5000000000000000e-1 3.0000000000000000e0
//! end
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! finite `f64` exactly. A document without the closing `end` line is treated
//! as truncated.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TextDoc {
    pub tag: String,
    pub fields: Vec<(String, String)>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl TextDoc {
    pub fn new(tag: &str) -> Self {
        TextDoc {
            tag: tag.to_string(),
            fields: Vec::new(),
            arrays: Vec::new(),
        }
    }

    pub fn field(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn array(&mut self, name: &str, values: &[f64]) -> &mut Self {
        self.arrays.push((name.to_string(), values.to_vec()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_slice())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.tag);
        out.push('\n');
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k} {v}");
        }
        for (name, values) in &self.arrays {
            let _ = writeln!(out, "array {name} {}", values.len());
            for line in values.chunks(VALUES_PER_LINE) {
                let row: Vec<String> = line.iter().map(|v| format_f64(*v)).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    /// Parses a document, checking the tag against `expected_tag`.
    pub fn parse(text: &str, expected_tag: &str, path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let tag = lines.next().ok_or_else(|| corrupt("empty file".into()))?.trim();
        if tag != expected_tag {
            return Err(Error::VersionMismatch {
                expected: expected_tag.to_string(),
                found: tag.to_string(),
            });
        }
        let mut doc = TextDoc::new(tag);
        let mut closed = false;
        while let Some(line) = lines.next() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "end" {
                closed = true;
                break;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if key == "array" {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| corrupt("array without a name".into()))?;
                let len: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| corrupt(format!("array {name} without a length")))?;
                let mut values = Vec::with_capacity(len);
                while values.len() < len {
                    let row = lines.next().ok_or_else(|| corrupt(format!("array {name} truncated")))?;
                    for tok in row.split_whitespace() {
                        let v: f64 = tok
                            .parse()
                            .map_err(|_| corrupt(format!("bad number {tok:?} in {name}")))?;
                        values.push(v);
                    }
                }
                if values.len() != len {
                    return Err(corrupt(format!(
                        "array {name} declares {len} values, found {}",
                        values.len()
                    )));
                }
                doc.arrays.push((name.to_string(), values));
            } else {
                doc.fields.push((key.to_string(), rest.trim().to_string()));
            }
        }
        if !closed {
            return Err(corrupt("missing end marker (truncated?)".into()));
        }
        Ok(doc)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read_from(path: &Path, expected_tag: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, expected_tag, path)
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn missing_end_is_corrupt() {
        let mut d = TextDoc::new("t-v1");
        d.array("a", &[1.0, 2.0, 3.0]);
        let text = d.render();
        let cut = &text[..text.len() - 4];
        assert!(matches!(
            TextDoc::parse(cut, "t-v1", p()),
            Err(Error::CorruptFile { .. })
        ));
        let cut = &text[..text.find("2.0").unwrap()];
        assert!(TextDoc::parse(cut, "t-v1", p()).is_err());
    }

    #[test]
    fn wrong_tag() {
        let d = TextDoc::new("t-v2");
        assert!(matches!(
            TextDoc::parse(&d.render(), "t-v1", p()),
            Err(Error::VersionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40)) {
            let mut d = TextDoc::new("t-v1");
            d.field("k", "v w").array("x", &values);
            let back = TextDoc::parse(&d.render(), "t-v1", p()).unwrap();
            let got = back.get_array("x").unwrap();
            prop_assert_eq!(got.len(), values.len());
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.get("k"), Some("v w"));
        }
    }
}
