//! File formats and canonical JSON output.
//!
//! Canonical JSON has sorted object keys, two-space indentation and every
//! float written with 17 significant digits, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::admissibility::{BoundedSequence, SpaceTag};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::system::{make_generator, GeneratorSpec, OperatorSequence, Provenance};

/// System spec file: either a generator descriptor or explicit matrices
/// (`matrices[i]` is `A_{i+1}` in row-major order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Vec<f64>>>,
}

impl SystemFile {
    pub fn build(&self) -> Result<OperatorSequence> {
        let d = self.dimension;
        match (&self.generator, &self.matrices) {
            (Some(g), None) => {
                let horizon = self
                    .horizon
                    .ok_or_else(|| Error::Format("generator-backed systems need `horizon`".into()))?;
                make_generator(g, d, horizon)
            }
            (None, Some(rows)) => {
                let matrices = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        if r.len() != d * d {
                            return Err(Error::Format(format!(
                                "matrices[{i}] has {} entries, expected {}",
                                r.len(),
                                d * d
                            )));
                        }
                        Ok(Matrix::from_row_slice(d, d, r))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let seq = OperatorSequence::from_matrices(d, matrices)?;
                if let Some(h) = self.horizon {
                    if h != seq.horizon() {
                        return Err(Error::Format(format!(
                            "horizon {h} disagrees with {} matrices (horizon {})",
                            rows.len(),
                            seq.horizon()
                        )));
                    }
                }
                Ok(seq)
            }
            _ => Err(Error::Format("system file needs exactly one of `generator` or `matrices`".into())),
        }
    }

    pub fn from_sequence(seq: &OperatorSequence) -> Self {
        match seq.provenance() {
            Provenance::Generator(g) => SystemFile {
                dimension: seq.dimension(),
                horizon: Some(seq.horizon()),
                generator: Some(g.clone()),
                matrices: None,
            },
            Provenance::Explicit => SystemFile {
                dimension: seq.dimension(),
                horizon: Some(seq.horizon()),
                generator: None,
                matrices: Some(seq.matrices().iter().map(row_major).collect()),
            },
        }
    }
}

pub fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn parse_system(text: &str) -> Result<OperatorSequence> {
    let file: SystemFile = serde_json::from_str(text)?;
    file.build()
}

pub fn read_system(path: &Path) -> Result<OperatorSequence> {
    parse_system(&std::fs::read_to_string(path)?)
}

/// Sequence file `{"entries": [[...], ...], "tag": "Y0" | "YZ" | "Y"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFile {
    pub entries: Vec<Vec<f64>>,
    pub tag: SpaceTag,
}

impl SequenceFile {
    pub fn build(&self) -> Result<BoundedSequence> {
        let entries = self.entries.iter().map(|e| Vector::from_column_slice(e)).collect();
        BoundedSequence::new(entries, self.tag)
    }

    pub fn from_sequence(x: &BoundedSequence) -> Self {
        SequenceFile {
            entries: x.entries().iter().map(|v| v.iter().copied().collect()).collect(),
            tag: x.tag(),
        }
    }
}

pub fn read_sequence(path: &Path) -> Result<BoundedSequence> {
    let file: SequenceFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.build()
}

/// Formats a float with 17 significant digits; non-finite values become `null`.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return "0.0".into();
    }
    format!("{x:.16e}")
}

/// Canonical pretty-printed JSON.
pub fn to_canonical_string(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // flat numeric arrays stay on one line
            if items.iter().all(|i| i.is_number() || i.is_null()) {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, depth + 1);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, depth + 1);
                write_value(out, item, depth + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[k.as_str()], depth + 1);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

/// Writes canonical JSON to `path`.
pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, to_canonical_string(v))?;
    Ok(())
}

/// `f64` to JSON, mapping non-finite values to `null`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else {
        Value::Null
    }
}

pub fn matrix_json(m: &Matrix) -> Value {
    Value::Array(row_major(m).into_iter().map(num).collect())
}

pub fn object(pairs: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    for (k, v) in pairs {
        map.insert(k.to_string(), v);
    }
    Value::Object(map)
}
