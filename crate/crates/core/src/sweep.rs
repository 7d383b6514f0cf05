//! Gridded results with named axes and fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Scalar fields over the Cartesian product of the axes. Fields are stored
/// flattened with the last axis varying fastest; failed points hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axes: Vec<Axis>,
    #[serde(with = "nan_as_null")]
    pub values: BTreeMap<String, Vec<f64>>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl SweepResult {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes, values: BTreeMap::new(), metadata: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    pub fn insert(&mut self, name: &str, field: Vec<f64>) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::DimensionMismatch { left: self.len(), right: field.len() });
        }
        self.values.insert(name.to_string(), field);
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.values.get(name).map(Vec::as_slice)
    }

    /// Grid coordinates of flat index `k`.
    pub fn coordinates(&self, k: usize) -> Vec<f64> {
        let mut rem = k;
        let mut out = vec![0.0; self.axes.len()];
        for (i, axis) in self.axes.iter().enumerate().rev() {
            let n = axis.values.len();
            out[i] = axis.values[rem % n];
            rem /= n;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for field in self.values.values() {
            if field.len() != n {
                return Err(Error::DimensionMismatch { left: n, right: field.len() });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Tab-separated table: `#`-prefixed metadata lines, a header row, then one
    /// row per grid point with 17 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let names: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).chain(self.values.keys().map(String::as_str)).collect();
        out.push_str(&names.join("\t"));
        out.push('\n');
        for k in 0..self.len() {
            let row: Vec<String> = self
                .coordinates(k)
                .into_iter()
                .chain(self.values.values().map(|f| f[k]))
                .map(format_float)
                .collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Parses [`SweepResult::to_tsv`] output. Axis count must be supplied since
    /// the table does not distinguish axes from fields.
    pub fn from_tsv(text: &str, n_axes: usize) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some((k, v)) = meta.split_once(": ") {
                    let value = serde_json::from_str(v).unwrap_or(serde_json::Value::String(v.to_string()));
                    metadata.insert(k.to_string(), value);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(line.split('\t').map(str::to_string).collect());
                continue;
            }
            let row = line
                .split('\t')
                .map(|t| t.parse::<f64>().map_err(|e| Error::Serialization(format!("bad number `{t}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let header = header.ok_or_else(|| Error::Serialization("missing header row".into()))?;
        if n_axes > header.len() || rows.iter().any(|r| r.len() != header.len()) {
            return Err(Error::Serialization("ragged table".into()));
        }
        let mut axes = Vec::new();
        for (i, name) in header.iter().take(n_axes).enumerate() {
            let mut values: Vec<f64> = Vec::new();
            for r in &rows {
                if !values.iter().any(|v| v.to_bits() == r[i].to_bits()) {
                    values.push(r[i]);
                }
            }
            axes.push(Axis { name: name.clone(), values });
        }
        let mut result = Self { axes, values: BTreeMap::new(), metadata };
        if result.len() != rows.len() {
            return Err(Error::Serialization("rows do not form a full grid".into()));
        }
        for (i, name) in header.iter().enumerate().skip(n_axes) {
            result.values.insert(name.clone(), rows.iter().map(|r| r[i]).collect());
        }
        Ok(result)
    }
}

/// JSON has no NaN; failed points are written as `null`.
mod nan_as_null {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &BTreeMap<String, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<&String, Vec<Option<f64>>> =
            values.iter().map(|(k, v)| (k, v.iter().map(|x| if x.is_nan() { None } else { Some(*x) }).collect())).collect();
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<f64>>, D::Error> {
        let m = BTreeMap::<String, Vec<Option<f64>>>::deserialize(d)?;
        Ok(m.into_iter().map(|(k, v)| (k, v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())).collect())
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}
