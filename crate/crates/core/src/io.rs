//! Dataset interchange formats. All files are UTF-8, either JSON-lines or
//! tab-separated:
//!
//! - `nodes.jsonl`: `{"id","kind","features":[..],"exposure"?,"intention_id"?}`
//! - `interactions.tsv`: `query_id ⇥ service_id ⇥ clicks ⇥ impressions`
//! - `correlations.tsv`: `query_id ⇥ service_id ⇥ type` (city|brand|category)
//! - `intentions.jsonl`: `{"id","parent_id":null|"..."}`
//! - `labels.tsv` / `train.tsv` / `val.tsv` / `test.tsv`:
//!   `query_id ⇥ service_id ⇥ label` (0|1)

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Query,
    Service,
}

/// Correlation edge flavor; priority order (city > brand > category) is used
/// when duplicate records disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationType {
    City,
    Brand,
    Category,
}

impl fmt::Display for CorrelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationType::City => write!(f, "city"),
            CorrelationType::Brand => write!(f, "brand"),
            CorrelationType::Category => write!(f, "category"),
        }
    }
}

impl FromStr for CorrelationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "city" => Ok(CorrelationType::City),
            "brand" => Ok(CorrelationType::Brand),
            "category" => Ok(CorrelationType::Category),
            other => Err(Error::Data(format!("unknown correlation type {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub kind: NodeKind,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intention_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub query_id: String,
    pub service_id: String,
    pub clicks: u64,
    pub impressions: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrelationRecord {
    pub query_id: String,
    pub service_id: String,
    pub ctype: CorrelationType,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntentionRecord {
    pub id: String,
    pub parent_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRecord {
    pub query_id: String,
    pub service_id: String,
    pub label: u8,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn data_err(path: &Path, line: usize, msg: impl fmt::Display) -> Error {
    Error::Data(format!("{}:{line}: {msg}", path.display()))
}

pub fn load_nodes(path: &Path) -> Result<Vec<NodeRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| serde_json::from_str(&l).map_err(|e| data_err(path, n, e)))
        .collect()
}

pub fn load_intentions(path: &Path) -> Result<Vec<IntentionRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| serde_json::from_str(&l).map_err(|e| data_err(path, n, e)))
        .collect()
}

fn tsv_fields(path: &Path, n: usize, line: &str, want: usize) -> Result<Vec<String>> {
    let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
    if fields.len() != want {
        return Err(data_err(path, n, format!("expected {want} tab-separated fields, got {}", fields.len())));
    }
    Ok(fields)
}

pub fn load_interactions(path: &Path) -> Result<Vec<InteractionRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let f = tsv_fields(path, n, &l, 4)?;
            Ok(InteractionRecord {
                query_id: f[0].clone(),
                service_id: f[1].clone(),
                clicks: f[2].parse().map_err(|e| data_err(path, n, format!("clicks: {e}")))?,
                impressions: f[3]
                    .parse()
                    .map_err(|e| data_err(path, n, format!("impressions: {e}")))?,
            })
        })
        .collect()
}

pub fn load_correlations(path: &Path) -> Result<Vec<CorrelationRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let f = tsv_fields(path, n, &l, 3)?;
            Ok(CorrelationRecord {
                query_id: f[0].clone(),
                service_id: f[1].clone(),
                ctype: f[2].parse().map_err(|e| data_err(path, n, e))?,
            })
        })
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let f = tsv_fields(path, n, &l, 3)?;
            let label: u8 = f[2].parse().map_err(|e| data_err(path, n, format!("label: {e}")))?;
            if label > 1 {
                return Err(data_err(path, n, format!("label must be 0 or 1, got {label}")));
            }
            Ok(LabelRecord { query_id: f[0].clone(), service_id: f[1].clone(), label })
        })
        .collect()
}

fn open_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_nodes(path: &Path, records: &[NodeRecord]) -> Result<()> {
    let mut w = open_writer(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(w.flush()?)
}

pub fn write_intentions(path: &Path, records: &[IntentionRecord]) -> Result<()> {
    let mut w = open_writer(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(w.flush()?)
}

pub fn write_interactions(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut w = open_writer(path)?;
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.query_id, r.service_id, r.clicks, r.impressions)?;
    }
    Ok(w.flush()?)
}

pub fn write_correlations(path: &Path, records: &[CorrelationRecord]) -> Result<()> {
    let mut w = open_writer(path)?;
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.query_id, r.service_id, r.ctype)?;
    }
    Ok(w.flush()?)
}

pub fn write_labels(path: &Path, records: &[LabelRecord]) -> Result<()> {
    let mut w = open_writer(path)?;
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.query_id, r.service_id, r.label)?;
    }
    Ok(w.flush()?)
}
