//! QA evaluation: dataset ingestion, containment accuracy, ROUGE-L, EM recall
//! and gold-position sweeps.
//!
//! Answer normalization lowercases, collapses whitespace runs to one space and
//! trims. Punctuation is kept.

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::text::{segment_words, Document};

/// One QA example with its retrieved documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(default)]
    pub id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub documents: Vec<Document>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_pairs: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_answer: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Parse JSONL records; blank lines are skipped, unknown fields ignored.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.documents.is_empty() {
            return Err(DatasetError::Line {
                line: line_no,
                message: "record has no documents".into(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(std::io::BufReader::new(file))
}

pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_any<'a>(normalized_prediction: &str, answers: impl IntoIterator<Item = &'a String>) -> bool {
    answers.into_iter().any(|a| {
        let a = normalize_answer(a);
        !a.is_empty() && normalized_prediction.contains(&a)
    })
}

/// 1.0 if any non-empty normalized answer occurs in the normalized prediction.
pub fn accuracy_contains(prediction: &str, answers: &[String]) -> f64 {
    if contains_any(&normalize_answer(prediction), answers) {
        1.0
    } else {
        0.0
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn lowered_words(s: &str) -> Vec<String> {
    segment_words(s).into_iter().map(|w| w.surface.to_lowercase()).collect()
}

/// Word-level ROUGE-L F1 (balanced, beta = 1).
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let p = lowered_words(prediction);
    let r = lowered_words(reference);
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    // 2PR / (P + R) with P = lcs/|p| and R = lcs/|r| reduces to this
    let lcs = lcs_len(&p, &r);
    2.0 * lcs as f64 / (p.len() + r.len()) as f64
}

/// Fraction of answer sets with at least one member found in the prediction.
pub fn em_recall(prediction: &str, qa_pairs: &[Vec<String>]) -> f64 {
    if qa_pairs.is_empty() {
        return 0.0;
    }
    let pred = normalize_answer(prediction);
    let hits = qa_pairs.iter().filter(|set| contains_any(&pred, set.iter())).count();
    hits as f64 / qa_pairs.len() as f64
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SweepError {
    #[error("record {id} has {count} gold documents, expected exactly one")]
    GoldCount { id: String, count: usize },
    #[error("position {position} outside 1..={len}")]
    BadPosition { position: usize, len: usize },
}

/// Move the single gold document to 1-based rank `position`, keeping the
/// relative order of the others.
pub fn position_sweep(record: &DatasetRecord, position: usize) -> Result<DatasetRecord, SweepError> {
    let golds: Vec<usize> = record
        .documents
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_gold == Some(true))
        .map(|(i, _)| i)
        .collect();
    if golds.len() != 1 {
        return Err(SweepError::GoldCount {
            id: record.id.clone(),
            count: golds.len(),
        });
    }
    let n = record.documents.len();
    if position == 0 || position > n {
        return Err(SweepError::BadPosition { position, len: n });
    }
    let mut docs = record.documents.clone();
    let gold = docs.remove(golds[0]);
    docs.insert(position - 1, gold);
    Ok(DatasetRecord {
        documents: docs,
        ..record.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    RougeL,
    EmRecall,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::RougeL, Metric::EmRecall];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::RougeL => "rouge_l",
            Metric::EmRecall => "em_recall",
        }
    }

    /// Score one prediction, or `None` when the record lacks the gold field.
    pub fn score(self, prediction: &str, gold: &DatasetRecord) -> Option<f64> {
        match self {
            Metric::Accuracy => (!gold.answers.is_empty()).then(|| accuracy_contains(prediction, &gold.answers)),
            Metric::RougeL => gold.long_answer.as_deref().map(|r| rouge_l(prediction, r)),
            Metric::EmRecall => gold
                .qa_pairs
                .as_deref()
                .filter(|q| !q.is_empty())
                .map(|q| em_recall(prediction, q)),
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "accuracy" => Ok(Metric::Accuracy),
            "rouge_l" | "rouge-l" => Ok(Metric::RougeL),
            "em_recall" | "em" => Ok(Metric::EmRecall),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("{predictions} predictions for {golds} gold records")]
    CountMismatch { predictions: usize, golds: usize },
    #[error("prediction {index} is for record {found:?} but gold record is {expected:?}")]
    IdMismatch {
        index: usize,
        expected: String,
        found: String,
    },
}

/// A prediction for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(default)]
    pub id: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub metrics: Vec<Metric>,
    pub n: usize,
    pub means: Vec<Option<f64>>,
    pub per_record: Vec<(String, Vec<Option<f64>>)>,
}

impl MetricsReport {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.metrics.iter().position(|&m| m == metric).and_then(|i| self.means[i])
    }

    /// `{"n", <metric>: mean|null ..., "per_record": [{"id", <metric>: ...}]}`
    /// with only the requested metric keys.
    pub fn to_json(&self) -> Value {
        let mut top = Map::new();
        top.insert("n".into(), json!(self.n));
        for (m, v) in self.metrics.iter().zip(&self.means) {
            top.insert(m.key().into(), json!(v));
        }
        let rows: Vec<Value> = self
            .per_record
            .iter()
            .map(|(id, vals)| {
                let mut row = Map::new();
                row.insert("id".into(), json!(id));
                for (m, v) in self.metrics.iter().zip(vals) {
                    row.insert(m.key().into(), json!(v));
                }
                Value::Object(row)
            })
            .collect();
        top.insert("per_record".into(), Value::Array(rows));
        Value::Object(top)
    }
}

/// Score predictions against gold records, pairing them by position. Ids are
/// checked when both sides carry one.
pub fn evaluate(
    predictions: &[Prediction],
    golds: &[DatasetRecord],
    metrics: &[Metric],
) -> Result<MetricsReport, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::CountMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let mut per_record = Vec::with_capacity(golds.len());
    for (index, (p, g)) in predictions.iter().zip(golds).enumerate() {
        if !p.id.is_empty() && !g.id.is_empty() && p.id != g.id {
            return Err(EvalError::IdMismatch {
                index,
                expected: g.id.clone(),
                found: p.id.clone(),
            });
        }
        per_record.push((g.id.clone(), metrics.iter().map(|m| m.score(&p.prediction, g)).collect::<Vec<_>>()));
    }
    let means = (0..metrics.len())
        .map(|k| {
            let vals: Vec<f64> = per_record.iter().filter_map(|(_, v)| v[k]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Ok(MetricsReport {
        metrics: metrics.to_vec(),
        n: golds.len(),
        means,
        per_record,
    })
}
