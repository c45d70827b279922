//! Binary detection metrics, grouped breakdowns and query/key export.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::{CodeSample, Language};
use crate::model::{EncodedSample, ModelError, MulVulnModel, Prediction};
use crate::pool::LanguageAssignment;

/// The ten CWE identifiers summarized by the macro-average row.
pub const TOP10_CWES: [&str; 10] = [
    "CWE-79", "CWE-787", "CWE-89", "CWE-78", "CWE-416", "CWE-20", "CWE-125", "CWE-22", "CWE-352", "CWE-94",
];

pub const UNKNOWN_CWE: &str = "unknown";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("label {0} is not binary")]
    NonBinary(u8),
}

/// Confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Set when `tp + fn == 0`; recall is then reported as 0.
    pub recall_undefined: bool,
    /// Set when `tp + fp == 0`; precision is then reported as 0.
    pub precision_undefined: bool,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        MetricsReport {
            tp,
            fp,
            fn_,
            tn,
            recall,
            precision,
            f1: f1_score(recall, precision),
            recall_undefined,
            precision_undefined,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            (bad, 0 | 1) | (_, bad) => return Err(MetricsError::NonBinary(bad)),
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

/// Grouping metadata carried by a sample.
pub trait Grouped {
    fn language(&self) -> Language;
    fn cwe(&self) -> Option<&str>;
}

impl Grouped for CodeSample {
    fn language(&self) -> Language {
        self.language
    }
    fn cwe(&self) -> Option<&str> {
        self.cwe.as_deref()
    }
}

impl Grouped for EncodedSample {
    fn language(&self) -> Language {
        self.language
    }
    fn cwe(&self) -> Option<&str> {
        self.cwe.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Language,
    Cwe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub key: String,
    pub count: usize,
    pub metrics: MetricsReport,
}

/// Unweighted mean of per-group recall, precision and F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroAverage {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub groups: usize,
}

pub fn macro_average<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Option<MacroAverage> {
    let (mut r, mut p, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
    for m in reports {
        r += m.recall;
        p += m.precision;
        f += m.f1;
        n += 1;
    }
    (n > 0).then(|| MacroAverage {
        recall: r / n as f64,
        precision: p / n as f64,
        f1: f / n as f64,
        groups: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownReport {
    pub by: GroupBy,
    /// Language order for languages; top-10 CWEs first, then the rest
    /// sorted, with `unknown` last, for CWEs.
    pub rows: Vec<GroupRow>,
    /// Macro average over the top-10 CWEs present; `None` for languages.
    pub top10_average: Option<MacroAverage>,
}

pub fn breakdown<S: Grouped>(
    predictions: &[u8],
    labels: &[u8],
    samples: &[S],
    by: GroupBy,
) -> Result<BreakdownReport, MetricsError> {
    if predictions.len() != labels.len() || samples.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len().min(samples.len()),
        });
    }
    let mut groups: BTreeMap<(usize, String), (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for ((&p, &y), s) in predictions.iter().zip(labels).zip(samples) {
        let key = match by {
            GroupBy::Language => (s.language().index(), s.language().display_name().to_string()),
            GroupBy::Cwe => {
                let cwe = s.cwe().unwrap_or(UNKNOWN_CWE);
                let rank = match TOP10_CWES.iter().position(|&c| c == cwe) {
                    Some(i) => i,
                    None if cwe == UNKNOWN_CWE => usize::MAX,
                    None => TOP10_CWES.len(),
                };
                (rank, cwe.to_string())
            }
        };
        let entry = groups.entry(key).or_default();
        entry.0.push(p);
        entry.1.push(y);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((_, key), (p, y)) in groups {
        rows.push(GroupRow {
            key,
            count: p.len(),
            metrics: compute_metrics(&p, &y)?,
        });
    }
    let top10_average = match by {
        GroupBy::Language => None,
        GroupBy::Cwe => macro_average(
            rows.iter()
                .filter(|r| TOP10_CWES.contains(&r.key.as_str()))
                .map(|r| &r.metrics),
        ),
    };
    Ok(BreakdownReport {
        by,
        rows,
        top10_average,
    })
}

/// Predictions and summary metrics over a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub report: MetricsReport,
}

impl Evaluation {
    pub fn labels(&self) -> Vec<u8> {
        self.predictions.iter().map(|p| p.label).collect()
    }
}

pub fn evaluate(model: &MulVulnModel, samples: &[EncodedSample]) -> Result<Evaluation, ModelError> {
    let predictions = samples
        .iter()
        .map(|s| model.predict(&s.ids, s.language))
        .collect::<Result<Vec<_>, _>>()?;
    let pred: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let gold: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let report = compute_metrics(&pred, &gold).expect("binary labels of equal length");
    Ok(Evaluation { predictions, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub sample_id: String,
    pub language: Language,
    pub selected: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRow {
    pub index: usize,
    pub name: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingExport {
    /// Sorted by sample id.
    pub queries: Vec<QueryRow>,
    pub keys: Vec<KeyRow>,
}

impl EmbeddingExport {
    /// Fraction of queries whose unrestricted choice lies in their own
    /// language's assigned indices. `None` without queries.
    pub fn selection_agreement(&self, assignment: &LanguageAssignment) -> Option<f64> {
        if self.queries.is_empty() {
            return None;
        }
        let hits = self
            .queries
            .iter()
            .filter(|q| assignment.allowed(q.language).contains(&q.selected))
            .count();
        Some(hits as f64 / self.queries.len() as f64)
    }
}

pub fn export_embeddings(model: &MulVulnModel, samples: &[EncodedSample]) -> Result<EmbeddingExport, ModelError> {
    let mut order: Vec<&EncodedSample> = samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut queries = Vec::with_capacity(order.len());
    for s in order {
        let (vector, selected) = model.query_and_selection(&s.ids)?;
        queries.push(QueryRow {
            sample_id: s.id.clone(),
            language: s.language,
            selected,
            vector,
        });
    }
    let pool = model.pool();
    let keys = (0..pool.size())
        .map(|i| KeyRow {
            index: i,
            name: model.params().name(pool.key(i)).to_string(),
            vector: model.params().get(pool.key(i)).data.clone(),
        })
        .collect();
    Ok(EmbeddingExport { queries, keys })
}
