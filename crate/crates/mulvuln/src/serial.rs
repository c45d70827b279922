//! JSON mirrors of core training records.

use mulvuln_core::eval::MetricsReport;
use mulvuln_core::train::{EpochRecord, TrainHistory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub recall_undefined: bool,
    pub precision_undefined: bool,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(m: &MetricsReport) -> Self {
        MetricsJson {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            recall_undefined: m.recall_undefined,
            precision_undefined: m.precision_undefined,
        }
    }
}

impl From<&MetricsJson> for MetricsReport {
    fn from(m: &MetricsJson) -> Self {
        MetricsReport {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            recall_undefined: m.recall_undefined,
            precision_undefined: m.precision_undefined,
        }
    }
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochJson {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    pub val: MetricsJson,
    pub selection_counts: Vec<Vec<usize>>,
    pub touched: Vec<bool>,
}

impl From<&EpochRecord> for EpochJson {
    fn from(r: &EpochRecord) -> Self {
        EpochJson {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_ce: r.train_ce,
            val: (&r.val).into(),
            selection_counts: r.selection_counts.clone(),
            touched: r.touched.clone(),
        }
    }
}

impl From<&EpochJson> for EpochRecord {
    fn from(r: &EpochJson) -> Self {
        EpochRecord {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_ce: r.train_ce,
            val: (&r.val).into(),
            selection_counts: r.selection_counts.clone(),
            touched: r.touched.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryJson {
    pub initial_loss: f64,
    pub initial_ce: f64,
    pub epochs: Vec<EpochJson>,
}

impl From<&TrainHistory> for HistoryJson {
    fn from(h: &TrainHistory) -> Self {
        HistoryJson {
            initial_loss: h.initial_loss,
            initial_ce: h.initial_ce,
            epochs: h.epochs.iter().map(Into::into).collect(),
        }
    }
}

impl From<&HistoryJson> for TrainHistory {
    fn from(h: &HistoryJson) -> Self {
        TrainHistory {
            initial_loss: h.initial_loss,
            initial_ce: h.initial_ce,
            epochs: h.epochs.iter().map(Into::into).collect(),
        }
    }
}
