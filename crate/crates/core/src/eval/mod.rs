//! Accuracy, per-class precision/recall/F1 and confusion matrices, plus the
//! question-mark ablation and the single-word analysis built on them.
//!
//! Metrics with a zero denominator are `None` rather than 0.

mod analysis;
mod report;

use crate::corpus::{Dialog, Utterance};
use crate::error::{Error, Result};
use crate::model::{Model, Prediction, PreparedDialog};
use crate::tensor::Scalar;

pub use analysis::{
    ablation_question_mark, compare_models, is_single_word, single_word_report, AblationOptions,
};
pub use report::{AblationReport, AblationRow, ComparisonReport, SingleWordReport, SingleWordRow};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Gold examples of the class.
    pub support: usize,
}

/// Confusion matrix (gold rows, predicted columns) and what derives from it.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn empty(labels: &[String]) -> Self {
        EvalReport {
            labels: labels.to_vec(),
            confusion: vec![vec![0; labels.len()]; labels.len()],
        }
    }

    pub fn from_pairs(
        labels: &[String],
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut report = Self::empty(labels);
        for (gold, pred) in pairs {
            if gold >= labels.len() || pred >= labels.len() {
                return Err(Error::invalid(format!(
                    "label index {} outside {} classes",
                    gold.max(pred),
                    labels.len()
                )));
            }
            report.confusion[gold][pred] += 1;
        }
        Ok(report)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Number of examples.
    pub fn n(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.num_classes()).map(|k| self.confusion[k][k]).sum()
    }

    /// `trace / n`; `None` when there are no examples.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.n();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }

    pub fn row_sum(&self, gold: usize) -> usize {
        self.confusion[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> usize {
        self.confusion.iter().map(|row| row[pred]).sum()
    }

    pub fn class(&self, k: usize) -> ClassMetrics {
        let tp = self.confusion[k][k] as f64;
        let (rows, cols) = (self.row_sum(k), self.col_sum(k));
        let precision = (cols > 0).then(|| tp / cols as f64);
        let recall = (rows > 0).then(|| tp / rows as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: rows,
        }
    }

    pub fn class_by_name(&self, name: &str) -> Option<ClassMetrics> {
        self.labels
            .iter()
            .position(|l| l == name)
            .map(|k| self.class(k))
    }

    /// Plain-text table: accuracy, per-class metrics and the confusion
    /// matrix.
    pub fn to_text(&self, model: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!(
            "model {model}: accuracy {} over {} examples\n\n",
            self.accuracy()
                .map_or_else(|| "-".to_string(), |a| format!("{:.1}%", 100.0 * a)),
            self.n()
        );
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>7}\n",
            "class", "P", "R", "F1", "support"
        ));
        for k in 0..self.num_classes() {
            let m = self.class(k);
            out.push_str(&format!(
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>7}\n",
                self.labels[k],
                fmt(m.precision),
                fmt(m.recall),
                fmt(m.f1),
                m.support
            ));
        }
        out.push_str("\nconfusion (rows gold, columns predicted)\n");
        out.push_str(&format!("{:<width$}", ""));
        for l in &self.labels {
            out.push_str(&format!("  {l:>6}"));
        }
        out.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("{:<width$}", self.labels[k]));
            for c in row {
                out.push_str(&format!("  {c:>6}"));
            }
            out.push('\n');
        }
        out
    }

    /// Tab-separated `metric, class, model, value` records; absent metrics
    /// are written as `NA`.
    pub fn to_tsv(&self, model: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::new();
        out.push_str(&format!(
            "accuracy\tall\t{model}\t{}\n",
            fmt(self.accuracy())
        ));
        out.push_str(&format!("n\tall\t{model}\t{}\n", self.n()));
        for k in 0..self.num_classes() {
            let m = self.class(k);
            let l = &self.labels[k];
            out.push_str(&format!("precision\t{l}\t{model}\t{}\n", fmt(m.precision)));
            out.push_str(&format!("recall\t{l}\t{model}\t{}\n", fmt(m.recall)));
            out.push_str(&format!("f1\t{l}\t{model}\t{}\n", fmt(m.f1)));
            out.push_str(&format!("support\t{l}\t{model}\t{}\n", m.support));
        }
        for (g, row) in self.confusion.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                out.push_str(&format!(
                    "confusion\t{}->{}\t{model}\t{c}\n",
                    self.labels[g], self.labels[p]
                ));
            }
        }
        out
    }
}

/// An utterance with the model's prediction for it.
#[derive(Clone, Debug)]
pub struct Scored<'c> {
    pub utterance: &'c Utterance,
    pub prediction: Prediction,
}

/// Predicts every utterance of `dialogs` (in dialog order, eval mode) with
/// up to `n` preceding utterances as context. `prepared` must be the
/// prepared form of `dialogs`.
pub fn score<'c, T: Scalar>(
    model: &Model<T>,
    dialogs: &'c [Dialog],
    prepared: &[PreparedDialog<T>],
    n: usize,
) -> Result<Vec<Scored<'c>>> {
    if dialogs.len() != prepared.len() {
        return Err(Error::invalid(
            "prepared features do not match the corpus split",
        ));
    }
    let mut out = Vec::new();
    for (dialog, prep) in dialogs.iter().zip(prepared) {
        if dialog.utterances.len() != prep.utterances.len() {
            return Err(Error::invalid(format!(
                "prepared features do not match dialog {}",
                dialog.id
            )));
        }
        for (utterance, window) in dialog.utterances.iter().zip(prep.windows(n)) {
            out.push(Scored {
                utterance,
                prediction: model.predict(window)?,
            });
        }
    }
    Ok(out)
}

/// Report over every scored utterance.
pub fn evaluate(labels: &[String], scored: &[Scored<'_>]) -> Result<EvalReport> {
    subset_report(labels, scored, |_| true)
}

/// Report over the scored utterances matching `filter`.
pub fn subset_report(
    labels: &[String],
    scored: &[Scored<'_>],
    filter: impl Fn(&Utterance) -> bool,
) -> Result<EvalReport> {
    EvalReport::from_pairs(
        labels,
        scored
            .iter()
            .filter(|s| filter(s.utterance))
            .map(|s| (s.utterance.label, s.prediction.label)),
    )
}

/// Report of a predictor that always answers `label`.
pub fn constant_predictor<'a>(
    labels: &[String],
    utterances: impl IntoIterator<Item = &'a Utterance>,
    label: usize,
) -> Result<EvalReport> {
    EvalReport::from_pairs(labels, utterances.into_iter().map(|u| (u.label, label)))
}
