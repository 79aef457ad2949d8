//! Side-by-side report tables in plain-text and tab-separated form.

use crate::model::ModelKind;

use super::{ClassMetrics, EvalReport};

fn long_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Lexical => "Lexical",
        ModelKind::Acoustic => "Acoustic",
        ModelKind::LexicoAcoustic => "Lexico-acoustic",
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

fn two(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

fn raw(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

/// Accuracy of several models on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub split: String,
    pub entries: Vec<(ModelKind, EvalReport)>,
}

impl ComparisonReport {
    pub fn accuracy(&self, kind: ModelKind) -> Option<f64> {
        self.entries
            .iter()
            .find(|(k, _)| *k == kind)
            .and_then(|(_, r)| r.accuracy())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("Accuracy (%) on the {} split\n", self.split);
        out.push_str(&format!("{:<16} {:>8} {:>6}\n", "Model", "Accuracy", "n"));
        for (kind, r) in &self.entries {
            out.push_str(&format!(
                "{:<16} {:>8} {:>6}\n",
                long_name(*kind),
                pct(r.accuracy()),
                r.n()
            ));
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(k, r)| r.to_tsv(k.name()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub kind: ModelKind,
    /// Overall test accuracy, original transcripts.
    pub overall_with: Option<f64>,
    /// Overall test accuracy after retraining without question marks.
    pub overall_without: Option<f64>,
    /// Accuracy on the question subset, original transcripts.
    pub question_with: Option<f64>,
    /// Accuracy on the same utterances after retraining without question
    /// marks.
    pub question_without: Option<f64>,
}

impl AblationRow {
    /// Drop in question-subset accuracy, in points.
    pub fn question_drop_points(&self) -> Option<f64> {
        Some(100.0 * (self.question_with? - self.question_without?))
    }
}

/// Effect of removing question marks from the transcripts.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub question_label: String,
    /// Test utterances labelled as questions whose original transcript has
    /// a question mark.
    pub question_n: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, kind: ModelKind) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "Accuracy (%) of {} utterances with a question mark (n = {})\n",
            self.question_label, self.question_n
        );
        out.push_str(&format!(
            "{:<16} {:>9} {:>12}\n",
            "Model", "With '?'", "'?' removed"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>9} {:>12}\n",
                long_name(r.kind),
                pct(r.question_with),
                pct(r.question_without)
            ));
        }
        out.push_str("\nOverall accuracy (%)\n");
        out.push_str(&format!(
            "{:<16} {:>9} {:>12}\n",
            "Model", "With '?'", "'?' removed"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>9} {:>12}\n",
                long_name(r.kind),
                pct(r.overall_with),
                pct(r.overall_without)
            ));
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let q = &self.question_label;
        let mut out = String::new();
        for r in &self.rows {
            let m = r.kind.name();
            out.push_str(&format!(
                "question_accuracy_with\t{q}\t{m}\t{}\n",
                raw(r.question_with)
            ));
            out.push_str(&format!(
                "question_accuracy_without\t{q}\t{m}\t{}\n",
                raw(r.question_without)
            ));
            out.push_str(&format!(
                "accuracy_with\tall\t{m}\t{}\n",
                raw(r.overall_with)
            ));
            out.push_str(&format!(
                "accuracy_without\tall\t{m}\t{}\n",
                raw(r.overall_without)
            ));
            out.push_str(&format!("question_n\t{q}\t{m}\t{}\n", self.question_n));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleWordRow {
    pub word: String,
    pub class: String,
    pub kind: ModelKind,
    pub metrics: ClassMetrics,
}

/// Precision, recall and F1 of each class on the utterances consisting of
/// exactly one given word, per model.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleWordReport {
    pub words: Vec<String>,
    pub classes: Vec<String>,
    /// Number of matching utterances per word.
    pub counts: Vec<usize>,
    pub rows: Vec<SingleWordRow>,
}

impl SingleWordReport {
    pub fn get(&self, word: &str, class: &str, kind: ModelKind) -> Option<&ClassMetrics> {
        self.rows
            .iter()
            .find(|r| r.word == word && r.class == class && r.kind == kind)
            .map(|r| &r.metrics)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, word) in self.words.iter().enumerate() {
            let head = format!("DA-{}", capitalize(word));
            out.push_str(&format!(
                "{:<14} {:<16} {:>5} {:>5} {:>5}   (n = {})\n",
                head, "Model", "P", "R", "F1", self.counts[w]
            ));
            for class in &self.classes {
                let mut first = true;
                for r in self
                    .rows
                    .iter()
                    .filter(|r| &r.word == word && &r.class == class)
                {
                    let label = if first { class.as_str() } else { "" };
                    first = false;
                    out.push_str(&format!(
                        "{:<14} {:<16} {:>5} {:>5} {:>5}\n",
                        label,
                        long_name(r.kind),
                        two(r.metrics.precision),
                        two(r.metrics.recall),
                        two(r.metrics.f1)
                    ));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let class = format!("{}-{}", r.class, capitalize(&r.word));
            let m = r.kind.name();
            out.push_str(&format!(
                "precision\t{class}\t{m}\t{}\n",
                raw(r.metrics.precision)
            ));
            out.push_str(&format!(
                "recall\t{class}\t{m}\t{}\n",
                raw(r.metrics.recall)
            ));
            out.push_str(&format!("f1\t{class}\t{m}\t{}\n", raw(r.metrics.f1)));
            out.push_str(&format!("support\t{class}\t{m}\t{}\n", r.metrics.support));
        }
        out
    }
}
