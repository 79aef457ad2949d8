//! Experiments that train and compare models: the model comparison, the
//! question-mark ablation and the single-word analysis.

use std::path::Path;

use crate::corpus::{Corpus, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::tensor::Scalar;
use crate::text::strip_question_marks;
use crate::training::{
    prepare_corpus, train_on_corpus, EpochLog, PreparedCorpus, TrainConfig, TrainOutcome,
};

use super::report::{
    AblationReport, AblationRow, ComparisonReport, SingleWordReport, SingleWordRow,
};
use super::{evaluate, score, subset_report, EvalReport, Scored};

/// Trains each of `kinds` on `data` with the same config and evaluates on
/// `split`. Returns the report and the trained models in `kinds` order.
pub fn compare_models<T: Scalar>(
    corpus: &Corpus,
    data: &PreparedCorpus<T>,
    kinds: &[ModelKind],
    cfg: &TrainConfig,
    split: Split,
    embeddings: Option<&Path>,
    on_epoch: &mut dyn FnMut(ModelKind, &EpochLog),
) -> Result<(ComparisonReport, Vec<TrainOutcome<T>>)> {
    let mut entries = Vec::with_capacity(kinds.len());
    let mut outcomes = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let outcome = train_on_corpus(kind, data, cfg, embeddings, |l| on_epoch(kind, l))?;
        let scored = score(
            &outcome.model,
            corpus.split(split),
            data.split(split),
            cfg.context_len,
        )?;
        entries.push((kind, evaluate(&corpus.labels, &scored)?));
        outcomes.push(outcome);
    }
    Ok((
        ComparisonReport {
            split: split.name().to_string(),
            entries,
        },
        outcomes,
    ))
}

pub struct AblationOptions<'a> {
    /// Index of the question class.
    pub question_label: usize,
    pub embeddings: Option<&'a Path>,
}

fn has_question_mark(u: &Utterance) -> bool {
    u.tokens.iter().any(|t| t == "?")
}

/// Trains LM and LAM on the original transcripts and, with the same seeds,
/// on transcripts with every `?` removed; reports test accuracy overall and
/// on question-labelled utterances whose original transcript had a `?`.
pub fn ablation_question_mark<T: Scalar>(
    corpus: &Corpus,
    cfg: &TrainConfig,
    options: &AblationOptions<'_>,
    on_epoch: &mut dyn FnMut(&str, ModelKind, &EpochLog),
) -> Result<AblationReport> {
    let q = options.question_label;
    if q >= corpus.num_classes() {
        return Err(Error::invalid(format!(
            "question label index {q} out of range"
        )));
    }
    let mask: Vec<bool> = corpus
        .utterances(Split::Test)
        .map(|u| u.label == q && has_question_mark(u))
        .collect();
    let original: PreparedCorpus<T> = prepare_corpus(corpus, true, cfg, None)?;
    let stripped_corpus = strip_question_marks(corpus);
    let stripped = original.with_text_from(&stripped_corpus, cfg)?;
    let kinds = [ModelKind::Lexical, ModelKind::LexicoAcoustic];
    let mut rows = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut accuracies = Vec::with_capacity(2);
        for (tag, c, data) in [
            ("with", corpus, &original),
            ("without", &stripped_corpus, &stripped),
        ] {
            let outcome = train_on_corpus(kind, data, cfg, options.embeddings, |l| {
                on_epoch(tag, kind, l)
            })?;
            let scored = score(
                &outcome.model,
                c.split(Split::Test),
                &data.test,
                cfg.context_len,
            )?;
            let overall = evaluate(&c.labels, &scored)?.accuracy();
            let subset = EvalReport::from_pairs(
                &c.labels,
                scored
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .map(|(s, _)| (s.utterance.label, s.prediction.label)),
            )?;
            accuracies.push((overall, subset.accuracy()));
        }
        rows.push(AblationRow {
            kind,
            overall_with: accuracies[0].0,
            overall_without: accuracies[1].0,
            question_with: accuracies[0].1,
            question_without: accuracies[1].1,
        });
    }
    Ok(AblationReport {
        question_label: corpus.labels[q].clone(),
        question_n: mask.iter().filter(|&&m| m).count(),
        rows,
    })
}

/// True when the utterance's only word (ignoring punctuation tokens) is
/// `word`, case-insensitively.
pub fn is_single_word(u: &Utterance, word: &str) -> bool {
    let mut words = u
        .tokens
        .iter()
        .filter(|t| t.chars().any(char::is_alphanumeric));
    matches!((words.next(), words.next()), (Some(w), None) if w.eq_ignore_ascii_case(word))
}

/// For each word and each model, per-class metrics over the utterances
/// consisting of that single word. `scored` holds each model's predictions
/// for the same split.
pub fn single_word_report(
    labels: &[String],
    words: &[&str],
    classes: &[usize],
    scored: &[(ModelKind, Vec<Scored<'_>>)],
) -> Result<SingleWordReport> {
    if let Some(bad) = classes.iter().find(|&&c| c >= labels.len()) {
        return Err(Error::invalid(format!("class index {bad} out of range")));
    }
    let mut rows = Vec::new();
    let mut counts = Vec::with_capacity(words.len());
    for &word in words {
        let mut count = 0;
        for (kind, predictions) in scored {
            let report = subset_report(labels, predictions, |u| is_single_word(u, word))?;
            count = report.n();
            for &c in classes {
                rows.push(SingleWordRow {
                    word: word.to_string(),
                    class: labels[c].clone(),
                    kind: *kind,
                    metrics: report.class(c),
                });
            }
        }
        counts.push(count);
    }
    Ok(SingleWordReport {
        words: words.iter().map(|w| w.to_string()).collect(),
        classes: classes.iter().map(|&c| labels[c].clone()).collect(),
        counts,
        rows,
    })
}
