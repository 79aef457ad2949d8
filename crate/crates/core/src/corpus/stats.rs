use std::collections::HashSet;
use std::fmt;

use super::{Corpus, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitStats {
    pub split: Split,
    pub dialogs: usize,
    pub utterances: usize,
    /// Utterance count per class index.
    pub histogram: Vec<usize>,
}

impl SplitStats {
    /// Most frequent class (lowest index on ties) and its share of the
    /// split, or `None` for an empty split.
    pub fn majority(&self) -> Option<(usize, f64)> {
        if self.utterances == 0 {
            return None;
        }
        let (best, &count) = self
            .histogram
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, c)| **c)
            .expect("non-empty histogram");
        Some((best, count as f64 / self.utterances as f64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub labels: Vec<String>,
    pub splits: Vec<SplitStats>,
    /// Distinct token types in the training split.
    pub vocab_size: usize,
}

impl CorpusStats {
    pub fn split(&self, split: Split) -> &SplitStats {
        self.splits
            .iter()
            .find(|s| s.split == split)
            .expect("all splits present")
    }
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    let splits = Split::ALL
        .iter()
        .map(|&split| {
            let mut histogram = vec![0; corpus.labels.len()];
            for u in corpus.utterances(split) {
                histogram[u.label] += 1;
            }
            SplitStats {
                split,
                dialogs: corpus.split(split).len(),
                utterances: histogram.iter().sum(),
                histogram,
            }
        })
        .collect();
    let vocab: HashSet<&str> = corpus
        .utterances(Split::Train)
        .flat_map(|u| u.tokens.iter().map(String::as_str))
        .collect();
    CorpusStats {
        labels: corpus.labels.clone(),
        splits,
        vocab_size: vocab.len(),
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let count = |s: Split| self.split(s).utterances;
        writeln!(f, "| C | |V| | Train | Validation | Test |")?;
        writeln!(
            f,
            "| {} | {} | {} | {} | {} |",
            self.labels.len(),
            self.vocab_size,
            count(Split::Train),
            count(Split::Valid),
            count(Split::Test)
        )?;
        writeln!(f)?;
        for s in &self.splits {
            match s.majority() {
                Some((label, share)) => writeln!(
                    f,
                    "{}: {} dialogs, {} utterances, majority class {} = {:.1}%",
                    s.split,
                    s.dialogs,
                    s.utterances,
                    self.labels[label],
                    100.0 * share
                )?,
                None => writeln!(f, "{}: 0 dialogs, 0 utterances", s.split)?,
            }
        }
        writeln!(f)?;
        write!(f, "label")?;
        for s in &self.splits {
            write!(f, "\t{}", s.split)?;
        }
        writeln!(f)?;
        for (i, label) in self.labels.iter().enumerate() {
            write!(f, "{label}")?;
            for s in &self.splits {
                write!(f, "\t{}", s.histogram[i])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
