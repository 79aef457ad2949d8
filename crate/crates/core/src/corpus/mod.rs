//! Dialog corpora: the on-disk record format, split handling, Table-style
//! statistics and context windows.
//!
//! A corpus directory holds `labels.txt` (one label per line, line order is
//! the class index) and either `train.tsv`, `valid.tsv` and `test.tsv`, or a
//! single `corpus.tsv` plus a `splits.tsv` manifest mapping each dialog id to
//! `train`, `valid` or `test`. Records are tab-separated:
//!
//! ```text
//! dialogId  index  speaker  label  startSec  endSec  audioPath  token...
//! ```
//!
//! `startSec`/`endSec` may both be empty. A token may carry word timing as
//! `word@start:end`; either every token of an utterance is timed or none is.

mod stats;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

pub use stats::{stats, CorpusStats, SplitStats};
pub use synth::{synth_generate, ClassSpec, Contour, Prosody, SplitSizes, SynthOutput, SynthSpec};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic_str};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" | "validation" | "dev" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WordTime {
    pub start_sec: f64,
    pub end_sec: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub dialog_id: String,
    pub index: usize,
    pub speaker: String,
    pub tokens: Vec<String>,
    /// Index into the corpus label set.
    pub label: usize,
    pub start_sec: Option<f64>,
    pub end_sec: Option<f64>,
    pub word_times: Option<Vec<WordTime>>,
    /// Relative paths resolve against the corpus directory.
    pub audio_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialog {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Current utterance plus up to `n` predecessors from the same dialog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    pub dialog: usize,
    /// First utterance index of the window (inclusive).
    pub start: usize,
    /// The classification target; last element of the window.
    pub target: usize,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.target - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn utterances<'a>(&self, dialogs: &'a [Dialog]) -> &'a [Utterance] {
        &dialogs[self.dialog].utterances[self.start..=self.target]
    }
}

/// One window per utterance, in dialog order; never crosses dialogs.
pub fn context_windows(dialogs: &[Dialog], n: usize) -> impl Iterator<Item = ContextWindow> + '_ {
    dialogs.iter().enumerate().flat_map(move |(d, dialog)| {
        (0..dialog.utterances.len()).map(move |t| ContextWindow {
            dialog: d,
            start: t.saturating_sub(n),
            target: t,
        })
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub labels: Vec<String>,
    pub train: Vec<Dialog>,
    pub valid: Vec<Dialog>,
    pub test: Vec<Dialog>,
    /// Base directory for relative audio paths.
    pub root: PathBuf,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Dialog] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Dialog> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn utterances(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.split(split).iter().flat_map(|d| d.utterances.iter())
    }

    pub fn num_utterances(&self, split: Split) -> usize {
        self.split(split).iter().map(|d| d.utterances.len()).sum()
    }

    pub fn resolve_audio(&self, utt: &Utterance) -> Option<PathBuf> {
        utt.audio_path.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                self.root.join(p)
            }
        })
    }

    /// Copy keeping only tokens for which `keep` holds; word times follow
    /// their tokens.
    pub fn retain_tokens(&self, keep: impl Fn(&str) -> bool) -> Corpus {
        let mut out = self.clone();
        for split in Split::ALL {
            for dialog in out.split_mut(split) {
                for utt in &mut dialog.utterances {
                    let mask: Vec<bool> = utt.tokens.iter().map(|t| keep(t)).collect();
                    let mut it = mask.iter();
                    utt.tokens.retain(|_| *it.next().expect("mask"));
                    if let Some(times) = &mut utt.word_times {
                        let mut it = mask.iter();
                        times.retain(|_| *it.next().expect("mask"));
                        if times.is_empty() {
                            utt.word_times = None;
                        }
                    }
                }
            }
        }
        out
    }

    /// Checks the structural invariants: labels in range, unique
    /// `(dialog, index)` pairs, increasing indices, positive intervals and
    /// no dialog shared between splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen_dialogs: HashMap<&str, Split> = HashMap::new();
        for split in Split::ALL {
            for dialog in self.split(split) {
                if let Some(prev) = seen_dialogs.insert(&dialog.id, split) {
                    return Err(Error::invalid(format!(
                        "dialog {} appears in both {prev} and {split}",
                        dialog.id
                    )));
                }
                let mut indices = HashSet::new();
                for u in &dialog.utterances {
                    if u.label >= self.labels.len() {
                        return Err(Error::invalid(format!("label id {} out of range", u.label)));
                    }
                    if !indices.insert(u.index) {
                        return Err(Error::invalid(format!(
                            "duplicate utterance ({}, {})",
                            dialog.id, u.index
                        )));
                    }
                    if let (Some(s), Some(e)) = (u.start_sec, u.end_sec) {
                        if e <= s {
                            return Err(Error::invalid(format!(
                                "utterance ({}, {}) ends before it starts",
                                dialog.id, u.index
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        load_corpus(dir, &LoadOptions::default())
    }

    /// Writes `labels.txt` and one record file per split.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut labels = self.labels.join("\n");
        labels.push('\n');
        write_atomic_str(dir.join("labels.txt"), &labels)?;
        for split in Split::ALL {
            let mut s = String::new();
            for u in self.utterances(split) {
                s.push_str(&self.format_record(u));
                s.push('\n');
            }
            write_atomic_str(dir.join(format!("{}.tsv", split.name())), &s)?;
        }
        Ok(())
    }

    pub fn format_record(&self, u: &Utterance) -> String {
        let time = |t: Option<f64>| t.map(|v| v.to_string()).unwrap_or_default();
        let mut fields = vec![
            u.dialog_id.clone(),
            u.index.to_string(),
            u.speaker.clone(),
            self.labels[u.label].clone(),
            time(u.start_sec),
            time(u.end_sec),
            u.audio_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default(),
        ];
        match &u.word_times {
            Some(times) => fields.extend(
                u.tokens
                    .iter()
                    .zip(times)
                    .map(|(tok, t)| format!("{tok}@{}:{}", t.start_sec, t.end_sec)),
            ),
            None => fields.extend(u.tokens.iter().cloned()),
        }
        fields.join("\t")
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Fail when an utterance names an audio file that does not exist.
    pub require_audio: bool,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_time(path: &Path, line: usize, field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} {field:?}")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(parse_err(path, line, format!("bad {what} {field:?}")));
    }
    Ok(Some(v))
}

fn parse_token(field: &str) -> (String, Option<WordTime>) {
    if let Some((word, times)) = field.rsplit_once('@') {
        if let Some((s, e)) = times.split_once(':') {
            if let (Ok(start_sec), Ok(end_sec)) = (s.parse::<f64>(), e.parse::<f64>()) {
                if !word.is_empty() {
                    return (word.to_string(), Some(WordTime { start_sec, end_sec }));
                }
            }
        }
    }
    (field.to_string(), None)
}

/// Parses one record file into utterances, checking labels against
/// `labels`.
fn parse_records(
    path: &Path,
    text: &str,
    labels: &[String],
    root: &Path,
    options: &LoadOptions,
) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 7 {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "expected at least 7 tab-separated fields, got {}",
                    fields.len()
                ),
            ));
        }
        let index: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad index {:?}", fields[1])))?;
        let label = labels
            .iter()
            .position(|l| l == fields[3])
            .ok_or_else(|| parse_err(path, lineno, format!("unknown label {:?}", fields[3])))?;
        let start_sec = parse_time(path, lineno, fields[4], "startSec")?;
        let end_sec = parse_time(path, lineno, fields[5], "endSec")?;
        match (start_sec, end_sec) {
            (Some(s), Some(e)) if e <= s => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("endSec {e} is not after startSec {s}"),
                ))
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(parse_err(
                    path,
                    lineno,
                    "startSec and endSec must both be set or both empty",
                ))
            }
            _ => {}
        }
        let audio_path = (!fields[6].is_empty()).then(|| PathBuf::from(fields[6]));
        if options.require_audio {
            match &audio_path {
                None => return Err(parse_err(path, lineno, "no audio path")),
                Some(p) => {
                    let full = if p.is_absolute() {
                        p.clone()
                    } else {
                        root.join(p)
                    };
                    if !full.is_file() {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("missing audio file {}", full.display()),
                        ));
                    }
                }
            }
        }
        let parsed: Vec<(String, Option<WordTime>)> = fields[7..]
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| parse_token(f))
            .collect();
        let timed = parsed.iter().filter(|(_, t)| t.is_some()).count();
        let word_times = if timed == 0 {
            None
        } else if timed == parsed.len() {
            Some(parsed.iter().map(|(_, t)| t.expect("timed")).collect())
        } else {
            return Err(parse_err(
                path,
                lineno,
                "either all tokens carry times or none",
            ));
        };
        out.push(Utterance {
            dialog_id: fields[0].to_string(),
            index,
            speaker: fields[2].to_string(),
            tokens: parsed.into_iter().map(|(t, _)| t).collect(),
            label,
            start_sec,
            end_sec,
            word_times,
            audio_path,
        });
    }
    Ok(out)
}

/// Groups utterances into dialogs in order of first appearance, sorting each
/// dialog by index and rejecting duplicate `(dialogId, index)` pairs.
fn group_dialogs(path: &Path, utterances: Vec<Utterance>) -> Result<Vec<Dialog>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Vec<Utterance>> = HashMap::new();
    for u in utterances {
        let entry = by_id.entry(u.dialog_id.clone()).or_insert_with(|| {
            order.push(u.dialog_id.clone());
            Vec::new()
        });
        if entry.iter().any(|x| x.index == u.index) {
            return Err(parse_err(
                path,
                0,
                format!("duplicate utterance ({}, {})", u.dialog_id, u.index),
            ));
        }
        entry.push(u);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut utterances = by_id.remove(&id).expect("grouped");
            utterances.sort_by_key(|u| u.index);
            Dialog { id, utterances }
        })
        .collect())
}

pub(crate) fn load_labels(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join("labels.txt");
    let text = read_to_string(&path)?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let unique: HashSet<&String> = labels.iter().collect();
    if unique.len() != labels.len() {
        return Err(parse_err(&path, 0, "duplicate label"));
    }
    if labels.is_empty() {
        return Err(parse_err(&path, 0, "empty label set"));
    }
    Ok(labels)
}

/// Loads a corpus directory (see the module docs for the layout).
pub fn load_corpus(dir: impl AsRef<Path>, options: &LoadOptions) -> Result<Corpus> {
    let dir = dir.as_ref();
    let labels = load_labels(dir)?;
    let mut corpus = Corpus {
        labels,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        root: dir.to_path_buf(),
    };
    let single = dir.join("corpus.tsv");
    if single.is_file() {
        let text = read_to_string(&single)?;
        let utts = parse_records(&single, &text, &corpus.labels, dir, options)?;
        let dialogs = group_dialogs(&single, utts)?;
        let manifest_path = dir.join("splits.tsv");
        let manifest = read_to_string(&manifest_path)?;
        let mut assignment: HashMap<String, Split> = HashMap::new();
        for (i, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(&manifest_path, i + 1, "expected dialogId<TAB>split"))?;
            let split = Split::parse(split.trim()).ok_or_else(|| {
                parse_err(&manifest_path, i + 1, format!("unknown split {split:?}"))
            })?;
            if assignment.insert(id.to_string(), split).is_some() {
                return Err(parse_err(
                    &manifest_path,
                    i + 1,
                    format!("dialog {id} listed twice"),
                ));
            }
        }
        for d in dialogs {
            let split = *assignment.get(&d.id).ok_or_else(|| {
                parse_err(&manifest_path, 0, format!("dialog {} has no split", d.id))
            })?;
            corpus.split_mut(split).push(d);
        }
    } else {
        for split in Split::ALL {
            let path = dir.join(format!("{}.tsv", split.name()));
            if !path.is_file() {
                continue;
            }
            let text = read_to_string(&path)?;
            let utts = parse_records(&path, &text, &corpus.labels, dir, options)?;
            *corpus.split_mut(split) = group_dialogs(&path, utts)?;
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: &str = "S\nQ\nB\n";

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn fixture() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.txt", LABELS);
        write(
            dir.path(),
            "train.tsv",
            "d1\t0\tA\tS\t0.0\t1.2\t\tthis\tis\tyour\tcar\n\
             d1\t1\tB\tQ\t1.3\t2.0\t\tis\tit\t?\n\
             d2\t0\tA\tB\t\t\t\tyeah\n\
             d1\t2\tA\tB\t2.1\t2.4\t\tright@2.1:2.4\n",
        );
        write(dir.path(), "valid.tsv", "");
        dir
    }

    #[test]
    fn loads_two_dialogs() {
        let dir = fixture();
        let c = Corpus::load(dir.path()).unwrap();
        assert_eq!(c.train.len(), 2);
        assert_eq!(c.train[0].utterances.len(), 3);
        assert_eq!(c.train[1].utterances.len(), 1);
        assert!(c.valid.is_empty() && c.test.is_empty());
        let right = &c.train[0].utterances[2];
        assert_eq!(right.tokens, ["right"]);
        assert_eq!(right.word_times.as_ref().unwrap()[0].end_sec, 2.4);
        assert_eq!(c.train[0].utterances[1].tokens.last().unwrap(), "?");
    }

    #[test]
    fn rejects_unknown_label() {
        let dir = fixture();
        write(dir.path(), "test.tsv", "d9\t0\tA\tX\t\t\t\thello\n");
        let err = Corpus::load(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("unknown label \"X\"") && err.contains(":1:"),
            "{err}"
        );
    }

    #[test]
    fn rejects_inverted_times() {
        let dir = fixture();
        write(dir.path(), "test.tsv", "d9\t0\tA\tS\t2.0\t1.0\t\thello\n");
        assert!(Corpus::load(dir.path())
            .unwrap_err()
            .to_string()
            .contains("not after"));
    }

    #[test]
    fn rejects_duplicates_and_shared_dialogs() {
        let dir = fixture();
        write(
            dir.path(),
            "test.tsv",
            "d9\t0\tA\tS\t\t\t\thi\nd9\t0\tA\tS\t\t\t\tho\n",
        );
        assert!(Corpus::load(dir.path())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        write(dir.path(), "test.tsv", "d2\t5\tA\tS\t\t\t\thi\n");
        assert!(Corpus::load(dir.path())
            .unwrap_err()
            .to_string()
            .contains("both"));
    }

    #[test]
    fn missing_audio_reported_when_required() {
        let dir = fixture();
        write(dir.path(), "train.tsv", "");
        write(dir.path(), "test.tsv", "d9\t0\tA\tS\t0\t1\tnope.wav\thi\n");
        let opts = LoadOptions {
            require_audio: true,
        };
        let err = load_corpus(dir.path(), &opts).unwrap_err().to_string();
        assert!(
            err.contains("missing audio") && err.contains("test.tsv:1"),
            "{err}"
        );
    }

    #[test]
    fn single_file_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.txt", LABELS);
        write(
            dir.path(),
            "corpus.tsv",
            "a\t0\tX\tS\t\t\t\thi\nb\t0\tX\tQ\t\t\t\tok\t?\nc\t0\tY\tB\t\t\t\tyeah\n",
        );
        write(dir.path(), "splits.tsv", "a\ttrain\nb\ttest\nc\tvalid\n");
        let c = Corpus::load(dir.path()).unwrap();
        assert_eq!((c.train.len(), c.valid.len(), c.test.len()), (1, 1, 1));
        assert_eq!(c.test[0].id, "b");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = fixture();
        let c = Corpus::load(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        c.save(out.path()).unwrap();
        let mut back = Corpus::load(out.path()).unwrap();
        back.root = c.root.clone();
        assert_eq!(back, c);
    }

    #[test]
    fn window_lengths() {
        let mk = |id: &str, n: usize| Dialog {
            id: id.into(),
            utterances: (0..n)
                .map(|i| Utterance {
                    dialog_id: id.into(),
                    index: i,
                    speaker: "A".into(),
                    tokens: vec![],
                    label: 0,
                    start_sec: None,
                    end_sec: None,
                    word_times: None,
                    audio_path: None,
                })
                .collect(),
        };
        let one = [mk("a", 1)];
        let w: Vec<_> = context_windows(&one, 3).collect();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 1);

        let five = [mk("a", 5)];
        let lens: Vec<usize> = context_windows(&five, 2).map(|w| w.len()).collect();
        assert_eq!(lens, [1, 2, 3, 3, 3]);

        let two = [mk("a", 4), mk("b", 3)];
        for w in context_windows(&two, 3) {
            let utts = w.utterances(&two);
            assert!(utts.iter().all(|u| u.dialog_id == utts[0].dialog_id));
            assert_eq!(utts.last().unwrap().index, w.target);
        }
        assert_eq!(context_windows(&two, 3).count(), 7);
    }
}
