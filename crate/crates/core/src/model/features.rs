//! Turning corpus utterances into model inputs: token ids and fixed-size
//! MFCC tensors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Split, Utterance};
use crate::dsp::{read_wav, slice_utterance, MfccConfig, MfccExtractor, MfccGrid};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::text::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedUtterance<T> {
    pub ids: Vec<usize>,
    /// `mfcc_dim × max_frames` grid; absent for text-only preparation.
    pub acoustic: Option<Tensor<T>>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDialog<T> {
    pub id: String,
    pub utterances: Vec<PreparedUtterance<T>>,
}

impl<T> PreparedDialog<T> {
    /// Context windows with up to `n` preceding utterances, one per
    /// utterance; the last element of each is the target.
    pub fn windows(&self, n: usize) -> impl Iterator<Item = &[PreparedUtterance<T>]> + '_ {
        (0..self.utterances.len()).map(move |t| &self.utterances[t.saturating_sub(n)..=t])
    }
}

/// Whole-file MFCC grids, extracted once per audio file.
pub struct AudioCache {
    config: MfccConfig,
    extractors: HashMap<u32, MfccExtractor>,
    grids: HashMap<PathBuf, MfccGrid>,
}

impl AudioCache {
    pub fn new(config: MfccConfig) -> Self {
        AudioCache {
            config,
            extractors: HashMap::new(),
            grids: HashMap::new(),
        }
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    /// File-level grid without mean normalization; that is applied per
    /// utterance after slicing.
    pub fn grid(&mut self, path: &Path) -> Result<&MfccGrid> {
        if !self.grids.contains_key(path) {
            let signal = read_wav(path)?;
            let extractor = match self.extractors.entry(signal.sample_rate) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    let cfg = MfccConfig {
                        mean_normalize: false,
                        ..self.config.clone()
                    };
                    e.insert(MfccExtractor::new(cfg, signal.sample_rate)?)
                }
            };
            let grid = extractor.extract(&signal)?;
            self.grids.insert(path.to_path_buf(), grid);
        }
        Ok(&self.grids[path])
    }

    /// The utterance's MFCC grid: its time span of the dialog recording
    /// (the whole file when untimed), mean-normalized if configured.
    pub fn utterance_grid(&mut self, corpus: &Corpus, utt: &Utterance) -> Result<MfccGrid> {
        let path = corpus.resolve_audio(utt).ok_or_else(|| {
            Error::invalid(format!(
                "utterance {}:{} has no audio reference",
                utt.dialog_id, utt.index
            ))
        })?;
        let normalize = self.config.mean_normalize;
        let grid = self.grid(&path)?;
        let grid = match (utt.start_sec, utt.end_sec) {
            (Some(s), Some(e)) => slice_utterance(grid, s, e)?,
            _ => grid.clone(),
        };
        Ok(if normalize {
            grid.mean_normalized()
        } else {
            grid
        })
    }
}

/// Prepares every dialog of `split`. Token ids are produced when `vocab` is
/// given, acoustic tensors when `audio` is given.
pub fn prepare_split<T: Scalar>(
    corpus: &Corpus,
    split: Split,
    vocab: Option<&Vocabulary>,
    mut audio: Option<&mut AudioCache>,
    max_len: usize,
    max_frames: usize,
) -> Result<Vec<PreparedDialog<T>>> {
    let mut out = Vec::with_capacity(corpus.split(split).len());
    for dialog in corpus.split(split) {
        let mut utterances = Vec::with_capacity(dialog.utterances.len());
        for utt in &dialog.utterances {
            let ids = vocab
                .map(|v| v.encode(&utt.tokens, max_len))
                .unwrap_or_default();
            let acoustic = match audio.as_deref_mut() {
                Some(cache) => Some(
                    cache
                        .utterance_grid(corpus, utt)?
                        .fit_frames(max_frames)
                        .to_tensor(),
                ),
                None => None,
            };
            utterances.push(PreparedUtterance {
                ids,
                acoustic,
                label: utt.label,
            });
        }
        out.push(PreparedDialog {
            id: dialog.id.clone(),
            utterances,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, SynthSpec};

    fn spec() -> SynthSpec {
        SynthSpec::from_toml(
            r#"
            utterances_per_dialog = 4
            sizes = { train = 8, valid = 4, test = 4 }
            [[classes]]
            name = "S"
            templates = ["this is your car"]
            prosody = { contour = "flat" }
            [[classes]]
            name = "Q"
            templates = ["this is your car"]
            prosody = { contour = "rise" }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn windows_shortened_at_dialog_start() {
        let d = PreparedDialog::<f64> {
            id: "d".into(),
            utterances: (0..5)
                .map(|k| PreparedUtterance {
                    ids: vec![k],
                    acoustic: None,
                    label: 0,
                })
                .collect(),
        };
        let lens: Vec<usize> = d.windows(2).map(|w| w.len()).collect();
        assert_eq!(lens, vec![1, 2, 3, 3, 3]);
        assert!(d.windows(2).all(|w| w.last().is_some()));
    }

    #[test]
    fn identical_tokens_distinct_audio() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = synth_generate(&spec(), 11).unwrap();
        out.write(dir.path()).unwrap();
        let corpus = Corpus::load(dir.path()).unwrap();
        let vocab = Vocabulary::build(corpus.utterances(Split::Train).map(|u| &u.tokens), 1);
        let mut cache = AudioCache::new(MfccConfig::default());
        let prepared: Vec<PreparedDialog<f64>> = prepare_split(
            &corpus,
            Split::Train,
            Some(&vocab),
            Some(&mut cache),
            100,
            360,
        )
        .unwrap();
        let utts: Vec<&PreparedUtterance<f64>> =
            prepared.iter().flat_map(|d| &d.utterances).collect();
        let flat = utts.iter().find(|u| u.label == 0).unwrap();
        let rise = utts.iter().find(|u| u.label == 1).unwrap();
        assert_eq!(flat.ids, rise.ids);
        let (a, b) = (
            flat.acoustic.as_ref().unwrap(),
            rise.acoustic.as_ref().unwrap(),
        );
        assert_eq!(a.shape(), &[13, 360]);
        assert!(a.max_abs_diff(b) > 0.1);
    }

    #[test]
    fn missing_audio_reference() {
        let out = synth_generate(&spec(), 1).unwrap();
        let mut corpus = out.corpus;
        corpus.train[0].utterances[0].audio_path = None;
        let mut cache = AudioCache::new(MfccConfig::default());
        let err = prepare_split::<f64>(&corpus, Split::Train, None, Some(&mut cache), 100, 360)
            .unwrap_err();
        assert!(err.to_string().contains("no audio"), "{err}");
    }
}
