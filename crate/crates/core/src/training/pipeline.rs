//! Corpus-to-checkpoint plumbing shared by the command line and the
//! experiment reports.

use std::path::{Path, PathBuf};

use crate::corpus::{load_labels, Corpus, Split};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic_str};
use crate::model::{
    load_checkpoint, prepare_split, save_checkpoint, AudioCache, Model, ModelConfig, ModelKind,
    PreparedDialog,
};
use crate::tensor::Scalar;
use crate::text::{load_embeddings, Vocabulary};

use super::{train, EpochLog, TrainConfig, TrainOutcome};

/// All three splits turned into model inputs with one shared vocabulary.
pub struct PreparedCorpus<T> {
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub train: Vec<PreparedDialog<T>>,
    pub valid: Vec<PreparedDialog<T>>,
    pub test: Vec<PreparedDialog<T>>,
}

impl<T: Scalar> PreparedCorpus<T> {
    /// Same acoustic features, token ids (and vocabulary) rebuilt from
    /// `corpus`, which must have the same dialogs and utterances.
    pub fn with_text_from(&self, corpus: &Corpus, cfg: &TrainConfig) -> Result<PreparedCorpus<T>> {
        let text: PreparedCorpus<T> = prepare_corpus(corpus, false, cfg, None)?;
        let merge = |ours: &[PreparedDialog<T>],
                     theirs: Vec<PreparedDialog<T>>|
         -> Result<Vec<PreparedDialog<T>>> {
            if ours.len() != theirs.len() {
                return Err(Error::invalid("corpora differ in dialogs"));
            }
            ours.iter()
                .zip(theirs)
                .map(|(a, mut b)| {
                    if a.id != b.id || a.utterances.len() != b.utterances.len() {
                        return Err(Error::invalid(format!("corpora differ in dialog {}", a.id)));
                    }
                    for (ua, ub) in a.utterances.iter().zip(&mut b.utterances) {
                        ub.acoustic = ua.acoustic.clone();
                    }
                    Ok(b)
                })
                .collect()
        };
        Ok(PreparedCorpus {
            train: merge(&self.train, text.train)?,
            valid: merge(&self.valid, text.valid)?,
            test: merge(&self.test, text.test)?,
            vocab: text.vocab,
            labels: text.labels,
        })
    }

    pub fn split(&self, split: Split) -> &[PreparedDialog<T>] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Builds the vocabulary from the training split (unless one is supplied)
/// and prepares every split; acoustic features only when `with_audio`.
pub fn prepare_corpus<T: Scalar>(
    corpus: &Corpus,
    with_audio: bool,
    cfg: &TrainConfig,
    vocab: Option<Vocabulary>,
) -> Result<PreparedCorpus<T>> {
    let vocab = vocab.unwrap_or_else(|| {
        Vocabulary::build(
            corpus.utterances(Split::Train).map(|u| &u.tokens),
            cfg.min_count,
        )
    });
    let mut cache = with_audio.then(|| AudioCache::new(cfg.mfcc_config()));
    let mut prep = |split| {
        prepare_split(
            corpus,
            split,
            Some(&vocab),
            cache.as_mut(),
            cfg.max_len,
            cfg.max_frames,
        )
    };
    let (train, valid, test) = (prep(Split::Train)?, prep(Split::Valid)?, prep(Split::Test)?);
    Ok(PreparedCorpus {
        vocab,
        labels: corpus.labels.clone(),
        train,
        valid,
        test,
    })
}

/// Initializes a `kind` model for `data` (pretrained vectors from
/// `embeddings` when given) and trains it.
pub fn train_on_corpus<T: Scalar>(
    kind: ModelKind,
    data: &PreparedCorpus<T>,
    cfg: &TrainConfig,
    embeddings: Option<&Path>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    let model_cfg = cfg.model_config(kind, data.labels.len(), data.vocab.len());
    let mut model = Model::new(model_cfg, cfg.seed)?;
    if kind.uses_text() && embeddings.is_some() {
        let table = load_embeddings(embeddings, &data.vocab, cfg.embed_dim, cfg.seed)?;
        model.set_embeddings(&table)?;
    }
    train(model, &data.train, &data.valid, cfg, on_epoch)
}

/// What a trained model needs at inference time.
pub struct TrainedModel {
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub config: TrainConfig,
}

/// File names inside a model directory.
pub struct ModelBundle;

impl ModelBundle {
    pub const CHECKPOINT: &'static str = "model.dact";
    pub const BEST: &'static str = "best.dact";
    pub const MODEL_CFG: &'static str = "model.cfg";
    pub const TRAIN_CFG: &'static str = "train.cfg";
    pub const VOCAB: &'static str = "vocab.txt";
    pub const LABELS: &'static str = "labels.txt";
    pub const LOG: &'static str = "train.log";

    /// Writes the final and best checkpoints, configs, vocabulary, labels
    /// and training log into `dir`.
    pub fn save<T: Scalar>(
        dir: &Path,
        outcome: &TrainOutcome<T>,
        vocab: &Vocabulary,
        labels: &[String],
        cfg: &TrainConfig,
    ) -> Result<()> {
        save_checkpoint(dir.join(Self::CHECKPOINT), outcome.model.params())?;
        save_checkpoint(dir.join(Self::BEST), outcome.best.params())?;
        let model_cfg = toml::to_string(outcome.model.config()).expect("model config serializes");
        write_atomic_str(dir.join(Self::MODEL_CFG), &model_cfg)?;
        write_atomic_str(dir.join(Self::TRAIN_CFG), &cfg.to_file_string())?;
        vocab.save(dir.join(Self::VOCAB))?;
        write_atomic_str(dir.join(Self::LABELS), &(labels.join("\n") + "\n"))?;
        let mut log = String::from(EpochLog::HEADER);
        log.push('\n');
        for line in &outcome.log {
            log.push_str(&line.to_string());
            log.push('\n');
        }
        write_atomic_str(dir.join(Self::LOG), &log)
    }

    /// Loads a model directory; `checkpoint` overrides the default
    /// `model.dact` (a bare file name is resolved inside `dir`).
    pub fn load(dir: &Path, checkpoint: Option<&Path>) -> Result<TrainedModel> {
        let text = read_to_string(dir.join(Self::MODEL_CFG))?;
        let model_cfg: ModelConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: dir.join(Self::MODEL_CFG),
            line: 0,
            msg: e.to_string().trim().to_string(),
        })?;
        let config = TrainConfig::load(dir.join(Self::TRAIN_CFG))?;
        let ckpt: PathBuf = match checkpoint {
            Some(p) if p.components().count() == 1 && !p.exists() => dir.join(p),
            Some(p) => p.to_path_buf(),
            None => dir.join(Self::CHECKPOINT),
        };
        let model = Model::from_params(model_cfg, load_checkpoint(&ckpt)?)?;
        Ok(TrainedModel {
            model,
            vocab: Vocabulary::load(dir.join(Self::VOCAB))?,
            labels: load_labels(dir)?,
            config,
        })
    }
}

impl TrainedModel {
    /// Fails unless `labels` equals the label set the model was trained on.
    pub fn check_labels(&self, labels: &[String]) -> Result<()> {
        if self.labels != labels {
            return Err(Error::LabelMismatch(format!(
                "model has [{}], corpus has [{}]",
                self.labels.join(", "),
                labels.join(", ")
            )));
        }
        Ok(())
    }
}
