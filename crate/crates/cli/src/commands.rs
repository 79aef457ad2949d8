//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dialact_core::corpus::{stats, synth_generate, Corpus, Split, SynthSpec};
use dialact_core::dsp::write_mfcc_cache;
use dialact_core::eval::{
    ablation_question_mark, evaluate, score, single_word_report, AblationOptions, Scored,
};
use dialact_core::io::write_atomic_str;
use dialact_core::model::{prepare_split, AudioCache, PreparedDialog};
use dialact_core::tensor::Scalar;
use dialact_core::training::{
    prepare_corpus, train_on_corpus, EpochLog, ModelBundle, Precision, TrainedModel,
};
use dialact_core::{ModelKind, TrainConfig};

use crate::args::{
    AblateArgs, ConfigArgs, EvaluateArgs, ExtractArgs, ModelArgs, PredictArgs, SingleWordArgs,
    StatsArgs, SynthArgs, TrainArgs, CONFIG_ENV,
};
use crate::UsageError;

/// Quotes a path for the echoed command line when it needs it.
fn arg(path: &Path) -> String {
    let s = path.display().to_string();
    if s.is_empty() || s.contains(char::is_whitespace) || s.contains('"') {
        format!("{s:?}")
    } else {
        s
    }
}

fn echo(line: &str) {
    eprintln!("config: dialact {line}");
}

/// Defaults, then the config file, then `--set` pairs, then `--seed`.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let path = args.config.clone().or_else(|| {
        std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    let mut cfg = match &path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if !args.overrides.is_empty() {
        cfg = cfg.with_overrides(&args.overrides)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    echo(&format!(
        "synth --spec {} --seed {} --out {}",
        arg(&a.spec),
        a.seed,
        arg(&a.out)
    ));
    let spec = SynthSpec::load(&a.spec)?;
    let mut out = synth_generate(&spec, a.seed)?;
    out.write(&a.out)?;
    println!(
        "wrote {} train / {} valid / {} test utterances to {}",
        out.corpus.num_utterances(Split::Train),
        out.corpus.num_utterances(Split::Valid),
        out.corpus.num_utterances(Split::Test),
        a.out.display()
    );
    Ok(())
}

pub fn extract_mfcc(a: &ExtractArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    echo(&format!(
        "extract-mfcc --input {} --out {} --set {}",
        arg(&a.input),
        arg(&a.out),
        cfg.echo()
    ));
    let mut cache = AudioCache::new(cfg.mfcc_config());
    if a.input.is_file() {
        let grid = cache.grid(&a.input)?;
        write_mfcc_cache(&a.out, grid)?;
        println!("{}: {} frames", a.out.display(), grid.frames());
        return Ok(());
    }
    let corpus = load_corpus(&a.input)?;
    let files: BTreeSet<PathBuf> = Split::ALL
        .iter()
        .flat_map(|&s| corpus.utterances(s))
        .filter_map(|u| u.audio_path.clone())
        .collect();
    for rel in &files {
        let source = if rel.is_absolute() {
            rel.clone()
        } else {
            corpus.root.join(rel)
        };
        let name = if rel.is_absolute() {
            PathBuf::from(rel.file_name().unwrap_or_default())
        } else {
            rel.clone()
        };
        let target = a.out.join(name.with_extension("mfcc"));
        write_mfcc_cache(&target, cache.grid(&source)?)?;
    }
    println!("wrote {} cache files to {}", files.len(), a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let mut line = format!(
        "train --model {} --corpus {} --out {}",
        a.model,
        arg(&a.corpus),
        arg(&a.out)
    );
    if let Some(e) = &a.embeddings {
        let _ = write!(line, " --embeddings {}", arg(e));
    }
    let _ = write!(line, " --set {}", cfg.echo());
    echo(&line);
    let corpus = load_corpus(&a.corpus)?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(a, &corpus, &cfg),
        Precision::F64 => train_as::<f64>(a, &corpus, &cfg),
    }
}

fn train_as<T: Scalar>(a: &TrainArgs, corpus: &Corpus, cfg: &TrainConfig) -> Result<()> {
    let data = prepare_corpus::<T>(corpus, a.model.uses_audio(), cfg, None)?;
    println!("{}", EpochLog::HEADER);
    let outcome = train_on_corpus(a.model, &data, cfg, a.embeddings.as_deref(), |l| {
        println!("{l}")
    })?;
    ModelBundle::save(&a.out, &outcome, &data.vocab, &data.labels, cfg)?;
    eprintln!(
        "best validation accuracy at epoch {}; model written to {}",
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

/// A directory is taken as a model directory with its default checkpoint;
/// a file as a checkpoint inside its parent directory.
fn load_model(m: &ModelArgs) -> Result<TrainedModel> {
    let (dir, ckpt) = if m.checkpoint.is_dir() {
        (m.checkpoint.clone(), None)
    } else {
        let parent = m.checkpoint.parent().filter(|p| !p.as_os_str().is_empty());
        (
            parent.unwrap_or(Path::new(".")).to_path_buf(),
            Some(m.checkpoint.as_path()),
        )
    };
    let trained = ModelBundle::load(&dir, ckpt)
        .with_context(|| format!("loading model from {}", m.checkpoint.display()))?;
    if let Some(expected) = m.model {
        if trained.model.kind() != expected {
            return Err(UsageError(format!(
                "{} holds a {} model, not {}",
                m.checkpoint.display(),
                trained.model.kind(),
                expected
            ))
            .into());
        }
    }
    Ok(trained)
}

fn model_line(m: &ModelArgs) -> String {
    let mut s = format!("--checkpoint {}", arg(&m.checkpoint));
    if let Some(k) = m.model {
        let _ = write!(s, " --model {k}");
    }
    s
}

fn prepare_for(
    trained: &TrainedModel,
    corpus: &Corpus,
    split: Split,
) -> Result<Vec<PreparedDialog<f32>>> {
    trained.check_labels(&corpus.labels)?;
    let cfg = &trained.config;
    let mut cache = trained
        .model
        .kind()
        .uses_audio()
        .then(|| AudioCache::new(cfg.mfcc_config()));
    let vocab = trained.model.kind().uses_text().then_some(&trained.vocab);
    Ok(prepare_split(
        corpus,
        split,
        vocab,
        cache.as_mut(),
        cfg.max_len,
        cfg.max_frames,
    )?)
}

fn score_split<'c>(
    trained: &TrainedModel,
    corpus: &'c Corpus,
    split: Split,
) -> Result<Vec<Scored<'c>>> {
    let prepared = prepare_for(trained, corpus, split)?;
    Ok(score(
        &trained.model,
        corpus.split(split),
        &prepared,
        trained.config.context_len,
    )?)
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    echo(&format!(
        "evaluate {} --corpus {} --split {} --out {}",
        model_line(&a.model),
        arg(&a.corpus),
        a.split,
        arg(&a.out)
    ));
    let trained = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let scored = score_split(&trained, &corpus, a.split)?;
    let report = evaluate(&corpus.labels, &scored)?;
    let kind = trained.model.kind();
    let stem = format!("{}.{}", kind, a.split);
    let text = report.to_text(&kind.to_string().to_uppercase());
    write_atomic_str(a.out.join(format!("{stem}.txt")), &text)?;
    write_atomic_str(
        a.out.join(format!("{stem}.tsv")),
        &report.to_tsv(&kind.to_string()),
    )?;
    print!("{text}");
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    echo(&format!(
        "predict {} --corpus {} --split {} --out {}",
        model_line(&a.model),
        arg(&a.corpus),
        a.split,
        arg(&a.out)
    ));
    let trained = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let scored = score_split(&trained, &corpus, a.split)?;
    let mut out = String::from("dialog\tindex\tgold\tpredicted");
    for label in &corpus.labels {
        let _ = write!(out, "\tp({label})");
    }
    out.push('\n');
    for s in &scored {
        let u = s.utterance;
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            u.dialog_id, u.index, corpus.labels[u.label], corpus.labels[s.prediction.label]
        );
        for p in &s.prediction.probs {
            let _ = write!(out, "\t{p:.6}");
        }
        out.push('\n');
    }
    write_atomic_str(&a.out, &out)?;
    let correct = scored
        .iter()
        .filter(|s| s.prediction.label == s.utterance.label)
        .count();
    println!(
        "{} predictions written to {} ({correct} correct)",
        scored.len(),
        a.out.display()
    );
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let mut line = format!(
        "ablate-qmark --corpus {} --question-label {} --out {}",
        arg(&a.corpus),
        a.question_label,
        arg(&a.out)
    );
    if let Some(e) = &a.embeddings {
        let _ = write!(line, " --embeddings {}", arg(e));
    }
    let _ = write!(line, " --set {}", cfg.echo());
    echo(&line);
    let corpus = load_corpus(&a.corpus)?;
    let question_label = corpus.label_id(&a.question_label).ok_or_else(|| {
        UsageError(format!(
            "label {:?} not in corpus label set [{}]",
            a.question_label,
            corpus.labels.join(", ")
        ))
    })?;
    let opts = AblationOptions {
        question_label,
        embeddings: a.embeddings.as_deref(),
    };
    let mut log = |tag: &str, kind: ModelKind, l: &EpochLog| eprintln!("{kind} {tag} '?'\t{l}");
    let report = match cfg.precision {
        Precision::F32 => ablation_question_mark::<f32>(&corpus, &cfg, &opts, &mut log)?,
        Precision::F64 => ablation_question_mark::<f64>(&corpus, &cfg, &opts, &mut log)?,
    };
    let text = report.to_text();
    write_atomic_str(a.out.join("ablation.txt"), &text)?;
    write_atomic_str(a.out.join("ablation.tsv"), &report.to_tsv())?;
    print!("{text}");
    Ok(())
}

pub fn single_word(a: &SingleWordArgs) -> Result<()> {
    let mut line = String::from("report-singleword");
    for c in &a.checkpoints {
        let _ = write!(line, " --checkpoint {}", arg(c));
    }
    let _ = write!(
        line,
        " --corpus {} --split {} --words {} --classes {} --out {}",
        arg(&a.corpus),
        a.split,
        a.words.join(","),
        a.classes.join(","),
        arg(&a.out)
    );
    echo(&line);
    let corpus = load_corpus(&a.corpus)?;
    let classes = a
        .classes
        .iter()
        .map(|c| {
            corpus
                .label_id(c)
                .ok_or_else(|| UsageError(format!("label {c:?} not in corpus label set")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut scored = Vec::with_capacity(a.checkpoints.len());
    for path in &a.checkpoints {
        let trained = load_model(&ModelArgs {
            checkpoint: path.clone(),
            model: None,
        })?;
        let kind = trained.model.kind();
        scored.push((kind, score_split(&trained, &corpus, a.split)?));
    }
    let words: Vec<&str> = a.words.iter().map(String::as_str).collect();
    let report = single_word_report(&corpus.labels, &words, &classes, &scored)?;
    let text = report.to_text();
    write_atomic_str(a.out.join("singleword.txt"), &text)?;
    write_atomic_str(a.out.join("singleword.tsv"), &report.to_tsv())?;
    print!("{text}");
    Ok(())
}

pub fn stats_cmd(a: &StatsArgs) -> Result<()> {
    let mut line = format!("stats --corpus {}", arg(&a.corpus));
    if let Some(o) = &a.out {
        let _ = write!(line, " --out {}", arg(o));
    }
    echo(&line);
    let corpus = load_corpus(&a.corpus)?;
    let table = stats(&corpus).to_string();
    if let Some(o) = &a.out {
        write_atomic_str(o, &table)?;
    }
    print!("{table}");
    Ok(())
}
