//! Run configuration: a flat `key = value` file whose keys mirror
//! [`TrainConfig`] fields.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::MfccConfig;
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::model::{ModelConfig, ModelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Optimization settings plus the architecture and feature knobs an
/// experiment needs. Every field has a default, so a config file only lists
/// what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr0: f64,
    /// Learning-rate factor applied every `decay_every` updates.
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Number of preceding utterances in each context window.
    pub context_len: usize,
    pub dropout: f64,
    pub averaging: bool,
    /// First epoch (1-based) whose iterates enter the running average.
    pub average_start_epoch: usize,
    /// Global gradient-norm clipping threshold; 0 disables.
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub tune_embeddings: bool,
    pub precision: Precision,
    pub min_count: usize,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub maps_per_width: usize,
    pub hidden_dim: usize,
    pub acoustic_maps: usize,
    pub acoustic_width: usize,
    pub max_frames: usize,
    pub pool_frames: usize,
    pub max_len: usize,
    pub mfcc_mean_normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            seed: 1,
            epochs: 25,
            lr0: 0.11,
            decay: 0.9,
            decay_every: 2000,
            batch_size: 50,
            context_len: 3,
            dropout: m.dropout,
            averaging: true,
            average_start_epoch: 13,
            grad_clip: 0.0,
            weight_decay: 0.0,
            tune_embeddings: true,
            precision: Precision::F32,
            min_count: 1,
            embed_dim: m.embed_dim,
            filter_widths: m.filter_widths,
            maps_per_width: m.maps_per_width,
            hidden_dim: m.hidden_dim,
            acoustic_maps: m.acoustic_maps,
            acoustic_width: m.acoustic_width,
            max_frames: m.max_frames,
            pool_frames: m.pool_frames,
            max_len: m.max_len,
            mfcc_mean_normalize: false,
        }
    }
}

fn format_value(v: &toml::Value) -> String {
    match v {
        toml::Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(format_value).collect();
            format!("[{}]", parts.join(","))
        }
        toml::Value::Float(f) => {
            let s = f.to_string();
            if s.contains(['.', 'e', 'E', 'n', 'i']) {
                s
            } else {
                format!("{s}.0")
            }
        }
        other => other.to_string(),
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            msg: e.to_string().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&read_to_string(path)?).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg,
            },
            other => other,
        })
    }

    /// Applies `key=value` overrides on top of `self`.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut text = self.to_file_string();
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override {o:?} is not key=value")))?;
            let k = k.trim();
            text = text
                .lines()
                .filter(|line| line.split_once(" = ").map(|(key, _)| key) != Some(k))
                .collect::<Vec<_>>()
                .join("\n");
            let v = v.trim();
            let is_value = toml::from_str::<toml::Table>(&format!("x = {v}")).is_ok();
            if is_value {
                let _ = write!(text, "\n{k} = {v}");
            } else {
                let _ = write!(text, "\n{k} = {:?}", v);
            }
        }
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("decay_every", self.decay_every),
            ("batch_size", self.batch_size),
            ("average_start_epoch", self.average_start_epoch),
            ("min_count", self.min_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1]"));
        }
        if self.grad_clip < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid(
                "grad_clip and weight_decay must be non-negative",
            ));
        }
        self.model_config(ModelKind::LexicoAcoustic, 1, 2)
            .validate()
    }

    /// The file form: one `key = value` line per field.
    pub fn to_file_string(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let table = value.as_table().expect("struct serializes to a table");
        let mut out = String::new();
        for (k, v) in table {
            let _ = writeln!(out, "{k} = {}", format_value(v));
        }
        out
    }

    /// Single-line `key=value` form, parseable by [`TrainConfig::from_echo`].
    pub fn echo(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let table = value.as_table().expect("struct serializes to a table");
        table
            .iter()
            .map(|(k, v)| format!("{k}={}", format_value(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_echo(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        TrainConfig::default().with_overrides(&fields)
    }

    pub fn model_config(
        &self,
        kind: ModelKind,
        num_classes: usize,
        vocab_size: usize,
    ) -> ModelConfig {
        ModelConfig {
            kind,
            num_classes,
            vocab_size,
            embed_dim: self.embed_dim,
            filter_widths: self.filter_widths.clone(),
            maps_per_width: self.maps_per_width,
            hidden_dim: self.hidden_dim,
            acoustic_width: self.acoustic_width,
            acoustic_maps: self.acoustic_maps,
            max_frames: self.max_frames,
            pool_frames: self.pool_frames,
            dropout: self.dropout,
            max_len: self.max_len,
            ..ModelConfig::default()
        }
    }

    pub fn mfcc_config(&self) -> MfccConfig {
        MfccConfig {
            mean_normalize: self.mfcc_mean_normalize,
            ..MfccConfig::default()
        }
    }

    /// `lr0 · decay^⌊updates / decay_every⌋`.
    pub fn lr_at(&self, updates: usize) -> f64 {
        self.lr0 * self.decay.powi((updates / self.decay_every) as i32)
    }
}

/// Step schedule with the default constants: `0.11 · 0.9^⌊updates/2000⌋`.
pub fn lr_at(updates: usize) -> f64 {
    TrainConfig::default().lr_at(updates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at(0), 0.11);
        assert_eq!(lr_at(1999), 0.11);
        assert_eq!(lr_at(2000), 0.099);
        assert!((lr_at(4000) - 0.0891).abs() <= f64::EPSILON * 0.0891);
        assert_eq!(lr_at(6000), lr_at(4000) * 0.9);
    }

    #[test]
    fn file_round_trip() {
        let cfg = TrainConfig {
            seed: 9,
            lr0: 0.05,
            filter_widths: vec![2, 3],
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&cfg.to_file_string()).unwrap(), cfg);
        assert_eq!(TrainConfig::from_echo(&cfg.echo()).unwrap(), cfg);
        assert!(cfg.echo().contains("filter_widths=[2,3]"));
        assert!(!cfg.echo().contains('\n'));
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let cfg = TrainConfig::from_toml("epochs = 3\n# comment\nbatch_size = 150\n").unwrap();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.lr0), (3, 150, 0.11));
        let err = TrainConfig::from_toml("epoch = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("epoch"), "{err}");
        assert!(TrainConfig::from_toml("batch_size = 0\n").is_err());
    }

    #[test]
    fn overrides() {
        let cfg = TrainConfig::default()
            .with_overrides(&["epochs=2", "dropout = 0.25", "precision=f64"])
            .unwrap();
        assert_eq!(
            (cfg.epochs, cfg.dropout, cfg.precision),
            (2, 0.25, Precision::F64)
        );
        assert!(TrainConfig::default().with_overrides(&["epochs"]).is_err());
    }
}
