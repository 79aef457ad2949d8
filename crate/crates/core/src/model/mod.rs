//! The lexical (LM), acoustic (AM) and fused lexico-acoustic (LAM)
//! dialog-act classifiers.
//!
//! * LM: each utterance of the context window is embedded, run through
//!   same-length convolutions of several widths, rectified and max-pooled
//!   over time into `p`. An LSTM reads the `p` vectors of the window from a
//!   zero state; attention scores `Wᵀh` are softmax-normalized into `α` and
//!   the context vector is `l = Σ α_i h_i`.
//! * AM: the current utterance's MFCC grid, padded or truncated to a fixed
//!   frame budget, is convolved with full-height filters, rectified and
//!   window-pooled over time into `a`.
//! * LAM: `l ⊕ a`.
//!
//! Every variant ends in a dense layer and a softmax. All parameters live in
//! one [`ParamStore`] under stable names such as `lex.filter.w3.17`,
//! `ctx.lstm.Wx` or `head.W`.

mod checkpoint;
mod features;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Gradients, LstmVars, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::text::{EmbeddingTable, PAD_ID};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use features::{prepare_split, AudioCache, PreparedDialog, PreparedUtterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lm")]
    Lexical,
    #[serde(rename = "am")]
    Acoustic,
    #[serde(rename = "lam")]
    LexicoAcoustic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Lexical,
        ModelKind::Acoustic,
        ModelKind::LexicoAcoustic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lexical => "lm",
            ModelKind::Acoustic => "am",
            ModelKind::LexicoAcoustic => "lam",
        }
    }

    pub fn uses_text(self) -> bool {
        self != ModelKind::Acoustic
    }

    pub fn uses_audio(self) -> bool {
        self != ModelKind::Lexical
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lm" => Ok(ModelKind::Lexical),
            "am" => Ok(ModelKind::Acoustic),
            "lam" => Ok(ModelKind::LexicoAcoustic),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?} (expected lm, am or lam)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub maps_per_width: usize,
    pub hidden_dim: usize,
    pub mfcc_dim: usize,
    pub acoustic_width: usize,
    pub acoustic_maps: usize,
    /// Frame budget every MFCC grid is padded or truncated to.
    pub max_frames: usize,
    /// Height of the non-overlapping pooling window over frames.
    pub pool_frames: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::LexicoAcoustic,
            num_classes: 5,
            vocab_size: 2,
            embed_dim: 300,
            filter_widths: vec![3, 4, 5],
            maps_per_width: 100,
            hidden_dim: 300,
            mfcc_dim: 13,
            acoustic_width: 5,
            acoustic_maps: 100,
            max_frames: 360,
            pool_frames: 18,
            dropout: 0.5,
            max_len: 100,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("maps_per_width", self.maps_per_width),
            ("hidden_dim", self.hidden_dim),
            ("mfcc_dim", self.mfcc_dim),
            ("acoustic_width", self.acoustic_width),
            ("acoustic_maps", self.acoustic_maps),
            ("max_frames", self.max_frames),
            ("pool_frames", self.pool_frames),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!(
                "model setting {name} must be positive"
            )));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(Error::invalid(
                "filter_widths must be a non-empty list of positive widths",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Length of `p`, the per-utterance lexical vector.
    pub fn lexical_dim(&self) -> usize {
        self.filter_widths.len() * self.maps_per_width
    }

    pub fn pooled_frames(&self) -> usize {
        self.max_frames.div_ceil(self.pool_frames)
    }

    /// Length of `a`.
    pub fn acoustic_dim(&self) -> usize {
        self.acoustic_maps * self.pooled_frames()
    }

    /// Length of the vector the classifier head consumes.
    pub fn representation_dim(&self) -> usize {
        match self.kind {
            ModelKind::Lexical => self.hidden_dim,
            ModelKind::Acoustic => self.acoustic_dim(),
            ModelKind::LexicoAcoustic => self.hidden_dim + self.acoustic_dim(),
        }
    }
}

/// Class distribution with its first argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Prediction {
        let probs: Vec<f64> = kernels::softmax(logits)
            .iter()
            .map(|p| p.as_f64())
            .collect();
        Prediction {
            label: first_argmax(&probs),
            probs,
        }
    }
}

pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug)]
struct ParamIds {
    embed: Option<ParamId>,
    /// `(filter, bias)` per lexical map in (width, map) order.
    lex: Vec<(ParamId, ParamId)>,
    lstm: Option<[ParamId; 3]>,
    attn: Option<ParamId>,
    /// `(filter, bias)` per acoustic map.
    ac: Vec<(ParamId, ParamId)>,
    head_w: ParamId,
    head_b: ParamId,
}

fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    if cfg.kind.uses_text() {
        out.push(("lex.embed".to_string(), vec![cfg.vocab_size, cfg.embed_dim]));
        for &w in &cfg.filter_widths {
            for k in 0..cfg.maps_per_width {
                out.push((format!("lex.filter.w{w}.{k}"), vec![cfg.embed_dim, w]));
                out.push((format!("lex.bias.w{w}.{k}"), vec![1]));
            }
        }
        let h = cfg.hidden_dim;
        out.push(("ctx.lstm.Wx".to_string(), vec![4 * h, cfg.lexical_dim()]));
        out.push(("ctx.lstm.Wh".to_string(), vec![4 * h, h]));
        out.push(("ctx.lstm.b".to_string(), vec![4 * h]));
        out.push(("ctx.attn.W".to_string(), vec![h]));
    }
    if cfg.kind.uses_audio() {
        for k in 0..cfg.acoustic_maps {
            out.push((
                format!("ac.filter.{k}"),
                vec![cfg.mfcc_dim, cfg.acoustic_width],
            ));
            out.push((format!("ac.bias.{k}"), vec![1]));
        }
    }
    out.push((
        "head.W".to_string(),
        vec![cfg.num_classes, cfg.representation_dim()],
    ));
    out.push(("head.b".to_string(), vec![cfg.num_classes]));
    out
}

impl ParamIds {
    fn resolve<T: Scalar>(cfg: &ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        let expected = expected_shapes(cfg);
        if expected.len() != params.len() {
            return Err(Error::Format {
                what: "model parameters",
                msg: format!(
                    "expected {} tensors, found {}",
                    expected.len(),
                    params.len()
                ),
            });
        }
        for (name, shape) in &expected {
            let t = params.by_name(name).ok_or_else(|| Error::Format {
                what: "model parameters",
                msg: format!("missing tensor {name}"),
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format {
                    what: "model parameters",
                    msg: format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    ),
                });
            }
        }
        let id = |n: &str| params.require(n);
        let text = cfg.kind.uses_text();
        let mut lex = Vec::new();
        let mut ac = Vec::new();
        if text {
            for &w in &cfg.filter_widths {
                for k in 0..cfg.maps_per_width {
                    lex.push((
                        id(&format!("lex.filter.w{w}.{k}"))?,
                        id(&format!("lex.bias.w{w}.{k}"))?,
                    ));
                }
            }
        }
        if cfg.kind.uses_audio() {
            for k in 0..cfg.acoustic_maps {
                ac.push((id(&format!("ac.filter.{k}"))?, id(&format!("ac.bias.{k}"))?));
            }
        }
        Ok(ParamIds {
            embed: text.then(|| id("lex.embed")).transpose()?,
            lex,
            lstm: if text {
                Some([id("ctx.lstm.Wx")?, id("ctx.lstm.Wh")?, id("ctx.lstm.b")?])
            } else {
                None
            },
            attn: text.then(|| id("ctx.attn.W")).transpose()?,
            ac,
            head_w: id("head.W")?,
            head_b: id("head.b")?,
        })
    }
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

/// Seeded random parameters: Glorot-uniform filters and head, LSTM and
/// attention weights uniform in `±1/√H`, embeddings uniform in `±0.25` with
/// a zero PAD row, zero biases.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let inv_sqrt_h = 1.0 / (cfg.hidden_dim as f64).sqrt();
    for (name, shape) in expected_shapes(cfg) {
        let t = if name.contains(".bias.") || name == "head.b" || name == "ctx.lstm.b" {
            Tensor::zeros(&shape)
        } else if name == "lex.embed" {
            EmbeddingTable::random(cfg.vocab_size, cfg.embed_dim, rng.gen()).table
        } else if name.starts_with("ctx.") {
            uniform(&mut rng, &shape, inv_sqrt_h)
        } else {
            let (fan_in, fan_out) = if name == "head.W" {
                (shape[1], shape[0])
            } else {
                (shape[0] * shape[1], shape[1])
            };
            uniform(&mut rng, &shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
        };
        store.insert(name, t.cast())?;
    }
    Ok(store)
}

/// Pads with zero columns or truncates a `rows×cols` grid to `cols` columns.
pub fn fit_columns<T: Scalar>(grid: &Tensor<T>, cols: usize) -> Result<Tensor<T>> {
    let (rows, have) = grid.dims2()?;
    if have == cols {
        return Ok(grid.clone());
    }
    let keep = have.min(cols);
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        out.data_mut()[r * cols..r * cols + keep].copy_from_slice(&grid.row(r)[..keep]);
    }
    Ok(out)
}

/// `l = Σ α_i h_i` with `α = softmax(Wᵀh_i)`. Returns `(l, α)`.
pub fn attention_pool<T: Scalar>(
    tape: &mut Tape<'_, T>,
    hidden: &[Var],
    w: Var,
) -> Result<(Var, Var)> {
    if hidden.is_empty() {
        return Err(Error::invalid("attention over an empty sequence"));
    }
    let scores = hidden
        .iter()
        .map(|&h| tape.dot(w, h))
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat(&scores)?;
    let alpha = tape.softmax(scores);
    let l = tape.weighted_sum(alpha, hidden)?;
    Ok((l, alpha))
}

/// A classifier: configuration plus parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: ParamIds,
}

/// What one forward pass exposes besides the logits.
pub struct Trace {
    pub logits: Var,
    pub alpha: Option<Var>,
    pub representation: Var,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking every expected tensor is present
    /// with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Model {
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Id of the embedding table, if the model reads text.
    pub fn embedding_id(&self) -> Option<ParamId> {
        self.ids.embed
    }

    /// Replaces the embedding table (e.g. with pretrained vectors).
    pub fn set_embeddings(&mut self, table: &EmbeddingTable) -> Result<()> {
        self.params.set("lex.embed", table.table.cast())
    }

    /// `p`: one max-pooled activation per lexical map, in (width, map) order.
    pub fn encode_lexical(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Result<Var> {
        let embed = self
            .ids
            .embed
            .ok_or_else(|| Error::invalid("model has no lexical encoder"))?;
        let ids: Vec<usize> = if ids.is_empty() {
            vec![PAD_ID]
        } else {
            ids.iter().take(self.config.max_len).copied().collect()
        };
        let table = tape.param(embed);
        let grid = tape.embed(table, &ids, Some(PAD_ID))?;
        let mut pooled = Vec::with_capacity(self.ids.lex.len());
        for &(f, b) in &self.ids.lex {
            let (f, b) = (tape.param(f), tape.param(b));
            let map = tape.conv_time(grid, f, Some(b))?;
            let map = tape.relu(map);
            pooled.push(tape.max_pool_time(map)?);
        }
        tape.concat(&pooled)
    }

    /// LSTM over `p_seq` from a zero state, then attention pooling of the
    /// hidden states. Returns `(l, α)`.
    pub fn roa_context(&self, tape: &mut Tape<'_, T>, p_seq: &[Var]) -> Result<(Var, Var)> {
        let [wx, wh, b] = self
            .ids
            .lstm
            .ok_or_else(|| Error::invalid("model has no context encoder"))?;
        if p_seq.is_empty() {
            return Err(Error::invalid("context window is empty"));
        }
        let w = LstmVars {
            wx: tape.param(wx),
            wh: tape.param(wh),
            b: tape.param(b),
        };
        let zero = tape.constant(Tensor::zeros(&[self.config.hidden_dim]));
        let (mut h, mut c) = (zero, zero);
        let mut hidden = Vec::with_capacity(p_seq.len());
        for &p in p_seq {
            (h, c) = tape.lstm_step(p, h, c, w)?;
            hidden.push(h);
        }
        let attn = tape.param(self.ids.attn.expect("attention with lstm"));
        attention_pool(tape, &hidden, attn)
    }

    /// `a`: the grid is fitted to the frame budget, convolved per map,
    /// rectified and window-pooled; maps are concatenated map-major.
    pub fn encode_acoustic(&self, tape: &mut Tape<'_, T>, grid: &Tensor<T>) -> Result<Var> {
        if self.ids.ac.is_empty() {
            return Err(Error::invalid("model has no acoustic encoder"));
        }
        let (rows, _) = grid.dims2()?;
        if rows != self.config.mfcc_dim {
            return Err(Error::shape(
                "encode_acoustic",
                format!("grid has {rows} rows, expected {}", self.config.mfcc_dim),
            ));
        }
        let frames = self.config.max_frames;
        let input = tape.constant(fit_columns(grid, frames)?);
        let mut pooled = Vec::with_capacity(self.ids.ac.len());
        for &(f, b) in &self.ids.ac {
            let (f, b) = (tape.param(f), tape.param(b));
            let map = tape.conv_time(input, f, Some(b))?;
            let map = tape.relu(map);
            let map = tape.reshape(map, vec![frames, 1])?;
            let map = tape.max_pool_window(map, (self.config.pool_frames, 1))?;
            pooled.push(map);
        }
        let a = tape.concat(&pooled)?;
        Ok(a)
    }

    /// Builds the full forward pass for `window` (last element is the
    /// target). Dropout is applied to the representation when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        window: &[PreparedUtterance<T>],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Trace> {
        self.forward_shared(tape, window, rng, &mut HashMap::new())
    }

    /// As [`Model::forward`], reusing lexical encodings already on the tape
    /// for utterances shared between windows (keyed by address).
    fn forward_shared(
        &self,
        tape: &mut Tape<'_, T>,
        window: &[PreparedUtterance<T>],
        rng: Option<&mut ChaCha8Rng>,
        encoded: &mut HashMap<*const PreparedUtterance<T>, Var>,
    ) -> Result<Trace> {
        let target = window
            .last()
            .ok_or_else(|| Error::invalid("context window is empty"))?;
        let mut alpha = None;
        let mut parts = Vec::with_capacity(2);
        if self.config.kind.uses_text() {
            let mut p_seq = Vec::with_capacity(window.len());
            for u in window {
                let key = u as *const PreparedUtterance<T>;
                let p = match encoded.get(&key) {
                    Some(&p) => p,
                    None => {
                        let p = self.encode_lexical(tape, &u.ids)?;
                        encoded.insert(key, p);
                        p
                    }
                };
                p_seq.push(p);
            }
            let (l, a) = self.roa_context(tape, &p_seq)?;
            alpha = Some(a);
            parts.push(l);
        }
        if self.config.kind.uses_audio() {
            let grid = target
                .acoustic
                .as_ref()
                .ok_or_else(|| Error::invalid("utterance has no acoustic features"))?;
            parts.push(self.encode_acoustic(tape, grid)?);
        }
        let mut repr = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts)?
        };
        if let Some(rng) = rng {
            if self.config.dropout > 0.0 {
                repr = tape.dropout(repr, self.config.dropout, rng);
            }
        }
        let w = tape.param(self.ids.head_w);
        let b = tape.param(self.ids.head_b);
        let z = tape.matvec(w, repr)?;
        let logits = tape.add(z, b)?;
        Ok(Trace {
            logits,
            alpha,
            representation: repr,
        })
    }

    pub fn logits(&self, window: &[PreparedUtterance<T>]) -> Result<Vec<T>> {
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, window, None)?;
        Ok(tape.value(trace.logits).data().to_vec())
    }

    /// Evaluation-mode prediction for the last utterance of `window`.
    pub fn predict(&self, window: &[PreparedUtterance<T>]) -> Result<Prediction> {
        Ok(Prediction::from_logits(&self.logits(window)?))
    }

    /// Attention weights over `window` (lexical models only).
    pub fn attention(&self, window: &[PreparedUtterance<T>]) -> Result<Vec<T>> {
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, window, None)?;
        let alpha = trace
            .alpha
            .ok_or_else(|| Error::invalid("acoustic model has no attention"))?;
        Ok(tape.value(alpha).data().to_vec())
    }

    /// Mean cross-entropy over `batch` under `params`; when `grads` is given
    /// the gradient of that mean is added to it. Windows that share
    /// utterances (consecutive windows of one dialog) share their encodings.
    pub fn batch_loss(
        &self,
        params: &ParamStore<T>,
        batch: &[&[PreparedUtterance<T>]],
        mut rng: Option<&mut ChaCha8Rng>,
        grads: Option<&mut Gradients<T>>,
    ) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut tape = Tape::new(params);
        let mut encoded = HashMap::new();
        let mut losses = Vec::with_capacity(batch.len());
        for window in batch {
            let label = window
                .last()
                .ok_or_else(|| Error::invalid("context window is empty"))?
                .label;
            let trace = self.forward_shared(&mut tape, window, rng.as_deref_mut(), &mut encoded)?;
            losses.push(tape.softmax_cross_entropy(trace.logits, label)?);
        }
        let losses = tape.concat(&losses)?;
        let weights = tape.constant(Tensor::filled(
            &[batch.len()],
            T::one() / T::of(batch.len() as f64),
        ));
        let mean = tape.dot(losses, weights)?;
        if let Some(g) = grads {
            tape.backward(mean, g)?;
        }
        Ok(tape.value(mean).data()[0])
    }
}
