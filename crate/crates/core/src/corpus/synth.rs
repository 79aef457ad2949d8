//! Seeded synthetic dialog corpora with rendered audio.
//!
//! Each class has lexical templates and a prosody profile. Audio is a
//! harmonic tone following the class pitch contour (rising, flat or
//! falling) plus Gaussian noise, one 16-bit WAV per dialog with
//! utterance-level and word-level timestamps. Classes that share templates
//! but differ in contour are separable only acoustically.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Dialog, Split, Utterance, WordTime};
use crate::dsp::{write_wav, WavSignal};
use crate::error::{Error, Result};
use crate::io::read_to_string;
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contour {
    Rise,
    Flat,
    Fall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prosody {
    pub contour: Contour,
    /// Starting pitch drawn uniformly from this range.
    pub base_pitch_hz: [f64; 2],
    /// End-to-start pitch ratio of a rise; a fall uses the reciprocal.
    pub pitch_ratio: f64,
    pub duration_secs: [f64; 2],
    pub amplitude: f64,
}

impl Default for Prosody {
    fn default() -> Self {
        Prosody {
            contour: Contour::Flat,
            base_pitch_hz: [110.0, 150.0],
            pitch_ratio: 1.6,
            duration_secs: [0.3, 0.6],
            amplitude: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    pub templates: Vec<String>,
    #[serde(default)]
    pub prosody: Prosody,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_dialog_len")]
    pub utterances_per_dialog: usize,
    pub sizes: SplitSizes,
    /// Probability that an utterance's words and prosody come from a
    /// different class than its label.
    #[serde(default)]
    pub confusability: f64,
    /// Standard deviation of the additive noise.
    #[serde(default = "default_noise")]
    pub noise_level: f64,
    /// Silence (noise only) between utterances, drawn from this range.
    #[serde(default = "default_gap")]
    pub gap_secs: [f64; 2],
    pub classes: Vec<ClassSpec>,
}

fn default_rate() -> u32 {
    16000
}
fn default_dialog_len() -> usize {
    8
}
fn default_noise() -> f64 {
    0.005
}
fn default_gap() -> [f64; 2] {
    [0.1, 0.25]
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            what: "synth spec",
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synth spec has zero classes"));
        }
        if self.utterances_per_dialog == 0 {
            return Err(Error::invalid("utterances_per_dialog must be positive"));
        }
        if !(0.0..=1.0).contains(&self.confusability) {
            return Err(Error::invalid("confusability must lie in [0, 1]"));
        }
        let total: f64 = self.classes.iter().map(|c| c.weight).sum();
        if self.classes.iter().any(|c| c.weight < 0.0) || total <= 0.0 {
            return Err(Error::invalid(
                "class weights must be non-negative with a positive sum",
            ));
        }
        for c in &self.classes {
            if c.templates.is_empty() {
                return Err(Error::invalid(format!("class {} has no templates", c.name)));
            }
            let p = &c.prosody;
            if p.duration_secs[0] <= 0.0 || p.duration_secs[1] < p.duration_secs[0] {
                return Err(Error::invalid(format!(
                    "class {}: bad duration range",
                    c.name
                )));
            }
            if p.base_pitch_hz[0] <= 0.0
                || p.base_pitch_hz[1] < p.base_pitch_hz[0]
                || p.pitch_ratio <= 0.0
            {
                return Err(Error::invalid(format!(
                    "class {}: bad pitch settings",
                    c.name
                )));
            }
        }
        Ok(())
    }

    /// Per-class counts for `size` utterances, proportional to the weights
    /// (largest-remainder rounding, ties to the lower class index).
    pub fn class_counts(&self, size: usize) -> Vec<usize> {
        let total: f64 = self.classes.iter().map(|c| c.weight).sum();
        let quotas: Vec<f64> = self
            .classes
            .iter()
            .map(|c| c.weight / total * size as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let missing = size - counts.iter().sum::<usize>();
        for &k in order.iter().take(missing) {
            counts[k] += 1;
        }
        counts
    }
}

/// Generated corpus plus the audio it references (paths relative to the
/// output directory).
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub audio: Vec<(PathBuf, WavSignal)>,
}

impl SynthOutput {
    /// Writes the corpus files and WAVs under `dir` and points the corpus
    /// root there.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (rel, signal) in &self.audio {
            write_wav(dir.join(rel), signal)?;
        }
        self.corpus.root = dir.to_path_buf();
        self.corpus.save(dir)
    }
}

fn render_utterance(p: &Prosody, duration: f64, base: f64, rate: u32) -> Vec<f64> {
    let n = (duration * rate as f64).round() as usize;
    let ramp = ((0.015 * rate as f64) as usize).max(1);
    let end_ratio = match p.contour {
        Contour::Rise => p.pitch_ratio,
        Contour::Flat => 1.0,
        Contour::Fall => 1.0 / p.pitch_ratio,
    };
    let nyquist = rate as f64 / 2.0;
    let harmonics: Vec<f64> = (1..=10).map(|k| k as f64).collect();
    let norm: f64 = harmonics.iter().map(|k| 1.0 / k).sum();
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let s = i as f64 / n.max(1) as f64;
            let f0 = base * (1.0 + (end_ratio - 1.0) * s);
            phase += 2.0 * std::f64::consts::PI * f0 / rate as f64;
            let env = {
                let edge = i.min(n - 1 - i);
                if edge < ramp {
                    0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
                } else {
                    1.0
                }
            };
            let v: f64 = harmonics
                .iter()
                .filter(|k| *k * f0 < nyquist)
                .map(|k| (k * phase).sin() / k)
                .sum();
            p.amplitude * env * v / norm
        })
        .collect()
}

/// Builds a corpus from `spec`. Output is a pure function of `(spec, seed)`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, spec.noise_level.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let rate = spec.sample_rate;
    let mut corpus = Corpus {
        labels: spec.classes.iter().map(|c| c.name.clone()).collect(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        root: PathBuf::new(),
    };
    let mut audio = Vec::new();
    let num_classes = spec.classes.len();

    for split in Split::ALL {
        let counts = spec.class_counts(spec.sizes.get(split));
        let mut labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        labels.shuffle(&mut rng);

        for (d, chunk) in labels.chunks(spec.utterances_per_dialog).enumerate() {
            let dialog_id = format!("{}{:04}", split.name(), d);
            let rel = PathBuf::from("audio").join(format!("{dialog_id}.wav"));
            let mut samples: Vec<f64> = Vec::new();
            let mut utterances = Vec::with_capacity(chunk.len());
            let gap = |rng: &mut ChaCha8Rng| {
                let secs = rng.gen_range(spec.gap_secs[0]..=spec.gap_secs[1]);
                (secs * rate as f64).round() as usize
            };
            let lead = gap(&mut rng);
            samples.resize(lead, 0.0);

            for (index, &label) in chunk.iter().enumerate() {
                let content = if num_classes > 1 && rng.gen::<f64>() < spec.confusability {
                    let other = rng.gen_range(0..num_classes - 1);
                    if other >= label {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    label
                };
                let class = &spec.classes[content];
                let template = class
                    .templates
                    .choose(&mut rng)
                    .expect("validated non-empty");
                let tokens = tokenize(template);
                let p = &class.prosody;
                let duration = rng.gen_range(p.duration_secs[0]..=p.duration_secs[1]);
                let base = rng.gen_range(p.base_pitch_hz[0]..=p.base_pitch_hz[1]);
                let start_sample = samples.len();
                samples.extend(render_utterance(p, duration, base, rate));
                let start_sec = start_sample as f64 / rate as f64;
                let end_sec = samples.len() as f64 / rate as f64;
                let word_times = (!tokens.is_empty()).then(|| {
                    let step = (end_sec - start_sec) / tokens.len() as f64;
                    (0..tokens.len())
                        .map(|k| WordTime {
                            start_sec: start_sec + k as f64 * step,
                            end_sec: start_sec + (k + 1) as f64 * step,
                        })
                        .collect()
                });
                utterances.push(Utterance {
                    dialog_id: dialog_id.clone(),
                    index,
                    speaker: if index % 2 == 0 { "A" } else { "B" }.to_string(),
                    tokens,
                    label,
                    start_sec: Some(start_sec),
                    end_sec: Some(end_sec),
                    word_times,
                    audio_path: Some(rel.clone()),
                });
                let g = gap(&mut rng);
                samples.resize(samples.len() + g, 0.0);
            }
            for s in &mut samples {
                *s = (*s + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            }
            audio.push((rel, WavSignal::new(rate, samples)?));
            corpus.split_mut(split).push(Dialog {
                id: dialog_id,
                utterances,
            });
        }
    }
    Ok(SynthOutput { corpus, audio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec::from_toml(
            r#"
            utterances_per_dialog = 5
            sizes = { train = 40, valid = 10, test = 10 }

            [[classes]]
            name = "STATEMENT"
            weight = 0.6
            templates = ["this is your car"]
            prosody = { contour = "flat" }

            [[classes]]
            name = "QUESTION"
            weight = 0.4
            templates = ["this is your car"]
            prosody = { contour = "rise" }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn exact_split_sizes_and_prior() {
        let out = synth_generate(&spec(), 7).unwrap();
        let c = &out.corpus;
        assert_eq!(c.num_utterances(Split::Train), 40);
        assert_eq!(c.num_utterances(Split::Valid), 10);
        assert_eq!(c.num_utterances(Split::Test), 10);
        let statements = c.utterances(Split::Test).filter(|u| u.label == 0).count();
        assert_eq!(statements, 6);
        assert_eq!(
            out.audio.len(),
            c.train.len() + c.valid.len() + c.test.len()
        );
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&spec(), 3).unwrap();
        let b = synth_generate(&spec(), 3).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.audio.len(), b.audio.len());
        for ((pa, sa), (pb, sb)) in a.audio.iter().zip(&b.audio) {
            assert_eq!(pa, pb);
            assert_eq!(sa, sb);
        }
        let c = synth_generate(&spec(), 4).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn rejects_zero_classes() {
        let mut s = spec();
        s.classes.clear();
        assert!(synth_generate(&s, 1)
            .unwrap_err()
            .to_string()
            .contains("zero classes"));
    }

    #[test]
    fn largest_remainder_counts() {
        let mut s = spec();
        s.classes[0].weight = 1.0;
        s.classes[1].weight = 2.0;
        assert_eq!(s.class_counts(10), vec![3, 7]);
        assert_eq!(s.class_counts(0), vec![0, 0]);
    }

    #[test]
    fn toml_round_trip() {
        let s = spec();
        assert_eq!(SynthSpec::from_toml(&s.to_toml()).unwrap(), s);
    }
}
