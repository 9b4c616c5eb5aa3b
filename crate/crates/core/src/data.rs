//! Synthetic corpora and JSON-lines persistence.
//!
//! Each label is rendered as `repeat_factor` consecutive frames holding its
//! one-hot vector plus Gaussian noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    /// `T x F` acoustic frames.
    pub frames: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.frames.first().map(Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab: usize,
    pub feature_dim: usize,
    pub repeat_factor: usize,
    pub noise_std: f64,
    pub min_labels: usize,
    pub max_labels: usize,
    pub count: usize,
    pub seed: u64,
    /// Whether the same label may appear twice in a row. Runs of a repeated
    /// label render as one indistinguishable block of frames.
    pub allow_repeats: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab: 8,
            feature_dim: 8,
            repeat_factor: 6,
            noise_std: 0.3,
            min_labels: 2,
            max_labels: 6,
            count: 100,
            seed: 0,
            allow_repeats: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab == 0 {
            return fail("synth vocab must be positive".into());
        }
        if self.feature_dim < self.vocab {
            return fail(format!(
                "feature_dim {} must be at least vocab {}",
                self.feature_dim, self.vocab
            ));
        }
        if self.repeat_factor == 0 {
            return fail("repeat_factor must be at least 1".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.min_labels == 0 || self.min_labels > self.max_labels {
            return fail(format!(
                "need 1 <= min_labels <= max_labels, got {}..{}",
                self.min_labels, self.max_labels
            ));
        }
        Ok(())
    }
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Utterance>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let n = rng.random_range(config.min_labels..=config.max_labels);
        let mut labels: Vec<usize> = Vec::with_capacity(n);
        for _ in 0..n {
            let label = match labels.last() {
                Some(&prev) if !config.allow_repeats && config.vocab > 1 => {
                    // uniform over the other vocab - 1 labels
                    let l = rng.random_range(0..config.vocab - 1);
                    if l >= prev {
                        l + 1
                    } else {
                        l
                    }
                }
                _ => rng.random_range(0..config.vocab),
            };
            labels.push(label);
        }
        let mut frames = Vec::with_capacity(n * config.repeat_factor);
        for &label in &labels {
            for _ in 0..config.repeat_factor {
                let mut frame = vec![0.0; config.feature_dim];
                frame[label] = 1.0;
                if config.noise_std > 0.0 {
                    for v in frame.iter_mut() {
                        *v += noise.sample(&mut rng);
                    }
                }
                frames.push(frame);
            }
        }
        out.push(Utterance { frames, labels });
    }
    Ok(out)
}

/// Writes one JSON object per line: `{"frames": [[...], ...], "labels": [...]}`.
pub fn save_dataset(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for utt in utterances {
        let line = serde_json::to_string(utt).expect("utterances serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(dim) = utt.feature_dim() {
            if utt.frames.iter().any(|f| f.len() != dim) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "frames have inconsistent dimensions".into(),
                });
            }
        }
        out.push(utt);
    }
    Ok(out)
}
