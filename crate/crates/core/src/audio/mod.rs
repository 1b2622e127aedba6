//! Waveform I/O, preprocessing and the synthetic corpus.

pub mod manifest;
pub mod preprocess;
pub mod synth;
pub mod wav;

pub use manifest::{CorpusManifest, Split, Utterance};
pub use preprocess::{
    crop_or_pad, pre_emphasis, speed_perturb, CropPolicy, MAX_SPEED, MIN_SPEED, PRE_EMPHASIS,
};
pub use synth::{generate_synthetic_corpus, SynthCorpus, SynthSpec};
pub use wav::{read_wav, write_wav, SampleFormat};

use crate::model::config::SAMPLE_RATE;

/// Mono samples, nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn at_default_rate(samples: Vec<f64>) -> Self {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}
