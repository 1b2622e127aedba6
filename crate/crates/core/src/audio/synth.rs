//! Synthetic speakers for desk-scale experiments.
//!
//! Each speaker is three harmonics of a speaker-specific fundamental with
//! fixed relative amplitudes, under a characteristic amplitude modulation.
//! Utterances of one speaker differ only in phases, a slight pitch jitter and
//! additive noise, so the corpus is separable by construction.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::manifest::{CorpusManifest, Split, Utterance};
use super::wav::write_wav;
use super::Waveform;
use crate::error::{Error, Result};
use crate::model::config::SAMPLE_RATE;
use crate::rng::{derive_seed, seeded};

const LOWEST_F0: f64 = 110.0;
const HIGHEST_F0: f64 = 880.0;
const PEAK: f64 = 0.8;
const NOISE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub f0: f64,
    pub amplitudes: [f64; 3],
    pub am_rate: f64,
    pub am_depth: f64,
}

/// Speaker fundamentals on a geometric ladder between 110 and 880 Hz,
/// assigned to speakers in a seeded order.
pub fn speaker_profiles(num_speakers: usize, seed: u64) -> Vec<SpeakerProfile> {
    let mut rungs: Vec<usize> = (0..num_speakers).collect();
    rungs.shuffle(&mut seeded(seed));
    let ratio = if num_speakers > 1 {
        (HIGHEST_F0 / LOWEST_F0).powf(1.0 / (num_speakers - 1) as f64)
    } else {
        1.0
    };
    rungs
        .into_iter()
        .enumerate()
        .map(|(s, rung)| {
            let mut rng = seeded(derive_seed(seed, s as u64 + 1));
            SpeakerProfile {
                f0: LOWEST_F0 * ratio.powi(rung as i32) * rng.random_range(0.98..1.02),
                amplitudes: [
                    rng.random_range(0.3..1.0),
                    rng.random_range(0.3..1.0),
                    rng.random_range(0.3..1.0),
                ],
                am_rate: rng.random_range(3.0..9.0),
                am_depth: rng.random_range(0.2..0.8),
            }
        })
        .collect()
}

pub fn synthesize_utterance(
    profile: &SpeakerProfile,
    length: usize,
    sample_rate: u32,
    seed: u64,
) -> Waveform {
    let mut rng = seeded(seed);
    let f0 = profile.f0 * rng.random_range(0.995..1.005);
    let phases: [f64; 3] = [
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
    ];
    let am_phase = rng.random_range(0.0..TAU);
    let rate = f64::from(sample_rate);
    let clean: Vec<f64> = (0..length)
        .map(|i| {
            let t = i as f64 / rate;
            let env =
                1.0 - profile.am_depth * (0.5 + 0.5 * (TAU * profile.am_rate * t + am_phase).sin());
            let tone: f64 = (0..3)
                .map(|k| profile.amplitudes[k] * (TAU * (k + 1) as f64 * f0 * t + phases[k]).sin())
                .sum();
            env * tone
        })
        .collect();
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let samples = clean
        .into_iter()
        .map(|v| (PEAK * v / peak + rng.random_range(-NOISE..NOISE)).clamp(-1.0, 1.0))
        .collect();
    Waveform::new(samples, sample_rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_speakers: usize,
    pub train_utts: usize,
    /// Held-out utterances per speaker; zero skips the test split.
    pub test_utts: usize,
    pub length: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_speakers: 8,
            train_utts: 10,
            test_utts: 5,
            length: 8000,
            sample_rate: SAMPLE_RATE,
            seed: 0,
        }
    }
}

/// Locations of a generated corpus.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: CorpusManifest,
    pub test: Option<CorpusManifest>,
    pub train_manifest: PathBuf,
    pub test_manifest: Option<PathBuf>,
    /// All-pairs trials over the test split.
    pub trials: Option<PathBuf>,
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:03}")
}

/// Utterance waveform `index` of `speaker` in `split`, without touching disk.
pub fn synth_waveform(
    spec: &SynthSpec,
    profiles: &[SpeakerProfile],
    speaker: usize,
    split: Split,
    index: usize,
) -> Waveform {
    let stream = match split {
        Split::Train => 0,
        Split::Test => 1 << 32,
    };
    let seed = derive_seed(
        derive_seed(spec.seed, 1_000 + speaker as u64),
        stream + index as u64,
    );
    synthesize_utterance(&profiles[speaker], spec.length, spec.sample_rate, seed)
}

/// Writes `wav/*.wav`, `train.tsv`, and (with held-out utterances)
/// `test.tsv` plus `trials.txt` under `out_dir`.
pub fn generate_synthetic_corpus(
    spec: &SynthSpec,
    out_dir: impl AsRef<Path>,
) -> Result<SynthCorpus> {
    if spec.num_speakers < 2 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs at least 2 speakers".into(),
        ));
    }
    if spec.length == 0 || spec.train_utts == 0 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs a positive length and utterance count".into(),
        ));
    }
    if spec.test_utts == 1 {
        return Err(Error::InvalidArgument(
            "test split needs at least 2 utterances per speaker".into(),
        ));
    }
    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("wav"))?;
    let profiles = speaker_profiles(spec.num_speakers, spec.seed);

    let build = |split: Split, count: usize| -> Result<CorpusManifest> {
        let mut utterances = Vec::with_capacity(spec.num_speakers * count);
        for s in 0..spec.num_speakers {
            for u in 0..count {
                let id = format!("{}-{split}-{u:03}", speaker_id(s));
                let rel = PathBuf::from("wav").join(format!("{id}.wav"));
                write_wav(
                    out.join(&rel),
                    &synth_waveform(spec, &profiles, s, split, u),
                )?;
                utterances.push(Utterance {
                    id,
                    speaker: speaker_id(s),
                    path: rel,
                });
            }
        }
        CorpusManifest::new(split, utterances)
    };

    // Files keep paths relative to `out_dir`; the returned manifests resolve them.
    let resolved = |m: CorpusManifest| CorpusManifest {
        utterances: m
            .utterances
            .into_iter()
            .map(|u| Utterance {
                path: out.join(&u.path),
                ..u
            })
            .collect(),
        ..m
    };
    let train = build(Split::Train, spec.train_utts)?;
    let train_manifest = out.join("train.tsv");
    train.write(&train_manifest)?;
    let train = resolved(train);

    let (mut test, mut test_manifest, mut trials) = (None, None, None);
    if spec.test_utts > 0 {
        let manifest = build(Split::Test, spec.test_utts)?;
        let path = out.join("test.tsv");
        manifest.write(&path)?;
        let trials_path = out.join("trials.txt");
        fs::write(&trials_path, all_pairs_trials(&manifest))?;
        test = Some(resolved(manifest));
        test_manifest = Some(path);
        trials = Some(trials_path);
    }
    Ok(SynthCorpus {
        train,
        test,
        train_manifest,
        test_manifest,
        trials,
    })
}

/// Every unordered pair of distinct utterances, labelled 1 for same speaker.
pub fn all_pairs_trials(manifest: &CorpusManifest) -> String {
    let u = &manifest.utterances;
    let mut text = String::new();
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            let label = u8::from(u[i].speaker == u[j].speaker);
            text.push_str(&format!("{label} {} {}\n", u[i].id, u[j].id));
        }
    }
    text
}
