use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::amsgrad::{AmsGrad, AmsGradConfig};
use crate::audio::{
    crop_or_pad, pre_emphasis, read_wav, CorpusManifest, CropPolicy, Waveform, PRE_EMPHASIS,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::checkpoint;
use crate::model::FdnModel;
use crate::nn::{Gradients, Mode, ParamId, Session};
use crate::numfmt::sig6;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Seeded random offset per utterance and epoch.
    Random,
    Center,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub crop: CropMode,
    /// Write a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: usize,
    pub optimizer: AmsGradConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 40,
            seed: 0,
            crop: CropMode::Random,
            checkpoint_every: 0,
            optimizer: AmsGradConfig::default(),
        }
    }
}

/// Labelled waveforms; labels index into `speakers`.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub waves: Vec<Waveform>,
    pub labels: Vec<usize>,
    pub speakers: Vec<String>,
}

impl TrainingData {
    pub fn from_manifest(manifest: &CorpusManifest) -> Result<Self> {
        let speakers = manifest.speakers();
        let mut waves = Vec::with_capacity(manifest.utterances.len());
        let mut labels = Vec::with_capacity(manifest.utterances.len());
        for u in &manifest.utterances {
            waves.push(read_wav(&u.path)?);
            labels.push(speakers.binary_search(&u.speaker).expect("speaker listed"));
        }
        Ok(Self {
            waves,
            labels,
            speakers,
        })
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainLog {
    /// `epoch<TAB>mean_loss<TAB>accuracy` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                e.epoch,
                sig6(e.mean_loss),
                sig6(e.accuracy)
            );
        }
        s
    }
}

/// Loss and correct-prediction count of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub loss: f64,
    pub correct: usize,
}

/// Builds a `[B, 1, T]` batch of pre-emphasized crops.
pub fn prepare_batch(
    waves: &[&Waveform],
    crop_samples: usize,
    policies: &[CropPolicy],
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(waves.len() * crop_samples);
    for (w, &policy) in waves.iter().zip(policies) {
        let cropped = crop_or_pad(w, crop_samples, policy);
        data.extend(pre_emphasis(&cropped, PRE_EMPHASIS).samples);
    }
    Tensor::new(vec![waves.len(), 1, crop_samples], data)
}

/// Running-statistic values queued by a train-mode forward pass.
pub type BufferUpdates = Vec<(ParamId, Tensor)>;

/// Forward + backward on one batch; mean cross-entropy over the batch.
pub fn batch_gradients(
    model: &FdnModel,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(StepResult, Gradients, BufferUpdates)> {
    let mut s = Session::new(&model.store, Mode::Train);
    let x = s.tape.constant(batch.clone());
    let out = model.forward(&mut s, x)?;
    let loss = s.tape.softmax_cross_entropy(out.logits, labels)?;
    let logits = s.tape.value(out.logits);
    let k = logits.shape()[1];
    let correct = logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    let loss_value = s.tape.value(loss).item();
    let grads = s.backward(loss)?;
    let updates = s.take_updates();
    Ok((
        StepResult {
            loss: loss_value,
            correct,
        },
        grads,
        updates,
    ))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One optimizer step on a prepared batch.
pub fn train_step(
    model: &mut FdnModel,
    opt: &mut AmsGrad,
    batch: &Tensor,
    labels: &[usize],
) -> Result<StepResult> {
    let (result, grads, updates) = batch_gradients(model, batch, labels)?;
    opt.step(&mut model.store, &grads)?;
    model.apply_updates(updates)?;
    Ok(result)
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each one.
///
/// Every epoch shuffles the utterances with a seeded stream, crops each one
/// to `crop_samples`, applies pre-emphasis and takes one AMSGrad step per
/// mini-batch. Checkpoints go to `checkpoint_dir` when given.
pub fn train(
    model: &mut FdnModel,
    data: &TrainingData,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainLog> {
    if data.speakers.len() != model.config.num_speakers {
        return Err(Error::SpeakerMismatch {
            corpus: data.speakers.len(),
            model: model.config.num_speakers,
        });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    let mut opt = AmsGrad::new(config.optimizer.clone(), &model.store);
    let mut log = TrainLog::default();
    let crop = model.config.crop_samples;
    for epoch in 1..=config.epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seeded(epoch_seed));

        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let waves: Vec<&Waveform> = chunk.iter().map(|&i| &data.waves[i]).collect();
            let policies: Vec<CropPolicy> = chunk
                .iter()
                .map(|&i| match config.crop {
                    CropMode::Random => CropPolicy::Random {
                        seed: derive_seed(epoch_seed, i as u64 + 1),
                    },
                    CropMode::Center => CropPolicy::Center,
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let batch = prepare_batch(&waves, crop, &policies)?;
            let step = train_step(model, &mut opt, &batch, &labels)?;
            loss_sum += step.loss * chunk.len() as f64;
            correct += step.correct;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        log.epochs.push(stats);

        if let Some(dir) = checkpoint_dir {
            let periodic = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
            if periodic || epoch == config.epochs {
                let path = dir.join(format!("epoch{epoch:04}.ckpt"));
                checkpoint::save(model, &path)?;
                log.checkpoints.push(path);
            }
        }
    }
    Ok(log)
}

/// Eval-mode classification accuracy over center crops.
pub fn classification_accuracy(model: &FdnModel, data: &TrainingData) -> Result<f64> {
    let mut correct = 0;
    for (wave, &label) in data.waves.iter().zip(&data.labels) {
        let batch = prepare_batch(&[wave], model.config.crop_samples, &[CropPolicy::Center])?;
        let (_, logits) = model.infer(batch.data())?;
        correct += usize::from(argmax(logits.data()) == label);
    }
    Ok(correct as f64 / data.len() as f64)
}
