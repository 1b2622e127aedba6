use crate::audio::{crop_or_pad, pre_emphasis, CropPolicy, Waveform, PRE_EMPHASIS};
use crate::error::{Error, Result};
use crate::model::FdnModel;

/// Length the network sees for an utterance of `len` samples: the next
/// multiple of the total stride, and never below the minimum length.
pub fn padded_length(model: &FdnModel, len: usize) -> usize {
    let stride = model.config.total_stride();
    len.div_ceil(stride).max(1) * stride
}

/// Eval-mode speaker embedding of a whole utterance, L2-normalized.
///
/// The waveform is cyclically padded to [`padded_length`] and
/// pre-emphasized, matching the training-time crop pipeline.
pub fn extract_embedding(model: &FdnModel, wave: &Waveform) -> Result<Vec<f64>> {
    if wave.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot embed an empty waveform".into(),
        ));
    }
    let padded = crop_or_pad(wave, padded_length(model, wave.len()), CropPolicy::Center);
    let input = pre_emphasis(&padded, PRE_EMPHASIS);
    let (embedding, _) = model.infer(&input.samples)?;
    normalize(embedding.into_data())
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// `a · b / (|a| |b|)`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_score",
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
