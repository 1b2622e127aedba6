use rand::Rng;

use super::Waveform;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const PRE_EMPHASIS: f64 = 0.97;
pub const MIN_SPEED: f64 = 0.5;
pub const MAX_SPEED: f64 = 2.0;

/// `y[0] = x[0]`, `y[t] = x[t] - coeff * x[t-1]`.
pub fn pre_emphasis(wave: &Waveform, coeff: f64) -> Waveform {
    let x = &wave.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - coeff * w[0]));
    Waveform::new(y, wave.sample_rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropPolicy {
    /// Offset drawn uniformly from the seeded stream.
    Random {
        seed: u64,
    },
    Center,
}

/// Returns exactly `n` samples: a contiguous crop of longer inputs, or a
/// cyclic repetition (starting at the first sample) of shorter ones.
pub fn crop_or_pad(wave: &Waveform, n: usize, policy: CropPolicy) -> Waveform {
    assert!(n >= 1, "crop length must be positive");
    let x = &wave.samples;
    let len = x.len();
    let samples = if len >= n {
        let offset = match policy {
            CropPolicy::Center => (len - n) / 2,
            CropPolicy::Random { seed } => seeded(seed).random_range(0..=len - n),
        };
        x[offset..offset + n].to_vec()
    } else {
        x.iter().copied().cycle().take(n).collect()
    };
    Waveform::new(samples, wave.sample_rate)
}

/// Linear-interpolation resampling to `round(len / factor)` samples, reading
/// the input at positions `i * factor`. Factors above 1 speed audio up.
pub fn speed_perturb(wave: &Waveform, factor: f64) -> Result<Waveform> {
    if !(MIN_SPEED..=MAX_SPEED).contains(&factor) {
        return Err(Error::InvalidArgument(format!(
            "speed factor {factor} outside [{MIN_SPEED}, {MAX_SPEED}]"
        )));
    }
    if factor == 1.0 {
        return Ok(wave.clone());
    }
    let x = &wave.samples;
    let out_len = ((x.len() as f64 / factor).round() as usize).max(1);
    let last = x.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let base = (pos.floor() as usize).min(last);
            if base == last {
                return x[last];
            }
            let frac = pos - base as f64;
            x[base] + frac * (x[base + 1] - x[base])
        })
        .collect();
    Ok(Waveform::new(samples, wave.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 16000)
    }

    #[test]
    fn pre_emphasis_examples() {
        let y = pre_emphasis(&wave(&[1.0, 1.0, 1.0]), 0.97);
        assert_eq!(y.samples[0], 1.0);
        assert!((y.samples[1] - 0.03).abs() < 1e-15);
        assert!((y.samples[2] - 0.03).abs() < 1e-15);
        let x = wave(&[0.3, -0.2, 0.9]);
        assert_eq!(pre_emphasis(&x, 0.0), x);
    }

    #[test]
    fn crop_examples() {
        let long = Waveform::new((0..100_000).map(|v| f64::from(v) / 1e5).collect(), 16000);
        for policy in [CropPolicy::Center, CropPolicy::Random { seed: 4 }] {
            let c = crop_or_pad(&long, 59_049, policy);
            assert_eq!(c.len(), 59_049);
            let start = long
                .samples
                .iter()
                .position(|&v| v == c.samples[0])
                .unwrap();
            assert_eq!(&long.samples[start..start + 59_049], c.samples.as_slice());
        }
        let same = wave(&[1.0, 2.0, 3.0]);
        assert_eq!(crop_or_pad(&same, 3, CropPolicy::Center), same);
        assert_eq!(
            crop_or_pad(&same, 7, CropPolicy::Center).samples,
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]
        );
    }

    #[test]
    fn random_crop_is_seeded() {
        let long = Waveform::new((0..1000).map(f64::from).collect(), 16000);
        let a = crop_or_pad(&long, 10, CropPolicy::Random { seed: 1 });
        let b = crop_or_pad(&long, 10, CropPolicy::Random { seed: 1 });
        assert_eq!(a, b);
        let distinct: std::collections::HashSet<u64> = (0..20)
            .map(|s| crop_or_pad(&long, 10, CropPolicy::Random { seed: s }).samples[0] as u64)
            .collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn speed_identity_and_ramp() {
        let x = wave(&[0.1, -0.4, 0.25, 0.8]);
        assert_eq!(speed_perturb(&x, 1.0).unwrap(), x);

        let ramp = Waveform::new((0..100).map(|v| f64::from(v) / 100.0).collect(), 16000);
        let fast = speed_perturb(&ramp, 2.0).unwrap();
        assert_eq!(fast.len(), 50);
        for (t, v) in fast.samples.iter().enumerate() {
            assert!((v - 2.0 * t as f64 / 100.0).abs() < 1e-12);
        }
        let slow = speed_perturb(&ramp, 0.5).unwrap();
        assert_eq!(slow.len(), 200);
        assert!((slow.samples[7] - 0.035).abs() < 1e-12);
    }

    #[test]
    fn speed_rejects_out_of_range() {
        let x = wave(&[0.0; 10]);
        assert!(speed_perturb(&x, 0.49).is_err());
        assert!(speed_perturb(&x, 2.01).is_err());
        assert!(speed_perturb(&x, 0.5).is_ok());
    }
}
