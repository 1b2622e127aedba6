use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.3;
/// Kernel and stride of the waveform front-end convolution.
pub const FRONT_KERNEL: usize = 3;
pub const FRONT_STRIDE: usize = 3;
/// Kernel of the two convolutions inside each residual stack.
pub const RESCONV_KERNEL: usize = 3;
pub const POOL_WINDOW: usize = 3;
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// One intonation attention per block.
    Light,
    /// Two hierarchically averaged attentions per block.
    Heavy,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Light => "light",
            Variant::Heavy => "heavy",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "light" | "l" | "fdn-l" => Ok(Variant::Light),
            "heavy" | "h" | "fdn-h" => Ok(Variant::Heavy),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected light or heavy)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
///
/// Channel widths are the nominal full-size values; every width (including
/// the GRU and embedding sizes) is divided by `channel_divisor` when the
/// network is built, which is how the tiny test configurations are made.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub front_channels: usize,
    pub block1_channels: usize,
    pub block0_repeats: usize,
    pub block1_repeats: usize,
    /// Channel reduction ratio of the attention bottleneck.
    pub alpha: usize,
    pub gru_hidden: usize,
    pub embedding_dim: usize,
    pub num_speakers: usize,
    pub crop_samples: usize,
    /// Offset of the ending window past the beginning window, as a fraction
    /// of the feature length. 0.5 gives non-overlapping halves.
    pub shift_fraction: f64,
    pub channel_divisor: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Light,
            front_channels: 128,
            block1_channels: 256,
            block0_repeats: 2,
            block1_repeats: 4,
            alpha: 8,
            gru_hidden: 1024,
            embedding_dim: 1024,
            num_speakers: 6112,
            crop_samples: 59_049,
            // 0.5 s shift of a 3.19 s window over a 3.69 s crop.
            shift_fraction: 0.5 / 3.69,
            channel_divisor: 1,
        }
    }
}

/// Channel divisor of the tiny preset.
pub const TINY_DIVISOR: usize = 16;

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Every structural feature of the full network at 1/16 width, 8
    /// speakers and 3^7-sample crops.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            channel_divisor: TINY_DIVISOR,
            num_speakers: 8,
            crop_samples: 2187,
            ..Self::default()
        }
    }

    pub fn front_width(&self) -> usize {
        self.front_channels / self.channel_divisor
    }

    pub fn block1_width(&self) -> usize {
        self.block1_channels / self.channel_divisor
    }

    pub fn gru_width(&self) -> usize {
        self.gru_hidden / self.channel_divisor
    }

    pub fn embedding_width(&self) -> usize {
        self.embedding_dim / self.channel_divisor
    }

    pub fn num_blocks(&self) -> usize {
        self.block0_repeats + self.block1_repeats
    }

    /// Total downsampling from waveform samples to GRU frames.
    pub fn total_stride(&self) -> usize {
        FRONT_STRIDE * POOL_WINDOW.pow(self.num_blocks() as u32)
    }

    /// Shortest waveform the network accepts (one GRU frame).
    pub fn min_samples(&self) -> usize {
        self.total_stride()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channel_divisor == 0 {
            return bad("channel_divisor must be positive".into());
        }
        for (name, v) in [
            ("front_channels", self.front_channels),
            ("block1_channels", self.block1_channels),
            ("gru_hidden", self.gru_hidden),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v % self.channel_divisor != 0 || v / self.channel_divisor == 0 {
                return bad(format!(
                    "{name} = {v} is not a positive multiple of channel_divisor {}",
                    self.channel_divisor
                ));
            }
        }
        if self.block0_repeats == 0 || self.block1_repeats == 0 {
            return bad("block repeats must be positive".into());
        }
        if self.alpha == 0 {
            return bad("alpha must be positive".into());
        }
        for width in [self.front_width(), self.block1_width()] {
            if width % self.alpha != 0 {
                return bad(format!(
                    "alpha {} does not divide channel count {width}",
                    self.alpha
                ));
            }
        }
        if self.num_speakers < 2 {
            return bad("num_speakers must be at least 2".into());
        }
        if !(self.shift_fraction > 0.0 && self.shift_fraction < 1.0) {
            return bad(format!(
                "shift_fraction {} outside (0, 1)",
                self.shift_fraction
            ));
        }
        let stride = self.total_stride();
        let ratio = self.crop_samples / stride;
        if !self.crop_samples.is_multiple_of(stride) || !is_power_of_three(ratio) {
            return bad(format!(
                "crop_samples {} is not a power of 3 times the total stride {stride}",
                self.crop_samples
            ));
        }
        Ok(())
    }

    /// `key=value` lines describing every field, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("front_channels", self.front_channels.to_string()),
            ("block1_channels", self.block1_channels.to_string()),
            ("block0_repeats", self.block0_repeats.to_string()),
            ("block1_repeats", self.block1_repeats.to_string()),
            ("alpha", self.alpha.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("num_speakers", self.num_speakers.to_string()),
            ("crop_samples", self.crop_samples.to_string()),
            // Debug formatting of f64 round-trips exactly.
            ("shift_fraction", format!("{:?}", self.shift_fraction)),
            ("channel_divisor", self.channel_divisor.to_string()),
        ]
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// that are not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
        }
        match key {
            "variant" => self.variant = value.trim().parse()?,
            "front_channels" => self.front_channels = num(key, value)?,
            "block1_channels" => self.block1_channels = num(key, value)?,
            "block0_repeats" => self.block0_repeats = num(key, value)?,
            "block1_repeats" => self.block1_repeats = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "gru_hidden" => self.gru_hidden = num(key, value)?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "num_speakers" => self.num_speakers = num(key, value)?,
            "crop_samples" => self.crop_samples = num(key, value)?,
            "shift_fraction" => self.shift_fraction = num(key, value)?,
            "channel_divisor" => self.channel_divisor = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn is_power_of_three(mut v: usize) -> bool {
    if v == 0 {
        return false;
    }
    while v.is_multiple_of(3) {
        v /= 3;
    }
    v == 1
}
