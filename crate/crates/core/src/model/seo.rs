//! Intonation attention from the finite difference between the beginning and
//! ending windows of a feature map.
//!
//! ```text
//! f1, f2 = beginning / ending windows of x
//! s  = Conv1(gap(f2)) - Conv2(gap(f1))     (channels C -> C/alpha)
//! s' = sigmoid(Conv3(s))                   (channels C/alpha -> C_out)
//! u  = s' * x                              (per-channel reweighting)
//! ```

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ParamStore, Session};
use crate::rng::SplitMix64;

/// Placement of the beginning and ending windows along time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    /// The ending window starts `ceil(shift_fraction * T)` frames after the
    /// beginning window. 0.5 yields (for even `T`) non-overlapping halves.
    pub shift_fraction: f64,
}

impl SplitSpec {
    pub fn new(shift_fraction: f64) -> Self {
        Self { shift_fraction }
    }

    /// Length `T'` of both windows for a feature of `t` frames.
    pub fn window_len(&self, t: usize) -> Result<usize> {
        // Tolerance keeps exact products such as 0.1 * 30 from rounding up.
        let shift = (self.shift_fraction * t as f64 - 1e-9).ceil().max(0.0) as usize;
        if !(self.shift_fraction > 0.0 && self.shift_fraction < 1.0) || shift >= t {
            return Err(Error::FeatureTooShort {
                len: t,
                shift_fraction: self.shift_fraction,
            });
        }
        Ok(t - shift)
    }
}

/// Splits `f` into `(f1, f2)`: `f1` covers frames `0..T'` and `f2` covers
/// `T-T'..T`, so the ending window always ends at the final frame.
pub fn split_feature(tape: &mut Tape, f: Var, split: SplitSpec) -> Result<(Var, Var)> {
    let t = *tape.shape(f).last().expect("non-empty shape");
    let len = split.window_len(t)?;
    let f1 = tape.slice_time(f, 0, len)?;
    let f2 = tape.slice_time(f, t - len, len)?;
    Ok((f1, f2))
}

#[derive(Clone, Debug)]
pub struct SeoModule {
    /// Reduces the pooled ending window.
    pub conv1: Conv1d,
    /// Reduces the pooled beginning window.
    pub conv2: Conv1d,
    /// Expands the difference back to the reweighted channel count.
    pub conv3: Conv1d,
    pub alpha: usize,
    pub split: SplitSpec,
}

impl SeoModule {
    /// Attention over `in_channels` producing `out_channels` weights.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        alpha: usize,
        split: SplitSpec,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if alpha == 0 || !in_channels.is_multiple_of(alpha) {
            return Err(Error::Config(format!(
                "reduction ratio {alpha} does not divide {in_channels} channels"
            )));
        }
        let reduced = in_channels / alpha;
        Ok(Self {
            conv1: Conv1d::new(
                store,
                &format!("{name}.conv1"),
                in_channels,
                reduced,
                1,
                1,
                0,
                rng,
            ),
            conv2: Conv1d::new(
                store,
                &format!("{name}.conv2"),
                in_channels,
                reduced,
                1,
                1,
                0,
                rng,
            ),
            conv3: Conv1d::new(
                store,
                &format!("{name}.conv3"),
                reduced,
                out_channels,
                1,
                1,
                0,
                rng,
            ),
            alpha,
            split,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.out_channels
    }

    /// The difference `s` (before expansion), shaped `[.., C/alpha, 1]`.
    pub fn difference(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (f1, f2) = split_feature(&mut s.tape, x, self.split)?;
        let begin = s.tape.global_avg_pool(f1)?;
        let end = s.tape.global_avg_pool(f2)?;
        let end = self.conv1.forward(s, end)?;
        let begin = self.conv2.forward(s, begin)?;
        s.tape.sub(end, begin)
    }

    /// Channel weights `s'` in `(0, 1)`, shaped `[.., C_out, 1]`.
    pub fn attention(&self, s: &mut Session, x: Var) -> Result<Var> {
        let diff = self.difference(s, x)?;
        let expanded = self.conv3.forward(s, diff)?;
        Ok(s.tape.sigmoid(expanded))
    }

    /// Returns the reweighted map `u` and the weights `s'`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let weights = self.attention(s, x)?;
        let u = s.tape.channel_scale(x, weights)?;
        Ok((u, weights))
    }

    pub fn num_params(&self) -> usize {
        self.conv1.num_params() + self.conv2.num_params() + self.conv3.num_params()
    }
}

/// Averages two attention vectors and reweights `f` with the result.
/// Returns `(u_h, s'_h)`.
pub fn hierarchical_reweight(
    s: &mut Session,
    f: Var,
    first: Var,
    second: Var,
) -> Result<(Var, Var)> {
    let sum = s.tape.add(first, second)?;
    let averaged = s.tape.scale(sum, 0.5);
    let u = s.tape.channel_scale(f, averaged)?;
    Ok((u, averaged))
}
