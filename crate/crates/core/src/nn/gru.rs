//! Single-layer unidirectional GRU.
//!
//! ```text
//! r = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use super::layers::uniform;
use super::params::{Mode, ParamId, ParamKind, ParamStore, Session};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Input and recurrent weights of one gate.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub reset: GateParams,
    pub update: GateParams,
    pub candidate: GateParams,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let mut gate = |g: &str| {
            let mut add = |suffix: &str, shape: &[usize]| {
                store.add(
                    format!("{name}.{g}.{suffix}"),
                    Tensor::zeros(shape),
                    ParamKind::Trainable,
                )
            };
            GateParams {
                w_input: add("w_input", &[hidden_size, input_size]),
                b_input: add("b_input", &[hidden_size]),
                w_hidden: add("w_hidden", &[hidden_size, hidden_size]),
                b_hidden: add("b_hidden", &[hidden_size]),
            }
        };
        let layer = Self {
            reset: gate("reset"),
            update: gate("update"),
            candidate: gate("candidate"),
            input_size,
            hidden_size,
        };
        layer.init(store, rng);
        layer
    }

    /// All weights and biases uniform in `±sqrt(1 / hidden)`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let bound = (1.0 / self.hidden_size as f64).sqrt();
        for gate in [&self.reset, &self.update, &self.candidate] {
            for id in [gate.w_input, gate.b_input, gate.w_hidden, gate.b_hidden] {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = uniform(&shape, bound, rng);
            }
        }
    }

    fn gate_pre(&self, s: &mut Session, gate: &GateParams, x: Var, h: Var) -> Result<(Var, Var)> {
        let (wi, bi, wh, bh) = (
            s.param(gate.w_input),
            s.param(gate.b_input),
            s.param(gate.w_hidden),
            s.param(gate.b_hidden),
        );
        let xi = s.tape.linear(x, wi, Some(bi))?;
        let hh = s.tape.linear(h, wh, Some(bh))?;
        Ok((xi, hh))
    }

    /// Runs the recurrence over a channel-major feature map `[C, T]` or
    /// `[N, C, T]` from a zero state and returns the final state `[N, hidden]`.
    pub fn forward(&self, s: &mut Session, seq: Var) -> Result<Var> {
        let shape = s.tape.shape(seq).to_vec();
        let (n, c, t) = match *shape.as_slice() {
            [c, t] => (1, c, t),
            [n, c, t] => (n, c, t),
            _ => {
                return Err(Error::InvalidShape {
                    shape,
                    reason: "GRU input must be [C, T] or [N, C, T]".into(),
                })
            }
        };
        if c != self.input_size {
            return Err(Error::ChannelMismatch {
                op: "gru",
                expected: self.input_size,
                got: c,
            });
        }
        if t == 0 {
            return Err(Error::InputTooShort { op: "gru", len: 0 });
        }
        let mut h = s.tape.constant(Tensor::zeros(&[n, self.hidden_size]));
        for step in 0..t {
            let x = s.tape.time_step(seq, step)?;
            let (xr, hr) = self.gate_pre(s, &self.reset, x, h)?;
            let r = s.tape.add(xr, hr)?;
            let r = s.tape.sigmoid(r);
            let (xz, hz) = self.gate_pre(s, &self.update, x, h)?;
            let z = s.tape.add(xz, hz)?;
            let z = s.tape.sigmoid(z);
            let (xn, hn) = self.gate_pre(s, &self.candidate, x, h)?;
            let gated = s.tape.mul(r, hn)?;
            let cand = s.tape.add(xn, gated)?;
            let cand = s.tape.tanh(cand);
            // h' = n + z ⊙ (h - n)
            let diff = s.tape.sub(h, cand)?;
            let keep = s.tape.mul(z, diff)?;
            h = s.tape.add(cand, keep)?;
        }
        Ok(h)
    }

    /// Final hidden state for a time-major sequence `[T, C_in]`.
    pub fn run(&self, store: &ParamStore, seq: &Tensor) -> Result<Tensor> {
        let &[t, c] = seq.shape() else {
            return Err(Error::InvalidShape {
                shape: seq.shape().to_vec(),
                reason: "sequence must be [T, C]".into(),
            });
        };
        let mut channel_major = vec![0.0; t * c];
        for (step, row) in seq.data().chunks_exact(c).enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                channel_major[ch * t + step] = v;
            }
        }
        let mut s = Session::new(store, Mode::Eval);
        let x = s.tape.constant(Tensor::new(vec![c, t], channel_major)?);
        let h = self.forward(&mut s, x)?;
        s.tape.value(h).clone().reshape(vec![self.hidden_size])
    }

    pub fn num_params(&self) -> usize {
        3 * (self.hidden_size * self.input_size
            + self.hidden_size * self.hidden_size
            + 2 * self.hidden_size)
    }
}
