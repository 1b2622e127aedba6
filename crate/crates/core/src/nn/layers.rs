use rand::Rng;

use super::params::{Mode, ParamId, ParamKind, ParamStore, Session};
use crate::autodiff::{Tensor, Var};
use crate::error::Result;
use crate::rng::SplitMix64;

/// Uniform values in `[-bound, bound]`.
pub(crate) fn uniform(shape: &[usize], bound: f64, rng: &mut SplitMix64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-bound..=bound));
    t
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        assert!(
            kernel >= 1 && stride >= 1,
            "conv kernel and stride must be positive"
        );
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_channels, in_channels, kernel]),
            ParamKind::Trainable,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(&[out_channels]),
            ParamKind::Trainable,
        );
        let layer = Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        };
        layer.init(store, rng);
        layer
    }

    /// Weights uniform in `±sqrt(1 / fan_in)`, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let bound = (1.0 / (self.in_channels * self.kernel) as f64).sqrt();
        *store.get_mut(self.weight) = uniform(
            &[self.out_channels, self.in_channels, self.kernel],
            bound,
            rng,
        );
        *store.get_mut(self.bias) = Tensor::zeros(&[self.out_channels]);
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.conv1d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel + self.out_channels
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let layer = Self {
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::zeros(&[channels]),
                ParamKind::Trainable,
            ),
            beta: store.add(
                format!("{name}.beta"),
                Tensor::zeros(&[channels]),
                ParamKind::Trainable,
            ),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            ),
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        };
        layer.init(store);
        layer
    }

    /// A view sharing `other`'s gamma and beta but tracking its own running
    /// statistics, for when one normalization is applied to two differently
    /// distributed inputs.
    pub fn shared_affine(store: &mut ParamStore, name: &str, other: &BatchNorm1d) -> Self {
        let c = other.channels;
        Self {
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[c]),
                ParamKind::Buffer,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[c], 1.0),
                ParamKind::Buffer,
            ),
            ..other.clone()
        }
    }

    /// gamma = 1, beta = 0, running statistics reset to the unit normal.
    pub fn init(&self, store: &mut ParamStore) {
        let c = self.channels;
        *store.get_mut(self.gamma) = Tensor::full(&[c], 1.0);
        *store.get_mut(self.beta) = Tensor::zeros(&[c]);
        *store.get_mut(self.running_mean) = Tensor::zeros(&[c]);
        *store.get_mut(self.running_var) = Tensor::full(&[c], 1.0);
    }

    /// Train mode normalizes with batch statistics (over batch and time) and
    /// queues the running-average update; eval mode reads running statistics.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (gamma, beta) = (s.param(self.gamma), s.param(self.beta));
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let unbiased = stats.count as f64 / (stats.count - 1) as f64;
                let mean = s.buffer(self.running_mean).data();
                let var = s.buffer(self.running_var).data();
                let new_mean: Vec<f64> = mean
                    .iter()
                    .zip(&stats.mean)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let new_var: Vec<f64> = var
                    .iter()
                    .zip(&stats.var)
                    .map(|(r, b)| (1.0 - m) * r + m * b * unbiased)
                    .collect();
                s.queue_update(self.running_mean, Tensor::from_vec(new_mean));
                s.queue_update(self.running_var, Tensor::from_vec(new_var));
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.buffer(self.running_mean).data();
                let var = s.buffer(self.running_var).data();
                s.tape.batch_norm_eval(x, gamma, beta, mean, var, self.eps)
            }
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}

/// Fully connected layer, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let layer = Self {
            weight: store.add(
                format!("{name}.weight"),
                Tensor::zeros(&[out_features, in_features]),
                ParamKind::Trainable,
            ),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[out_features]),
                ParamKind::Trainable,
            ),
            in_features,
            out_features,
        };
        layer.init(store, rng);
        layer
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let bound = (1.0 / self.in_features as f64).sqrt();
        *store.get_mut(self.weight) = uniform(&[self.out_features, self.in_features], bound, rng);
        *store.get_mut(self.bias) = Tensor::zeros(&[self.out_features]);
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.linear(x, w, Some(b))
    }

    pub fn num_params(&self) -> usize {
        self.out_features * self.in_features + self.out_features
    }
}
