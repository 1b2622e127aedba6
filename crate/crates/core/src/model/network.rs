use super::block::FdnBlock;
use super::config::{ModelConfig, FRONT_KERNEL, FRONT_STRIDE, LEAKY_SLOPE};
use super::seo::SplitSpec;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, Conv1d, Gru, Linear, Mode, ParamStore, Session};
use crate::rng::seeded;

/// Full network: front conv, FDN blocks, GRU aggregation, embedding and
/// speaker classifier.
#[derive(Clone, Debug)]
pub struct FdnModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub front_conv: Conv1d,
    pub front_norm: BatchNorm1d,
    pub blocks: Vec<FdnBlock>,
    pub gru: Gru,
    pub embedding: Linear,
    pub classifier: Linear,
}

/// Outputs of [`FdnModel::forward`], `[N, E]` and `[N, K]`.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub embedding: Var,
    pub logits: Var,
    /// Shape after the front end and after every block.
    pub feature_shapes: Vec<Vec<usize>>,
    /// Final GRU state `[N, hidden]`.
    pub utterance_feature: Var,
}

impl FdnModel {
    /// Builds the network with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded(seed);
        let front = config.front_width();
        let wide = config.block1_width();
        let split = SplitSpec::new(config.shift_fraction);

        let front_conv = Conv1d::new(
            &mut store,
            "front.conv",
            1,
            front,
            FRONT_KERNEL,
            FRONT_STRIDE,
            0,
            &mut rng,
        );
        let front_norm = BatchNorm1d::new(&mut store, "front.bn", front);
        let mut blocks = Vec::with_capacity(config.num_blocks());
        for i in 0..config.block0_repeats {
            blocks.push(FdnBlock::new(
                &mut store,
                &format!("block0.{i}"),
                config.variant,
                front,
                front,
                config.alpha,
                split,
                i > 0,
                &mut rng,
            )?);
        }
        for i in 0..config.block1_repeats {
            let c_in = if i == 0 { front } else { wide };
            blocks.push(FdnBlock::new(
                &mut store,
                &format!("block1.{i}"),
                config.variant,
                c_in,
                wide,
                config.alpha,
                split,
                true,
                &mut rng,
            )?);
        }
        let gru = Gru::new(&mut store, "gru", wide, config.gru_width(), &mut rng);
        let embedding = Linear::new(
            &mut store,
            "embedding",
            config.gru_width(),
            config.embedding_width(),
            &mut rng,
        );
        let classifier = Linear::new(
            &mut store,
            "classifier",
            config.embedding_width(),
            config.num_speakers,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            front_conv,
            front_norm,
            blocks,
            gru,
            embedding,
            classifier,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// Accepts lengths `T >= min_samples` whose front-end output
    /// `floor(T / 3)` divides evenly through every block.
    pub fn check_length(&self, len: usize) -> Result<()> {
        let min = self.config.min_samples();
        if len < min {
            return Err(Error::MinimumLength { len, min });
        }
        let block_stride = self.config.total_stride() / FRONT_STRIDE;
        if !(len / FRONT_STRIDE).is_multiple_of(block_stride) {
            return Err(Error::NotDivisible {
                op: "network input",
                len,
                divisor: self.config.total_stride(),
            });
        }
        Ok(())
    }

    /// Forward pass over a waveform batch `[N, 1, T]` (or `[1, T]`).
    pub fn forward(&self, s: &mut Session, wave: Var) -> Result<ForwardOutput> {
        let shape = s.tape.shape(wave).to_vec();
        let len = *shape.last().expect("non-empty shape");
        if !matches!(shape.as_slice(), [1, _] | [_, 1, _]) {
            return Err(Error::InvalidShape {
                shape,
                reason: "waveform batch must be [N, 1, T]".into(),
            });
        }
        self.check_length(len)?;
        let (x, feature_shapes) = self.trunk(s, wave)?;
        let (utterance_feature, embedding, logits) = self.head(s, x)?;
        Ok(ForwardOutput {
            embedding,
            logits,
            feature_shapes,
            utterance_feature,
        })
    }

    /// Front end and residual blocks: waveform to the frame sequence fed to
    /// the GRU, plus the shape after each stage.
    pub fn trunk(&self, s: &mut Session, wave: Var) -> Result<(Var, Vec<Vec<usize>>)> {
        let mut feature_shapes = Vec::with_capacity(self.blocks.len() + 1);
        let x = self.front_conv.forward(s, wave)?;
        let x = self.front_norm.forward(s, x)?;
        let mut x = s.tape.leaky_relu(x, LEAKY_SLOPE);
        feature_shapes.push(s.tape.shape(x).to_vec());
        for block in &self.blocks {
            x = block.forward(s, x)?;
            feature_shapes.push(s.tape.shape(x).to_vec());
        }
        Ok((x, feature_shapes))
    }

    /// GRU, embedding and classifier: `(utterance feature, embedding, logits)`.
    pub fn head(&self, s: &mut Session, frames: Var) -> Result<(Var, Var, Var)> {
        let utterance_feature = self.gru.forward(s, frames)?;
        let embedding = self.embedding.forward(s, utterance_feature)?;
        let logits = self.classifier.forward(s, embedding)?;
        Ok((utterance_feature, embedding, logits))
    }

    /// Eval-mode embedding and logits for one waveform.
    pub fn infer(&self, samples: &[f64]) -> Result<(Tensor, Tensor)> {
        let mut s = Session::new(&self.store, Mode::Eval);
        let wave = s
            .tape
            .constant(Tensor::new(vec![1, 1, samples.len()], samples.to_vec())?);
        let out = self.forward(&mut s, wave)?;
        let emb = s.tape.value(out.embedding).clone();
        let logits = s.tape.value(out.logits).clone();
        Ok((
            emb.reshape(vec![self.config.embedding_width()])?,
            logits.reshape(vec![self.config.num_speakers])?,
        ))
    }

    /// Applies queued buffer updates (batch-norm running statistics).
    pub fn apply_updates(&mut self, updates: Vec<(crate::nn::ParamId, Tensor)>) -> Result<()> {
        for (id, value) in updates {
            self.store.set(id, value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn tiny_forward_shapes() {
        let model = FdnModel::new(ModelConfig::tiny(Variant::Light), 0).unwrap();
        let mut s = Session::new(&model.store, Mode::Eval);
        let wave = s.tape.constant(Tensor::zeros(&[1, 1, 3 * 2187]));
        let out = model.forward(&mut s, wave).unwrap();
        assert_eq!(out.feature_shapes[0], vec![1, 8, 2187]);
        assert_eq!(out.feature_shapes.last().unwrap(), &vec![1, 16, 3]);
        assert_eq!(s.tape.shape(out.embedding), &[1, 64]);
        assert_eq!(s.tape.shape(out.logits), &[1, 8]);
    }

    #[test]
    fn rejects_short_and_misaligned_input() {
        let model = FdnModel::new(ModelConfig::tiny(Variant::Heavy), 0).unwrap();
        assert!(matches!(
            model.infer(&[0.0; 2000]),
            Err(Error::MinimumLength {
                len: 2000,
                min: 2187
            })
        ));
        assert!(matches!(
            model.infer(&vec![0.0; 3000]),
            Err(Error::NotDivisible { .. })
        ));
        assert!(model.infer(&vec![0.0; 2188]).is_ok());
    }
}
