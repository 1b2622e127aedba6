use super::config::{Variant, LEAKY_SLOPE, POOL_WINDOW, RESCONV_KERNEL};
use super::seo::{hierarchical_reweight, SeoModule, SplitSpec};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, Conv1d, ParamStore, Session};
use crate::rng::SplitMix64;

#[derive(Clone, Debug)]
pub enum BlockAttention {
    Light(SeoModule),
    /// `first` attends over the block input; `second` over the output of the
    /// block's first convolution and maps back to the input channel count.
    Heavy {
        first: SeoModule,
        second: SeoModule,
    },
}

/// Attention, pre-activation residual conv stack, skip connection, max-pool.
///
/// ```text
/// u = attention(x)
/// r = conv_b(act(bn_mid(conv_a(act(bn_pre(u))))))
/// y = maxpool(r + skip(x), 3)
/// ```
///
/// The first block of the network has no `bn_pre`: its input was already
/// normalized and activated by the front end.
#[derive(Clone, Debug)]
pub struct FdnBlock {
    pub attention: BlockAttention,
    pub pre_norm: Option<BatchNorm1d>,
    /// Heavy blocks only: `bn_pre` as applied inside the second attention,
    /// with its own running statistics. That branch normalizes the block
    /// input, which is distributed differently from the reweighted map.
    pub attention_norm: Option<BatchNorm1d>,
    pub conv_a: Conv1d,
    pub mid_norm: BatchNorm1d,
    pub conv_b: Conv1d,
    pub skip: Option<Conv1d>,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Intermediate values of one block, exposed for tests and inspection.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    /// Final attention weights applied to the input (`s'` or `s'_h`).
    pub weights: Var,
    pub reweighted: Var,
    pub output: Var,
}

impl FdnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        variant: Variant,
        in_channels: usize,
        out_channels: usize,
        alpha: usize,
        split: SplitSpec,
        pre_activate: bool,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let attention = match variant {
            Variant::Light => BlockAttention::Light(SeoModule::new(
                store,
                &format!("{name}.seo"),
                in_channels,
                in_channels,
                alpha,
                split,
                rng,
            )?),
            Variant::Heavy => BlockAttention::Heavy {
                first: SeoModule::new(
                    store,
                    &format!("{name}.seo1"),
                    in_channels,
                    in_channels,
                    alpha,
                    split,
                    rng,
                )?,
                second: SeoModule::new(
                    store,
                    &format!("{name}.seo2"),
                    out_channels,
                    in_channels,
                    alpha,
                    split,
                    rng,
                )?,
            },
        };
        let pad = RESCONV_KERNEL / 2;
        let pre_norm =
            pre_activate.then(|| BatchNorm1d::new(store, &format!("{name}.bn_pre"), in_channels));
        let attention_norm = match (&attention, &pre_norm) {
            (BlockAttention::Heavy { .. }, Some(bn)) => Some(BatchNorm1d::shared_affine(
                store,
                &format!("{name}.bn_pre_seo2"),
                bn,
            )),
            _ => None,
        };
        Ok(Self {
            attention,
            pre_norm,
            attention_norm,
            conv_a: Conv1d::new(
                store,
                &format!("{name}.conv_a"),
                in_channels,
                out_channels,
                RESCONV_KERNEL,
                1,
                pad,
                rng,
            ),
            mid_norm: BatchNorm1d::new(store, &format!("{name}.bn_mid"), out_channels),
            conv_b: Conv1d::new(
                store,
                &format!("{name}.conv_b"),
                out_channels,
                out_channels,
                RESCONV_KERNEL,
                1,
                pad,
                rng,
            ),
            skip: (in_channels != out_channels).then(|| {
                Conv1d::new(
                    store,
                    &format!("{name}.skip"),
                    in_channels,
                    out_channels,
                    1,
                    1,
                    0,
                    rng,
                )
            }),
            in_channels,
            out_channels,
        })
    }

    /// `act(bn_pre(x))`, or `x` itself for the first block.
    pub fn preactivate(&self, s: &mut Session, x: Var) -> Result<Var> {
        preactivate_with(self.pre_norm.as_ref(), s, x)
    }

    /// The first stacked convolution applied to a pre-activated map.
    pub fn first_conv(&self, s: &mut Session, x: Var) -> Result<Var> {
        let a = self.preactivate(s, x)?;
        self.conv_a.forward(s, a)
    }

    /// [`Self::first_conv`] as seen by the second attention module.
    fn attention_conv(&self, s: &mut Session, x: Var) -> Result<Var> {
        let a = preactivate_with(
            self.attention_norm.as_ref().or(self.pre_norm.as_ref()),
            s,
            x,
        )?;
        self.conv_a.forward(s, a)
    }

    /// Hierarchical reweighting: `(u_h, s'_1, s'_2, s'_h)`.
    pub fn hierarchical(&self, s: &mut Session, f: Var) -> Result<(Var, Var, Var, Var)> {
        let BlockAttention::Heavy { first, second } = &self.attention else {
            return Err(Error::InvalidArgument(
                "hierarchical attention on a light block".into(),
            ));
        };
        let s1 = first.attention(s, f)?;
        let h = self.attention_conv(s, f)?;
        let s2 = second.attention(s, h)?;
        let (u, sh) = hierarchical_reweight(s, f, s1, s2)?;
        Ok((u, s1, s2, sh))
    }

    pub fn forward_traced(&self, s: &mut Session, x: Var) -> Result<BlockTrace> {
        let t = *s.tape.shape(x).last().expect("non-empty shape");
        if !t.is_multiple_of(POOL_WINDOW) {
            return Err(Error::NotDivisible {
                op: "fdn block",
                len: t,
                divisor: POOL_WINDOW,
            });
        }
        let (u, weights) = match &self.attention {
            BlockAttention::Light(seo) => seo.forward(s, x)?,
            BlockAttention::Heavy { .. } => {
                let (u, _, _, sh) = self.hierarchical(s, x)?;
                (u, sh)
            }
        };
        let h = self.first_conv(s, u)?;
        let h = self.mid_norm.forward(s, h)?;
        let h = s.tape.leaky_relu(h, LEAKY_SLOPE);
        let r = self.conv_b.forward(s, h)?;
        let skip = match &self.skip {
            Some(proj) => proj.forward(s, x)?,
            None => x,
        };
        let sum = s.tape.add(r, skip)?;
        let output = s.tape.max_pool1d(sum, POOL_WINDOW)?;
        Ok(BlockTrace {
            weights,
            reweighted: u,
            output,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        Ok(self.forward_traced(s, x)?.output)
    }

    pub fn attention_modules(&self) -> Vec<&SeoModule> {
        match &self.attention {
            BlockAttention::Light(seo) => vec![seo],
            BlockAttention::Heavy { first, second } => vec![first, second],
        }
    }

    pub fn convs(&self) -> Vec<&Conv1d> {
        let mut v = vec![&self.conv_a, &self.conv_b];
        v.extend(&self.skip);
        v
    }

    pub fn norms(&self) -> Vec<&BatchNorm1d> {
        let mut v: Vec<&BatchNorm1d> = self.pre_norm.iter().collect();
        v.push(&self.mid_norm);
        v
    }
}

fn preactivate_with(norm: Option<&BatchNorm1d>, s: &mut Session, x: Var) -> Result<Var> {
    match norm {
        Some(bn) => {
            let y = bn.forward(s, x)?;
            Ok(s.tape.leaky_relu(y, LEAKY_SLOPE))
        }
        None => Ok(x),
    }
}
