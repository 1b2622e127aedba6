//! Finite-difference checks over every differentiable op, the attention
//! modules and whole tiny networks.
//!
//! Every check puts all differentiable inputs into a [`ParamStore`] as
//! trainable entries, so one harness verifies gradients with respect to data
//! and weights alike.

use rand::Rng;

use crate::autodiff::{relative_error, Tensor, Var, DEFAULT_STEP};
use crate::error::Result;
use crate::model::config::LEAKY_SLOPE;
use crate::model::{FdnBlock, FdnModel, ModelConfig, SeoModule, SplitSpec, Variant};
use crate::nn::{Gradients, Gru, Mode, ParamId, ParamKind, ParamStore, Session};
use crate::rng::{derive_seed, seeded, SplitMix64};

/// Outcome of one gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_err: f64,
    /// Coordinates compared against a finite difference.
    pub coordinates: usize,
    /// Of those, compared one-sided because the other side of the stencil
    /// crossed a LeakyReLU or max-pool kink.
    pub one_sided: usize,
    /// Coordinates where both sides crossed a kink, so no finite difference
    /// of the smooth piece was available.
    pub straddled: usize,
}

/// Running comparison state shared by the checks.
#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    worst: f64,
    coordinates: usize,
    one_sided: usize,
    straddled: usize,
}

impl Tally {
    fn record(&mut self, err: f64) {
        self.worst = if err.is_nan() || self.worst.is_nan() {
            f64::NAN
        } else {
            self.worst.max(err)
        };
        self.coordinates += 1;
    }

    fn merge(&mut self, other: Tally) {
        self.worst = if other.worst.is_nan() {
            f64::NAN
        } else {
            self.worst.max(other.worst)
        };
        self.coordinates += other.coordinates;
        self.one_sided += other.one_sided;
        self.straddled += other.straddled;
    }

    fn into_case(self, name: &str) -> GradCase {
        GradCase {
            name: name.to_string(),
            max_rel_err: self.worst,
            coordinates: self.coordinates,
            one_sided: self.one_sided,
            straddled: self.straddled,
        }
    }
}

/// Loss value and branch pattern of one train-mode evaluation.
fn evaluate<F>(store: &ParamStore, f: &F) -> Result<(f64, Vec<usize>)>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let mut s = Session::new(store, Mode::Train);
    let loss = f(&mut s)?;
    Ok((s.tape.value(loss).item(), s.tape.branch_pattern()))
}

/// Compares `analytic` gradients of the entries `ids` with finite
/// differences of `f`, perturbing one coordinate at a time.
///
/// The central difference is used when both probes stay on the base point's
/// smooth piece; if one probe crosses a kink the other side's one-sided
/// difference is used instead.
fn compare<F>(
    store: &ParamStore,
    ids: &[ParamId],
    analytic: &Gradients,
    step: f64,
    f: F,
) -> Result<Tally>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let (base, base_pattern) = evaluate(store, &f)?;
    let mut probe = store.clone();
    let mut tally = Tally::default();
    for &id in ids {
        let Some(g) = analytic.get(id) else { continue };
        for k in 0..g.numel() {
            let orig = probe.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + step;
            let (plus, plus_pattern) = evaluate(&probe, &f)?;
            probe.get_mut(id).data_mut()[k] = orig - step;
            let (minus, minus_pattern) = evaluate(&probe, &f)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = match (plus_pattern == base_pattern, minus_pattern == base_pattern) {
                (true, true) => (plus - minus) / (2.0 * step),
                (true, false) => {
                    tally.one_sided += 1;
                    (plus - base) / step
                }
                (false, true) => {
                    tally.one_sided += 1;
                    (base - minus) / step
                }
                (false, false) => {
                    tally.straddled += 1;
                    continue;
                }
            };
            tally.record(relative_error(g.data()[k], numeric));
        }
    }
    Ok(tally)
}

/// Max relative error between backprop and finite differences of the loss
/// built by `f`, over every coordinate of every trainable entry in `store`.
///
/// The loss is evaluated in train mode; buffers stay fixed.
pub fn store_grad_check<F>(store: &ParamStore, step: f64, f: F) -> Result<GradCase>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let mut s = Session::new(store, Mode::Train);
    let loss = f(&mut s)?;
    let grads = s.backward(loss)?;
    let ids: Vec<ParamId> = store.ids().collect();
    Ok(compare(store, &ids, &grads, step, f)?.into_case(""))
}

fn random(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("valid shape")
}

/// A store of named random tensors plus fixed projection weights that turn
/// any output into a scalar loss.
struct Fixture {
    store: ParamStore,
    rng: SplitMix64,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: seeded(seed),
        }
    }

    fn add(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let value = random(&mut self.rng, shape, -1.0, 1.0);
        self.store.add(name, value, ParamKind::Trainable)
    }

    fn add_range(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> ParamId {
        let value = random(&mut self.rng, shape, lo, hi);
        self.store.add(name, value, ParamKind::Trainable)
    }

    fn projection(&mut self, shape: &[usize]) -> Tensor {
        random(&mut self.rng, shape, -1.0, 1.0)
    }
}

/// `sum(out * r)` for a fixed random `r`, so every output coordinate matters.
fn project(s: &mut Session, out: Var, r: &Tensor) -> Result<Var> {
    let r = s.tape.constant(r.clone());
    let p = s.tape.mul(out, r)?;
    Ok(s.tape.sum(p))
}

/// Checks one op: inputs are added to a fresh fixture by `setup`, which
/// returns the output shape and the forward closure.
fn op_case<S, F>(name: &str, seed: u64, setup: S) -> Result<GradCase>
where
    S: FnOnce(&mut Fixture) -> (Vec<usize>, F),
    F: Fn(&mut Session) -> Result<Var>,
{
    let mut fx = Fixture::new(seed);
    let (out_shape, forward) = setup(&mut fx);
    let r = fx.projection(&out_shape);
    let case = store_grad_check(&fx.store, DEFAULT_STEP, |s| {
        let out = forward(s)?;
        project(s, out, &r)
    })?;
    Ok(GradCase {
        name: name.to_string(),
        ..case
    })
}

/// Every differentiable tape op and the GRU, on small random inputs.
pub fn layer_cases(seed: u64) -> Result<Vec<GradCase>> {
    let sd = |i: u64| derive_seed(seed, i);
    let mut out = Vec::new();

    out.push(op_case("conv1d k3 s1 p1", sd(1), |fx| {
        let (x, w, b) = (
            fx.add("x", &[2, 3, 7]),
            fx.add("w", &[4, 3, 3]),
            fx.add("b", &[4]),
        );
        (vec![2, 4, 7], move |s: &mut Session| {
            let (x, w, b) = (s.param(x), s.param(w), s.param(b));
            s.tape.conv1d(x, w, Some(b), 1, 1)
        })
    })?);
    out.push(op_case("conv1d k3 s3 p0", sd(2), |fx| {
        let (x, w, b) = (
            fx.add("x", &[2, 1, 9]),
            fx.add("w", &[2, 1, 3]),
            fx.add("b", &[2]),
        );
        (vec![2, 2, 3], move |s: &mut Session| {
            let (x, w, b) = (s.param(x), s.param(w), s.param(b));
            s.tape.conv1d(x, w, Some(b), 3, 0)
        })
    })?);
    out.push(op_case("conv1d k1 unbatched", sd(3), |fx| {
        let (x, w) = (fx.add("x", &[3, 5]), fx.add("w", &[2, 3, 1]));
        (vec![2, 5], move |s: &mut Session| {
            let (x, w) = (s.param(x), s.param(w));
            s.tape.conv1d(x, w, None, 1, 0)
        })
    })?);
    out.push(op_case("max_pool1d", sd(4), |fx| {
        let x = fx.add("x", &[2, 3, 9]);
        (vec![2, 3, 3], move |s: &mut Session| {
            let x = s.param(x);
            s.tape.max_pool1d(x, 3)
        })
    })?);
    out.push(op_case("global_avg_pool", sd(5), |fx| {
        let x = fx.add("x", &[2, 3, 5]);
        (vec![2, 3, 1], move |s: &mut Session| {
            let x = s.param(x);
            s.tape.global_avg_pool(x)
        })
    })?);
    out.push(op_case("slice_time", sd(6), |fx| {
        let x = fx.add("x", &[2, 3, 6]);
        (vec![2, 3, 4], move |s: &mut Session| {
            let x = s.param(x);
            s.tape.slice_time(x, 1, 4)
        })
    })?);
    out.push(op_case("leaky_relu", sd(7), |fx| {
        let x = fx.add("x", &[2, 3, 4]);
        (vec![2, 3, 4], move |s: &mut Session| {
            let x = s.param(x);
            Ok(s.tape.leaky_relu(x, 0.3))
        })
    })?);
    out.push(op_case("sigmoid", sd(8), |fx| {
        let x = fx.add_range("x", &[3, 4], -4.0, 4.0);
        (vec![3, 4], move |s: &mut Session| {
            let x = s.param(x);
            Ok(s.tape.sigmoid(x))
        })
    })?);
    out.push(op_case("tanh", sd(9), |fx| {
        let x = fx.add_range("x", &[3, 4], -3.0, 3.0);
        (vec![3, 4], move |s: &mut Session| {
            let x = s.param(x);
            Ok(s.tape.tanh(x))
        })
    })?);
    for (i, name) in ["add", "sub", "mul"].into_iter().enumerate() {
        out.push(op_case(name, sd(10 + i as u64), |fx| {
            let (a, b) = (fx.add("a", &[2, 3]), fx.add("b", &[2, 3]));
            (vec![2, 3], move |s: &mut Session| {
                let (a, b) = (s.param(a), s.param(b));
                match name {
                    "add" => s.tape.add(a, b),
                    "sub" => s.tape.sub(a, b),
                    _ => s.tape.mul(a, b),
                }
            })
        })?);
    }
    out.push(op_case("scale", sd(13), |fx| {
        let x = fx.add("x", &[4]);
        (vec![4], move |s: &mut Session| {
            let x = s.param(x);
            Ok(s.tape.scale(x, -2.5))
        })
    })?);
    out.push(op_case("channel_scale", sd(14), |fx| {
        let (x, w) = (fx.add("x", &[2, 3, 5]), fx.add("w", &[2, 3, 1]));
        (vec![2, 3, 5], move |s: &mut Session| {
            let (x, w) = (s.param(x), s.param(w));
            s.tape.channel_scale(x, w)
        })
    })?);
    out.push(op_case("batch_norm train", sd(15), |fx| {
        let x = fx.add("x", &[3, 2, 4]);
        let (g, b) = (fx.add_range("gamma", &[2], 0.5, 1.5), fx.add("beta", &[2]));
        (vec![3, 2, 4], move |s: &mut Session| {
            let (x, g, b) = (s.param(x), s.param(g), s.param(b));
            Ok(s.tape.batch_norm_train(x, g, b, 1e-5)?.0)
        })
    })?);
    out.push(op_case("batch_norm eval", sd(16), |fx| {
        let x = fx.add("x", &[2, 2, 3]);
        let (g, b) = (fx.add("gamma", &[2]), fx.add("beta", &[2]));
        (vec![2, 2, 3], move |s: &mut Session| {
            let (x, g, b) = (s.param(x), s.param(g), s.param(b));
            s.tape
                .batch_norm_eval(x, g, b, &[0.1, -0.2], &[0.7, 1.9], 1e-5)
        })
    })?);
    out.push(op_case("linear", sd(17), |fx| {
        let (x, w, b) = (
            fx.add("x", &[3, 4]),
            fx.add("w", &[2, 4]),
            fx.add("b", &[2]),
        );
        (vec![3, 2], move |s: &mut Session| {
            let (x, w, b) = (s.param(x), s.param(w), s.param(b));
            s.tape.linear(x, w, Some(b))
        })
    })?);
    out.push(op_case("time_step", sd(18), |fx| {
        let x = fx.add("x", &[2, 3, 4]);
        (vec![2, 3], move |s: &mut Session| {
            let x = s.param(x);
            s.tape.time_step(x, 2)
        })
    })?);
    out.push(op_case("sum", sd(19), |fx| {
        let x = fx.add("x", &[2, 3]);
        (vec![1], move |s: &mut Session| {
            let x = s.param(x);
            Ok(s.tape.sum(x))
        })
    })?);
    out.push(op_case("mean", sd(20), |fx| {
        let x = fx.add("x", &[2, 3]);
        (vec![1], move |s: &mut Session| {
            let x = s.param(x);
            Ok(s.tape.mean(x))
        })
    })?);
    out.push(op_case("softmax_cross_entropy", sd(21), |fx| {
        let z = fx.add_range("z", &[3, 4], -2.0, 2.0);
        (vec![1], move |s: &mut Session| {
            let z = s.param(z);
            s.tape.softmax_cross_entropy(z, &[0, 3, 1])
        })
    })?);
    out.push(op_case("gru", sd(22), |fx| {
        let x = fx.add("x", &[2, 3, 4]);
        let mut rng = seeded(sd(23));
        let gru = Gru::new(&mut fx.store, "gru", 3, 5, &mut rng);
        (vec![2, 5], move |s: &mut Session| {
            let x = s.param(x);
            gru.forward(s, x)
        })
    })?);
    Ok(out)
}

/// The intonation attention on its own, light blocks, and the hierarchical
/// (heavy) attention and block.
pub fn attention_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    let split = SplitSpec::new(0.5 / 3.69);

    out.push(op_case("seo module", derive_seed(seed, 31), |fx| {
        let x = fx.add("x", &[2, 8, 9]);
        let mut rng = seeded(derive_seed(seed, 32));
        let seo =
            SeoModule::new(&mut fx.store, "seo", 8, 8, 4, split, &mut rng).expect("valid module");
        (vec![2, 8, 9], move |s: &mut Session| {
            let x = s.param(x);
            Ok(seo.forward(s, x)?.0)
        })
    })?);
    out.push(op_case("hierarchical seo", derive_seed(seed, 33), |fx| {
        let x = fx.add("x", &[2, 4, 9]);
        let mut rng = seeded(derive_seed(seed, 34));
        let block = FdnBlock::new(
            &mut fx.store,
            "blk",
            Variant::Heavy,
            4,
            8,
            2,
            split,
            true,
            &mut rng,
        )
        .expect("valid block");
        (vec![2, 4, 9], move |s: &mut Session| {
            let x = s.param(x);
            Ok(block.hierarchical(s, x)?.0)
        })
    })?);
    for (variant, i) in [(Variant::Light, 35), (Variant::Heavy, 37)] {
        out.push(op_case(
            &format!("{variant} block"),
            derive_seed(seed, i),
            |fx| {
                let x = fx.add("x", &[2, 4, 9]);
                let mut rng = seeded(derive_seed(seed, i + 1));
                let block = FdnBlock::new(
                    &mut fx.store,
                    "blk",
                    variant,
                    4,
                    8,
                    2,
                    split,
                    true,
                    &mut rng,
                )
                .expect("valid block");
                (vec![2, 8, 3], move |s: &mut Session| {
                    let x = s.param(x);
                    block.forward(s, x)
                })
            },
        )?);
    }
    Ok(out)
}

/// Cross-entropy of a tiny network on a two-utterance batch, checked over
/// every trainable parameter.
///
/// A parameter cannot change the stages before the one that owns it, so
/// its probes rerun the network from that stage's cached input.
pub fn model_case(variant: Variant, seed: u64) -> Result<GradCase> {
    let config = ModelConfig::tiny(variant);
    let model = FdnModel::new(config.clone(), derive_seed(seed, 41))?;
    // Two GRU frames so the recurrent weights receive gradient.
    let len = 2 * config.min_samples();
    let mut rng = seeded(derive_seed(seed, 42));
    let wave = random(&mut rng, &[2, 1, len], -0.5, 0.5);
    let labels = [0, config.num_speakers - 1];

    // Stage 0 is the front end, stages 1..=B the blocks, stage B+1 the head.
    let last = model.blocks.len() + 1;
    let run_from = |s: &mut Session, stage: usize, input: &Tensor| -> Result<Var> {
        let mut x = s.tape.constant(input.clone());
        if stage == 0 {
            let y = model.front_conv.forward(s, x)?;
            let y = model.front_norm.forward(s, y)?;
            x = s.tape.leaky_relu(y, LEAKY_SLOPE);
        }
        for block in &model.blocks[stage.saturating_sub(1).min(model.blocks.len())..] {
            x = block.forward(s, x)?;
        }
        let (_, _, logits) = model.head(s, x)?;
        s.tape.softmax_cross_entropy(logits, &labels)
    };

    let mut s = Session::new(&model.store, Mode::Train);
    let loss = run_from(&mut s, 0, &wave)?;
    let grads = s.backward(loss)?;

    // Inputs to every stage, and the parameters each stage binds.
    let mut inputs = vec![wave.clone()];
    let mut owned: Vec<Vec<ParamId>> = Vec::new();
    let mut s = Session::new(&model.store, Mode::Train);
    let x = s.tape.constant(wave.clone());
    let y = model.front_conv.forward(&mut s, x)?;
    let y = model.front_norm.forward(&mut s, y)?;
    let mut x = s.tape.leaky_relu(y, LEAKY_SLOPE);
    owned.push(s.bound_params());
    inputs.push(s.tape.value(x).clone());
    for block in &model.blocks {
        let before = s.bound_params();
        x = block.forward(&mut s, x)?;
        owned.push(
            s.bound_params()
                .into_iter()
                .filter(|id| !before.contains(id))
                .collect(),
        );
        inputs.push(s.tape.value(x).clone());
    }
    let before = s.bound_params();
    model.head(&mut s, x)?;
    owned.push(
        s.bound_params()
            .into_iter()
            .filter(|id| !before.contains(id))
            .collect(),
    );

    let mut tally = Tally::default();
    for stage in 0..=last {
        let input = &inputs[stage];
        tally.merge(compare(
            &model.store,
            &owned[stage],
            &grads,
            DEFAULT_STEP,
            |s| run_from(s, stage, input),
        )?);
    }
    Ok(tally.into_case(&format!("tiny fdn-{variant} loss")))
}

/// Every case above; the model checks dominate the runtime.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = layer_cases(seed)?;
    cases.extend(attention_cases(seed)?);
    cases.push(model_case(Variant::Light, seed)?);
    cases.push(model_case(Variant::Heavy, seed)?);
    Ok(cases)
}

/// Largest error over a set of cases; NaN propagates.
pub fn max_error(cases: &[GradCase]) -> f64 {
    cases.iter().map(|c| c.max_rel_err).fold(0.0, |m, e| {
        if e.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(e)
        }
    })
}
