mod common;

use common::*;
use fdn_core::autodiff::{Tape, Tensor};
use fdn_core::model::{
    count_parameters, hierarchical_reweight, FdnModel, ModelConfig, SeoModule, SplitSpec, Variant,
};
use fdn_core::nn::{BatchNorm1d, Conv1d, Linear, Mode, ParamStore, Session};
use fdn_core::rng::seeded;
use fdn_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn tensor(rows: &Rows) -> Tensor {
    Tensor::new(vec![rows.len(), rows[0].len()], flatten(rows)).unwrap()
}

#[test]
fn conv1d_matches_triple_loop() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let layer = Conv1d::new(&mut store, "c", 4, 6, 3, 1, 1, &mut seeded(2));
    randomize_store(&mut store, &mut r);
    let x = random_rows(&mut r, 4, 10, 1.0);
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.tape.constant(tensor(&x));
    let y = layer.forward(&mut s, xv).unwrap();
    assert_eq!(s.tape.shape(y), &[6, 10]);
    let want = flatten(&conv(&store, &layer, &x));
    for (a, b) in s.tape.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn strided_front_conv_shape() {
    let mut store = ParamStore::new();
    let layer = Conv1d::new(&mut store, "front", 1, 128, 3, 3, 0, &mut seeded(0));
    let mut s = Session::new(&store, Mode::Eval);
    let x = s.tape.constant(Tensor::zeros(&[1, 59049]));
    let y = layer.forward(&mut s, x).unwrap();
    assert_eq!(s.tape.shape(y), &[128, 19683]);
}

#[test]
fn global_average_matches_loop() {
    let mut r = rng(3);
    let x = random_rows(&mut r, 8, 50, 2.0);
    let mut tape = Tape::new();
    let xv = tape.constant(tensor(&x));
    let y = tape.global_avg_pool(xv).unwrap();
    assert_eq!(tape.shape(y), &[8, 1]);
    for (row, got) in x.iter().zip(tape.value(y).data()) {
        let mut acc = 0.0;
        for v in row {
            acc += v;
        }
        assert!((got - acc / 50.0).abs() <= 1e-12);
    }
}

#[test]
fn cross_entropy_matches_naive_formula() {
    let mut r = rng(4);
    let logits: Rows = random_rows(&mut r, 3, 5, 4.0);
    let labels = [4, 0, 2];
    let mut tape = Tape::new();
    let z = tape.constant(tensor(&logits));
    let loss = tape.softmax_cross_entropy(z, &labels).unwrap();
    let naive: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, y)| -(row[y].exp() / row.iter().map(|v| v.exp()).sum::<f64>()).ln())
        .sum::<f64>()
        / 3.0;
    assert!((tape.value(loss).item() - naive).abs() <= 1e-10);
}

#[test]
fn train_mode_batch_norm_matches_two_pass_reference() {
    let (n, c, t) = (3, 4, 7);
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let bn = BatchNorm1d::new(&mut store, "bn", c);
    randomize_store(&mut store, &mut r);
    // Large spread so eps barely matters for the unit-variance check.
    let x: Vec<f64> = (0..n * c * t)
        .map(|_| r.random_range(-30.0..30.0))
        .collect();
    let at = |i: usize, ch: usize, j: usize| x[(i * c + ch) * t + j];

    let mut s = Session::new(&store, Mode::Train);
    let xv = s
        .tape
        .constant(Tensor::new(vec![n, c, t], x.clone()).unwrap());
    let y = bn.forward(&mut s, xv).unwrap();
    let y = s.tape.value(y).data().to_vec();
    let (g, b) = (store.get(bn.gamma).data(), store.get(bn.beta).data());
    let count = (n * t) as f64;
    for ch in 0..c {
        let mut mean = 0.0;
        for i in 0..n {
            for j in 0..t {
                mean += at(i, ch, j);
            }
        }
        mean /= count;
        let mut var = 0.0;
        for i in 0..n {
            for j in 0..t {
                var += (at(i, ch, j) - mean).powi(2);
            }
        }
        var /= count;
        let mut normalized = Vec::new();
        for i in 0..n {
            for j in 0..t {
                let want = g[ch] * (at(i, ch, j) - mean) / (var + bn.eps).sqrt() + b[ch];
                let got = y[(i * c + ch) * t + j];
                assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
                normalized.push((got - b[ch]) / g[ch]);
            }
        }
        let m = normalized.iter().sum::<f64>() / count;
        let v = normalized.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / count;
        assert!(m.abs() < 1e-8);
        assert!((v - 1.0).abs() < 1e-6, "variance {v}");
    }
    let updates = s.take_updates();
    let running_var = &updates
        .iter()
        .find(|(id, _)| *id == bn.running_var)
        .unwrap()
        .1;
    assert!(running_var.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn initialization_is_unbiased_across_seeds() {
    let mut means = Vec::new();
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let fc = Linear::new(&mut store, "fc", 100, 200, &mut seeded(seed));
        let w = store.get(fc.weight).data();
        assert!(w.iter().all(|v| v.abs() <= 0.1));
        assert!(store.get(fc.bias).data().iter().all(|&v| v == 0.0));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        // Uniform(-0.1, 0.1) has standard deviation 0.1 / sqrt(3).
        let sigma = 0.1 / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "seed {seed}: mean {mean}");
        means.push(mean);
    }
    means.dedup();
    assert_eq!(means.len(), 5);
}

/// Parameter count written out layer by layer, as a second implementation.
fn hand_count(c: &ModelConfig) -> usize {
    let d = c.channel_divisor;
    let (f, w, h, e, k, a) = (
        128 / d,
        256 / d,
        1024 / d,
        1024 / d,
        c.num_speakers,
        c.alpha,
    );
    let heavy = c.variant == Variant::Heavy;
    let seo = |cin: usize, cout: usize| 2 * (cin * (cin / a) + cin / a) + (cin / a) * cout + cout;
    let resconv =
        |cin: usize, cout: usize| (cout * cin * 3 + cout) + 2 * cout + (cout * cout * 3 + cout);
    let mut total = (f * 3 + f) + 2 * f;
    // block0.0: no leading norm.
    total += seo(f, f) + if heavy { seo(f, f) } else { 0 } + resconv(f, f);
    // block0.1
    total += seo(f, f) + if heavy { seo(f, f) } else { 0 } + 2 * f + resconv(f, f);
    // block1.0: projects f -> w, skip conv k=1.
    total += seo(f, f) + if heavy { seo(w, f) } else { 0 } + 2 * f + resconv(f, w) + (w * f + w);
    for _ in 0..3 {
        total += seo(w, w) + if heavy { seo(w, w) } else { 0 } + 2 * w + resconv(w, w);
    }
    total += 3 * (h * w + h + h * h + h);
    total += e * h + e;
    total += k * e + k;
    total
}

#[test]
fn parameter_count_matches_second_implementation_and_built_models() {
    for variant in [Variant::Light, Variant::Heavy] {
        for alpha in [2, 4, 8, 16, 32] {
            for speakers in [8, 1211, 6112] {
                let c = ModelConfig {
                    alpha,
                    num_speakers: speakers,
                    ..ModelConfig::new(variant)
                };
                assert_eq!(
                    count_parameters(&c),
                    hand_count(&c),
                    "{variant} alpha {alpha} K {speakers}"
                );
            }
        }
        let tiny = ModelConfig::tiny(variant);
        assert_eq!(count_parameters(&tiny), hand_count(&tiny));
        assert_eq!(
            FdnModel::new(tiny.clone(), 0).unwrap().num_parameters(),
            count_parameters(&tiny)
        );
    }
}

#[test]
fn shape_contract_across_lengths() {
    for variant in [Variant::Light, Variant::Heavy] {
        let model = FdnModel::new(ModelConfig::tiny(variant), 0).unwrap();
        for k in 3..=10u32 {
            let t = 3usize.pow(k) * 27;
            let wave = vec![0.01; t];
            if t < 2187 {
                assert!(
                    matches!(model.infer(&wave), Err(Error::MinimumLength { .. })),
                    "T = {t}"
                );
                continue;
            }
            let mut s = Session::new(&model.store, Mode::Eval);
            let x = s.tape.constant(Tensor::new(vec![1, 1, t], wave).unwrap());
            let out = model.forward(&mut s, x).unwrap();
            let shapes = &out.feature_shapes;
            assert_eq!(shapes[0], vec![1, 8, t / 3]);
            assert_eq!(shapes[2], vec![1, 8, t / 27]);
            assert_eq!(shapes[6], vec![1, 16, t / 2187]);
            assert_eq!(s.tape.shape(out.embedding), &[1, 64]);
        }
    }
}

#[test]
fn longer_full_size_utterance_feeds_81_frames() {
    let model = FdnModel::new(ModelConfig::new(Variant::Light), 0).unwrap();
    let t = 59049 * 3;
    let mut r = rng(6);
    let wave: Vec<f64> = (0..t).map(|_| r.random_range(-0.3..0.3)).collect();
    let mut s = Session::new(&model.store, Mode::Eval);
    let x = s
        .tape
        .constant(Tensor::new(vec![1, 1, t], wave.clone()).unwrap());
    let out = model.forward(&mut s, x).unwrap();
    assert_eq!(out.feature_shapes[6], vec![1, 256, 81]);
    assert_eq!(s.tape.shape(out.embedding), &[1, 1024]);
    let first = s.tape.value(out.embedding).clone();
    assert!(first.all_finite());
    // Eval mode is a pure function of parameters and input.
    assert_eq!(model.infer(&wave).unwrap().0.data(), first.data());
}

fn seo_instance(
    seed: u64,
    c: usize,
    alpha: usize,
    shift: usize,
    t: usize,
) -> (ParamStore, SeoModule) {
    let mut store = ParamStore::new();
    let split = SplitSpec::new((shift as f64 - 0.5) / t as f64);
    let seo = SeoModule::new(&mut store, "seo", c, c, alpha, split, &mut seeded(seed)).unwrap();
    randomize_store(&mut store, &mut rng(seed));
    (store, seo)
}

#[test]
fn constant_input_with_tied_reductions_gives_bias_only_attention() {
    let (mut store, seo) = seo_instance(7, 8, 4, 2, 12);
    let w = store.get(seo.conv1.weight).clone();
    let b = store.get(seo.conv1.bias).clone();
    store.set(seo.conv2.weight, w).unwrap();
    store.set(seo.conv2.bias, b).unwrap();
    let x: Rows = (0..8).map(|c| vec![c as f64 * 0.3 - 1.0; 12]).collect();
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.tape.constant(tensor(&x));
    let diff = seo.difference(&mut s, xv).unwrap();
    assert!(s.tape.value(diff).data().iter().all(|&v| v == 0.0));
    let (_, weights) = seo.forward(&mut s, xv).unwrap();
    let bias = store.get(seo.conv3.bias).data();
    for (got, b) in s.tape.value(weights).data().iter().zip(bias) {
        assert!((got - sigmoid(*b)).abs() <= 1e-15);
    }
}

/// Values on a 1/8 grid, so that every sum and product below is exact.
fn dyadic(r: &mut impl Rng, range: i32) -> f64 {
    f64::from(r.random_range(-range..=range)) / 8.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pooling_commutes_with_channel_scaling(seed in any::<u64>(), c in 1usize..6, t in 1usize..30) {
        let mut r = rng(seed);
        let f = random_rows(&mut r, c, t, 3.0);
        let w: Vec<f64> = (0..c).map(|_| r.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let fv = tape.constant(tensor(&f));
        let wv = tape.constant(Tensor::new(vec![c, 1], w.clone()).unwrap());
        let scaled = tape.channel_scale(fv, wv).unwrap();
        let lhs = tape.global_avg_pool(scaled).unwrap();
        let rhs = tape.global_avg_pool(fv).unwrap();
        for ((a, b), wc) in tape.value(lhs).data().iter().zip(tape.value(rhs).data()).zip(&w) {
            prop_assert!((a - wc * b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn attention_lies_strictly_inside_unit_interval(
        seed in any::<u64>(),
        c in prop::sample::select(vec![4usize, 8, 16]),
        t in 4usize..60,
        scale in 0.01f64..20.0,
    ) {
        let (store, seo) = seo_instance(seed, c, 4, 1 + (seed as usize) % (t / 2), t);
        let x = random_rows(&mut rng(seed ^ 1), c, t, scale);
        let mut s = Session::new(&store, Mode::Eval);
        let xv = s.tape.constant(tensor(&x));
        let (_, weights) = seo.forward(&mut s, xv).unwrap();
        prop_assert!(s.tape.value(weights).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn hierarchical_average_is_symmetric(seed in any::<u64>(), c in 1usize..10, t in 1usize..20) {
        let mut r = rng(seed);
        let store = ParamStore::new();
        let mut s = Session::new(&store, Mode::Eval);
        let f = s.tape.constant(tensor(&random_rows(&mut r, c, t, 2.0)));
        let a = s.tape.constant(Tensor::new(vec![c, 1], (0..c).map(|_| r.random_range(0.0..1.0)).collect()).unwrap());
        let b = s.tape.constant(Tensor::new(vec![c, 1], (0..c).map(|_| r.random_range(0.0..1.0)).collect()).unwrap());
        let (u1, w1) = hierarchical_reweight(&mut s, f, a, b).unwrap();
        let (u2, w2) = hierarchical_reweight(&mut s, f, b, a).unwrap();
        prop_assert_eq!(s.tape.value(u1), s.tape.value(u2));
        prop_assert_eq!(s.tape.value(w1), s.tape.value(w2));
        // Equal inputs average to themselves.
        let (_, same) = hierarchical_reweight(&mut s, f, a, a).unwrap();
        prop_assert_eq!(s.tape.value(same), s.tape.value(a));
    }

    #[test]
    fn time_shift_cancels_with_tied_reductions(
        seed in any::<u64>(),
        window in prop::sample::select(vec![4usize, 8, 16]),
        shift in 1usize..4,
        c in 1usize..5,
    ) {
        let t = window + shift;
        let (mut store, seo) = seo_instance(seed, 2 * c, 2, shift, t);
        let mut r = rng(seed ^ 2);
        // Tie conv2 to conv1 and put everything on a coarse dyadic grid.
        for id in [seo.conv1.weight, seo.conv1.bias] {
            for v in store.get_mut(id).data_mut() {
                *v = dyadic(&mut r, 8);
            }
        }
        store.set(seo.conv2.weight, store.get(seo.conv1.weight).clone()).unwrap();
        store.set(seo.conv2.bias, store.get(seo.conv1.bias).clone()).unwrap();
        let x: Rows = (0..2 * c).map(|_| (0..t).map(|_| dyadic(&mut r, 32)).collect()).collect();
        let offset = dyadic(&mut r, 32);
        let shifted: Rows = x.iter().map(|row| row.iter().map(|v| v + offset).collect()).collect();
        let mut s = Session::new(&store, Mode::Eval);
        let a = s.tape.constant(tensor(&x));
        let b = s.tape.constant(tensor(&shifted));
        let da = seo.difference(&mut s, a).unwrap();
        let db = seo.difference(&mut s, b).unwrap();
        prop_assert_eq!(s.tape.value(da), s.tape.value(db));
    }
}
