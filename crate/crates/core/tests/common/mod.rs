//! Straight-line reference computations shared by the integration tests.
//! Everything here works on plain `Vec<f64>` rows and owes nothing to the
//! tape.

#![allow(dead_code)]

use fdn_core::model::SeoModule;
use fdn_core::nn::{BatchNorm1d, Conv1d, ParamStore};
use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut impl Rng, c: usize, t: usize, bound: f64) -> Rows {
    (0..c)
        .map(|_| (0..t).map(|_| rng.random_range(-bound..=bound)).collect())
        .collect()
}

pub fn flatten(rows: &Rows) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Overwrites every entry of the store with uniform values: weights within
/// `±1/sqrt(fan_in)`, vectors within `±1`, running variances positive.
pub fn randomize_store(store: &mut ParamStore, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let positive = store.entry(id).name.ends_with("running_var");
        let shape = store.get(id).shape().to_vec();
        let bound = 1.0 / (shape[1..].iter().product::<usize>() as f64).sqrt();
        for v in store.get_mut(id).data_mut() {
            *v = if positive {
                rng.random_range(0.2..2.0)
            } else {
                rng.random_range(-bound..=bound)
            };
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Conv with zero padding, stride 1, read from the store.
pub fn conv(store: &ParamStore, layer: &Conv1d, x: &Rows) -> Rows {
    let w = store.get(layer.weight).data();
    let b = store.get(layer.bias).data();
    let (c_in, k, p) = (layer.in_channels, layer.kernel, layer.padding);
    let t = x[0].len();
    let t_out = t + 2 * p - k + 1;
    (0..layer.out_channels)
        .map(|o| {
            (0..t_out)
                .map(|j| {
                    let mut acc = b[o];
                    for i in 0..c_in {
                        for q in 0..k {
                            let pos = j + q;
                            if pos >= p && pos - p < t {
                                acc += w[(o * c_in + i) * k + q] * x[i][pos - p];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `s'` for one map: pooled ending window through conv1 minus pooled
/// beginning window through conv2, then conv3 and the logistic.
pub fn seo_weights(store: &ParamStore, seo: &SeoModule, f: &Rows, shift: usize) -> Vec<f64> {
    let t = f[0].len();
    let len = t - shift;
    let begin: Rows = f.iter().map(|r| vec![mean(&r[..len])]).collect();
    let end: Rows = f.iter().map(|r| vec![mean(&r[shift..])]).collect();
    let a = conv(store, &seo.conv1, &end);
    let b = conv(store, &seo.conv2, &begin);
    let s: Rows = a.iter().zip(&b).map(|(x, y)| vec![x[0] - y[0]]).collect();
    conv(store, &seo.conv3, &s)
        .iter()
        .map(|r| sigmoid(r[0]))
        .collect()
}

pub fn scale_rows(f: &Rows, w: &[f64]) -> Rows {
    f.iter()
        .zip(w)
        .map(|(r, &s)| r.iter().map(|v| v * s).collect())
        .collect()
}

/// Eval-mode batch norm followed by the leaky activation.
pub fn bn_act(store: &ParamStore, bn: &BatchNorm1d, x: &Rows, slope: f64) -> Rows {
    let g = store.get(bn.gamma).data();
    let b = store.get(bn.beta).data();
    let m = store.get(bn.running_mean).data();
    let v = store.get(bn.running_var).data();
    x.iter()
        .enumerate()
        .map(|(c, r)| {
            r.iter()
                .map(|&x| {
                    let y = g[c] * (x - m[c]) / (v[c] + bn.eps).sqrt() + b[c];
                    if y >= 0.0 {
                        y
                    } else {
                        slope * y
                    }
                })
                .collect()
        })
        .collect()
}

/// EER by direct counting at every candidate threshold: each distinct score
/// and +inf, accepting `score >= θ`. Returns the linear interpolation of
/// FAR at the first candidate where FRR catches up with FAR.
pub fn brute_force_eer(scores: &[f64], targets: &[bool]) -> f64 {
    let p = targets.iter().filter(|&&t| t).count() as f64;
    let n = targets.len() as f64 - p;
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands.push(f64::INFINITY);
    let rates = |theta: f64| {
        let mut fa = 0usize;
        let mut fr = 0usize;
        for (&s, &t) in scores.iter().zip(targets) {
            if t && s < theta {
                fr += 1;
            }
            if !t && s >= theta {
                fa += 1;
            }
        }
        (fa as f64 / n, fr as f64 / p)
    };
    let mut prev = rates(cands[0]);
    for &theta in &cands[1..] {
        let (far, frr) = rates(theta);
        if frr - far >= 0.0 {
            let (da, db) = (prev.1 - prev.0, frr - far);
            let t = -da / (db - da);
            return prev.0 + t * (far - prev.0);
        }
        prev = (far, frr);
    }
    unreachable!("FRR reaches 1 and FAR 0 at +inf")
}
