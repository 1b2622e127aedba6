use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamKind, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AmsGradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * θ` before the moment updates.
    pub weight_decay: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam with a running maximum of the second moment.
#[derive(Clone, Debug)]
pub struct AmsGrad {
    pub config: AmsGradConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    v_hat: Vec<Vec<f64>>,
}

impl AmsGrad {
    pub fn new(config: AmsGradConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| match e.kind {
                ParamKind::Trainable => vec![0.0; e.value.numel()],
                ParamKind::Buffer => Vec::new(),
            })
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros.clone(),
            v_hat: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Running maximum of the second moment for store entry `index`.
    pub fn v_hat(&self, index: usize) -> &[f64] {
        &self.v_hat[index]
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (entry, g) in store.entries().iter().zip(grads.iter()) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient {
                        name: entry.name.clone(),
                    });
                }
            }
        }
        self.step += 1;
        let AmsGradConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads.iter()) {
            let Some(g) = g else { continue };
            let i = id.index();
            let theta = store.get_mut(id).data_mut();
            let (m, v, v_hat) = (&mut self.m[i], &mut self.v[i], &mut self.v_hat[i]);
            for k in 0..theta.len() {
                let grad = g.data()[k] + weight_decay * theta[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * grad;
                v[k] = beta2 * v[k] + (1.0 - beta2) * grad * grad;
                v_hat[k] = v_hat[k].max(v[k]);
                let m_hat = m[k] / bias1;
                theta[k] -= lr * m_hat / ((v_hat[k] / bias2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
