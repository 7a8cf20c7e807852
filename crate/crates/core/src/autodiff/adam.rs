use serde::{Deserialize, Serialize};

use super::tape::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam_step", "gradient/parameter count mismatch"));
        }
        for (id, g) in grads.iter() {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{}: {:?} vs {:?}", params.name(id), g.shape(), params.get(id).shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", params.name(id))));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter() {
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scalar(x: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("x", Tensor::vector(vec![x])).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = one_scalar(2.5);
        let mut st = AdamState::new(AdamConfig::default(), &ps);
        let g = Gradients::zeros_like(&ps);
        st.step(&mut ps, &g).unwrap();
        assert_eq!(ps.get(ps.id("x").unwrap()).data(), &[2.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = one_scalar(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut st = AdamState::new(cfg, &ps);
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(ps.id("x").unwrap()).data_mut()[0] = 1.0;
        st.step(&mut ps, &g).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the update is -lr / (1 + eps).
        let x = ps.get(ps.id("x").unwrap()).data()[0];
        assert!((x + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{x}");
        // Hand-evaluated second step with the same gradient.
        st.step(&mut ps, &g).unwrap();
        let m: f64 = 0.9 * 0.1 + 0.1;
        let v: f64 = 0.999 * 0.001 + 0.001;
        let want = x - 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((ps.get(ps.id("x").unwrap()).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn independent_scalars() {
        let mut ps = ParamStore::new();
        let a = ps.insert("a", Tensor::vector(vec![1.0])).unwrap();
        let b = ps.insert("b", Tensor::vector(vec![1.0])).unwrap();
        let mut st = AdamState::new(AdamConfig::default(), &ps);
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(a).data_mut()[0] = 3.0;
        st.step(&mut ps, &g).unwrap();
        assert!(ps.get(a).data()[0] < 1.0);
        assert_eq!(ps.get(b).data()[0], 1.0);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut ps = one_scalar(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &ps);
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(ps.id("x").unwrap()).data_mut()[0] = f64::NAN;
        assert!(matches!(st.step(&mut ps, &g), Err(Error::NonFinite(_))));
        assert_eq!(st.step, 0);
    }
}
