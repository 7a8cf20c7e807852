//! One-hidden-layer feedforward network on the target's own history.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, Checkpoint};
use crate::autodiff::{init_with, AdamState, Gradients, InitScheme, ParamId, ParamStore, Tape, Tensor, Var};
use crate::dataset::{SampleIndex, SampleRef};
use crate::error::{Error, Result};
use crate::training::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnnConfig {
    pub history: usize,
    pub hidden: usize,
    pub horizons: Vec<usize>,
}

impl Default for FnnConfig {
    fn default() -> Self {
        FnnConfig {
            history: 12,
            hidden: 32,
            horizons: vec![3, 6, 9, 12],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fnn {
    config: FnnConfig,
    params: ParamStore,
    ids: [ParamId; 4],
}

impl Fnn {
    pub fn new(config: FnnConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.horizons.is_empty() {
            return Err(Error::Config("fnn needs hidden units and horizons".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let glorot = InitScheme::Glorot { gain: 1.0 };
        let (i, h, o) = (config.history + 1, config.hidden, config.horizons.len());
        let mut params = ParamStore::new();
        params.insert("fnn.w1", init_with(&[i, h], glorot, &mut rng))?;
        params.insert("fnn.b1", Tensor::zeros(&[h]))?;
        params.insert("fnn.w2", init_with(&[h, o], glorot, &mut rng))?;
        params.insert("fnn.b2", Tensor::zeros(&[o]))?;
        Fnn::from_params(config, params)
    }

    pub fn from_params(config: FnnConfig, params: ParamStore) -> Result<Self> {
        let (i, h, o) = (config.history + 1, config.hidden, config.horizons.len());
        let want: [(&str, Vec<usize>); 4] =
            [("fnn.w1", vec![i, h]), ("fnn.b1", vec![h]), ("fnn.w2", vec![h, o]), ("fnn.b2", vec![o])];
        let mut ids = [ParamId(0); 4];
        for (k, (name, shape)) in want.iter().enumerate() {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("{name} has the wrong shape")));
            }
            ids[k] = id;
        }
        if params.len() != 4 {
            return Err(Error::Checkpoint("unexpected fnn parameters".into()));
        }
        Ok(Fnn { config, params, ids })
    }

    pub fn config(&self) -> &FnnConfig {
        &self.config
    }

    /// `[n × (p+1)]` inputs, most recent code first.
    pub fn inputs(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<Tensor> {
        let p1 = self.config.history + 1;
        let mut data = Vec::with_capacity(refs.len() * p1);
        for r in refs {
            let (v, t) = (r.vertex as usize, r.time as usize);
            if t < self.config.history {
                return Err(Error::InvalidArgument(format!("sample at {t} lacks history")));
            }
            data.extend((0..p1).map(|k| index.store.code(v, t - k) as f64));
        }
        Tensor::matrix(refs.len(), p1, data)
    }

    fn record(&self, tape: &mut Tape, x: Tensor) -> Result<Var> {
        let x = tape.leaf(x)?;
        let [w1, b1, w2, b2] = self.ids.map(|id| tape.param(id));
        let h = tape.affine(x, w1, b1)?;
        let h = tape.tanh(h)?;
        tape.affine(h, w2, b2)
    }

    /// Predictions for raw input rows.
    pub fn predict_inputs(&self, x: Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let out = self.record(&mut tape, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn predict(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<Vec<f64>> {
        self.predict_inputs(self.inputs(index, refs)?)
    }

    fn labels(&self, index: &SampleIndex, refs: &[SampleRef]) -> (Vec<f64>, Vec<bool>) {
        let mut labels = Vec::with_capacity(refs.len() * self.config.horizons.len());
        for r in refs {
            for &h in &self.config.horizons {
                labels.push(index.store.code(r.vertex as usize, r.time as usize + h) as f64);
            }
        }
        let mask = labels.iter().map(|&c| c != 0.0).collect();
        (labels, mask)
    }

    fn loss_tape(&self, index: &SampleIndex, refs: &[SampleRef], grad: bool) -> Result<(f64, Option<Gradients>)> {
        let mut tape = Tape::new(&self.params);
        let pred = self.record(&mut tape, self.inputs(index, refs)?)?;
        let (labels, mask) = self.labels(index, refs);
        let l = crate::model::loss(&mut tape, pred, &labels, &mask)?;
        let g = if grad { Some(tape.backward(l)?) } else { None };
        Ok((tape.value(l).item(), g))
    }
}

impl Network for Fnn {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_and_grad(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<(f64, Gradients)> {
        let (l, g) = self.loss_tape(index, refs, true)?;
        Ok((l, g.expect("requested")))
    }

    fn loss(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<f64> {
        Ok(self.loss_tape(index, refs, false)?.0)
    }

    fn save(&self, dir: &Path, adam: Option<&AdamState>, step: u64, extra: serde_json::Value) -> Result<()> {
        let mut extra = if extra.is_object() { extra } else { serde_json::json!({}) };
        extra["fnn"] = serde_json::to_value(&self.config)?;
        let hash = checkpoint::config_hash(&self.config)?;
        checkpoint::save_checkpoint(dir, &self.params, adam, &hash, step, extra)
    }

    fn load_like(&self, dir: &Path) -> Result<(Self, Checkpoint)> {
        let ck = checkpoint::load_checkpoint(dir)?;
        if ck.manifest.config_hash != checkpoint::config_hash(&self.config)? {
            return Err(Error::Checkpoint("checkpoint has a different fnn configuration".into()));
        }
        let f = Fnn::from_params(self.config.clone(), ck.params.clone())?;
        Ok((f, ck))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_count_and_zero_input() {
        let mut f = Fnn::new(FnnConfig::default(), 1).unwrap();
        let out = f.predict_inputs(Tensor::zeros(&[2, 13])).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|&v| v == 0.0));
        let id = f.params().id("fnn.b2").unwrap();
        f.params_mut().get_mut(id).data_mut()[0] = 1.0;
        assert_eq!(f.predict_inputs(Tensor::zeros(&[1, 13])).unwrap()[0], 1.0);
    }
}
