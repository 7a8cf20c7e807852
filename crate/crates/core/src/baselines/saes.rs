//! Stacked autoencoders over the concatenated histories of every road.
//!
//! One input row is a time step: for each vertex in index order, its `p+1`
//! most recent codes. Layers are pretrained greedily as autoencoders, then
//! a linear head producing `|horizons|` values per vertex is attached and
//! the whole stack is fine-tuned. Training refs carry only a time; their
//! vertex field is ignored.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, Checkpoint};
use crate::autodiff::{init_with, AdamState, Gradients, InitScheme, ParamId, ParamStore, Tape, Tensor, Var};
use crate::dataset::{SampleIndex, SampleRef};
use crate::error::{Error, Result};
use crate::training::{train_network, Network, TrainConfig, TrainIo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaesConfig {
    pub history: usize,
    pub layers: Vec<usize>,
    pub horizons: Vec<usize>,
    /// Number of roads; fixes the input width.
    pub vertices: usize,
}

impl Default for SaesConfig {
    fn default() -> Self {
        SaesConfig {
            history: 12,
            layers: vec![256; 4],
            horizons: vec![3, 6, 9, 12],
            vertices: 0,
        }
    }
}

impl SaesConfig {
    pub fn input_dim(&self) -> usize {
        self.vertices * (self.history + 1)
    }

    fn layer_in(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim()
        } else {
            self.layers[k - 1]
        }
    }
}

#[derive(Debug, Clone)]
pub struct Saes {
    config: SaesConfig,
    params: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

impl Saes {
    pub fn new(config: SaesConfig, seed: u64) -> Result<Self> {
        if config.vertices == 0 || config.layers.is_empty() || config.layers.contains(&0) {
            return Err(Error::Config("saes needs vertices and non-empty layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let glorot = InitScheme::Glorot { gain: 1.0 };
        let mut params = ParamStore::new();
        for (k, &width) in config.layers.iter().enumerate() {
            params.insert(format!("saes.l{k}.w"), init_with(&[config.layer_in(k), width], glorot, &mut rng))?;
            params.insert(format!("saes.l{k}.b"), Tensor::zeros(&[width]))?;
        }
        let top = *config.layers.last().expect("non-empty");
        let outputs = config.vertices * config.horizons.len();
        params.insert("saes.head.w", init_with(&[top, outputs], glorot, &mut rng))?;
        params.insert("saes.head.b", Tensor::zeros(&[outputs]))?;
        Saes::from_params(config, params)
    }

    pub fn from_params(config: SaesConfig, params: ParamStore) -> Result<Self> {
        let find = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!("{name} has the wrong shape")));
            }
            Ok(id)
        };
        let mut layers = Vec::new();
        for (k, &width) in config.layers.iter().enumerate() {
            layers.push((
                find(format!("saes.l{k}.w"), &[config.layer_in(k), width])?,
                find(format!("saes.l{k}.b"), &[width])?,
            ));
        }
        let top = *config.layers.last().ok_or_else(|| Error::Config("no layers".into()))?;
        let outputs = config.vertices * config.horizons.len();
        let head = (
            find("saes.head.w".into(), &[top, outputs])?,
            find("saes.head.b".into(), &[outputs])?,
        );
        if params.len() != 2 * layers.len() + 2 {
            return Err(Error::Checkpoint("unexpected saes parameters".into()));
        }
        Ok(Saes {
            config,
            params,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &SaesConfig {
        &self.config
    }

    fn check(&self, index: &SampleIndex) -> Result<()> {
        if index.store.vertex_count() != self.config.vertices {
            return Err(Error::shape(
                "saes",
                format!(
                    "input built for {} vertices, store has {}",
                    self.config.vertices,
                    index.store.vertex_count()
                ),
            ));
        }
        Ok(())
    }

    /// `[n × V·(p+1)]` rows for the times of `refs`.
    pub fn inputs(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<Tensor> {
        self.check(index)?;
        let p = self.config.history;
        let mut data = Vec::with_capacity(refs.len() * self.config.input_dim());
        for r in refs {
            let t = r.time as usize;
            if t < p {
                return Err(Error::InvalidArgument(format!("time {t} lacks history")));
            }
            for v in 0..self.config.vertices {
                data.extend((0..=p).map(|k| index.store.code(v, t - k) as f64));
            }
        }
        Tensor::matrix(refs.len(), self.config.input_dim(), data)
    }

    /// Hidden representation after the first `depth` layers.
    fn encode(&self, tape: &mut Tape, x: Var, depth: usize) -> Result<Var> {
        let mut h = x;
        for &(w, b) in &self.layers[..depth] {
            let (w, b) = (tape.param(w), tape.param(b));
            let a = tape.affine(h, w, b)?;
            h = tape.tanh(a)?;
        }
        Ok(h)
    }

    /// Values of the first `depth` layers for raw input rows.
    pub fn encode_values(&self, x: Tensor, depth: usize) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let x = tape.leaf(x)?;
        let h = self.encode(&mut tape, x, depth)?;
        Ok(tape.value(h).clone())
    }

    fn outputs(&self, tape: &mut Tape, x: Tensor) -> Result<Var> {
        let x = tape.leaf(x)?;
        let h = self.encode(tape, x, self.layers.len())?;
        let (w, b) = (tape.param(self.head.0), tape.param(self.head.1));
        tape.affine(h, w, b)
    }

    fn labels(&self, index: &SampleIndex, refs: &[SampleRef]) -> (Vec<f64>, Vec<bool>) {
        let mut labels = Vec::new();
        for r in refs {
            for v in 0..self.config.vertices {
                for &h in &self.config.horizons {
                    labels.push(index.store.code(v, r.time as usize + h) as f64);
                }
            }
        }
        let mask = labels.iter().map(|&c| c != 0.0).collect();
        (labels, mask)
    }

    fn loss_tape(&self, index: &SampleIndex, refs: &[SampleRef], grad: bool) -> Result<(f64, Option<Gradients>)> {
        let mut tape = Tape::new(&self.params);
        let out = self.outputs(&mut tape, self.inputs(index, refs)?)?;
        let (labels, mask) = self.labels(index, refs);
        let l = crate::model::loss(&mut tape, out, &labels, &mask)?;
        let g = if grad { Some(tape.backward(l)?) } else { None };
        Ok((tape.value(l).item(), g))
    }

    /// Per-sample predictions (`n × |horizons|`) for vertex-level refs.
    pub fn predict(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<Vec<f64>> {
        let horizons = self.config.horizons.len();
        let times: Vec<u32> = refs
            .iter()
            .map(|r| r.time)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for chunk in times.chunks(256) {
            let trefs: Vec<SampleRef> = chunk.iter().map(|&time| SampleRef { vertex: 0, time }).collect();
            let mut tape = Tape::new(&self.params);
            let out = self.outputs(&mut tape, self.inputs(index, &trefs)?)?;
            let value = tape.value(out);
            for (i, &t) in chunk.iter().enumerate() {
                rows.insert(t, value.row(i).to_vec());
            }
        }
        let mut out = Vec::with_capacity(refs.len() * horizons);
        for r in refs {
            let row = &rows[&r.time];
            let v = r.vertex as usize;
            out.extend_from_slice(&row[v * horizons..(v + 1) * horizons]);
        }
        Ok(out)
    }

    /// Greedy layer-wise pretraining followed by supervised fine-tuning.
    /// `time_refs` holds one ref per training time step.
    pub fn fit(
        mut self,
        index: &SampleIndex,
        time_refs: &[SampleRef],
        pretrain: &TrainConfig,
        finetune: &TrainConfig,
    ) -> Result<Saes> {
        for k in 0..self.layers.len() {
            let stage = AutoencoderStage::new(self.clone(), k, pretrain.seed.wrapping_add(k as u64))?;
            let trained = train_network(index, time_refs, stage, pretrain, TrainIo::default())?.model;
            trained.install(&mut self);
        }
        Ok(train_network(index, time_refs, self, finetune, TrainIo::default())?.model)
    }
}

/// One time-level ref per distinct time of `refs`, ascending.
pub fn time_refs(refs: &[SampleRef]) -> Vec<SampleRef> {
    refs.iter()
        .map(|r| r.time)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|time| SampleRef { vertex: 0, time })
        .collect()
}

impl Network for Saes {
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

    fn labelled(&self, index: &SampleIndex, refs: &[SampleRef]) -> usize {
        self.labels(index, refs).1.iter().filter(|&&m| m).count()
    }

    fn save(&self, dir: &Path, adam: Option<&AdamState>, step: u64, extra: serde_json::Value) -> Result<()> {
        let mut extra = if extra.is_object() { extra } else { serde_json::json!({}) };
        extra["saes"] = serde_json::to_value(&self.config)?;
        let hash = checkpoint::config_hash(&self.config)?;
        checkpoint::save_checkpoint(dir, &self.params, adam, &hash, step, extra)
    }

    fn load_like(&self, dir: &Path) -> Result<(Self, Checkpoint)> {
        let ck = checkpoint::load_checkpoint(dir)?;
        if ck.manifest.config_hash != checkpoint::config_hash(&self.config)? {
            return Err(Error::Checkpoint("checkpoint has a different saes configuration".into()));
        }
        Ok((Saes::from_params(self.config.clone(), ck.params.clone())?, ck))
    }
}

/// Autoencoder for layer `k` of a stack whose lower layers are frozen.
#[derive(Debug, Clone)]
pub struct AutoencoderStage {
    stack: Saes,
    layer: usize,
    params: ParamStore,
}

impl AutoencoderStage {
    pub fn new(stack: Saes, layer: usize, seed: u64) -> Result<Self> {
        let (w, b) = stack.layers[layer];
        let input = stack.config.layer_in(layer);
        let width = stack.config.layers[layer];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("enc.w", stack.params.get(w).clone())?;
        params.insert("enc.b", stack.params.get(b).clone())?;
        params.insert("dec.w", init_with(&[width, input], InitScheme::Glorot { gain: 1.0 }, &mut rng))?;
        params.insert("dec.b", Tensor::zeros(&[input]))?;
        Ok(AutoencoderStage { stack, layer, params })
    }

    /// Copies the trained encoder into `stack`.
    pub fn install(&self, stack: &mut Saes) {
        let (w, b) = stack.layers[self.layer];
        *stack.params.get_mut(w) = self.params.by_name("enc.w").expect("present").clone();
        *stack.params.get_mut(b) = self.params.by_name("enc.b").expect("present").clone();
    }

    fn layer_input(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<Tensor> {
        let x = self.stack.inputs(index, refs)?;
        self.stack.encode_values(x, self.layer)
    }

    /// Summed squared reconstruction error of raw layer inputs.
    pub fn reconstruction_error(&self, x: Tensor) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let l = self.record(&mut tape, x)?;
        Ok(tape.value(l).item())
    }

    fn record(&self, tape: &mut Tape, x: Tensor) -> Result<Var> {
        let mask = vec![true; x.len()];
        let x = tape.leaf(x)?;
        let ids: Vec<ParamId> = ["enc.w", "enc.b", "dec.w", "dec.b"]
            .iter()
            .map(|n| self.params.id(n).expect("present"))
            .collect();
        let v: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let h = tape.affine(x, v[0], v[1])?;
        let h = tape.tanh(h)?;
        let y = tape.affine(h, v[2], v[3])?;
        tape.squared_error(y, x, &mask)
    }
}

impl Network for AutoencoderStage {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss_and_grad(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let l = self.record(&mut tape, self.layer_input(index, refs)?)?;
        Ok((tape.value(l).item(), tape.backward(l)?))
    }

    fn loss(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<f64> {
        self.reconstruction_error(self.layer_input(index, refs)?)
    }

    fn labelled(&self, _index: &SampleIndex, refs: &[SampleRef]) -> usize {
        refs.len() * self.stack.config.layer_in(self.layer)
    }

    fn save(&self, dir: &Path, adam: Option<&AdamState>, step: u64, extra: serde_json::Value) -> Result<()> {
        let mut extra = if extra.is_object() { extra } else { serde_json::json!({}) };
        extra["layer"] = self.layer.into();
        let hash = checkpoint::config_hash(&(&self.stack.config, self.layer))?;
        checkpoint::save_checkpoint(dir, &self.params, adam, &hash, step, extra)
    }

    fn load_like(&self, dir: &Path) -> Result<(Self, Checkpoint)> {
        let ck = checkpoint::load_checkpoint(dir)?;
        if ck.manifest.config_hash != checkpoint::config_hash(&(&self.stack.config, self.layer))? {
            return Err(Error::Checkpoint("checkpoint is for another autoencoder".into()));
        }
        let mut stage = self.clone();
        stage.params = ck.params.clone();
        Ok((stage, ck))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AdamConfig;

    fn rank_one(n: usize, dim: usize) -> Tensor {
        let u: Vec<f64> = (0..dim).map(|j| ((j as f64) * 0.7).sin() * 0.5).collect();
        let mut data = Vec::new();
        for i in 0..n {
            let s = ((i as f64) * 0.37).cos();
            data.extend(u.iter().map(|x| x * s));
        }
        Tensor::matrix(n, dim, data).unwrap()
    }

    #[test]
    fn one_layer_autoencoder_learns_rank_one_data() {
        let config = SaesConfig {
            history: 0,
            layers: vec![2],
            horizons: vec![1],
            vertices: 6,
        };
        let stack = Saes::new(config, 1).unwrap();
        let mut stage = AutoencoderStage::new(stack, 0, 2).unwrap();
        let x = rank_one(40, 6);
        let start = stage.reconstruction_error(x.clone()).unwrap();
        let mut adam = AdamState::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, &stage.params);
        for _ in 0..3000 {
            let mut tape = Tape::new(&stage.params);
            let l = stage.record(&mut tape, x.clone()).unwrap();
            let g = tape.backward(l).unwrap();
            adam.step(&mut stage.params, &g).unwrap();
        }
        let end = stage.reconstruction_error(x).unwrap();
        assert!(end < 1e-3 * start, "{start} -> {end}");
    }

    #[test]
    fn install_reproduces_layer_outputs() {
        let config = SaesConfig {
            history: 1,
            layers: vec![3, 2],
            horizons: vec![1, 2],
            vertices: 2,
        };
        let mut stack = Saes::new(config, 3).unwrap();
        let stage = AutoencoderStage::new(stack.clone(), 1, 4).unwrap();
        stage.install(&mut stack);
        assert_eq!(stack.params().by_name("saes.l1.w"), stage.params().by_name("enc.w"));
        let x = rank_one(5, 4);
        assert_eq!(stack.encode_values(x.clone(), 2).unwrap(), stack.clone().encode_values(x, 2).unwrap());
        assert_eq!(stack.params().by_name("saes.head.w").unwrap().shape(), &[2, 4]);
    }
}
