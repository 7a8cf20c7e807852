//! The forecasting network.
//!
//! A cell is the embedding of a road's `p+1` most recent condition codes
//! followed by its limit-level embedding. Each side (upstream, downstream)
//! convolves every cell of every path row with `m` shared kernels whose
//! window is one full cell, runs an LSTM along the order axis, max-pools
//! the valid rows of each order into a slot vector `s^j`, and attends over
//! the `r` slots with a scorer conditioned on the target encoding `g`.
//! Each horizon owns its attention scorers and a linear head over
//! `[z_up, g, z_down]`; everything else is shared.
//!
//! All operations work on whole batches: rows of a side matrix are
//! `sample · l + path_row`, so the tape length does not depend on the batch
//! size.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, Checkpoint};
use crate::autodiff::{init_with, AdamState, Gradients, InitScheme, ParamId, ParamStore, Tape, Tensor, Var};
use crate::dataset::{Batch, ConditionStore, Sample, SampleSpec, MAX_CODE};
use crate::error::{Error, Result};
use crate::graph::Direction;

/// Rows of the condition embedding table (codes `0..=4`).
pub const CONDITION_CODES: usize = MAX_CODE as usize + 1;
/// Rows of the limit-level embedding table.
pub const LIMIT_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `p`: past steps kept besides the current one.
    pub history: usize,
    /// `r`: perceptive radius.
    pub radius: usize,
    /// `l`: path rows per slot.
    pub width: usize,
    pub embed_dim: usize,
    /// `m`: convolution feature maps.
    pub feature_maps: usize,
    /// `d`: LSTM and target hidden size.
    pub hidden: usize,
    pub horizons: Vec<usize>,
    pub attn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history: 12,
            radius: 5,
            width: 8,
            embed_dim: 32,
            feature_maps: 4,
            hidden: 32,
            horizons: vec![3, 6, 9, 12],
            attn_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("radius", self.radius),
            ("width", self.width),
            ("embed_dim", self.embed_dim),
            ("feature_maps", self.feature_maps),
            ("hidden", self.hidden),
            ("attn_hidden", self.attn_hidden),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        self.sample_spec().validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Embedded cell length, which is also the convolution window.
    pub fn cell_len(&self) -> usize {
        (self.history + 2) * self.embed_dim
    }

    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            history: self.history,
            radius: self.radius,
            horizons: self.horizons.clone(),
            max_paths: self.width,
        }
    }

    /// Every parameter as `(name, shape, init)` in creation order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, InitScheme)> {
        let glorot = InitScheme::Glorot { gain: 1.0 };
        let (e, m, d, a) = (self.embed_dim, self.feature_maps, self.hidden, self.attn_hidden);
        let cell = self.cell_len();
        let mut out = vec![
            ("embed.condition".to_string(), vec![CONDITION_CODES, e], glorot),
            ("embed.level".to_string(), vec![LIMIT_LEVELS, e], glorot),
        ];
        for side in ["up", "down"] {
            out.push((format!("conv.{side}.w"), vec![cell, m], glorot));
            out.push((format!("conv.{side}.b"), vec![m], InitScheme::Zeros));
            out.push((format!("lstm.{side}.w"), vec![d + m, 4 * d], glorot));
            out.push((format!("lstm.{side}.b"), vec![4 * d], InitScheme::Zeros));
        }
        out.push(("target.w".to_string(), vec![cell, d], glorot));
        out.push(("target.b".to_string(), vec![d], InitScheme::Zeros));
        for h in &self.horizons {
            for side in ["up", "down"] {
                out.push((format!("attn.h{h}.{side}.w1"), vec![2 * d, a], glorot));
                out.push((format!("attn.h{h}.{side}.b1"), vec![a], InitScheme::Zeros));
                out.push((format!("attn.h{h}.{side}.w2"), vec![a, 1], glorot));
                out.push((format!("attn.h{h}.{side}.b2"), vec![1], InitScheme::Zeros));
            }
            out.push((format!("head.h{h}.w"), vec![3 * d, 1], glorot));
            out.push((format!("head.h{h}.b"), vec![1], InitScheme::Zeros));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct SideIds {
    conv_w: ParamId,
    conv_b: ParamId,
    lstm_w: ParamId,
    lstm_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    condition: ParamId,
    level: ParamId,
    /// `[upstream, downstream]`.
    sides: [SideIds; 2],
    target_w: ParamId,
    target_b: ParamId,
    /// Per horizon, `[upstream, downstream]`.
    attn: Vec<[AttnIds; 2]>,
    heads: Vec<(ParamId, ParamId)>,
}

fn side_index(direction: Direction) -> usize {
    match direction {
        Direction::Upstream => 0,
        Direction::Downstream => 1,
    }
}

/// Network configuration plus its named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

/// Per-sample result of [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// One continuous value per horizon.
    pub predictions: Vec<f64>,
    /// Per horizon, `r` upstream attention weights.
    pub attention_up: Vec<Vec<f64>>,
    pub attention_down: Vec<Vec<f64>>,
    /// `r` pooled slot vectors of length `d` per side.
    pub slots_up: Vec<Vec<f64>>,
    pub slots_down: Vec<Vec<f64>>,
}

/// Batched inference result.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub n: usize,
    pub horizons: usize,
    pub radius: usize,
    /// `n × |horizons|`.
    pub predictions: Vec<f64>,
    /// `[upstream, downstream]`, then per horizon an `n × r` matrix.
    pub attention: [Vec<Vec<f64>>; 2],
    /// `[upstream, downstream]`, then per order an `n × d` matrix.
    pub slots: [Vec<Vec<f64>>; 2],
}

impl BatchOutput {
    pub fn prediction(&self, i: usize, k: usize) -> f64 {
        self.predictions[i * self.horizons + k]
    }

    pub fn attention(&self, direction: Direction, horizon: usize, i: usize) -> &[f64] {
        let a = &self.attention[side_index(direction)][horizon];
        &a[i * self.radius..(i + 1) * self.radius]
    }
}

/// Variables of one recorded forward pass.
pub struct TapeForward {
    /// `n × |horizons|`.
    pub predictions: Var,
    /// `[side][horizon]`, each `n × r`.
    pub attention: [Vec<Var>; 2],
    /// `[side][order]`, each `n × d`.
    pub slots: [Vec<Var>; 2],
}

impl Model {
    /// Fresh parameters drawn from one ChaCha8 stream in layout order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, scheme) in config.param_layout() {
            params.insert(name, init_with(&shape, scheme, &mut rng))?;
        }
        Model::from_params(config, params)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &layout {
            match params.by_name(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        let id = |n: String| params.id(&n).expect("checked above");
        let side = |s: &str| SideIds {
            conv_w: id(format!("conv.{s}.w")),
            conv_b: id(format!("conv.{s}.b")),
            lstm_w: id(format!("lstm.{s}.w")),
            lstm_b: id(format!("lstm.{s}.b")),
        };
        let attn = |h: usize, s: &str| AttnIds {
            w1: id(format!("attn.h{h}.{s}.w1")),
            b1: id(format!("attn.h{h}.{s}.b1")),
            w2: id(format!("attn.h{h}.{s}.w2")),
            b2: id(format!("attn.h{h}.{s}.b2")),
        };
        let ids = Ids {
            condition: id("embed.condition".into()),
            level: id("embed.level".into()),
            sides: [side("up"), side("down")],
            target_w: id("target.w".into()),
            target_b: id("target.b".into()),
            attn: config.horizons.iter().map(|&h| [attn(h, "up"), attn(h, "down")]).collect(),
            heads: config
                .horizons
                .iter()
                .map(|&h| (id(format!("head.h{h}.w")), id(format!("head.h{h}.b"))))
                .collect(),
        };
        Ok(Model { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Cell embeddings `[rows × (p+2)·E]` for row-major `codes` (`p+1` per
    /// row) and zero-based `levels`.
    pub fn embed_cells(&self, tape: &mut Tape, codes: &[usize], levels: &[usize]) -> Result<Var> {
        let p1 = self.config.history + 1;
        check_cells(codes, levels, p1)?;
        let rows = levels.len();
        let cond = tape.param(self.ids.condition);
        let level = tape.param(self.ids.level);
        let mut parts = Vec::with_capacity(p1 + 1);
        for k in 0..p1 {
            let idx = (0..rows).map(|r| codes[r * p1 + k]).collect();
            parts.push(tape.gather(cond, idx)?);
        }
        parts.push(tape.gather(level, levels.to_vec())?);
        tape.concat(&parts, 1)
    }

    /// Projects both embedding tables through a linear map `w[(p+2)E × o]`
    /// block by block, appending `b` as the last row. Summing the rows
    /// selected by [`cell_indices`] equals `embed_cell · w + b`.
    fn projected_table(&self, tape: &mut Tape, w: ParamId, b: ParamId) -> Result<Var> {
        let (p1, e) = (self.config.history + 1, self.config.embed_dim);
        let cond = tape.param(self.ids.condition);
        let level = tape.param(self.ids.level);
        let w = tape.param(w);
        let b = tape.param(b);
        let mut parts = Vec::with_capacity(p1 + 2);
        for k in 0..p1 {
            let block = tape.slice_rows(w, k * e, e)?;
            parts.push(tape.matmul(cond, block)?);
        }
        let block = tape.slice_rows(w, p1 * e, e)?;
        parts.push(tape.matmul(level, block)?);
        let width = tape.value(b).len();
        parts.push(tape.reshape(b, vec![1, width])?);
        tape.concat(&parts, 0)
    }

    /// `tanh` of the `m`-map convolution of each order's cells.
    /// `cells[j]` holds the codes and levels of order `j+1`; returns one
    /// `[rows × m]` matrix per order.
    pub fn conv_side(
        &self,
        tape: &mut Tape,
        direction: Direction,
        cells: &[(&[usize], &[usize])],
    ) -> Result<Vec<Var>> {
        let ids = self.ids.sides[side_index(direction)];
        let table = self.projected_table(tape, ids.conv_w, ids.conv_b)?;
        let p1 = self.config.history + 1;
        cells
            .iter()
            .map(|&(codes, levels)| {
                check_cells(codes, levels, p1)?;
                let pre = tape.gather_sum(table, cell_indices(codes, levels, p1), p1 + 2)?;
                tape.tanh(pre)
            })
            .collect()
    }

    /// LSTM along the order axis with zero initial state. Downstream runs
    /// order `1 → r`, upstream `r → 1`; outputs are indexed by order.
    pub fn lstm_side(&self, tape: &mut Tape, direction: Direction, e: &[Var]) -> Result<Vec<Var>> {
        let ids = self.ids.sides[side_index(direction)];
        let d = self.config.hidden;
        let Some(&first) = e.first() else {
            return Ok(Vec::new());
        };
        let rows = tape.value(first).rows();
        let w = tape.param(ids.lstm_w);
        let b = tape.param(ids.lstm_b);
        let mut h = tape.leaf(Tensor::zeros(&[rows, d]))?;
        let mut c = h;
        let order: Vec<usize> = match direction {
            Direction::Downstream => (0..e.len()).collect(),
            Direction::Upstream => (0..e.len()).rev().collect(),
        };
        let mut out = vec![h; e.len()];
        for j in order {
            let x = tape.concat(&[h, e[j]], 1)?;
            let pre = tape.affine(x, w, b)?;
            let cand = tape.slice_cols(pre, 0, d)?;
            let cand = tape.tanh(cand)?;
            let o = tape.slice_cols(pre, d, d)?;
            let o = tape.sigmoid(o)?;
            let i = tape.slice_cols(pre, 2 * d, d)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(pre, 3 * d, d)?;
            let f = tape.sigmoid(f)?;
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, cand)?;
            c = tape.add(keep, write)?;
            let act = tape.tanh(c)?;
            h = tape.mul(o, act)?;
            out[j] = h;
        }
        Ok(out)
    }

    /// Masked max-pool of each order's rows into `s^j` (`[n × d]`).
    /// Samples whose rows are all masked get `s^j = 0`.
    pub fn pool_slots(&self, tape: &mut Tape, h: &[Var], mask: &[bool]) -> Result<Vec<Var>> {
        h.iter()
            .map(|&hj| tape.masked_max_pool(hj, mask, self.config.width, 0.0))
            .collect()
    }

    /// Attention of horizon `k` over pooled slots: returns `(z, α)` with
    /// `z: [n × d]` and `α: [n × r]`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        direction: Direction,
        horizon: usize,
        slots: &[Var],
        g: Var,
    ) -> Result<(Var, Var)> {
        let ids = self.ids.attn[horizon][side_index(direction)];
        let d = self.config.hidden;
        let r = slots.len();
        let n = tape.value(g).rows();
        let w1 = tape.param(ids.w1);
        let b1 = tape.param(ids.b1);
        let w2 = tape.param(ids.w2);
        let b2 = tape.param(ids.b2);
        let wg = tape.slice_rows(w1, 0, d)?;
        let ws = tape.slice_rows(w1, d, d)?;

        // Rows are order-major (`j·n + i`) until the permutation below.
        let stacked = tape.concat(slots, 0)?;
        let from_s = tape.affine(stacked, ws, b1)?;
        let from_g = tape.matmul(g, wg)?;
        let from_g = tape.concat(&vec![from_g; r], 0)?;
        let hidden = tape.add(from_s, from_g)?;
        let hidden = tape.tanh(hidden)?;
        let score = tape.affine(hidden, w2, b2)?;

        let perm: Vec<usize> = (0..n * r).map(|q| (q % r) * n + q / r).collect();
        let score = tape.gather(score, perm.clone())?;
        let score = tape.reshape(score, vec![n, r])?;
        let alpha = tape.softmax(score)?;
        let weights = tape.reshape(alpha, vec![n * r, 1])?;
        let by_sample = tape.gather(stacked, perm)?;
        let weighted = tape.scale_rows(by_sample, weights)?;
        let z = tape.sum_groups(weighted, r)?;
        Ok((z, alpha))
    }

    /// `g = tanh(embed_cell(target) · W + b)`, `[n × d]`.
    pub fn target_encode(&self, tape: &mut Tape, codes: &[usize], levels: &[usize]) -> Result<Var> {
        let p1 = self.config.history + 1;
        check_cells(codes, levels, p1)?;
        let table = self.projected_table(tape, self.ids.target_w, self.ids.target_b)?;
        let pre = tape.gather_sum(table, cell_indices(codes, levels, p1), p1 + 2)?;
        tape.tanh(pre)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let c = &self.config;
        if batch.history != c.history
            || batch.radius != c.radius
            || batch.width != c.width
            || batch.horizons != c.horizons.len()
        {
            return Err(Error::shape(
                "forward",
                format!(
                    "batch (p={}, r={}, l={}, H={}) vs model (p={}, r={}, l={}, H={})",
                    batch.history,
                    batch.radius,
                    batch.width,
                    batch.horizons,
                    c.history,
                    c.radius,
                    c.width,
                    c.horizons.len()
                ),
            ));
        }
        if batch.n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(())
    }

    /// Records the full network for `batch` on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &Batch) -> Result<TapeForward> {
        self.check_batch(batch)?;
        let g = self.target_encode(tape, &batch.target_codes, &batch.target_levels)?;
        let mut slots: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        for (si, direction) in [Direction::Upstream, Direction::Downstream].into_iter().enumerate() {
            let side = &batch.sides[si];
            let cells: Vec<(&[usize], &[usize])> = side
                .codes
                .iter()
                .zip(&side.levels)
                .map(|(c, l)| (c.as_slice(), l.as_slice()))
                .collect();
            let e = self.conv_side(tape, direction, &cells)?;
            let h = self.lstm_side(tape, direction, &e)?;
            slots[si] = self.pool_slots(tape, &h, &side.mask)?;
        }
        let mut heads = Vec::with_capacity(self.config.horizons.len());
        let mut attention: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        for k in 0..self.config.horizons.len() {
            let (z_up, a_up) = self.attend(tape, Direction::Upstream, k, &slots[0], g)?;
            let (z_down, a_down) = self.attend(tape, Direction::Downstream, k, &slots[1], g)?;
            attention[0].push(a_up);
            attention[1].push(a_down);
            let joined = tape.concat(&[z_up, g, z_down], 1)?;
            let (w, b) = self.ids.heads[k];
            let (w, b) = (tape.param(w), tape.param(b));
            heads.push(tape.affine(joined, w, b)?);
        }
        let predictions = tape.concat(&heads, 1)?;
        Ok(TapeForward {
            predictions,
            attention,
            slots,
        })
    }

    /// Inference on a batch.
    pub fn predict_batch(&self, batch: &Batch) -> Result<BatchOutput> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_tape(&mut tape, batch)?;
        let grab = |vars: &[Var]| vars.iter().map(|&v| tape.value(v).data().to_vec()).collect();
        Ok(BatchOutput {
            n: batch.n,
            horizons: batch.horizons,
            radius: batch.radius,
            predictions: tape.value(out.predictions).data().to_vec(),
            attention: [grab(&out.attention[0]), grab(&out.attention[1])],
            slots: [grab(&out.slots[0]), grab(&out.slots[1])],
        })
    }

    /// Summed masked squared error over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_tape(&mut tape, batch)?;
        let l = loss(&mut tape, out.predictions, &batch.labels, &batch.label_mask)?;
        let value = tape.value(l).item();
        Ok((value, tape.backward(l)?))
    }

    /// Summed masked squared error without gradients.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_tape(&mut tape, batch)?;
        let l = loss(&mut tape, out.predictions, &batch.labels, &batch.label_mask)?;
        Ok(tape.value(l).item())
    }

    /// Forward pass for a single sample.
    pub fn forward(&self, sample: &Sample) -> Result<ForwardOutput> {
        let batch = Batch::from_samples(std::slice::from_ref(sample), &self.config.sample_spec())?;
        let out = self.predict_batch(&batch)?;
        let rows = |m: &Vec<Vec<f64>>| m.clone();
        Ok(ForwardOutput {
            predictions: out.predictions.clone(),
            attention_up: rows(&out.attention[0]),
            attention_down: rows(&out.attention[1]),
            slots_up: rows(&out.slots[0]),
            slots_down: rows(&out.slots[1]),
        })
    }

    /// Writes parameters (and optionally optimizer state) with the model
    /// configuration stored under `extra.model`.
    pub fn save(
        &self,
        dir: &Path,
        adam: Option<&AdamState>,
        step: u64,
        mut extra: serde_json::Value,
    ) -> Result<()> {
        let hash = checkpoint::config_hash(&self.config)?;
        if !extra.is_object() {
            extra = serde_json::json!({});
        }
        extra["model"] = serde_json::to_value(&self.config)?;
        checkpoint::save_checkpoint(dir, &self.params, adam, &hash, step, extra)
    }

    /// Loads a checkpoint written by [`Model::save`].
    pub fn load(dir: &Path) -> Result<(Model, Checkpoint)> {
        let ck = checkpoint::load_checkpoint(dir)?;
        let config: ModelConfig = serde_json::from_value(ck.manifest.extra["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        if checkpoint::config_hash(&config)? != ck.manifest.config_hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let model = Model::from_params(config, ck.params.clone())?;
        Ok((model, ck))
    }
}

fn check_cells(codes: &[usize], levels: &[usize], p1: usize) -> Result<()> {
    if codes.len() != levels.len() * p1 {
        return Err(Error::shape(
            "embed_cell",
            format!("{} codes for {} cells of {p1}", codes.len(), levels.len()),
        ));
    }
    if let Some(&c) = codes.iter().find(|&&c| c >= CONDITION_CODES) {
        return Err(Error::CodeOutOfRange {
            code: c as i64,
            context: "cell embedding".into(),
        });
    }
    if let Some(&l) = levels.iter().find(|&&l| l >= LIMIT_LEVELS) {
        return Err(Error::CodeOutOfRange {
            code: l as i64 + 1,
            context: "limit level".into(),
        });
    }
    Ok(())
}

/// Row indices into a projected table: position `k` of a cell selects row
/// `5k + code`, the level selects `5(p+1) + level`, and the bias row is last.
fn cell_indices(codes: &[usize], levels: &[usize], p1: usize) -> Vec<usize> {
    let level_base = p1 * CONDITION_CODES;
    let bias = level_base + LIMIT_LEVELS;
    let mut idx = Vec::with_capacity(levels.len() * (p1 + 2));
    for (row, &level) in levels.iter().enumerate() {
        for (k, &c) in codes[row * p1..(row + 1) * p1].iter().enumerate() {
            idx.push(k * CONDITION_CODES + c);
        }
        idx.push(level_base + level);
        idx.push(bias);
    }
    idx
}

/// Sum over samples and horizons of masked squared error against integer
/// label codes.
pub fn loss(tape: &mut Tape, predictions: Var, labels: &[f64], mask: &[bool]) -> Result<Var> {
    let shape = tape.value(predictions).shape().to_vec();
    let target = tape.leaf(Tensor::new(shape, labels.to_vec())?)?;
    tape.squared_error(predictions, target, mask)
}

/// Writes `vertex,time,side,order,weight` rows of horizon index `horizon`
/// for every sample of `batch`.
pub fn write_attention_csv<W: Write>(
    out: &mut W,
    store: &ConditionStore,
    batch: &Batch,
    result: &BatchOutput,
    horizon: usize,
) -> Result<()> {
    for (i, meta) in batch.meta.iter().enumerate() {
        let vertex = &store.vertex_ids()[meta.vertex as usize];
        let time = store.step_of(meta.time as usize);
        for direction in [Direction::Upstream, Direction::Downstream] {
            for (j, w) in result.attention(direction, horizon, i).iter().enumerate() {
                writeln!(out, "{vertex},{time},{},{},{w}", direction.as_str(), j + 1)?;
            }
        }
    }
    Ok(())
}

/// Opens `path` and writes the attention CSV header.
pub fn create_attention_csv(path: &Path) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "vertex,time,side,order,weight")?;
    Ok(w)
}
