//! Mini-batch training with synchronous data-parallel workers, early
//! stopping on a held-out tail of the training range, and quantile label
//! projection.
//!
//! A batch is cut into fixed-size chunks. Workers evaluate chunks in any
//! order, but chunk gradients are summed in chunk-index order, so the
//! parameter trajectory does not depend on the worker count.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{AdamConfig, AdamState, Gradients, ParamStore};
use crate::dataset::{class_distribution, SampleIndex, SampleRef};
use crate::error::{Error, Result};
use crate::model::Model;

/// A trainable predictor over samples of a [`SampleIndex`].
pub trait Network: Clone + Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Summed loss over `refs` and its gradient.
    fn loss_and_grad(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<(f64, Gradients)>;
    fn loss(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<f64>;
    /// Number of labelled targets the loss of `refs` sums over.
    fn labelled(&self, index: &SampleIndex, refs: &[SampleRef]) -> usize {
        let horizons = &index.spec.horizons;
        refs.iter()
            .map(|r| {
                horizons
                    .iter()
                    .filter(|&&h| index.store.code(r.vertex as usize, r.time as usize + h) != 0)
                    .count()
            })
            .sum()
    }
    fn save(&self, dir: &Path, adam: Option<&AdamState>, step: u64, extra: serde_json::Value) -> Result<()>;
    /// Loads a checkpoint, which must have this network's architecture.
    fn load_like(&self, dir: &Path) -> Result<(Self, Checkpoint)>;
}

impl Network for Model {
    fn params(&self) -> &ParamStore {
        Model::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        Model::params_mut(self)
    }

    fn loss_and_grad(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<(f64, Gradients)> {
        Model::loss_and_grad(self, &index.batch(refs))
    }

    fn loss(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<f64> {
        self.batch_loss(&index.batch(refs))
    }

    fn save(&self, dir: &Path, adam: Option<&AdamState>, step: u64, extra: serde_json::Value) -> Result<()> {
        Model::save(self, dir, adam, step, extra)
    }

    fn load_like(&self, dir: &Path) -> Result<(Self, Checkpoint)> {
        let (m, ck) = Model::load(dir)?;
        if m.config() != self.config() {
            return Err(Error::Checkpoint("checkpoint has a different model configuration".into()));
        }
        Ok((m, ck))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub workers: usize,
    /// Samples per gradient chunk; the unit of work and of summation order.
    pub chunk_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps, if any.
    pub max_steps: Option<u64>,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Steps between validation passes; `None` means once per epoch.
    pub eval_every: Option<u64>,
    /// Chronological tail of the training range used for validation.
    pub validation_fraction: f64,
    /// Random subset sizes, for runs that cannot afford every sample.
    pub max_train_samples: Option<usize>,
    pub max_val_samples: Option<usize>,
    pub seed: u64,
    /// Include wall-clock seconds in log records.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1100,
            workers: 11,
            chunk_size: 100,
            adam: AdamConfig::default(),
            max_epochs: 20,
            max_steps: None,
            patience: 5,
            eval_every: None,
            validation_fraction: 0.1,
            max_train_samples: None,
            max_val_samples: None,
            seed: 0,
            log_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.workers == 0 || self.chunk_size == 0 {
            return Err(Error::Config("batch_size, workers and chunk_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One JSON line per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean squared error per labelled horizon in the step's batch.
    pub train_loss: f64,
    /// Mean squared error per labelled horizon on the validation set, on
    /// evaluation steps only.
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Cumulative class proportions `(q1, q2, q3)` over codes 1..4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionThresholds {
    pub q: [f64; 3],
}

impl ProjectionThresholds {
    pub fn new(q: [f64; 3]) -> Result<Self> {
        let ok = q[0] > 0.0 && q[0] <= q[1] && q[1] <= q[2] && q[2] <= 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("thresholds {q:?} not in (0, 1] ascending")));
        }
        Ok(ProjectionThresholds { q })
    }
}

/// Thresholds from the pooled non-zero training labels.
pub fn fit_projection<I: IntoIterator<Item = u8>>(labels: I) -> Result<ProjectionThresholds> {
    let cdf = class_distribution(labels)?;
    ProjectionThresholds::new([cdf[0], cdf[1], cdf[2]])
}

/// Thresholds from every label of `refs` at every horizon.
pub fn fit_projection_refs(index: &SampleIndex, refs: &[SampleRef]) -> Result<ProjectionThresholds> {
    fit_projection(refs.iter().flat_map(|r| {
        index
            .spec
            .horizons
            .iter()
            .map(move |&h| index.store.code(r.vertex as usize, r.time as usize + h))
    }))
}

/// `⌊q·n⌋`, except that products within rounding error of an integer
/// snap to it, so thresholds fitted as `count / n` reproduce `count`.
pub fn class_cut(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    let cut = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.floor() };
    (cut.max(0.0) as usize).min(n)
}

/// Ranks predictions ascending (ties by original position) and gives the
/// first `class_cut(q1, n)` class 1, up to `class_cut(q2, n)` class 2, and
/// so on; the rest are class 4. Output follows the input order.
pub fn project_labels(predictions: &[f64], thresholds: &ProjectionThresholds) -> Vec<u8> {
    let n = predictions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]).then(a.cmp(&b)));
    let cuts = thresholds.q.map(|q| class_cut(q, n));
    let mut out = vec![4u8; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = match rank {
            r if r < cuts[0] => 1,
            r if r < cuts[1] => 2,
            r if r < cuts[2] => 3,
            _ => 4,
        };
    }
    out
}

/// Train/validation sample partition of one index.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<SampleRef>,
    pub validation: Vec<SampleRef>,
}

/// Samples whose time lies in the last `fraction` of the time range spanned
/// by `refs` go to validation; training samples whose labels would reach
/// into that tail are dropped. Optional caps take seeded random subsets
/// (kept in input order).
pub fn split_refs(refs: &[SampleRef], max_horizon: usize, config: &TrainConfig) -> Split {
    let lo = refs.iter().map(|r| r.time as usize).min().unwrap_or(0);
    let hi = refs.iter().map(|r| r.time as usize + 1).max().unwrap_or(0);
    let cut = hi - (((hi - lo) as f64 * config.validation_fraction).floor() as usize);
    let max_h = max_horizon;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for &r in refs {
        let t = r.time as usize;
        if t >= cut {
            validation.push(r);
        } else if t + max_h < cut {
            train.push(r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3b);
    subsample(&mut train, config.max_train_samples, &mut rng);
    subsample(&mut validation, config.max_val_samples, &mut rng);
    Split { train, validation }
}

fn subsample(refs: &mut Vec<SampleRef>, cap: Option<usize>, rng: &mut ChaCha8Rng) {
    if let Some(cap) = cap {
        if refs.len() > cap {
            let mut keep: Vec<usize> = (0..refs.len()).collect();
            keep.shuffle(rng);
            keep.truncate(cap);
            keep.sort_unstable();
            *refs = keep.into_iter().map(|i| refs[i]).collect();
        }
    }
}

/// Order of training samples in `epoch`: a permutation drawn from a stream
/// keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Where training writes its artifacts; everything is optional.
#[derive(Default)]
pub struct TrainIo<'a> {
    /// Receives `best/` on every validation improvement and `last/` after
    /// every evaluation.
    pub checkpoint_dir: Option<PathBuf>,
    pub log: Option<&'a mut dyn Write>,
    /// Continue from `checkpoint_dir/last` when it exists.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<N> {
    /// Best validated parameters, or the final ones without validation.
    pub model: N,
    pub log: Vec<LogRecord>,
    pub steps: u64,
    pub best_step: Option<u64>,
    pub best_val: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Progress {
    best_val: Option<f64>,
    best_step: Option<u64>,
    bad_evals: usize,
}

/// Summed loss and gradient over `refs`, computed chunk by chunk on
/// `pool` and reduced in chunk order.
pub fn batch_gradient<N: Network>(
    model: &N,
    index: &SampleIndex,
    refs: &[SampleRef],
    chunk_size: usize,
    pool: &rayon::ThreadPool,
) -> Result<(f64, Gradients)> {
    let chunks: Vec<&[SampleRef]> = refs.chunks(chunk_size).collect();
    let parts: Vec<Result<(f64, Gradients)>> = pool.install(|| {
        chunks
            .par_iter()
            .map(|c| model.loss_and_grad(index, c))
            .collect()
    });
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(model.params());
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.accumulate(&g);
    }
    Ok((total, grads))
}

/// Mean squared error per labelled horizon over `refs`.
pub fn mean_loss<N: Network>(
    model: &N,
    index: &SampleIndex,
    refs: &[SampleRef],
    chunk_size: usize,
    pool: &rayon::ThreadPool,
) -> Result<f64> {
    let chunks: Vec<&[SampleRef]> = refs.chunks(chunk_size).collect();
    let parts: Vec<Result<f64>> =
        pool.install(|| chunks.par_iter().map(|c| model.loss(index, c)).collect());
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / model.labelled(index, refs).max(1) as f64)
}

/// Continuous predictions (`n × |horizons|`, row-major) for `refs`.
pub fn predict_refs(
    model: &Model,
    index: &SampleIndex,
    refs: &[SampleRef],
    chunk_size: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<f64>> {
    let chunks: Vec<&[SampleRef]> = refs.chunks(chunk_size).collect();
    let parts: Vec<Result<Vec<f64>>> = pool.install(|| {
        chunks
            .par_iter()
            .map(|c| model.predict_batch(&index.batch(c)).map(|o| o.predictions))
            .collect()
    });
    let mut out = Vec::with_capacity(refs.len() * index.spec.horizons.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Trains `model` on every sample of `index`, which should cover only the
/// training time range.
pub fn train(index: &SampleIndex, model: Model, config: &TrainConfig, io: TrainIo) -> Result<TrainOutcome<Model>> {
    if index.spec != model.config().sample_spec() {
        return Err(Error::Config("sample index does not match the model configuration".into()));
    }
    train_network(index, index.refs(), model, config, io)
}

/// Generic training loop over explicit `refs`.
pub fn train_network<N: Network>(
    index: &SampleIndex,
    refs: &[SampleRef],
    mut model: N,
    config: &TrainConfig,
    io: TrainIo,
) -> Result<TrainOutcome<N>> {
    config.validate()?;
    let split = split_refs(refs, index.spec.max_horizon(), config);
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let pool = thread_pool(config.workers)?;
    let batches_per_epoch = split.train.len().div_ceil(config.batch_size) as u64;
    let eval_every = config.eval_every.unwrap_or(batches_per_epoch);
    let max_steps = config
        .max_steps
        .unwrap_or(u64::MAX)
        .min(batches_per_epoch * config.max_epochs as u64);

    let mut adam = AdamState::new(config.adam, model.params());
    let mut step = 0u64;
    let mut progress = Progress::default();
    let mut best = model.clone();
    let last_dir = io.checkpoint_dir.as_ref().map(|d| d.join("last"));
    let best_dir = io.checkpoint_dir.as_ref().map(|d| d.join("best"));

    if io.resume {
        if let Some(dir) = last_dir.as_ref().filter(|d| d.join("manifest.json").exists()) {
            let (m, ck) = model.load_like(dir)?;
            model = m;
            adam = ck.adam.ok_or_else(|| Error::Checkpoint("resume checkpoint lacks Adam state".into()))?;
            step = ck.manifest.step;
            progress = serde_json::from_value(ck.manifest.extra["progress"].clone())
                .map_err(|e| Error::Checkpoint(format!("progress: {e}")))?;
            best = match best_dir.as_ref().filter(|d| d.join("manifest.json").exists()) {
                Some(d) => model.load_like(d)?.0,
                None => model.clone(),
            };
        }
    }

    let started = Instant::now();
    let mut log = Vec::new();
    let mut log_out = io.log;
    let mut order_epoch = usize::MAX;
    let mut order = Vec::new();
    while step < max_steps {
        let epoch = (step / batches_per_epoch) as usize;
        if epoch != order_epoch {
            order = epoch_order(split.train.len(), config.seed, epoch);
            order_epoch = epoch;
        }
        let within = (step % batches_per_epoch) as usize * config.batch_size;
        let refs: Vec<SampleRef> = order[within..(within + config.batch_size).min(order.len())]
            .iter()
            .map(|&i| split.train[i])
            .collect();
        let (loss, grads) = batch_gradient(&model, index, &refs, config.chunk_size, &pool)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        adam.step(model.params_mut(), &grads)?;
        step += 1;

        let mut val_loss = None;
        let mut stop = false;
        if step % eval_every == 0 || step == max_steps {
            if !split.validation.is_empty() {
                let v = mean_loss(&model, index, &split.validation, config.chunk_size, &pool)?;
                val_loss = Some(v);
                if progress.best_val.is_none_or(|b| v < b) {
                    progress.best_val = Some(v);
                    progress.best_step = Some(step);
                    progress.bad_evals = 0;
                    best = model.clone();
                    if let Some(dir) = &best_dir {
                        model.save(dir, None, step, serde_json::json!({}))?;
                    }
                } else {
                    progress.bad_evals += 1;
                    stop = progress.bad_evals >= config.patience;
                }
            }
            if let Some(dir) = &last_dir {
                model.save(dir, Some(&adam), step, serde_json::json!({ "progress": progress }))?;
            }
        }

        let record = LogRecord {
            step,
            epoch,
            train_loss: loss / model.labelled(index, &refs).max(1) as f64,
            val_loss,
            wall_time: config.log_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        if let Some(w) = log_out.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        log.push(record);
        if stop {
            break;
        }
    }

    let model = if split.validation.is_empty() { model } else { best };
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
        best_step: progress.best_step,
        best_val: progress.best_val,
    })
}

/// Writes fitted thresholds next to a checkpoint.
pub fn save_thresholds(path: &Path, t: &ProjectionThresholds) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(t)?)?;
    Ok(())
}

pub fn load_thresholds(path: &Path) -> Result<ProjectionThresholds> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingPath(path.to_path_buf()))?;
    let t: ProjectionThresholds = serde_json::from_str(&text)?;
    ProjectionThresholds::new(t.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ConditionStore;
    use crate::graph::fixtures::fig3;
    use crate::model::ModelConfig;

    #[test]
    fn projection_examples() {
        let t = ProjectionThresholds::new([0.5, 0.75, 0.75]).unwrap();
        assert_eq!(project_labels(&[0.1, 0.2, 0.9, 3.8], &t), vec![1, 1, 2, 4]);
        let ones = ProjectionThresholds::new([1.0, 1.0, 1.0]).unwrap();
        assert_eq!(project_labels(&[3.0, -1.0, 2.0], &ones), vec![1, 1, 1]);
        let t = ProjectionThresholds::new([0.882, 0.967, 0.995]).unwrap();
        let preds: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let out = project_labels(&preds, &t);
        assert_eq!(out, vec![1, 1, 1, 1, 1, 1, 1, 1, 2, 4]);
    }

    #[test]
    fn ties_follow_input_order() {
        let t = ProjectionThresholds::new([0.5, 0.5, 0.5]).unwrap();
        assert_eq!(project_labels(&[1.0, 1.0, 1.0, 1.0], &t), vec![1, 1, 4, 4]);
    }

    #[test]
    fn fitted_thresholds() {
        let uniform = [1u8, 2, 3, 4].repeat(5);
        assert_eq!(fit_projection(uniform).unwrap().q, [0.25, 0.5, 0.75]);
        assert!(fit_projection([2u8, 2, 0]).is_err());
    }

    #[test]
    fn single_class_labels() {
        assert_eq!(fit_projection([1u8, 1, 1]).unwrap().q, [1.0, 1.0, 1.0]);
    }

    fn store(len: usize) -> ConditionStore {
        let g = fig3();
        let mut grid = Vec::new();
        for v in 0..g.len() {
            for t in 0..len {
                let phase = (t + v) % 12;
                grid.push(if phase < 3 { 3 } else { 1 });
            }
        }
        ConditionStore::new(g.ids().to_vec(), 0, len, grid).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            history: 2,
            radius: 2,
            width: 2,
            embed_dim: 4,
            feature_maps: 2,
            hidden: 4,
            horizons: vec![1, 2],
            attn_hidden: 4,
        }
    }

    #[test]
    fn chunk_sum_equals_whole_batch() {
        let g = fig3();
        let s = store(30);
        let idx = SampleIndex::new(&s, &g, tiny().sample_spec()).unwrap();
        let m = Model::new(tiny(), 1).unwrap();
        let refs = &idx.refs()[..4];
        let (whole, gw) = m.loss_and_grad(&idx.batch(refs)).unwrap();
        let pool = thread_pool(2).unwrap();
        let (parts, gp) = batch_gradient(&m, &idx, refs, 2, &pool).unwrap();
        assert!((whole - parts).abs() < 1e-10);
        for ((_, a), (_, b)) in gw.iter().zip(gp.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_parameters() {
        let g = fig3();
        let s = store(60);
        let idx = SampleIndex::new(&s, &g, tiny().sample_spec()).unwrap();
        let run = |workers| {
            let cfg = TrainConfig {
                batch_size: 16,
                chunk_size: 4,
                workers,
                max_steps: Some(12),
                seed: 3,
                log_wall_time: false,
                ..TrainConfig::default()
            };
            train(&idx, Model::new(tiny(), 2).unwrap(), &cfg, TrainIo::default()).unwrap()
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn loss_halves_on_small_set() {
        let g = fig3();
        let s = store(60);
        let mut idx = SampleIndex::new(&s, &g, tiny().sample_spec()).unwrap();
        let keep: Vec<SampleRef> = idx.refs()[..50].to_vec();
        idx.retain(|r| keep.contains(r));
        let cfg = TrainConfig {
            batch_size: 50,
            chunk_size: 50,
            workers: 1,
            max_steps: Some(200),
            max_epochs: 1000,
            validation_fraction: 0.0,
            seed: 1,
            log_wall_time: false,
            ..TrainConfig::default()
        };
        let out = train(&idx, Model::new(tiny(), 4).unwrap(), &cfg, TrainIo::default()).unwrap();
        let first = out.log[0].train_loss;
        let last = out.log.last().unwrap().train_loss;
        assert!(last <= 0.5 * first, "{first} -> {last}");
        assert!(out.best_val.is_none());
    }

    #[test]
    fn resume_reproduces_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let g = fig3();
        let s = store(80);
        let idx = SampleIndex::new(&s, &g, tiny().sample_spec()).unwrap();
        let cfg = |steps| TrainConfig {
            batch_size: 8,
            chunk_size: 4,
            workers: 1,
            max_steps: Some(steps),
            eval_every: Some(3),
            patience: 100,
            seed: 5,
            log_wall_time: false,
            ..TrainConfig::default()
        };
        let full = train(&idx, Model::new(tiny(), 6).unwrap(), &cfg(12), TrainIo::default()).unwrap();
        let io = |resume| TrainIo {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            log: None,
            resume,
        };
        let head = train(&idx, Model::new(tiny(), 6).unwrap(), &cfg(6), io(false)).unwrap();
        let tail = train(&idx, Model::new(tiny(), 6).unwrap(), &cfg(12), io(true)).unwrap();
        let mut joined = head.log.clone();
        joined.extend(tail.log.clone());
        assert_eq!(joined, full.log);
        assert_eq!(tail.model.params(), full.model.params());
    }
}
