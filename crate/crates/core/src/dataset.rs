//! Condition grids at 5-minute resolution and the windowing that turns them
//! into path-aligned training samples.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, SlotPaths, TrafficGraph, VertexIdx, PAD};

pub const STEP_SECONDS: i64 = 300;
pub const STEPS_PER_DAY: usize = 288;
/// Largest condition code (extreme congestion). Code 0 means not released.
pub const MAX_CODE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampFormat {
    /// `YYYY-MM-DDTHH:MM:SS`, read as UTC.
    Iso,
    /// Integer index on the 5-minute lattice.
    #[default]
    Step,
}

/// Dense `vertex × time` grid of condition codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionStore {
    vertex_ids: Vec<String>,
    /// Lattice index of column 0 (steps of 5 minutes since the epoch, or the
    /// raw step index for integer timestamps).
    start_step: i64,
    len: usize,
    grid: Vec<u8>,
}

impl ConditionStore {
    pub fn new(vertex_ids: Vec<String>, start_step: i64, len: usize, grid: Vec<u8>) -> Result<Self> {
        if grid.len() != vertex_ids.len() * len {
            return Err(Error::shape(
                "ConditionStore::new",
                format!("{} vertices × {len} steps vs {} cells", vertex_ids.len(), grid.len()),
            ));
        }
        if let Some(pos) = grid.iter().position(|&c| c > MAX_CODE) {
            return Err(Error::CodeOutOfRange {
                code: grid[pos] as i64,
                context: format!("cell {pos}"),
            });
        }
        Ok(ConditionStore {
            vertex_ids,
            start_step,
            len,
            grid,
        })
    }

    pub fn vertex_ids(&self) -> &[String] {
        &self.vertex_ids
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_ids.len()
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start_step(&self) -> i64 {
        self.start_step
    }

    #[inline]
    pub fn code(&self, v: VertexIdx, t: usize) -> u8 {
        self.grid[v * self.len + t]
    }

    pub fn series(&self, v: VertexIdx) -> &[u8] {
        &self.grid[v * self.len..(v + 1) * self.len]
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    /// Lattice index of column `t`.
    pub fn step_of(&self, t: usize) -> i64 {
        self.start_step + t as i64
    }

    /// 5-minute slot of the day (`0..288`) for column `t`.
    pub fn time_of_day(&self, t: usize) -> usize {
        self.step_of(t).rem_euclid(STEPS_PER_DAY as i64) as usize
    }

    /// Columns `range` as a new store.
    pub fn slice_time(&self, range: std::ops::Range<usize>) -> ConditionStore {
        let len = range.len();
        let mut grid = Vec::with_capacity(self.vertex_count() * len);
        for v in 0..self.vertex_count() {
            grid.extend_from_slice(&self.series(v)[range.clone()]);
        }
        ConditionStore {
            vertex_ids: self.vertex_ids.clone(),
            start_step: self.start_step + range.start as i64,
            len,
            grid,
        }
    }

    pub fn format_timestamp(&self, t: usize, format: TimestampFormat) -> String {
        format_step(self.step_of(t), format)
    }

    /// Writes every cell as `vertex,timestamp,code`.
    pub fn write_csv(&self, path: &Path, format: TimestampFormat) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["vertex", "timestamp", "code"])?;
        let stamps: Vec<String> = (0..self.len).map(|t| self.format_timestamp(t, format)).collect();
        for (v, id) in self.vertex_ids.iter().enumerate() {
            for (t, stamp) in stamps.iter().enumerate() {
                w.write_record([id.as_str(), stamp.as_str(), &self.code(v, t).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn format_step(step: i64, format: TimestampFormat) -> String {
    match format {
        TimestampFormat::Step => step.to_string(),
        TimestampFormat::Iso => DateTime::from_timestamp(step * STEP_SECONDS, 0)
            .map(|d| d.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
            .unwrap_or_else(|| step.to_string()),
    }
}

fn parse_seconds(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(d) = DateTime::parse_from_rfc3339(raw) {
        return Some(d.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(d) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(d.and_utc().timestamp());
        }
    }
    None
}

/// Options for [`load_conditions`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub format: TimestampFormat,
    /// Reject ISO timestamps that are not multiples of five minutes instead
    /// of flooring them onto the lattice.
    pub strict: bool,
}

#[derive(Debug, Deserialize)]
struct ConditionRow {
    vertex: String,
    timestamp: String,
    code: i64,
}

/// Reads `vertex,timestamp,code` rows into a dense grid covering the span of
/// the file. Missing cells and graph vertices absent from the file are 0.
pub fn load_conditions(path: &Path, graph: &TrafficGraph, opts: LoadOptions) -> Result<ConditionStore> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows: Vec<(VertexIdx, i64, u8)> = Vec::new();
    for row in rdr.deserialize() {
        let row: ConditionRow = row?;
        let v = graph.index_of(&row.vertex)?;
        if !(0..=MAX_CODE as i64).contains(&row.code) {
            return Err(Error::CodeOutOfRange {
                code: row.code,
                context: format!("{} @ {}", row.vertex, row.timestamp),
            });
        }
        let step = match opts.format {
            TimestampFormat::Step => row
                .timestamp
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::Malformed(format!("step index {:?}", row.timestamp)))?,
            TimestampFormat::Iso => {
                let secs = parse_seconds(&row.timestamp)
                    .ok_or_else(|| Error::Malformed(format!("timestamp {:?}", row.timestamp)))?;
                if secs.rem_euclid(STEP_SECONDS) != 0 && opts.strict {
                    return Err(Error::OffLattice(row.timestamp));
                }
                secs.div_euclid(STEP_SECONDS)
            }
        };
        rows.push((v, step, row.code as u8));
    }
    let (lo, hi) = match (rows.iter().map(|r| r.1).min(), rows.iter().map(|r| r.1).max()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(Error::Malformed(format!("{} has no rows", path.display()))),
    };
    let len = (hi - lo + 1) as usize;
    let mut grid = vec![0u8; graph.len() * len];
    let mut seen: HashMap<(VertexIdx, i64), u8> = HashMap::with_capacity(rows.len());
    for (v, step, code) in rows {
        if let Some(&prev) = seen.get(&(v, step)) {
            if prev != code {
                return Err(Error::Malformed(format!(
                    "conflicting codes for {} at step {step}",
                    graph.id(v)
                )));
            }
        }
        seen.insert((v, step), code);
        grid[v * len + (step - lo) as usize] = code;
    }
    ConditionStore::new(graph.ids().to_vec(), lo, len, grid)
}

/// Splits by time: the first `⌊len·fraction⌋` columns (clamped so both
/// sides are non-empty) train, the rest test.
pub fn chrono_split(store: &ConditionStore, train_fraction: f64) -> Result<(ConditionStore, ConditionStore)> {
    let cut = split_point(store.len(), train_fraction)?;
    Ok((store.slice_time(0..cut), store.slice_time(cut..store.len())))
}

pub fn split_point(len: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if len < 2 {
        return Err(Error::InvalidArgument("need at least two time steps to split".into()));
    }
    let cut = (len as f64 * train_fraction).floor() as usize;
    Ok(cut.clamp(1, len - 1))
}

/// Cumulative class proportions `(q1, q2, q3, 1.0)` over released codes.
pub fn class_distribution<I: IntoIterator<Item = u8>>(codes: I) -> Result<[f64; 4]> {
    let mut counts = [0usize; 5];
    for c in codes {
        counts[c.min(MAX_CODE) as usize] += 1;
    }
    let total: usize = counts[1..].iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("no released (non-zero) condition codes".into()));
    }
    let mut out = [0.0; 4];
    let mut acc = 0usize;
    for k in 0..4 {
        acc += counts[k + 1];
        out[k] = acc as f64 / total as f64;
    }
    out[3] = 1.0;
    Ok(out)
}

/// Windowing parameters shared by sample generation and the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// History length `p`; each cell carries `p + 1` codes.
    pub history: usize,
    pub radius: usize,
    /// Prediction horizons in steps, strictly increasing.
    pub horizons: Vec<usize>,
    /// Slot width `l`.
    pub max_paths: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            history: 12,
            radius: 5,
            horizons: vec![3, 6, 9, 12],
            max_paths: 8,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.history < 1 || self.radius < 1 || self.max_paths < 1 {
            return Err(Error::InvalidArgument(
                "history, radius and max_paths must be positive".into(),
            ));
        }
        if self.horizons.is_empty()
            || self.horizons[0] < 1
            || self.horizons.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(
                "horizons must be non-empty, positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        *self.horizons.last().unwrap_or(&0)
    }
}

/// Observation record of one vertex at one time: `codes[k] = c(v, t − k)`
/// for `k = 0..=p`, plus the static limit level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellObs {
    pub codes: Vec<u8>,
    pub limit_level: u8,
}

impl CellObs {
    fn padding(history: usize) -> Self {
        CellObs {
            codes: vec![0; history + 1],
            limit_level: 1,
        }
    }
}

/// One side (upstream or downstream) of a sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotBlock {
    pub paths: SlotPaths,
    /// `rows × radius` cells, row-major, aligned with `paths`.
    pub cells: Vec<CellObs>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub vertex: VertexIdx,
    pub time: usize,
    pub target: CellObs,
    pub upstream: SlotBlock,
    pub downstream: SlotBlock,
    /// `c(v, t + h)` per horizon.
    pub labels: Vec<u8>,
}

impl Sample {
    /// Horizons whose label is released (non-zero).
    pub fn label_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&c| c != 0).collect()
    }

    pub fn side(&self, direction: Direction) -> &SlotBlock {
        match direction {
            Direction::Upstream => &self.upstream,
            Direction::Downstream => &self.downstream,
        }
    }
}

/// `(vertex, time)` of one sample inside a [`SampleIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub vertex: u32,
    pub time: u32,
}

/// Precomputed slot paths of every vertex for one radius/width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTable {
    pub upstream: Vec<SlotPaths>,
    pub downstream: Vec<SlotPaths>,
}

impl SlotTable {
    pub fn build(graph: &TrafficGraph, radius: usize, max_paths: usize) -> Result<Self> {
        let side = |dir| {
            (0..graph.len())
                .map(|v| graph.enumerate_slot_paths(v, radius, dir, max_paths))
                .collect::<Result<Vec<_>>>()
        };
        Ok(SlotTable {
            upstream: side(Direction::Upstream)?,
            downstream: side(Direction::Downstream)?,
        })
    }

    pub fn get(&self, v: VertexIdx, direction: Direction) -> &SlotPaths {
        match direction {
            Direction::Upstream => &self.upstream[v],
            Direction::Downstream => &self.downstream[v],
        }
    }
}

/// Every valid `(vertex, time)` of a store, with what is needed to
/// materialize samples or batches on demand.
pub struct SampleIndex<'a> {
    pub store: &'a ConditionStore,
    pub graph: &'a TrafficGraph,
    pub spec: SampleSpec,
    pub slots: SlotTable,
    refs: Vec<SampleRef>,
}

impl<'a> SampleIndex<'a> {
    /// Enumerates `(v, t)` with `t ≥ p`, `t + max(h) < len`, in time-major
    /// order, dropping samples whose labels are all unreleased.
    pub fn new(store: &'a ConditionStore, graph: &'a TrafficGraph, spec: SampleSpec) -> Result<Self> {
        spec.validate()?;
        if store.vertex_count() != graph.len() {
            return Err(Error::shape(
                "SampleIndex",
                format!("store has {} vertices, graph {}", store.vertex_count(), graph.len()),
            ));
        }
        let slots = SlotTable::build(graph, spec.radius, spec.max_paths)?;
        let mut refs = Vec::new();
        let hmax = spec.max_horizon();
        if store.len() > spec.history + hmax {
            for t in spec.history..store.len() - hmax {
                for v in 0..graph.len() {
                    if spec.horizons.iter().any(|&h| store.code(v, t + h) != 0) {
                        refs.push(SampleRef {
                            vertex: v as u32,
                            time: t as u32,
                        });
                    }
                }
            }
        }
        Ok(SampleIndex {
            store,
            graph,
            spec,
            slots,
            refs,
        })
    }

    pub fn refs(&self) -> &[SampleRef] {
        &self.refs
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Keeps only references accepted by `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&SampleRef) -> bool) {
        self.refs.retain(|r| keep(r));
    }

    fn cell(&self, v: VertexIdx, t: usize) -> CellObs {
        if v == PAD {
            return CellObs::padding(self.spec.history);
        }
        CellObs {
            codes: (0..=self.spec.history).map(|k| self.store.code(v, t - k)).collect(),
            limit_level: self.graph.limit_level(v),
        }
    }

    pub fn sample(&self, r: SampleRef) -> Sample {
        let (v, t) = (r.vertex as usize, r.time as usize);
        let block = |dir| {
            let paths = self.slots.get(v, dir).clone();
            let cells = paths.paths.iter().map(|&u| self.cell(u, t)).collect();
            SlotBlock { paths, cells }
        };
        Sample {
            vertex: v,
            time: t,
            target: self.cell(v, t),
            upstream: block(Direction::Upstream),
            downstream: block(Direction::Downstream),
            labels: self.spec.horizons.iter().map(|&h| self.store.code(v, t + h)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample> + '_ {
        self.refs.iter().map(|&r| self.sample(r))
    }

    /// Flat model input for `refs`, built straight from the grid.
    pub fn batch(&self, refs: &[SampleRef]) -> Batch {
        let spec = &self.spec;
        let p1 = spec.history + 1;
        let mut b = Batch::empty(refs.len(), spec);
        for (i, r) in refs.iter().enumerate() {
            let (v, t) = (r.vertex as usize, r.time as usize);
            for k in 0..p1 {
                b.target_codes[i * p1 + k] = self.store.code(v, t - k) as usize;
            }
            b.target_levels[i] = self.graph.limit_level(v) as usize - 1;
            for (s, dir) in [Direction::Upstream, Direction::Downstream].into_iter().enumerate() {
                let paths = self.slots.get(v, dir);
                let side = &mut b.sides[s];
                for row in 0..spec.max_paths {
                    let cell_row = i * spec.max_paths + row;
                    side.mask[cell_row] = paths.row_mask[row];
                    for j in 0..spec.radius {
                        let u = paths.paths[row * spec.radius + j];
                        if u == PAD {
                            continue;
                        }
                        side.levels[j][cell_row] = self.graph.limit_level(u) as usize - 1;
                        let dst = &mut side.codes[j][cell_row * p1..(cell_row + 1) * p1];
                        for (k, slot) in dst.iter_mut().enumerate() {
                            *slot = self.store.code(u, t - k) as usize;
                        }
                    }
                }
            }
            for (k, &h) in spec.horizons.iter().enumerate() {
                let c = self.store.code(v, t + h);
                b.labels[i * spec.horizons.len() + k] = c as f64;
                b.label_mask[i * spec.horizons.len() + k] = c != 0;
            }
            b.meta.push(*r);
        }
        b
    }
}

/// Streams every sample of `store` under `spec`.
pub fn make_samples(store: &ConditionStore, graph: &TrafficGraph, spec: SampleSpec) -> Result<Vec<Sample>> {
    let idx = SampleIndex::new(store, graph, spec)?;
    Ok(idx.iter().collect())
}

/// Codes of one side, grouped by order for the recurrent pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SideBatch {
    /// Per order `j`: `(n·l) × (p+1)` condition codes, row-major.
    pub codes: Vec<Vec<usize>>,
    /// Per order `j`: `n·l` zero-based limit levels.
    pub levels: Vec<Vec<usize>>,
    /// `n·l` row validity flags.
    pub mask: Vec<bool>,
}

/// Flat, index-only encoding of `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub history: usize,
    pub radius: usize,
    pub width: usize,
    pub horizons: usize,
    /// `n × (p+1)`.
    pub target_codes: Vec<usize>,
    /// `n`, zero-based.
    pub target_levels: Vec<usize>,
    /// `[upstream, downstream]`.
    pub sides: [SideBatch; 2],
    /// `n × |horizons|`.
    pub labels: Vec<f64>,
    pub label_mask: Vec<bool>,
    pub meta: Vec<SampleRef>,
}

impl Batch {
    fn empty(n: usize, spec: &SampleSpec) -> Self {
        let p1 = spec.history + 1;
        let rows = n * spec.max_paths;
        let side = || SideBatch {
            codes: vec![vec![0; rows * p1]; spec.radius],
            levels: vec![vec![0; rows]; spec.radius],
            mask: vec![false; rows],
        };
        Batch {
            n,
            history: spec.history,
            radius: spec.radius,
            width: spec.max_paths,
            horizons: spec.horizons.len(),
            target_codes: vec![0; n * p1],
            target_levels: vec![0; n],
            sides: [side(), side()],
            labels: vec![0.0; n * spec.horizons.len()],
            label_mask: vec![false; n * spec.horizons.len()],
            meta: Vec::with_capacity(n),
        }
    }

    /// Encodes materialized samples; all must share `spec`'s shape.
    pub fn from_samples(samples: &[Sample], spec: &SampleSpec) -> Result<Self> {
        let p1 = spec.history + 1;
        let mut b = Batch::empty(samples.len(), spec);
        for (i, s) in samples.iter().enumerate() {
            if s.target.codes.len() != p1 || s.labels.len() != spec.horizons.len() {
                return Err(Error::shape("Batch::from_samples", "sample does not match spec"));
            }
            for k in 0..p1 {
                b.target_codes[i * p1 + k] = s.target.codes[k] as usize;
            }
            b.target_levels[i] = s.target.limit_level as usize - 1;
            for (si, block) in [&s.upstream, &s.downstream].into_iter().enumerate() {
                if block.paths.rows() != spec.max_paths || block.paths.radius != spec.radius {
                    return Err(Error::shape("Batch::from_samples", "slot block shape"));
                }
                let side = &mut b.sides[si];
                for row in 0..spec.max_paths {
                    let cell_row = i * spec.max_paths + row;
                    side.mask[cell_row] = block.paths.row_mask[row];
                    for j in 0..spec.radius {
                        let cell = &block.cells[row * spec.radius + j];
                        side.levels[j][cell_row] = cell.limit_level as usize - 1;
                        for k in 0..p1 {
                            side.codes[j][cell_row * p1 + k] = cell.codes[k] as usize;
                        }
                    }
                }
            }
            for (k, &c) in s.labels.iter().enumerate() {
                b.labels[i * spec.horizons.len() + k] = c as f64;
                b.label_mask[i * spec.horizons.len() + k] = c != 0;
            }
            b.meta.push(SampleRef {
                vertex: s.vertex as u32,
                time: s.time as u32,
            });
        }
        Ok(b)
    }
}
