//! Held-out scoring: chronological train/test partition, kappa per horizon,
//! RMSE curves, averaged attention, and the files they are written to.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_point, SampleIndex, SampleRef, STEPS_PER_DAY};
use crate::error::{Error, Result};
use crate::graph::Direction;
use crate::metrics::{qw_kappa, rmse_by_time_of_day, KappaReport, RmseBin};
use crate::model::{create_attention_csv, write_attention_csv, Model};
use crate::training::{project_labels, ProjectionThresholds};

/// Samples of one index split at a time cut.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Samples whose labels all precede the cut.
    pub train: Vec<SampleRef>,
    /// Samples whose current time is at or after the cut.
    pub test: Vec<SampleRef>,
    pub cut: usize,
}

/// Cuts at `⌊len·train_fraction⌋`. Test samples may read history from
/// before the cut; no training label lies at or after it.
pub fn partition(index: &SampleIndex, train_fraction: f64) -> Result<Partition> {
    let cut = split_point(index.store.len(), train_fraction)?;
    let hmax = index.spec.max_horizon();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &r in index.refs() {
        let t = r.time as usize;
        if t >= cut {
            test.push(r);
        } else if t + hmax < cut {
            train.push(r);
        }
    }
    Ok(Partition { train, test, cut })
}

/// Every `stride`-th element, for cheaper evaluation passes.
pub fn thin(refs: &[SampleRef], stride: usize) -> Vec<SampleRef> {
    refs.iter().copied().step_by(stride.max(1)).collect()
}

/// Ground-truth codes, `refs.len() × |horizons|`, zero where unreleased.
pub fn truth_codes(index: &SampleIndex, refs: &[SampleRef]) -> Vec<u8> {
    let mut out = Vec::with_capacity(refs.len() * index.spec.horizons.len());
    for r in refs {
        for &h in &index.spec.horizons {
            out.push(index.store.code(r.vertex as usize, r.time as usize + h));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon: usize,
    /// Rated pairs (released labels only).
    pub count: usize,
    pub report: KappaReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model: String,
    pub horizons: Vec<HorizonScore>,
    /// Unweighted mean of the per-horizon kappas.
    pub average: f64,
}

impl ModelScores {
    pub fn kappa(&self, horizon: usize) -> Option<f64> {
        self.horizons.iter().find(|h| h.horizon == horizon).map(|h| h.report.kappa)
    }
}

/// Projects `predictions` with `thresholds` and scores each horizon over
/// its released labels.
pub fn score(
    model: &str,
    index: &SampleIndex,
    refs: &[SampleRef],
    predictions: &[f64],
    thresholds: &ProjectionThresholds,
) -> Result<ModelScores> {
    let horizons = &index.spec.horizons;
    let nh = horizons.len();
    if predictions.len() != refs.len() * nh {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} samples × {nh} horizons",
            predictions.len(),
            refs.len()
        )));
    }
    let truth = truth_codes(index, refs);
    let pred = project_labels(predictions, thresholds);
    let mut scores = Vec::with_capacity(nh);
    for (k, &h) in horizons.iter().enumerate() {
        let (t, p): (Vec<u8>, Vec<u8>) = (0..refs.len())
            .map(|i| (truth[i * nh + k], pred[i * nh + k]))
            .filter(|&(t, _)| t != 0)
            .unzip();
        scores.push(HorizonScore {
            horizon: h,
            count: t.len(),
            report: qw_kappa(&t, &p)?,
        });
    }
    let average = scores.iter().map(|s| s.report.kappa).sum::<f64>() / nh as f64;
    Ok(ModelScores {
        model: model.to_string(),
        horizons: scores,
        average,
    })
}

pub fn write_scores_json(path: &Path, scores: &[ModelScores]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, scores)?;
    writeln!(f)?;
    Ok(())
}

/// One row per model, one kappa column per horizon (`h3`, `h6`, ...), then
/// `avg`. All models must share the same horizons.
pub fn write_table_csv<W: Write>(out: W, scores: &[ModelScores]) -> Result<()> {
    let Some(first) = scores.first() else {
        return Err(Error::InvalidArgument("no scores to tabulate".into()));
    };
    let horizons: Vec<usize> = first.horizons.iter().map(|h| h.horizon).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model".to_string()];
    header.extend(horizons.iter().map(|h| format!("h{h}")));
    header.push("avg".into());
    w.write_record(&header)?;
    for s in scores {
        if s.horizons.iter().map(|h| h.horizon).ne(horizons.iter().copied()) {
            return Err(Error::InvalidArgument(format!("{} was scored on other horizons", s.model)));
        }
        let mut row = vec![s.model.clone()];
        row.extend(s.horizons.iter().map(|h| h.report.kappa.to_string()));
        row.push(s.average.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// RMSE of the continuous predictions by time of day, one curve per horizon.
pub fn rmse_curves(
    index: &SampleIndex,
    refs: &[SampleRef],
    predictions: &[f64],
    bin_width: usize,
) -> Result<Vec<(usize, Vec<RmseBin>)>> {
    let nh = index.spec.horizons.len();
    let truth = truth_codes(index, refs);
    let mut curves = Vec::with_capacity(nh);
    for (k, &h) in index.spec.horizons.iter().enumerate() {
        let mut t = Vec::new();
        let mut p = Vec::new();
        let mut slots = Vec::new();
        for (i, r) in refs.iter().enumerate() {
            let c = truth[i * nh + k];
            if c != 0 {
                t.push(c);
                p.push(predictions[i * nh + k]);
                slots.push(index.store.time_of_day(r.time as usize + h));
            }
        }
        curves.push((h, rmse_by_time_of_day(&t, &p, &slots, bin_width)?));
    }
    Ok(curves)
}

/// `model,horizon,bin,start,count,rmse`; `start` is the bin's clock time.
pub fn write_rmse_csv<W: Write>(out: W, curves: &[(String, usize, Vec<RmseBin>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "horizon", "bin", "start", "count", "rmse"])?;
    for (model, horizon, bins) in curves {
        for b in bins {
            let minutes = (b.start_slot % STEPS_PER_DAY) * 5;
            w.write_record([
                model.clone(),
                horizon.to_string(),
                b.bin.to_string(),
                format!("{:02}:{:02}", minutes / 60, minutes % 60),
                b.count.to_string(),
                b.rmse.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMean {
    pub horizon: usize,
    pub side: Direction,
    pub order: usize,
    pub weight: f64,
    pub samples: usize,
}

/// Mean attention weight per (horizon, side, order) over `refs`. When
/// `dump` is given, per-sample weights of horizon index `dump_horizon`
/// are also written there.
pub fn mean_attention(
    model: &Model,
    index: &SampleIndex,
    refs: &[SampleRef],
    chunk_size: usize,
    pool: &rayon::ThreadPool,
    dump: Option<(&Path, usize)>,
) -> Result<Vec<AttentionMean>> {
    let horizons = &index.spec.horizons;
    let r = index.spec.radius;
    let mut sums = vec![[vec![0.0; r], vec![0.0; r]]; horizons.len()];
    let mut writer = match dump {
        Some((path, k)) => {
            if k >= horizons.len() {
                return Err(Error::InvalidArgument(format!("horizon index {k} out of range")));
            }
            Some((create_attention_csv(path)?, k))
        }
        None => None,
    };
    let chunks: Vec<&[SampleRef]> = refs.chunks(chunk_size.max(1)).collect();
    // Bounded groups keep memory flat while the dump stays in sample order.
    for group in chunks.chunks(pool.current_num_threads().max(1) * 4) {
        let outs: Vec<Result<_>> = pool.install(|| {
            group
                .par_iter()
                .map(|c| {
                    let batch = index.batch(c);
                    model.predict_batch(&batch).map(|o| (batch, o))
                })
                .collect()
        });
        for out in outs {
            let (batch, out) = out?;
            for (k, side_sums) in sums.iter_mut().enumerate() {
                for (s, dir) in [Direction::Upstream, Direction::Downstream].into_iter().enumerate() {
                    for i in 0..out.n {
                        for (acc, w) in side_sums[s].iter_mut().zip(out.attention(dir, k, i)) {
                            *acc += w;
                        }
                    }
                }
            }
            if let Some((w, k)) = writer.as_mut() {
                write_attention_csv(w, index.store, &batch, &out, *k)?;
            }
        }
    }
    if let Some((mut w, _)) = writer {
        w.flush()?;
    }
    let n = refs.len();
    let mut rows = Vec::new();
    for (k, &h) in horizons.iter().enumerate() {
        for (s, side) in [Direction::Upstream, Direction::Downstream].into_iter().enumerate() {
            for j in 0..r {
                rows.push(AttentionMean {
                    horizon: h,
                    side,
                    order: j + 1,
                    weight: if n == 0 { 0.0 } else { sums[k][s][j] / n as f64 },
                    samples: n,
                });
            }
        }
    }
    Ok(rows)
}

/// `horizon,side,order,weight,samples`.
pub fn write_attention_means_csv<W: Write>(out: W, rows: &[AttentionMean]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["horizon", "side", "order", "weight", "samples"])?;
    for a in rows {
        w.write_record([
            a.horizon.to_string(),
            a.side.as_str().to_string(),
            a.order.to_string(),
            a.weight.to_string(),
            a.samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Attention mass a side puts on orders `≥ from_order` at one horizon.
pub fn attention_mass(rows: &[AttentionMean], horizon: usize, side: Direction, from_order: usize) -> f64 {
    rows.iter()
        .filter(|a| a.horizon == horizon && a.side == side && a.order >= from_order)
        .map(|a| a.weight)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ConditionStore, SampleSpec};
    use crate::graph::fixtures::fig3;
    use crate::training::ProjectionThresholds;

    fn store(len: usize) -> ConditionStore {
        let g = fig3();
        let grid = (0..g.len() * len).map(|i| (1 + (i * 7 / 3) % 4) as u8).collect();
        ConditionStore::new(g.ids().to_vec(), 0, len, grid).unwrap()
    }

    fn spec() -> SampleSpec {
        SampleSpec {
            history: 1,
            radius: 2,
            horizons: vec![1, 2],
            max_paths: 2,
        }
    }

    #[test]
    fn partition_keeps_labels_before_cut() {
        let g = fig3();
        let s = store(40);
        let index = SampleIndex::new(&s, &g, spec()).unwrap();
        let p = partition(&index, 0.5).unwrap();
        assert_eq!(p.cut, 20);
        assert!(p.train.iter().all(|r| r.time as usize + 2 < 20));
        assert!(p.test.iter().all(|r| r.time as usize >= 20));
        assert_eq!(p.train.len() + p.test.len() + 2 * g.len(), index.len());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let g = fig3();
        let s = store(40);
        let index = SampleIndex::new(&s, &g, spec()).unwrap();
        let refs = index.refs().to_vec();
        let truth = truth_codes(&index, &refs);
        let pred: Vec<f64> = truth.iter().map(|&c| c as f64).collect();
        let th = crate::training::fit_projection(truth.iter().copied()).unwrap();
        let s = score("oracle", &index, &refs, &pred, &th).unwrap();
        assert_eq!(s.average, 1.0);
        assert_eq!(s.horizons.len(), 2);
        assert_eq!(s.horizons[0].count, refs.len());
    }

    #[test]
    fn table_layout() {
        let g = fig3();
        let s = store(30);
        let index = SampleIndex::new(&s, &g, spec()).unwrap();
        let refs = index.refs().to_vec();
        let pred: Vec<f64> = (0..refs.len() * 2).map(|i| (i % 5) as f64).collect();
        let th = ProjectionThresholds::new([0.25, 0.5, 0.75]).unwrap();
        let a = score("a", &index, &refs, &pred, &th).unwrap();
        let b = score("b", &index, &refs, &pred, &th).unwrap();
        let mut buf = Vec::new();
        write_table_csv(&mut buf, &[a.clone(), b]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model,h1,h2,avg");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,"));
        let avg: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(avg, a.average);
    }

    #[test]
    fn rmse_csv_clock_times() {
        let bins = vec![RmseBin {
            bin: 13,
            start_slot: 13 * 12,
            count: 1,
            rmse: 2.0,
        }];
        let mut buf = Vec::new();
        write_rmse_csv(&mut buf, &[("rw".into(), 3, bins)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().nth(1), Some("rw,3,13,13:00,1,2"));
    }
}
