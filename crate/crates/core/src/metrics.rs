//! Quadratic weighted kappa, RMSE by time of day, and (normalized) mutual
//! information between road conditions.

use serde::{Deserialize, Serialize};

use crate::dataset::{ConditionStore, MAX_CODE};
use crate::error::{Error, Result};
use crate::graph::{Direction, TrafficGraph};

/// Number of rated classes (fluency .. extreme congestion).
pub const CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    /// `observed[i][j]`: records rated `i+1` by truth and `j+1` by prediction.
    pub observed: [[f64; CLASSES]; CLASSES],
    pub expected: [[f64; CLASSES]; CLASSES],
    pub weights: [[f64; CLASSES]; CLASSES],
    pub kappa: f64,
}

/// `w[i][j] = (i − j)² / (N − 1)²` with `N = 4`.
pub fn kappa_weights() -> [[f64; CLASSES]; CLASSES] {
    let mut w = [[0.0; CLASSES]; CLASSES];
    let denom = ((CLASSES - 1) * (CLASSES - 1)) as f64;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let d = i as f64 - j as f64;
            *x = d * d / denom;
        }
    }
    w
}

/// Quadratic weighted Cohen's kappa between class codes in `1..=4`.
///
/// The expected matrix is the outer product of the two marginals divided by
/// the record count. Degenerate marginals (weighted expected disagreement of
/// zero) are an error rather than a silent value.
pub fn qw_kappa(truth: &[u8], pred: &[u8]) -> Result<KappaReport> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "kappa needs equal lengths, got {} and {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("kappa of empty input".into()));
    }
    let mut observed = [[0.0; CLASSES]; CLASSES];
    for (&a, &b) in truth.iter().zip(pred) {
        for c in [a, b] {
            if !(1..=CLASSES as u8).contains(&c) {
                return Err(Error::CodeOutOfRange {
                    code: c as i64,
                    context: "kappa rating".into(),
                });
            }
        }
        observed[a as usize - 1][b as usize - 1] += 1.0;
    }
    let n = truth.len() as f64;
    let rows: Vec<f64> = observed.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..CLASSES).map(|j| observed.iter().map(|r| r[j]).sum()).collect();
    let mut expected = [[0.0; CLASSES]; CLASSES];
    for i in 0..CLASSES {
        for j in 0..CLASSES {
            expected[i][j] = rows[i] * cols[j] / n;
        }
    }
    let weights = kappa_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..CLASSES {
        for j in 0..CLASSES {
            num += weights[i][j] * observed[i][j];
            den += weights[i][j] * expected[i][j];
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "kappa undefined: weighted expected disagreement is zero".into(),
        ));
    }
    Ok(KappaReport {
        observed,
        expected,
        weights,
        kappa: 1.0 - num / den,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseBin {
    pub bin: usize,
    /// First 5-minute slot of the day covered by the bin.
    pub start_slot: usize,
    pub count: usize,
    pub rmse: f64,
}

/// RMSE between codes and continuous predictions grouped into bins of
/// `bin_width` slots of the day. Empty bins are omitted.
pub fn rmse_by_time_of_day(
    truth: &[u8],
    pred: &[f64],
    slots: &[usize],
    bin_width: usize,
) -> Result<Vec<RmseBin>> {
    if truth.len() != pred.len() || truth.len() != slots.len() {
        return Err(Error::InvalidArgument("rmse inputs differ in length".into()));
    }
    if bin_width == 0 {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    let nbins = crate::dataset::STEPS_PER_DAY.div_ceil(bin_width);
    let mut sse = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for ((&t, &p), &s) in truth.iter().zip(pred).zip(slots) {
        let b = (s % crate::dataset::STEPS_PER_DAY) / bin_width;
        let e = p - t as f64;
        sse[b] += e * e;
        count[b] += 1;
    }
    Ok((0..nbins)
        .filter(|&b| count[b] > 0)
        .map(|b| RmseBin {
            bin: b,
            start_slot: b * bin_width,
            count: count[b],
            rmse: (sse[b] / count[b] as f64).sqrt(),
        })
        .collect())
}

/// Plug-in entropy, summed over counts in ascending order so that equal
/// multisets of counts give bit-identical results.
fn entropy<I: IntoIterator<Item = f64>>(counts: I, total: f64) -> f64 {
    let mut c: Vec<f64> = counts.into_iter().filter(|&c| c > 0.0).collect();
    c.sort_by(f64::total_cmp);
    c.iter()
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum()
}

/// NMI `2·MI / (H(X) + H(Y))` from a joint count table, with
/// `MI = H(X) + H(Y) − H(X, Y)`. Zero when both marginal entropies vanish.
pub fn nmi_from_joint(joint: &[Vec<f64>]) -> f64 {
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let ncols = joint.first().map_or(0, Vec::len);
    let cols: Vec<f64> = (0..ncols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let (hx, hy) = (entropy(rows, total), entropy(cols, total));
    if hx + hy == 0.0 {
        return 0.0;
    }
    let hxy = entropy(joint.iter().flatten().copied(), total);
    (2.0 * (hx + hy - hxy) / (hx + hy)).clamp(0.0, 1.0)
}

fn joint_histogram(x: &[u8], y: &[u8]) -> Vec<Vec<f64>> {
    let k = MAX_CODE as usize + 1;
    let mut joint = vec![vec![0.0; k]; k];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize][b as usize] += 1.0;
    }
    joint
}

/// Plug-in NMI between two code series over the 5-code alphabet.
pub fn nmi(x: &[u8], y: &[u8]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("nmi needs equal lengths".into()));
    }
    if let Some(&c) = x.iter().chain(y).find(|&&c| c > MAX_CODE) {
        return Err(Error::CodeOutOfRange {
            code: c as i64,
            context: "nmi".into(),
        });
    }
    Ok(nmi_from_joint(&joint_histogram(x, y)))
}

/// Which neighbours `nmi_by_radius` pairs with each target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiDirections {
    #[default]
    Both,
    Upstream,
    Downstream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusNmi {
    pub radius: usize,
    /// Number of `(target, neighbour, time)` pairs pooled.
    pub pairs: usize,
    /// `None` when no vertex has a neighbour at this exact order.
    pub nmi: Option<f64>,
}

/// For each order `r` in `1..=max_radius`, pools every
/// `(c(v, t), c(u, t))` pair with `u` at shortest distance exactly `r` from
/// `v` into one joint histogram and reports its NMI.
pub fn nmi_by_radius(
    store: &ConditionStore,
    graph: &TrafficGraph,
    max_radius: usize,
    directions: NmiDirections,
) -> Result<Vec<RadiusNmi>> {
    if store.vertex_count() != graph.len() {
        return Err(Error::shape("nmi_by_radius", "store and graph disagree on vertices"));
    }
    let dirs: &[Direction] = match directions {
        NmiDirections::Both => &[Direction::Upstream, Direction::Downstream],
        NmiDirections::Upstream => &[Direction::Upstream],
        NmiDirections::Downstream => &[Direction::Downstream],
    };
    let k = MAX_CODE as usize + 1;
    let mut out = Vec::with_capacity(max_radius);
    for r in 1..=max_radius {
        let mut joint = vec![0u64; k * k];
        let mut pairs = 0usize;
        for v in 0..graph.len() {
            let xs = store.series(v);
            for &dir in dirs {
                for u in graph.order_neighbors(v, r, dir) {
                    for (&a, &b) in xs.iter().zip(store.series(u)) {
                        joint[a as usize * k + b as usize] += 1;
                    }
                    pairs += xs.len();
                }
            }
        }
        let nmi = (pairs > 0).then(|| {
            let table: Vec<Vec<f64>> = joint.chunks(k).map(|r| r.iter().map(|&c| c as f64).collect()).collect();
            nmi_from_joint(&table)
        });
        out.push(RadiusNmi { radius: r, pairs, nmi });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_entries() {
        let w = kappa_weights();
        assert_eq!(w[0][3], 1.0);
        assert_eq!(w[1][2], 1.0 / 9.0);
        assert_eq!(w[2][2], 0.0);
    }

    #[test]
    fn perfect_agreement() {
        let x = [1, 2, 3, 4, 1, 1, 2];
        assert_eq!(qw_kappa(&x, &x).unwrap().kappa, 1.0);
    }

    #[test]
    fn small_fixture_by_hand() {
        // O = [[1,1],[1,1]] on classes 1-2; E = [[1,1],[1,1]]; so κ = 0.
        let r = qw_kappa(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert_eq!(r.observed[0][..2], [1.0, 1.0]);
        assert_eq!(r.expected[1][..2], [1.0, 1.0]);
        assert!(r.kappa.abs() < 1e-15);
        // truth [1,2,3,4], pred [1,2,4,3]:
        // Σ w·O = 2/9; marginals all 1 ⇒ E = 1/4 everywhere,
        // Σ w·E = (1/4)·Σw = (1/4)·(2·(3·1 + 2·4 + 1·9)/9) = 40/36.
        let r = qw_kappa(&[1, 2, 3, 4], &[1, 2, 4, 3]).unwrap();
        assert!((r.kappa - (1.0 - (2.0 / 9.0) / (40.0 / 36.0))).abs() < 1e-15);
    }

    #[test]
    fn kappa_errors() {
        assert!(qw_kappa(&[], &[]).is_err());
        assert!(qw_kappa(&[1], &[1, 2]).is_err());
        assert!(qw_kappa(&[0, 1], &[1, 1]).is_err());
        assert!(matches!(qw_kappa(&[2, 2], &[2, 2]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rmse_examples() {
        let r = rmse_by_time_of_day(&[1, 2], &[1.0, 2.0], &[0, 100], 12).unwrap();
        assert!(r.iter().all(|b| b.rmse == 0.0));
        assert_eq!(r.len(), 2);
        let r = rmse_by_time_of_day(&[1], &[3.0], &[5], 12).unwrap();
        assert_eq!(r, vec![RmseBin { bin: 0, start_slot: 0, count: 1, rmse: 2.0 }]);
    }

    #[test]
    fn nmi_identity_and_constant() {
        let x = [1, 2, 1, 3, 4, 1];
        assert!((nmi(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[1, 1, 1], &[2, 2, 2]).unwrap(), 0.0);
        assert_eq!(nmi(&[1, 1, 1], &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_six_point_fixture() {
        // x = [1,1,1,2,2,2], y = [1,1,2,2,2,2]
        // joint: (1,1)=2, (1,2)=1, (2,2)=3; H(X) = ln 2; H(Y) = −(1/3)ln(1/3) − (2/3)ln(2/3)
        let x = [1, 1, 1, 2, 2, 2];
        let y = [1, 1, 2, 2, 2, 2];
        let hx = 2.0f64.ln();
        let hy = -(1.0 / 3.0) * (1.0f64 / 3.0).ln() - (2.0 / 3.0) * (2.0f64 / 3.0).ln();
        let mi = (2.0 / 6.0) * ((2.0f64 / 6.0) / (0.5 * (2.0 / 6.0))).ln()
            + (1.0 / 6.0) * ((1.0f64 / 6.0) / (0.5 * (4.0 / 6.0))).ln()
            + (3.0 / 6.0) * ((3.0f64 / 6.0) / (0.5 * (4.0 / 6.0))).ln();
        let want = 2.0 * mi / (hx + hy);
        assert!((nmi(&x, &y).unwrap() - want).abs() < 1e-12);
        assert_eq!(nmi(&x, &y).unwrap(), nmi(&y, &x).unwrap());
    }

    #[test]
    fn disconnected_graph_has_no_pairs() {
        let g = crate::graph::load_graph(&[], &[crate::graph::AttrRecord::new("a", 1), crate::graph::AttrRecord::new("b", 1)], true).unwrap();
        let s = ConditionStore::new(g.ids().to_vec(), 0, 3, vec![1, 2, 1, 1, 1, 2]).unwrap();
        let r = nmi_by_radius(&s, &g, 2, NmiDirections::Both).unwrap();
        assert!(r.iter().all(|x| x.nmi.is_none() && x.pairs == 0));
    }
}
