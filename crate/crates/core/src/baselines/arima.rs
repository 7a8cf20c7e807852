//! ARIMA(p, d, q) by conditional sum of squares with AIC order selection.
//!
//! The model on `w = Δ^d y` is
//! `w_t − μ = Σ φ_i (w_{t−i} − μ) + e_t + Σ θ_j e_{t−j}` with `μ = 0`
//! whenever `d > 0`. Residuals before index `p` are taken as zero.
//! Estimation starts from a Hannan–Rissanen regression and is refined by
//! Levenberg–Marquardt on the exact CSS Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArimaGrid {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaGrid {
    fn default() -> Self {
        ArimaGrid {
            max_p: 5,
            max_d: 2,
            max_q: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub order: ArimaOrder,
    pub mean: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    /// Conditional sum of squared residuals.
    pub css: f64,
    pub sigma2: f64,
    pub aic: f64,
}

/// `Δ^d` of `y`.
pub fn difference(y: &[f64], d: usize) -> Vec<f64> {
    let mut w = y.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    w
}

/// Step-down test: true when every root of `1 + Σ c_i z^i` lies strictly
/// outside the unit circle.
pub fn roots_outside_unit_circle(coeffs: &[f64]) -> bool {
    let mut a = coeffs.to_vec();
    while let Some(&k) = a.last() {
        if !k.is_finite() || k.abs() >= 1.0 {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m - 1).map(|i| (a[i] - k * a[m - 2 - i]) / denom).collect();
        a = next;
    }
    true
}

/// MA polynomial `1 + Σ θ_j z^j` has all roots outside the unit circle.
pub fn is_invertible(theta: &[f64]) -> bool {
    roots_outside_unit_circle(theta)
}

struct Css<'a> {
    w: &'a [f64],
    p: usize,
    q: usize,
    with_mean: bool,
}

impl Css<'_> {
    fn k(&self) -> usize {
        self.p + self.q + usize::from(self.with_mean)
    }

    fn unpack<'b>(&self, x: &'b [f64]) -> (f64, &'b [f64], &'b [f64]) {
        let mu = if self.with_mean { x[self.p + self.q] } else { 0.0 };
        (mu, &x[..self.p], &x[self.p..self.p + self.q])
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let (mu, phi, theta) = self.unpack(x);
        let n = self.w.len();
        let mut e = vec![0.0; n];
        for t in self.p..n {
            let mut v = self.w[t] - mu;
            for (i, f) in phi.iter().enumerate() {
                v -= f * (self.w[t - 1 - i] - mu);
            }
            for (j, th) in theta.iter().enumerate() {
                if t > j {
                    v -= th * e[t - 1 - j];
                }
            }
            e[t] = v;
        }
        e
    }

    fn sse(&self, x: &[f64]) -> f64 {
        self.residuals(x)[self.p..].iter().map(|v| v * v).sum()
    }

    /// Residuals and their Jacobian (rows `t ≥ p`, columns φ, θ, μ).
    fn jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (mu, phi, theta) = self.unpack(x);
        let e = self.residuals(x);
        let n = self.w.len();
        let k = self.k();
        let mut jac = vec![vec![0.0; k]; n];
        let sphi: f64 = phi.iter().sum();
        for t in self.p..n {
            let mut row = vec![0.0; k];
            for i in 0..self.p {
                row[i] = -(self.w[t - 1 - i] - mu);
            }
            for j in 0..self.q {
                if t > j {
                    row[self.p + j] = -e[t - 1 - j];
                }
            }
            if self.with_mean {
                row[k - 1] = -(1.0 - sphi);
            }
            for (j, th) in theta.iter().enumerate() {
                if t > j {
                    let prev = &jac[t - 1 - j];
                    for c in 0..k {
                        row[c] -= th * prev[c];
                    }
                }
            }
            jac[t] = row;
        }
        let rows = n - self.p;
        let m = DMatrix::from_fn(rows, k, |r, c| jac[self.p + r][c]);
        (e[self.p..].to_vec(), m)
    }

    fn levenberg_marquardt(&self, mut x: Vec<f64>) -> (Vec<f64>, f64) {
        let mut s = self.sse(&x);
        let mut lambda = 1e-3;
        for _ in 0..100 {
            let (e, j) = self.jacobian(&x);
            let jtj = j.transpose() * &j;
            let jte = j.transpose() * DVector::from_vec(e);
            let mut improved = false;
            for _ in 0..12 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                }
                let Some(delta) = a.lu().solve(&(-&jte)) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                let (_, _, theta) = self.unpack(&cand);
                let sc = self.sse(&cand);
                if sc.is_finite() && sc < s && is_invertible(theta) {
                    let rel = (s - sc) / s.max(1e-300);
                    x = cand;
                    s = sc;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-10;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (x, s)
    }
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    if rows.len() <= k {
        return None;
    }
    let a = DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
    let b = DVector::from_column_slice(y);
    let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
    Some(x.iter().copied().collect())
}

/// Hannan–Rissanen start: residuals of a long autoregression stand in for
/// the unobserved innovations in an ordinary regression.
fn initial_guess(css: &Css) -> Vec<f64> {
    let (p, q, w) = (css.p, css.q, css.w);
    let mean = if css.with_mean { w.iter().sum::<f64>() / w.len() as f64 } else { 0.0 };
    let centered: Vec<f64> = w.iter().map(|v| v - mean).collect();
    let n = w.len();
    let mut innov = vec![0.0; n];
    let long = if q > 0 { (p + q + 5).max(10).min(n / 4) } else { 0 };
    if q > 0 && long > 0 {
        let rows: Vec<Vec<f64>> = (long..n).map(|t| (1..=long).map(|i| centered[t - i]).collect()).collect();
        if let Some(a) = least_squares(&rows, &centered[long..]) {
            for t in long..n {
                innov[t] = centered[t] - (1..=long).map(|i| a[i - 1] * centered[t - i]).sum::<f64>();
            }
        }
    }
    let start = long + q.max(p);
    let mut x = vec![0.0; css.k()];
    if p + q > 0 && start < n {
        let rows: Vec<Vec<f64>> = (start..n)
            .map(|t| {
                (1..=p)
                    .map(|i| centered[t - i])
                    .chain((1..=q).map(|j| innov[t - j]))
                    .collect()
            })
            .collect();
        if let Some(b) = least_squares(&rows, &centered[start..]) {
            x[..p + q].copy_from_slice(&b);
        }
    }
    if !is_invertible(&x[p..p + q]) {
        x[p..p + q].iter_mut().for_each(|v| *v = 0.0);
    }
    if css.with_mean {
        x[p + q] = mean;
    }
    x
}

/// Fits one order. Errors when the fitted MA part is not invertible or the
/// differenced series is too short for the parameter count.
pub fn arima_fit_order(series: &[f64], order: ArimaOrder) -> Result<ArimaFit> {
    let w = difference(series, order.d);
    let css = Css {
        w: &w,
        p: order.p,
        q: order.q,
        with_mean: order.d == 0,
    };
    let k = css.k();
    if w.len() <= order.p + k + 1 {
        return Err(Error::InvalidArgument(format!("series too short for {order:?}")));
    }
    let x0 = initial_guess(&css);
    let (x, s) = if k == 0 { (x0.clone(), css.sse(&x0)) } else { css.levenberg_marquardt(x0) };
    let (mean, phi, theta) = css.unpack(&x);
    if !is_invertible(theta) {
        return Err(Error::Degenerate(format!("non-invertible MA part for {order:?}")));
    }
    let n_eff = (w.len() - order.p) as f64;
    let sigma2 = s / n_eff;
    let aic = n_eff * sigma2.max(1e-300).ln() + 2.0 * (k + 1) as f64;
    Ok(ArimaFit {
        order,
        mean,
        phi: phi.to_vec(),
        theta: theta.to_vec(),
        css: s,
        sigma2,
        aic,
    })
}

/// Grid search over `p ≤ max_p`, `d ≤ max_d`, `q ≤ max_q`, keeping the
/// lowest AIC; ties go to the smallest `p + q`, then `p`, then `d`.
/// A constant series short-circuits to a `(0, 0, 0)` fit at its value.
pub fn arima_fit(series: &[f64], grid: ArimaGrid) -> Result<ArimaFit> {
    let need = 2 * (grid.max_p + grid.max_q + grid.max_d);
    if series.len() <= need {
        return Err(Error::InvalidArgument(format!(
            "series of length {} needs more than {need} points",
            series.len()
        )));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Ok(ArimaFit {
            order: ArimaOrder { p: 0, d: 0, q: 0 },
            mean: series[0],
            phi: Vec::new(),
            theta: Vec::new(),
            css: 0.0,
            sigma2: 0.0,
            aic: f64::NEG_INFINITY,
        });
    }
    let mut best: Option<ArimaFit> = None;
    for d in 0..=grid.max_d {
        for p in 0..=grid.max_p {
            for q in 0..=grid.max_q {
                let Ok(fit) = arima_fit_order(series, ArimaOrder { p, d, q }) else {
                    continue;
                };
                let key = |f: &ArimaFit| (f.order.p + f.order.q, f.order.p, f.order.d);
                let better = match &best {
                    None => true,
                    Some(b) => fit.aic < b.aic || (fit.aic == b.aic && key(&fit) < key(b)),
                };
                if better {
                    best = Some(fit);
                }
            }
        }
    }
    best.ok_or_else(|| Error::Degenerate("no admissible ARIMA order".into()))
}

impl ArimaFit {
    /// Forecasts `y_{t+h}` for every `t` in `times` (ascending) and every
    /// `h` in `horizons`, using only `series[..=t]`. Output is
    /// `times.len() × horizons.len()`, row-major.
    pub fn forecasts_at(&self, series: &[f64], times: &[usize], horizons: &[usize]) -> Result<Vec<f64>> {
        let ArimaOrder { p, d, q } = self.order;
        if times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("forecast times must be ascending".into()));
        }
        if let Some(&t) = times.iter().find(|&&t| t < d || t >= series.len()) {
            return Err(Error::InvalidArgument(format!("cannot forecast from time {t}")));
        }
        let w = difference(series, d);
        let mu = self.mean;
        let max_h = horizons.iter().copied().max().unwrap_or(0);
        let mut e = vec![0.0; w.len()];
        let mut filled = 0;
        let mut out = Vec::with_capacity(times.len() * horizons.len());
        for &t in times {
            let s_last = t - d;
            while filled <= s_last {
                let s = filled;
                if s >= p {
                    let mut v = w[s] - mu;
                    for i in 0..p {
                        v -= self.phi[i] * (w[s - 1 - i] - mu);
                    }
                    for j in 0..q {
                        if s > j {
                            v -= self.theta[j] * e[s - 1 - j];
                        }
                    }
                    e[s] = v;
                }
                filled += 1;
            }
            // Extend w and e past s_last with forecasts and zero innovations.
            let mut wf: Vec<f64> = w[s_last.saturating_sub(p.max(1) - 1)..=s_last].to_vec();
            let mut ef: Vec<f64> = e[s_last.saturating_sub(q.max(1) - 1)..=s_last].to_vec();
            let mut levels: Vec<f64> = (0..d).map(|j| difference(&series[t - j..=t], j)[0]).collect();
            let mut path = Vec::with_capacity(max_h);
            for _ in 0..max_h {
                let mut v = mu;
                for i in 0..p {
                    if wf.len() > i {
                        v += self.phi[i] * (wf[wf.len() - 1 - i] - mu);
                    }
                }
                for j in 0..q {
                    if ef.len() > j {
                        v += self.theta[j] * ef[ef.len() - 1 - j];
                    }
                }
                wf.push(v);
                ef.push(0.0);
                let mut y = v;
                for j in (0..d).rev() {
                    levels[j] += y;
                    y = levels[j];
                }
                path.push(y);
            }
            out.extend(horizons.iter().map(|&h| path[h - 1]));
        }
        Ok(out)
    }
}

/// Forecasts from the end of `history`.
pub fn arima_forecast(fit: &ArimaFit, history: &[f64], horizons: &[usize]) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("empty history".into()));
    }
    fit.forecasts_at(history, &[history.len() - 1], horizons)
}
