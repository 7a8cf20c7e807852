//! Comparison methods behind one fit-then-predict interface. Every method
//! emits continuous predictions (`n × |horizons|`) that go through the same
//! label projection as the main model.

mod arima;
mod fnn;
mod rw;
mod saes;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use arima::{
    arima_fit, arima_fit_order, arima_forecast, difference, is_invertible, roots_outside_unit_circle,
    ArimaFit, ArimaGrid, ArimaOrder,
};
pub use fnn::{Fnn, FnnConfig};
pub use rw::rw_predict;
pub use saes::{time_refs, AutoencoderStage, Saes, SaesConfig};

use crate::dataset::{SampleIndex, SampleRef};
use crate::error::{Error, Result};
use crate::training::{train_network, TrainConfig, TrainIo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Rw,
    Arima,
    Fnn,
    Saes,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Rw, BaselineKind::Arima, BaselineKind::Fnn, BaselineKind::Saes];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Rw => "rw",
            BaselineKind::Arima => "arima",
            BaselineKind::Fnn => "fnn",
            BaselineKind::Saes => "saes",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub seed: u64,
    pub arima: ArimaGrid,
    /// Fit each road's ARIMA on at most this many trailing training steps.
    pub arima_window: Option<usize>,
    pub fnn_hidden: usize,
    pub saes_layers: Vec<usize>,
    /// Optimizer settings for FNN training and SAEs fine-tuning.
    pub train: TrainConfig,
    /// Optimizer settings for each SAEs pretraining stage.
    pub pretrain: TrainConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            seed: 0,
            arima: ArimaGrid::default(),
            arima_window: Some(2016),
            fnn_hidden: 32,
            saes_layers: vec![256; 4],
            train: TrainConfig::default(),
            pretrain: TrainConfig {
                batch_size: 100,
                chunk_size: 100,
                max_epochs: 5,
                ..TrainConfig::default()
            },
        }
    }
}

/// A fitted comparison method.
#[derive(Debug, Clone)]
pub enum Baseline {
    Rw { seed: u64 },
    /// One fit per vertex.
    Arima(Vec<ArimaFit>),
    Fnn(Fnn),
    Saes(Saes),
}

/// Codes as reals with missing (zero) entries carried forward; leading
/// gaps take the first observed code, or fluency when none exists.
pub fn fill_missing(codes: &[u8]) -> Vec<f64> {
    let first = codes.iter().copied().find(|&c| c != 0).unwrap_or(1);
    let mut last = first;
    codes
        .iter()
        .map(|&c| {
            if c != 0 {
                last = c;
            }
            last as f64
        })
        .collect()
}

/// Fits `kind` on `train_refs`, all of whose labels must precede the
/// evaluation range.
pub fn fit_baseline(
    kind: BaselineKind,
    index: &SampleIndex,
    train_refs: &[SampleRef],
    config: &BaselineConfig,
) -> Result<Baseline> {
    if train_refs.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let horizons = index.spec.horizons.clone();
    let history = index.spec.history;
    match kind {
        BaselineKind::Rw => Ok(Baseline::Rw { seed: config.seed }),
        BaselineKind::Arima => {
            let end = train_refs.iter().map(|r| r.time as usize).max().unwrap_or(0) + 1;
            let fits: Vec<Result<ArimaFit>> = (0..index.store.vertex_count())
                .into_par_iter()
                .map(|v| {
                    let series = fill_missing(&index.store.series(v)[..end]);
                    let start = config.arima_window.map_or(0, |w| end.saturating_sub(w));
                    let tail = &series[start..];
                    arima_fit(tail, config.arima)
                        .or_else(|_| arima_fit_order(tail, ArimaOrder { p: 0, d: 0, q: 0 }))
                })
                .collect();
            Ok(Baseline::Arima(fits.into_iter().collect::<Result<_>>()?))
        }
        BaselineKind::Fnn => {
            let fnn = Fnn::new(
                FnnConfig {
                    history,
                    hidden: config.fnn_hidden,
                    horizons,
                },
                config.seed,
            )?;
            let out = train_network(index, train_refs, fnn, &config.train, TrainIo::default())?;
            Ok(Baseline::Fnn(out.model))
        }
        BaselineKind::Saes => {
            let saes = Saes::new(
                SaesConfig {
                    history,
                    layers: config.saes_layers.clone(),
                    horizons,
                    vertices: index.store.vertex_count(),
                },
                config.seed,
            )?;
            let times = time_refs(train_refs);
            let fine = TrainConfig {
                batch_size: config.train.batch_size.div_ceil(index.store.vertex_count()).max(1),
                chunk_size: config.train.chunk_size.div_ceil(index.store.vertex_count()).max(1),
                ..config.train.clone()
            };
            Ok(Baseline::Saes(saes.fit(index, &times, &config.pretrain, &fine)?))
        }
    }
}

impl Baseline {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Rw { .. } => BaselineKind::Rw,
            Baseline::Arima(_) => BaselineKind::Arima,
            Baseline::Fnn(_) => BaselineKind::Fnn,
            Baseline::Saes(_) => BaselineKind::Saes,
        }
    }

    /// Continuous predictions, `refs.len() × |horizons|`, row-major.
    pub fn predict(&self, index: &SampleIndex, refs: &[SampleRef]) -> Result<Vec<f64>> {
        let horizons = &index.spec.horizons;
        let h = horizons.len();
        match self {
            Baseline::Rw { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut out = Vec::with_capacity(refs.len() * h);
                for r in refs {
                    let current = index.store.code(r.vertex as usize, r.time as usize);
                    out.extend(rw_predict(current, h, &mut rng));
                }
                Ok(out)
            }
            Baseline::Arima(fits) => {
                if fits.len() != index.store.vertex_count() {
                    return Err(Error::shape("arima predict", "one fit per vertex required"));
                }
                let mut by_vertex: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
                for (i, r) in refs.iter().enumerate() {
                    by_vertex.entry(r.vertex as usize).or_default().push((r.time as usize, i));
                }
                let groups: Vec<(usize, Vec<(usize, usize)>)> = by_vertex.into_iter().collect();
                let parts: Vec<Result<Vec<(usize, Vec<f64>)>>> = groups
                    .par_iter()
                    .map(|(v, items)| {
                        let mut items = items.clone();
                        items.sort_unstable();
                        let series = fill_missing(index.store.series(*v));
                        let times: Vec<usize> = items.iter().map(|x| x.0).collect();
                        let f = fits[*v].forecasts_at(&series, &times, horizons)?;
                        Ok(items.iter().enumerate().map(|(k, &(_, i))| (i, f[k * h..(k + 1) * h].to_vec())).collect())
                    })
                    .collect();
                let mut out = vec![0.0; refs.len() * h];
                for part in parts {
                    for (i, row) in part? {
                        out[i * h..(i + 1) * h].copy_from_slice(&row);
                    }
                }
                Ok(out)
            }
            Baseline::Fnn(f) => {
                let mut out = Vec::with_capacity(refs.len() * h);
                for chunk in refs.chunks(4096) {
                    out.extend(f.predict(index, chunk)?);
                }
                Ok(out)
            }
            Baseline::Saes(s) => s.predict(index, refs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.as_str().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("lstm".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn missing_codes_carried_forward() {
        assert_eq!(fill_missing(&[0, 2, 0, 3, 0]), vec![2.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(fill_missing(&[0, 0]), vec![1.0, 1.0]);
    }
}
