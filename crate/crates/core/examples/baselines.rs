//! Fits every baseline on a small synthetic network and prints their
//! averaged kappa on the held-out days.

use deeptransport::baselines::{fit_baseline, ArimaGrid, BaselineConfig, BaselineKind};
use deeptransport::dataset::SampleIndex;
use deeptransport::evaluation::{partition, score, thin};
use deeptransport::model::ModelConfig;
use deeptransport::synth::{synth_generate, SynthConfig};
use deeptransport::training::{fit_projection_refs, TrainConfig};

fn main() -> deeptransport::Result<()> {
    let (graph, store) = synth_generate(&SynthConfig {
        n_vertices: 40,
        days: 4,
        ..SynthConfig::default()
    })?;
    let index = SampleIndex::new(&store, &graph, ModelConfig::default().sample_spec())?;
    let split = partition(&index, 0.75)?;
    let test = thin(&split.test, 4);
    let thresholds = fit_projection_refs(&index, &split.train)?;

    let small = TrainConfig {
        batch_size: 100,
        chunk_size: 100,
        max_epochs: 3,
        max_train_samples: Some(10_000),
        ..TrainConfig::default()
    };
    let config = BaselineConfig {
        seed: 3,
        arima: ArimaGrid { max_p: 2, max_d: 1, max_q: 2 },
        saes_layers: vec![64, 32],
        train: small.clone(),
        pretrain: TrainConfig {
            batch_size: 20,
            chunk_size: 20,
            ..small
        },
        ..BaselineConfig::default()
    };
    for kind in BaselineKind::ALL {
        let fitted = fit_baseline(kind, &index, &split.train, &config)?;
        let scores = score(kind.as_str(), &index, &test, &fitted.predict(&index, &test)?, &thresholds)?;
        println!("{:<6} avg kappa {:.4}", kind.as_str(), scores.average);
    }
    Ok(())
}
