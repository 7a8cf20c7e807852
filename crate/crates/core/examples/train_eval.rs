//! Trains a small network on synthetic data and scores it against a random
//! walk. Pass a radius as the first argument (default 3).

use deeptransport::baselines::{fit_baseline, BaselineConfig, BaselineKind};
use deeptransport::dataset::SampleIndex;
use deeptransport::evaluation::{partition, score, thin};
use deeptransport::model::{Model, ModelConfig};
use deeptransport::synth::{synth_generate, SynthConfig};
use deeptransport::training::{fit_projection_refs, predict_refs, thread_pool, train_network, TrainConfig, TrainIo};

fn main() -> deeptransport::Result<()> {
    let radius = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let (graph, store) = synth_generate(&SynthConfig {
        n_vertices: 60,
        days: 4,
        ..SynthConfig::default()
    })?;
    let config = ModelConfig {
        radius,
        width: 4,
        embed_dim: 8,
        hidden: 16,
        attn_hidden: 16,
        ..ModelConfig::default()
    };
    let index = SampleIndex::new(&store, &graph, config.sample_spec())?;
    let split = partition(&index, 0.8)?;
    let test = thin(&split.test, 3);
    let thresholds = fit_projection_refs(&index, &split.train)?;

    let train = TrainConfig {
        batch_size: 200,
        chunk_size: 50,
        max_epochs: 3,
        max_train_samples: Some(20_000),
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train_network(&index, &split.train, Model::new(config, 7)?, &train, TrainIo::default())?;
    println!("{} steps, best validation loss {:?}", out.steps, out.best_val);

    let pool = thread_pool(train.workers)?;
    let preds = predict_refs(&out.model, &index, &test, 500, &pool)?;
    let rw = fit_baseline(BaselineKind::Rw, &index, &split.train, &BaselineConfig::default())?;
    for scores in [
        score(&format!("r{radius}"), &index, &test, &preds, &thresholds)?,
        score("rw", &index, &test, &rw.predict(&index, &test)?, &thresholds)?,
    ] {
        let ks: Vec<String> = scores.horizons.iter().map(|h| format!("h{} {:.4}", h.horizon, h.report.kappa)).collect();
        println!("{:<4} {}  avg {:.4}", scores.model, ks.join("  "), scores.average);
    }
    Ok(())
}
