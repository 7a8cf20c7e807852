//! Trains two single-horizon networks and compares how their attention is
//! spread over neighbour orders.

use deeptransport::dataset::SampleIndex;
use deeptransport::evaluation::{mean_attention, partition, thin};
use deeptransport::graph::Direction;
use deeptransport::model::{Model, ModelConfig};
use deeptransport::synth::{synth_generate, SynthConfig};
use deeptransport::training::{thread_pool, train_network, TrainConfig, TrainIo};

fn main() -> deeptransport::Result<()> {
    let (graph, store) = synth_generate(&SynthConfig {
        n_vertices: 80,
        days: 6,
        ..SynthConfig::default()
    })?;
    let train = TrainConfig {
        batch_size: 200,
        chunk_size: 50,
        max_epochs: 3,
        max_train_samples: Some(30_000),
        seed: 1,
        ..TrainConfig::default()
    };
    let pool = thread_pool(train.workers)?;
    for h in [3, 12] {
        let config = ModelConfig {
            radius: 5,
            width: 4,
            embed_dim: 8,
            hidden: 16,
            attn_hidden: 16,
            horizons: vec![h],
            ..ModelConfig::default()
        };
        let index = SampleIndex::new(&store, &graph, config.sample_spec())?;
        let split = partition(&index, 0.8)?;
        let out = train_network(&index, &split.train, Model::new(config, 1)?, &train, TrainIo::default())?;
        let rows = mean_attention(&out.model, &index, &thin(&split.test, 4), 500, &pool, None)?;
        for side in [Direction::Upstream, Direction::Downstream] {
            let w: Vec<String> = rows.iter().filter(|r| r.side == side).map(|r| format!("{:.3}", r.weight)).collect();
            println!("horizon {h:>2} {:<10} by order: {}", side.as_str(), w.join(" "));
        }
    }
    Ok(())
}
