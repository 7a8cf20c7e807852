//! Generates a synthetic road network, prints the congestion class mix and
//! how the mutual information between a road and its neighbours decays with
//! neighbour order.

use deeptransport::dataset::class_distribution;
use deeptransport::metrics::{nmi_by_radius, NmiDirections};
use deeptransport::synth::{synth_generate, SynthConfig};

fn main() -> deeptransport::Result<()> {
    let config = SynthConfig::default();
    let (graph, store) = synth_generate(&config)?;
    println!(
        "{} roads, {} crossings, {} steps",
        graph.len(),
        graph.edge_count(),
        store.len()
    );

    let cdf = class_distribution(store.grid().iter().copied())?;
    println!("cumulative class shares: {cdf:.3?}");

    for row in nmi_by_radius(&store, &graph, 5, NmiDirections::Both)? {
        match row.nmi {
            Some(x) => println!("order {}: nmi {x:.4} over {} pairs", row.radius, row.pairs),
            None => println!("order {}: no neighbours", row.radius),
        }
    }
    Ok(())
}
