//! Order slots of the six-road example network.
//!
//! Run with `cargo run --example slot_paths`.

use deeptransport::graph::{load_graph, Direction, PAD};

fn main() -> deeptransport::Result<()> {
    let edges: Vec<(String, String)> = [("L5", "L4"), ("L6", "L5"), ("L2", "L5"), ("L4", "L3"), ("L3", "L1"), ("L3", "L2")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let graph = load_graph(&edges, &[], false)?;
    let target = graph.index_of("L4")?;

    for dir in [Direction::Upstream, Direction::Downstream] {
        let slots = graph.enumerate_slot_paths(target, 2, dir, 4)?;
        println!("{} of L4 ({} walks):", dir.as_str(), slots.valid_rows());
        for i in 0..slots.rows() {
            let row: Vec<&str> = slots.row(i).iter().map(|&v| if v == PAD { "-" } else { graph.id(v) }).collect();
            println!("  {}", row.join(" "));
        }
        for order in 1..=2 {
            let col: Vec<&str> = slots.column(order).into_iter().filter(|&v| v != PAD).map(|v| graph.id(v)).collect();
            println!("  order {order} slot: {col:?}");
        }
    }
    Ok(())
}
