//! Slot extraction on random graphs and on the six-road example.

mod common;

use std::collections::BTreeSet;

use deeptransport::graph::{load_graph, Direction, TrafficGraph, PAD};
use proptest::prelude::*;

fn graph_from(n: usize, pairs: &[(usize, usize)]) -> TrafficGraph {
    let name = |i: usize| format!("v{i:02}");
    let edges: Vec<(String, String)> = pairs
        .iter()
        .filter(|(a, b)| a != b)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|&(a, b)| (name(a), name(b)))
        .collect();
    let attrs: Vec<_> = (0..n).map(|i| deeptransport::graph::AttrRecord::new(name(i), 1)).collect();
    load_graph(&edges, &attrs, true).unwrap()
}

fn step(g: &TrafficGraph, from: usize, dir: Direction) -> &[usize] {
    match dir {
        Direction::Upstream => g.predecessors(from),
        Direction::Downstream => g.successors(from),
    }
}

/// Every maximal simple walk of at most `radius` steps away from `target`,
/// padded by repeating its end, in lexicographic order.
fn brute_force(g: &TrafficGraph, target: usize, radius: usize, dir: Direction) -> Vec<Vec<usize>> {
    fn go(g: &TrafficGraph, target: usize, radius: usize, dir: Direction, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if path.len() == radius {
            out.push(path.clone());
            return;
        }
        let last = *path.last().unwrap_or(&target);
        let next: Vec<usize> = step(g, last, dir)
            .iter()
            .copied()
            .filter(|&v| v != target && !path.contains(&v))
            .collect();
        if next.is_empty() {
            if !path.is_empty() {
                let mut row = path.clone();
                row.resize(radius, last);
                out.push(row);
            }
            return;
        }
        for v in next {
            path.push(v);
            go(g, target, radius, dir, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(g, target, radius, dir, &mut Vec::new(), &mut out);
    out.sort();
    out
}

fn arb_graph() -> impl Strategy<Value = TrafficGraph> {
    (2usize..9).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..(3 * n)).prop_map(move |pairs| graph_from(n, &pairs))
    })
}

fn arb_dir() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Upstream), Just(Direction::Downstream)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rows_are_walks_or_dead_end_repeats(g in arb_graph(), dir in arb_dir(), radius in 1usize..5, max_paths in 1usize..12) {
        for target in 0..g.len() {
            let slots = g.enumerate_slot_paths(target, radius, dir, max_paths).unwrap();
            prop_assert_eq!(slots.rows(), max_paths);
            let valid = slots.valid_rows();
            prop_assert!(slots.row_mask[..valid].iter().all(|&m| m));
            prop_assert!(slots.row_mask[valid..].iter().all(|&m| !m));
            for i in 0..slots.rows() {
                let row = slots.row(i);
                if !slots.row_mask[i] {
                    prop_assert!(row.iter().all(|&v| v == PAD));
                    continue;
                }
                let mut prev = target;
                let mut repeating = false;
                for (j, &v) in row.iter().enumerate() {
                    prop_assert!(v != target);
                    if step(&g, prev, dir).contains(&v) && !row[..j].contains(&v) && !repeating {
                        prev = v;
                        continue;
                    }
                    // Only a trailing repeat of a vertex with nowhere new to go.
                    prop_assert!(j > 0 && v == row[j - 1]);
                    let open = step(&g, prev, dir).iter().any(|&w| w != target && !row[..j].contains(&w));
                    prop_assert!(!open);
                    repeating = true;
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_prefix(g in arb_graph(), dir in arb_dir(), radius in 1usize..5, max_paths in 1usize..12) {
        for target in 0..g.len() {
            let slots = g.enumerate_slot_paths(target, radius, dir, max_paths).unwrap();
            let all = brute_force(&g, target, radius, dir);
            let expect: Vec<Vec<usize>> = all.into_iter().take(max_paths).collect();
            let got: Vec<Vec<usize>> = (0..slots.valid_rows()).map(|i| slots.row(i).to_vec()).collect();
            prop_assert_eq!(got, expect);
        }
    }

    #[test]
    fn first_column_matches_order_one_neighbours(g in arb_graph(), dir in arb_dir(), radius in 1usize..4) {
        for target in 0..g.len() {
            let slots = g.enumerate_slot_paths(target, radius, dir, 64).unwrap();
            let col: BTreeSet<usize> = slots.column(1).into_iter().filter(|&v| v != PAD).collect();
            let expect: BTreeSet<usize> = g.order_neighbors(target, 1, dir).into_iter().collect();
            prop_assert_eq!(col, expect);
        }
    }
}

#[test]
fn example_network_slots() {
    let g = common::fig3();
    let id = |s: &str| g.index_of(s).unwrap();
    let names = |col: Vec<usize>| -> Vec<String> { col.into_iter().map(|v| g.id(v).to_string()).collect() };
    let l4 = id("L4");

    let down = g.enumerate_slot_paths(l4, 2, Direction::Downstream, 2).unwrap();
    assert_eq!(names(down.column(1)), ["L3", "L3"]);
    assert_eq!(names(down.column(2)), ["L1", "L2"]);

    let up = g.enumerate_slot_paths(l4, 2, Direction::Upstream, 2).unwrap();
    assert_eq!(names(up.column(1)), ["L5", "L5"]);
    assert_eq!(names(up.column(2)), ["L2", "L6"]);
}

#[test]
fn isolated_vertex_is_all_padding() {
    let g = load_graph(&[], &[deeptransport::graph::AttrRecord::new("solo", 2)], true).unwrap();
    for dir in [Direction::Upstream, Direction::Downstream] {
        let s = g.enumerate_slot_paths(0, 3, dir, 4).unwrap();
        assert_eq!(s.valid_rows(), 0);
        assert!(s.paths.iter().all(|&v| v == PAD));
    }
}
