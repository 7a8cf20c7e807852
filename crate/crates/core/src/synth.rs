//! Desk-scale congestion simulator producing a road graph and a condition
//! grid in the same shape as ingested data.
//!
//! Roads are points in the unit square joined to a few near neighbours. Each
//! step, jams spawn with a two-peak time-of-day intensity, congested roads
//! relax one level at a time, and freshly congested roads spill back into
//! their upstream roads with probability `propagation`. A spill-back front
//! keeps its severity and carries a hop budget drawn when the jam spawns. It
//! advances one hop every `hop_steps` steps and dies once the budget is spent
//! or it meets a road that is already at least as congested.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConditionStore, STEPS_PER_DAY};
use crate::error::{Error, Result};
use crate::graph::{load_graph, AttrRecord, TrafficGraph};

/// One Gaussian bump of the daily jam intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub center_hour: f64,
    pub width_hours: f64,
    pub height: f64,
}

/// Daily jam intensity: `baseline + Σ height·exp(−(h − center)² / 2·width²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RushProfile {
    pub baseline: f64,
    pub peaks: Vec<Peak>,
}

impl Default for RushProfile {
    fn default() -> Self {
        RushProfile {
            baseline: 0.05,
            peaks: vec![
                Peak {
                    center_hour: 8.0,
                    width_hours: 1.0,
                    height: 1.0,
                },
                Peak {
                    center_hour: 18.0,
                    width_hours: 1.2,
                    height: 1.0,
                },
            ],
        }
    }
}

impl RushProfile {
    pub fn intensity(&self, slot_of_day: usize) -> f64 {
        let h = slot_of_day as f64 * 24.0 / STEPS_PER_DAY as f64;
        self.baseline
            + self
                .peaks
                .iter()
                .map(|p| {
                    let z = (h - p.center_hour) / p.width_hours;
                    p.height * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_vertices: usize,
    pub mean_out_degree: f64,
    /// Candidate pool (nearest roads) each road picks its successors from.
    pub nearest: usize,
    pub days: usize,
    /// Spill-back probability per upstream edge per step.
    pub propagation: f64,
    /// Probability that a congested road relaxes one level in a step.
    pub decay: f64,
    /// Jam spawn probability per road per step at unit intensity.
    pub spawn_rate: f64,
    pub rush: RushProfile,
    /// Spill-back hop budget is uniform on `1..=max_reach`.
    pub max_reach: usize,
    /// Steps a front spends on a road before it can spill one hop further.
    pub hop_steps: usize,
    /// Relative weights of spawned severities 2, 3, 4.
    pub severity_weights: [f64; 3],
    /// Probability that an observation is reported as not released.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_vertices: 200,
            mean_out_degree: 1.5,
            nearest: 5,
            days: 14,
            propagation: 0.9,
            decay: 0.12,
            spawn_rate: 0.0095,
            rush: RushProfile::default(),
            max_reach: 10,
            hop_steps: 2,
            severity_weights: [0.6, 0.3, 0.1],
            missing_rate: 0.001,
            seed: 20160301,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {x} is not a probability")))
            }
        };
        prob("propagation", self.propagation)?;
        prob("decay", self.decay)?;
        prob("spawn_rate", self.spawn_rate)?;
        prob("missing_rate", self.missing_rate)?;
        if self.n_vertices < 2 {
            return Err(Error::InvalidArgument("need at least two vertices".into()));
        }
        if self.days == 0 || self.max_reach == 0 || self.nearest == 0 || self.hop_steps == 0 {
            return Err(Error::InvalidArgument(
                "days, max_reach, nearest and hop_steps must be positive".into(),
            ));
        }
        if self.mean_out_degree < 0.0 || self.severity_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("negative degree or severity weight".into()));
        }
        if self.severity_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("severity weights sum to zero".into()));
        }
        if self.rush.intensity(0) < 0.0 || self.rush.peaks.iter().any(|p| p.width_hours <= 0.0) {
            return Err(Error::InvalidArgument("rush profile must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.days * STEPS_PER_DAY
    }
}

pub fn vertex_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("R{i:0width$}")
}

/// Random near-neighbour road graph.
pub fn synth_graph(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<TrafficGraph> {
    let n = config.n_vertices;
    let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let names: Vec<String> = (0..n).map(|i| vertex_name(i, n)).collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let base = config.mean_out_degree.floor() as usize;
    let frac = config.mean_out_degree - base as f64;
    for u in 0..n {
        let mut near: Vec<(f64, usize)> = (0..n)
            .filter(|&v| v != u)
            .map(|v| {
                let (dx, dy) = (pos[u].0 - pos[v].0, pos[u].1 - pos[v].1);
                (dx * dx + dy * dy, v)
            })
            .collect();
        near.sort_by(|a, b| a.partial_cmp(b).unwrap());
        near.truncate(config.nearest);
        let mut pool: Vec<usize> = near.into_iter().map(|(_, v)| v).collect();
        pool.shuffle(rng);
        let k = base + usize::from(rng.gen_bool(frac.clamp(0.0, 1.0)));
        for &v in pool.iter().take(k) {
            // keep flow directional: no immediate U-turns
            if !edges.contains(&(v, u)) {
                edges.push((u, v));
            }
        }
    }
    let attrs: Vec<AttrRecord> = names
        .iter()
        .map(|name| AttrRecord::new(name.clone(), rng.gen_range(1..=4)))
        .collect();
    let edge_records: Vec<(String, String)> = edges
        .into_iter()
        .map(|(u, v)| (names[u].clone(), names[v].clone()))
        .collect();
    load_graph(&edge_records, &attrs, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Front {
    vertex: usize,
    severity: u8,
    budget: usize,
    /// Steps left before the next hop.
    wait: usize,
}

/// Latent road states plus the spill-back fronts created in the last step.
pub struct Simulator<'g> {
    graph: &'g TrafficGraph,
    config: SynthConfig,
    state: Vec<u8>,
    fronts: Vec<Front>,
}

impl<'g> Simulator<'g> {
    pub fn new(graph: &'g TrafficGraph, config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        Ok(Simulator {
            graph,
            config: config.clone(),
            state: vec![1; graph.len()],
            fronts: Vec::new(),
        })
    }

    pub fn state(&self) -> &[u8] {
        &self.state
    }

    /// Starts a jam of `severity` at `vertex` that may spill back `budget` hops.
    pub fn inject(&mut self, vertex: usize, severity: u8, budget: usize) {
        if self.state[vertex] < severity {
            self.state[vertex] = severity;
        }
        self.fronts.push(Front {
            vertex,
            severity,
            budget,
            wait: self.config.hop_steps,
        });
    }

    /// Decay, then spill-back of the fronts whose wait is over.
    pub fn advance(&mut self, rng: &mut ChaCha8Rng) {
        for c in self.state.iter_mut() {
            if *c > 1 && rng.gen_bool(self.config.decay) {
                *c -= 1;
            }
        }
        let mut next = Vec::new();
        for f in std::mem::take(&mut self.fronts) {
            if f.wait > 1 {
                next.push(Front { wait: f.wait - 1, ..f });
                continue;
            }
            for &u in self.graph.predecessors(f.vertex) {
                if rng.gen_bool(self.config.propagation) && self.state[u] < f.severity {
                    self.state[u] = f.severity;
                    if f.budget > 1 {
                        next.push(Front {
                            vertex: u,
                            severity: f.severity,
                            budget: f.budget - 1,
                            wait: self.config.hop_steps,
                        });
                    }
                }
            }
        }
        self.fronts = next;
    }

    /// Random jam onsets for a step in time-of-day slot `slot`.
    pub fn spawn(&mut self, slot: usize, rng: &mut ChaCha8Rng) {
        let weights = self.config.severity_weights;
        let wsum: f64 = weights.iter().sum();
        let p = (self.config.spawn_rate * self.config.rush.intensity(slot)).clamp(0.0, 1.0);
        for v in 0..self.state.len() {
            if rng.gen_bool(p) {
                let mut x = rng.gen::<f64>() * wsum;
                let mut severity = 4u8;
                for (k, w) in weights.iter().enumerate() {
                    if x < *w {
                        severity = 2 + k as u8;
                        break;
                    }
                    x -= w;
                }
                let budget = rng.gen_range(1..=self.config.max_reach);
                self.inject(v, severity, budget);
            }
        }
    }
}

/// Runs the congestion process on `graph` for `steps` steps starting at
/// lattice index `start_step`.
pub fn simulate(
    graph: &TrafficGraph,
    config: &SynthConfig,
    start_step: i64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConditionStore> {
    let mut sim = Simulator::new(graph, config)?;
    let n = graph.len();
    let mut grid = vec![0u8; n * steps];
    for t in 0..steps {
        let slot = (start_step + t as i64).rem_euclid(STEPS_PER_DAY as i64) as usize;
        if t > 0 {
            sim.advance(rng);
        }
        sim.spawn(slot, rng);
        for v in 0..n {
            let hidden = config.missing_rate > 0.0 && rng.gen_bool(config.missing_rate);
            grid[v * steps + t] = if hidden { 0 } else { sim.state[v] };
        }
    }
    ConditionStore::new(graph.ids().to_vec(), start_step, steps, grid)
}

/// Generates a graph and `days` of conditions; bit-reproducible for a seed.
pub fn synth_generate(config: &SynthConfig) -> Result<(TrafficGraph, ConditionStore)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let graph = synth_graph(config, &mut rng)?;
    let store = simulate(&graph, config, 0, config.steps(), &mut rng)?;
    Ok((graph, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> TrafficGraph {
        // R0 -> R1 -> ... -> R{n-1}; congestion at the end spills back toward R0
        let edges: Vec<(String, String)> = (0..n - 1)
            .map(|i| (vertex_name(i, n), vertex_name(i + 1, n)))
            .collect();
        load_graph(&edges, &[], false).unwrap()
    }

    fn single_jam(q: f64) -> SynthConfig {
        SynthConfig {
            n_vertices: 12,
            propagation: q,
            decay: 0.0,
            spawn_rate: 0.0,
            missing_rate: 0.0,
            max_reach: 20,
            ..Default::default()
        }
    }

    /// First step at which each chain vertex is congested after a jam at
    /// the sink at step 0.
    fn arrival_times(q: f64, hop_steps: usize, seed: u64) -> Vec<Option<usize>> {
        let g = chain(12);
        let config = SynthConfig {
            hop_steps,
            ..single_jam(q)
        };
        let mut sim = Simulator::new(&g, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.len();
        sim.inject(n - 1, 3, 20);
        let mut first = vec![None; n];
        for t in 0..40 {
            if t > 0 {
                sim.advance(&mut rng);
            }
            for v in 0..n {
                if sim.state()[v] > 1 {
                    first[v].get_or_insert(t);
                }
            }
        }
        first
    }

    #[test]
    fn full_propagation_moves_one_hop_per_hop_steps() {
        for hop_steps in 1..=3 {
            let first = arrival_times(1.0, hop_steps, 1);
            let n = first.len();
            for (hop, v) in (0..n).rev().enumerate() {
                assert_eq!(first[v], Some(hop * hop_steps), "vertex {v}, {hop_steps} steps per hop");
            }
        }
    }

    #[test]
    fn partial_propagation_never_outruns_one_hop() {
        let mut reached = 0;
        for seed in 0..50 {
            let first = arrival_times(0.9, 2, seed);
            let n = first.len();
            for (hop, v) in (0..n).rev().enumerate() {
                if let Some(t) = first[v] {
                    assert_eq!(t, 2 * hop);
                    reached += 1;
                }
            }
        }
        // each hop survives with probability 0.9
        let expected: f64 = 50.0 * (0..12).map(|h| 0.9f64.powi(h)).sum::<f64>();
        assert!((reached as f64 - expected).abs() < 0.15 * expected, "{reached} vs {expected}");
    }

    #[test]
    fn budget_limits_reach() {
        let g = chain(12);
        let mut sim = Simulator::new(&g, &single_jam(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sim.inject(11, 2, 4);
        for _ in 0..20 {
            sim.advance(&mut rng);
        }
        let congested: Vec<usize> = (0..12).filter(|&v| sim.state()[v] > 1).collect();
        assert_eq!(congested, vec![7, 8, 9, 10, 11]);
    }

    #[test]
    fn no_spawns_means_free_flow() {
        let g = chain(6);
        let mut cfg = single_jam(1.0);
        cfg.n_vertices = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = simulate(&g, &cfg, 0, 10, &mut rng).unwrap();
        assert!(s.grid().iter().all(|&c| c == 1));
    }

    #[test]
    fn reproducible_for_seed() {
        let cfg = SynthConfig {
            n_vertices: 30,
            days: 1,
            ..Default::default()
        };
        let (g1, s1) = synth_generate(&cfg).unwrap();
        let (g2, s2) = synth_generate(&cfg).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(s1, s2);
        let (_, s3) = synth_generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        for cfg in [
            SynthConfig {
                propagation: 1.5,
                ..Default::default()
            },
            SynthConfig {
                decay: -0.1,
                ..Default::default()
            },
            SynthConfig {
                n_vertices: 1,
                ..Default::default()
            },
        ] {
            assert!(synth_generate(&cfg).is_err());
        }
    }

    #[test]
    fn two_peak_profile() {
        let r = RushProfile::default();
        let at = |h: f64| r.intensity((h * 12.0) as usize);
        assert!(at(8.0) > at(3.0) * 10.0);
        assert!(at(18.0) > at(13.0) * 2.0);
        assert!(at(13.0) < at(8.0));
    }

    #[test]
    fn graph_has_no_self_loops_or_u_turns() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g = synth_graph(&cfg, &mut rng).unwrap();
        assert_eq!(g.len(), 200);
        for (u, v) in g.edges() {
            assert_ne!(u, v);
            assert!(!g.has_edge(v, u));
        }
        let mean = g.edge_count() as f64 / g.len() as f64;
        assert!((1.2..1.6).contains(&mean), "mean out-degree {mean}");
    }
}
