//! End-to-end runs of the command-line front end on a small synthetic network.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use deeptransport::cli;
use deeptransport::dataset::{load_conditions, LoadOptions};
use deeptransport::graph::load_graph_files;
use deeptransport::metrics::qw_kappa;
use deeptransport::synth::{synth_generate, SynthConfig};

const CONFIG: &str = r#"
seed = 11
[synth]
n_vertices = 20
days = 2
[model]
history = 6
radius = 3
width = 3
embed_dim = 6
feature_maps = 3
hidden = 6
attn_hidden = 6
[train]
batch_size = 64
chunk_size = 16
workers = 1
max_epochs = 2
eval_every = 20
max_train_samples = 1500
max_val_samples = 300
log_wall_time = false
[eval]
stride = 3
[baselines]
saes_layers = [16]
arima_window = 200
[baselines.arima]
max_p = 1
max_d = 1
max_q = 1
[baselines.train]
batch_size = 64
chunk_size = 64
workers = 1
max_epochs = 2
max_train_samples = 1500
[baselines.pretrain]
batch_size = 8
chunk_size = 8
workers = 1
max_epochs = 2
"#;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let paths = format!(
            "[paths]\nedges = \"{0}/data/edges.csv\"\nattrs = \"{0}/data/attrs.csv\"\nconditions = \"{0}/data/conditions.csv\"\noutput = \"{0}/out\"\n",
            root.display()
        );
        fs::write(root.join("run.toml"), format!("{CONFIG}\n{paths}")).unwrap();
        Run { _dir: dir, root }
    }

    fn cli(&self, args: &[&str]) -> i32 {
        let config = self.root.join("run.toml");
        let mut full = vec!["deeptransport", "--config", config.to_str().unwrap()];
        full.extend_from_slice(args);
        cli::main(full)
    }

    fn synth(&self) {
        let data = self.root.join("data");
        assert_eq!(self.cli(&["synth", "--output", data.to_str().unwrap()]), 0);
    }

    fn out(&self, p: &str) -> PathBuf {
        self.root.join("out").join(p)
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            for (k, v) in dir_bytes(&p) {
                out.insert(format!("{}/{k}", p.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn train_losses(log: &Path) -> Vec<(u64, f64)> {
    fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["step"].as_u64().unwrap(), v["train_loss"].as_f64().unwrap())
        })
        .collect()
}

#[test]
fn synth_is_reproducible_and_round_trips() {
    let a = Run::new();
    let b = Run::new();
    a.synth();
    b.synth();
    assert_eq!(dir_bytes(&a.root.join("data")), dir_bytes(&b.root.join("data")));

    let data = a.root.join("data");
    let graph = load_graph_files(&data.join("edges.csv"), Some(&data.join("attrs.csv")), true).unwrap();
    let store = load_conditions(&data.join("conditions.csv"), &graph, LoadOptions::default()).unwrap();
    let config = SynthConfig {
        n_vertices: 20,
        days: 2,
        seed: 11,
        ..SynthConfig::default()
    };
    let (g2, s2) = synth_generate(&config).unwrap();
    assert_eq!(graph.ids(), g2.ids());
    assert_eq!(graph.edges().collect::<Vec<_>>(), g2.edges().collect::<Vec<_>>());
    assert_eq!(store, s2);
}

#[test]
fn train_is_deterministic_across_runs_and_workers() {
    let started = Instant::now();
    let a = Run::new();
    a.synth();
    assert_eq!(a.cli(&["train"]), 0);
    assert!(started.elapsed().as_secs() < 300);
    let first = dir_bytes(&a.out("checkpoint"));
    let log = fs::read(a.out("train_log.jsonl")).unwrap();
    assert!(!log.is_empty());

    assert_eq!(a.cli(&["train"]), 0);
    assert_eq!(dir_bytes(&a.out("checkpoint")), first);
    assert_eq!(fs::read(a.out("train_log.jsonl")).unwrap(), log);

    assert_eq!(a.cli(&["train", "--workers", "4"]), 0);
    let four = dir_bytes(&a.out("checkpoint"));
    for (name, bytes) in &first {
        if name.ends_with(".bin") || name.contains("param") {
            assert_eq!(&four[name], bytes, "{name} differs between 1 and 4 workers");
        }
    }
    assert_eq!(four.len(), first.len());
}

#[test]
fn resume_continues_the_same_trajectory() {
    let a = Run::new();
    a.synth();
    assert_eq!(a.cli(&["train"]), 0);
    let full = train_losses(&a.out("train_log.jsonl"));
    let best = dir_bytes(&a.out("checkpoint/best"));

    fs::remove_dir_all(a.out("checkpoint")).unwrap();
    assert_eq!(a.cli(&["train", "--set", "train.max_epochs=1"]), 0);
    assert_eq!(a.cli(&["train", "--resume"]), 0);
    // The interrupted run adds a validation record at its last step; the
    // optimisation trajectory itself must be unchanged.
    assert_eq!(train_losses(&a.out("train_log.jsonl")), full);
    assert_eq!(dir_bytes(&a.out("checkpoint/best")), best);
}

#[test]
fn eval_reports_are_stable_and_match_dumps() {
    let a = Run::new();
    a.synth();
    assert_eq!(a.cli(&["train"]), 0);
    assert_eq!(a.cli(&["eval", "--baselines", "rw,fnn"]), 0);
    let json = fs::read(a.out("metrics.json")).unwrap();
    let csv = fs::read_to_string(a.out("metrics.csv")).unwrap();
    assert_eq!(a.cli(&["eval", "--baselines", "rw,fnn"]), 0);
    assert_eq!(fs::read(a.out("metrics.json")).unwrap(), json);

    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,h3,h6,h9,h12,avg");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("deeptransport-r3p6,"));

    let scores: serde_json::Value = serde_json::from_slice(&json).unwrap();
    for model in scores.as_array().unwrap() {
        let name = model["model"].as_str().unwrap();
        let mut rdr = csv::Reader::from_path(a.out(&format!("predictions/{name}.csv"))).unwrap();
        let mut by_h: BTreeMap<u64, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
        for row in rdr.records() {
            let row = row.unwrap();
            let truth: u8 = row[3].parse().unwrap();
            if truth != 0 {
                let e = by_h.entry(row[2].parse().unwrap()).or_default();
                e.0.push(truth);
                e.1.push(row[5].parse().unwrap());
            }
        }
        for h in model["horizons"].as_array().unwrap() {
            let (t, p) = &by_h[&h["horizon"].as_u64().unwrap()];
            let direct = qw_kappa(t, p).unwrap().kappa;
            assert_eq!(h["report"]["kappa"].as_f64().unwrap(), direct, "{name}");
        }
    }
    assert!(a.out("metrics_rmse_by_time.csv").exists());
}

#[test]
fn attention_means_match_the_dump() {
    let a = Run::new();
    a.synth();
    assert_eq!(a.cli(&["train"]), 0);
    assert_eq!(a.cli(&["attention", "--horizon", "12"]), 0);

    let mut sums: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    let mut per_order: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(a.out("attention_samples.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["vertex", "time", "side", "order", "weight"]);
    for row in rdr.records() {
        let row = row.unwrap();
        let w: f64 = row[4].parse().unwrap();
        *sums.entry((row[0].into(), row[1].into(), row[2].into())).or_default() += w;
        let e = per_order.entry((row[2].into(), row[3].into())).or_default();
        e.0 += w;
        e.1 += 1;
    }
    assert!(!sums.is_empty());
    for s in sums.values() {
        assert!((s - 1.0).abs() < 1e-9);
    }
    let mut rdr = csv::Reader::from_path(a.out("attention_mean.csv")).unwrap();
    let mut checked = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        if &row[0] != "12" {
            continue;
        }
        let (sum, n) = per_order[&(row[1].to_string(), row[2].to_string())];
        let mean: f64 = row[3].parse().unwrap();
        assert!((mean - sum / n as f64).abs() < 1e-9);
        checked += 1;
    }
    assert_eq!(checked, 6);
}

#[test]
fn nmi_predict_and_baseline_commands() {
    let a = Run::new();
    a.synth();
    assert_eq!(a.cli(&["nmi"]), 0);
    let nmi = fs::read_to_string(a.out("nmi.csv")).unwrap();
    assert_eq!(nmi.lines().next(), Some("radius,pairs,nmi"));
    assert_eq!(nmi.lines().count(), 6);

    assert_eq!(a.cli(&["baseline", "--kind", "arima"]), 0);
    assert!(a.out("baseline_arima.csv").exists());

    assert_eq!(a.cli(&["train"]), 0);
    assert_eq!(a.cli(&["predict", "--start", "400", "--end", "410"]), 0);
    let rows = fs::read_to_string(a.out("predictions.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 10 * 20 * 4);
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_deeptransport");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let status = Command::new(bin).args(["synth"]).status().unwrap();
    assert_eq!(status.code(), Some(2), "missing seed");

    let status = Command::new(bin)
        .args(["--seed", "1", "--output", out.to_str().unwrap(), "--edges", "/nonexistent/edges.csv", "train"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "missing input");

    fs::write(dir.path().join("edges.csv"), "from,to\na,b\n").unwrap();
    fs::write(dir.path().join("conditions.csv"), "vertex,timestamp,code\na,0,9\n").unwrap();
    let status = Command::new(bin)
        .args(["--seed", "1", "--output", out.to_str().unwrap()])
        .args(["--edges", dir.path().join("edges.csv").to_str().unwrap()])
        .args(["--conditions", dir.path().join("conditions.csv").to_str().unwrap()])
        .args(["--set", "paths.attrs=\"\"", "nmi"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3), "bad condition code");

    let status = Command::new(bin).args(["--seed", "1", "frobnicate"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
