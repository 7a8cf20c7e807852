//! Command-line front end. Every subcommand reads the run configuration,
//! does its work, and leaves its results as files under `paths.output`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{fit_baseline, BaselineKind};
use crate::config::{parse_override, RunConfig};
use crate::dataset::{load_conditions, ConditionStore, SampleIndex, SampleRef, SampleSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    mean_attention, partition, rmse_curves, score, thin, truth_codes, write_attention_means_csv, write_rmse_csv,
    write_scores_json, write_table_csv, ModelScores,
};
use crate::graph::{load_graph_files, write_attrs_csv, write_edges_csv, TrafficGraph};
use crate::metrics::{nmi_by_radius, RmseBin};
use crate::model::Model;
use crate::synth::synth_generate;
use crate::training::{
    fit_projection_refs, load_thresholds, predict_refs, project_labels, save_thresholds, thread_pool, train,
    ProjectionThresholds, TrainIo,
};

#[derive(Debug, Parser)]
#[command(name = "deeptransport", version, about = "Traffic condition forecasting on road graphs")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Edge list CSV (`from,to`).
    #[arg(long, global = true)]
    pub edges: Option<PathBuf>,
    /// Vertex attribute CSV.
    #[arg(long, global = true)]
    pub attrs: Option<PathBuf>,
    /// Condition CSV (`vertex,timestamp,code`).
    #[arg(long, global = true)]
    pub conditions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Any configuration key, e.g. `--set model.radius=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic road graph and condition series.
    Synth,
    /// Train the network and fit the label projection.
    Train {
        /// Continue from `checkpoint/last` in the output directory.
        #[arg(long)]
        resume: bool,
        /// Leave wall-clock times out of the training log.
        #[arg(long)]
        no_wall_time: bool,
    },
    /// Score checkpoints and baselines on the test range.
    Eval {
        /// `[NAME=]DIR`; defaults to `checkpoint/best` in the output directory.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
        /// Baselines to score alongside, comma separated.
        #[arg(long, value_delimiter = ',')]
        baselines: Vec<BaselineKind>,
    },
    /// Write predictions for a range of time steps.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First time index (inclusive); defaults to the test range.
        #[arg(long)]
        start: Option<usize>,
        /// Last time index (exclusive).
        #[arg(long)]
        end: Option<usize>,
    },
    /// Average slot attention over the test range.
    Attention {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also dump per-sample weights for this horizon (in steps).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Mutual information between roads and their neighbours by order.
    Nmi,
    /// Fit and score one comparison method.
    Baseline {
        #[arg(long)]
        kind: BaselineKind,
    },
}

impl CommonArgs {
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let path = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
        let mut out = Vec::new();
        for s in &self.set {
            out.push(parse_override(s)?);
        }
        if let Some(s) = self.seed {
            let s = i64::try_from(s).map_err(|_| Error::Config("seed must fit in a signed 64-bit integer".into()))?;
            out.push(("seed".into(), toml::Value::Integer(s)));
        }
        let paths = [
            ("paths.output", &self.output),
            ("paths.edges", &self.edges),
            ("paths.attrs", &self.attrs),
            ("paths.conditions", &self.conditions),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                out.push((key.into(), path(p)));
            }
        }
        if let Some(w) = self.workers {
            out.push(("train.workers".into(), toml::Value::Integer(w as i64)));
        }
        Ok(out)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides()?)?.seeded()
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::ExitClass::Config as i32 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_class() as i32
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.common.resolve()?;
    fs::create_dir_all(&config.paths.output)?;
    match &cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Train { resume, no_wall_time } => {
            let mut config = config;
            if *no_wall_time {
                config.train.log_wall_time = false;
            }
            cmd_train(&config, *resume)
        }
        Command::Eval { checkpoints, baselines } => {
            let mut named = Vec::new();
            for c in checkpoints {
                named.push(match c.split_once('=') {
                    Some((name, dir)) => (Some(name.to_string()), PathBuf::from(dir)),
                    None => (None, PathBuf::from(c)),
                });
            }
            let mut config = config;
            config.eval.baselines.extend(baselines.iter().copied());
            config.eval.baselines.dedup();
            cmd_eval(&config, &named)
        }
        Command::Predict { checkpoint, start, end } => cmd_predict(&config, checkpoint.as_deref(), *start, *end),
        Command::Attention { checkpoint, horizon } => cmd_attention(&config, checkpoint.as_deref(), *horizon),
        Command::Nmi => cmd_nmi(&config),
        Command::Baseline { kind } => cmd_baseline(&config, *kind),
    }
}

pub fn load_data(config: &RunConfig) -> Result<(TrafficGraph, ConditionStore)> {
    let graph = load_graph_files(&config.paths.edges, config.paths.attrs.as_deref(), config.data.strict_graph)?;
    let store = load_conditions(&config.paths.conditions, &graph, config.data.load_options())?;
    Ok((graph, store))
}

/// Writes `edges.csv`, `attrs.csv` and `conditions.csv`.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let (graph, store) = synth_generate(&config.synth)?;
    write_edges_csv(&graph, &config.out("edges.csv"))?;
    write_attrs_csv(&graph, &config.out("attrs.csv"))?;
    store.write_csv(&config.out("conditions.csv"), config.data.timestamp_format)?;
    println!(
        "{} roads, {} crossings, {} steps -> {}",
        graph.len(),
        graph.edge_count(),
        store.len(),
        config.paths.output.display()
    );
    Ok(())
}

fn default_checkpoint(config: &RunConfig) -> PathBuf {
    config.out("checkpoint").join("best")
}

/// Trains on the leading range; writes `checkpoint/`, `train_log.jsonl`,
/// `thresholds.json` and the resolved `run_config.toml`.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<()> {
    let (graph, store) = load_data(config)?;
    let mut index = SampleIndex::new(&store, &graph, config.model.sample_spec())?;
    let part = partition(&index, config.data.train_fraction)?;
    let thresholds = fit_projection_refs(&index, &part.train)?;
    save_thresholds(&config.out("thresholds.json"), &thresholds)?;
    fs::write(config.out("run_config.toml"), config.to_toml()?)?;
    let cut = part.cut;
    let hmax = index.spec.max_horizon();
    index.retain(|r| r.time as usize + hmax < cut);

    let model = Model::new(config.model.clone(), config.seed()?)?;
    let log_path = config.out("train_log.jsonl");
    let mut log = if resume && log_path.exists() {
        BufWriter::new(fs::OpenOptions::new().append(true).open(&log_path)?)
    } else {
        BufWriter::new(File::create(&log_path)?)
    };
    let io = TrainIo {
        checkpoint_dir: Some(config.out("checkpoint")),
        log: Some(&mut log),
        resume,
    };
    let out = train(&index, model, &config.train, io)?;
    log.flush()?;
    println!(
        "trained {} steps on {} samples; best validation loss {}",
        out.steps,
        index.len(),
        out.best_val.map_or("n/a".to_string(), |v| format!("{v:.6}"))
    );
    Ok(())
}

fn thresholds_for(config: &RunConfig, index: &SampleIndex, train_refs: &[SampleRef]) -> Result<ProjectionThresholds> {
    let path = config.out("thresholds.json");
    if path.exists() {
        load_thresholds(&path)
    } else {
        fit_projection_refs(index, train_refs)
    }
}

fn load_model(dir: &Path) -> Result<Model> {
    if !dir.join("manifest.json").exists() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    Ok(Model::load(dir)?.0)
}

fn model_name(model: &Model) -> String {
    let c = model.config();
    format!("deeptransport-r{}p{}", c.radius, c.history)
}

/// `vertex,time,horizon,truth,prediction,class` for every sample and horizon.
pub fn write_predictions_csv(
    path: &Path,
    index: &SampleIndex,
    refs: &[SampleRef],
    predictions: &[f64],
    thresholds: &ProjectionThresholds,
) -> Result<()> {
    let truth = truth_codes(index, refs);
    let classes = project_labels(predictions, thresholds);
    let nh = index.spec.horizons.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["vertex", "time", "horizon", "truth", "prediction", "class"])?;
    for (i, r) in refs.iter().enumerate() {
        for (k, h) in index.spec.horizons.iter().enumerate() {
            let j = i * nh + k;
            w.write_record([
                index.store.vertex_ids()[r.vertex as usize].clone(),
                index.store.step_of(r.time as usize).to_string(),
                h.to_string(),
                truth[j].to_string(),
                predictions[j].to_string(),
                classes[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Scored {
    scores: ModelScores,
    curves: Vec<(usize, Vec<RmseBin>)>,
}

fn score_and_dump(
    config: &RunConfig,
    name: &str,
    index: &SampleIndex,
    refs: &[SampleRef],
    predictions: &[f64],
    thresholds: &ProjectionThresholds,
) -> Result<Scored> {
    let dir = config.out("predictions");
    fs::create_dir_all(&dir)?;
    write_predictions_csv(&dir.join(format!("{name}.csv")), index, refs, predictions, thresholds)?;
    Ok(Scored {
        scores: score(name, index, refs, predictions, thresholds)?,
        curves: rmse_curves(index, refs, predictions, config.eval.rmse_bin)?,
    })
}

fn write_reports(config: &RunConfig, stem: &str, scored: &[Scored]) -> Result<()> {
    let scores: Vec<ModelScores> = scored.iter().map(|s| s.scores.clone()).collect();
    write_scores_json(&config.out(format!("{stem}.json")), &scores)?;
    write_table_csv(File::create(config.out(format!("{stem}.csv")))?, &scores)?;
    let curves: Vec<(String, usize, Vec<RmseBin>)> = scored
        .iter()
        .flat_map(|s| s.curves.iter().map(|(h, b)| (s.scores.model.clone(), *h, b.clone())))
        .collect();
    write_rmse_csv(File::create(config.out(format!("{stem}_rmse_by_time.csv")))?, &curves)?;
    for s in &scores {
        let cells: Vec<String> = s.horizons.iter().map(|h| format!("h{} {:.4}", h.horizon, h.report.kappa)).collect();
        println!("{:<24} {}  avg {:.4}", s.model, cells.join("  "), s.average);
    }
    Ok(())
}

fn baseline_spec(config: &RunConfig, like: Option<&SampleSpec>) -> SampleSpec {
    let mut spec = config.model.sample_spec();
    if let Some(s) = like {
        spec.history = s.history;
        spec.horizons = s.horizons.clone();
    }
    spec
}

/// Writes `metrics.json`, `metrics.csv`, `metrics_rmse_by_time.csv` and
/// one prediction dump per model under `predictions/`.
pub fn cmd_eval(config: &RunConfig, checkpoints: &[(Option<String>, PathBuf)]) -> Result<()> {
    let (graph, store) = load_data(config)?;
    let pool = thread_pool(config.train.workers)?;
    let mut dirs = checkpoints.to_vec();
    if dirs.is_empty() && (config.eval.baselines.is_empty() || default_checkpoint(config).exists()) {
        dirs.push((None, default_checkpoint(config)));
    }
    let mut scored = Vec::new();
    let mut first_spec: Option<SampleSpec> = None;
    for (name, dir) in &dirs {
        let model = load_model(dir)?;
        let index = SampleIndex::new(&store, &graph, model.config().sample_spec())?;
        let part = partition(&index, config.data.train_fraction)?;
        let refs = thin(&part.test, config.eval.stride);
        let thresholds = thresholds_for(config, &index, &part.train)?;
        let pred = predict_refs(&model, &index, &refs, config.eval.chunk_size, &pool)?;
        let name = name.clone().unwrap_or_else(|| model_name(&model));
        scored.push(score_and_dump(config, &name, &index, &refs, &pred, &thresholds)?);
        first_spec.get_or_insert_with(|| index.spec.clone());
    }
    if !config.eval.baselines.is_empty() {
        let index = SampleIndex::new(&store, &graph, baseline_spec(config, first_spec.as_ref()))?;
        let part = partition(&index, config.data.train_fraction)?;
        let refs = thin(&part.test, config.eval.stride);
        let thresholds = thresholds_for(config, &index, &part.train)?;
        for &kind in &config.eval.baselines {
            let fitted = fit_baseline(kind, &index, &part.train, &config.baselines)?;
            let pred = fitted.predict(&index, &refs)?;
            scored.push(score_and_dump(config, kind.as_str(), &index, &refs, &pred, &thresholds)?);
        }
    }
    if scored.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    write_reports(config, "metrics", &scored)
}

/// Fits one baseline on the training range and writes
/// `baseline_<kind>.json/.csv`, its RMSE curves and prediction dump.
pub fn cmd_baseline(config: &RunConfig, kind: BaselineKind) -> Result<()> {
    let (graph, store) = load_data(config)?;
    let index = SampleIndex::new(&store, &graph, baseline_spec(config, None))?;
    let part = partition(&index, config.data.train_fraction)?;
    let refs = thin(&part.test, config.eval.stride);
    let thresholds = thresholds_for(config, &index, &part.train)?;
    let fitted = fit_baseline(kind, &index, &part.train, &config.baselines)?;
    let pred = fitted.predict(&index, &refs)?;
    let scored = score_and_dump(config, kind.as_str(), &index, &refs, &pred, &thresholds)?;
    write_reports(config, &format!("baseline_{kind}"), &[scored])
}

/// Writes `predictions.csv` for samples with `start ≤ time < end`.
pub fn cmd_predict(config: &RunConfig, checkpoint: Option<&Path>, start: Option<usize>, end: Option<usize>) -> Result<()> {
    let (graph, store) = load_data(config)?;
    let dir = checkpoint.map_or_else(|| default_checkpoint(config), Path::to_path_buf);
    let model = load_model(&dir)?;
    let index = SampleIndex::new(&store, &graph, model.config().sample_spec())?;
    let part = partition(&index, config.data.train_fraction)?;
    let start = start.unwrap_or(part.cut);
    let end = end.unwrap_or(usize::MAX);
    let refs: Vec<SampleRef> = index
        .refs()
        .iter()
        .copied()
        .filter(|r| (start..end).contains(&(r.time as usize)))
        .collect();
    let thresholds = thresholds_for(config, &index, &part.train)?;
    let pool = thread_pool(config.train.workers)?;
    let pred = predict_refs(&model, &index, &refs, config.eval.chunk_size, &pool)?;
    write_predictions_csv(&config.out("predictions.csv"), &index, &refs, &pred, &thresholds)?;
    println!("{} samples -> {}", refs.len(), config.out("predictions.csv").display());
    Ok(())
}

/// Writes `attention_mean.csv` and, for a chosen horizon,
/// `attention_samples.csv`.
pub fn cmd_attention(config: &RunConfig, checkpoint: Option<&Path>, horizon: Option<usize>) -> Result<()> {
    let (graph, store) = load_data(config)?;
    let dir = checkpoint.map_or_else(|| default_checkpoint(config), Path::to_path_buf);
    let model = load_model(&dir)?;
    let index = SampleIndex::new(&store, &graph, model.config().sample_spec())?;
    let part = partition(&index, config.data.train_fraction)?;
    let refs = thin(&part.test, config.eval.stride);
    let pool = thread_pool(config.train.workers)?;
    let horizon = horizon.or(config.eval.attention_horizon);
    let dump_path = config.out("attention_samples.csv");
    let dump = match horizon {
        Some(h) => {
            let k = index
                .spec
                .horizons
                .iter()
                .position(|&x| x == h)
                .ok_or_else(|| Error::Config(format!("model has no horizon {h}")))?;
            Some((dump_path.as_path(), k))
        }
        None => None,
    };
    let rows = mean_attention(&model, &index, &refs, config.eval.chunk_size, &pool, dump)?;
    write_attention_means_csv(File::create(config.out("attention_mean.csv"))?, &rows)?;
    for a in &rows {
        println!("h{:<3} {:<10} order {} {:.4}", a.horizon, a.side.as_str(), a.order, a.weight);
    }
    Ok(())
}

/// Writes `nmi.csv` (`radius,pairs,nmi`) and `nmi.json`.
pub fn cmd_nmi(config: &RunConfig) -> Result<()> {
    let (graph, store) = load_data(config)?;
    let rows = nmi_by_radius(&store, &graph, config.nmi.max_radius, config.nmi.directions)?;
    let mut w = csv::Writer::from_path(config.out("nmi.csv"))?;
    w.write_record(["radius", "pairs", "nmi"])?;
    for r in &rows {
        w.write_record([r.radius.to_string(), r.pairs.to_string(), r.nmi.map_or(String::new(), |x| x.to_string())])?;
        match r.nmi {
            Some(x) => println!("order {}: {x:.4} ({} pairs)", r.radius, r.pairs),
            None => println!("order {}: no pairs", r.radius),
        }
    }
    w.flush()?;
    fs::write(config.out("nmi.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}
