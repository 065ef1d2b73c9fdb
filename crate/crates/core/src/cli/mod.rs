//! The `fedpop` command-line front end.
//!
//! Every command loads an [`ExperimentConfig`], validates it before doing any
//! work and writes CSV artifacts under `out_dir`. Each CSV starts with a
//! comment line carrying the config hash and seed.

mod config;
mod plot;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, TrainMode};
pub use plot::render_svg;

use crate::cache_sim::{build_trace, sweep, PeriodForecasts, PolicySpec};
use crate::data_ingest::{
    bin_requests_from, local_request_matrices, most_requested, parse_events, parse_items, parse_floats, parse_id,
    partition, read_numeric_csv, ContentCatalog, RawEvent, RequestMatrix,
};
use crate::error::{Error, Result};
use crate::experiment::model;
use crate::federated::{build_nodes, run_federated, write_round_log, FederatedConfig, FederatedRun, Mode, RoundLogRow};
use crate::predictor::{ar_baseline, predict_seen, predict_unseen, rmse, PopularityForecast, UnseenQuery};
use crate::sampler::SampleChain;

pub const CATALOG_FILE: &str = "catalog.csv";
pub const REQUESTS_FILE: &str = "requests.csv";
pub const NODES_DIR: &str = "nodes";
pub const CHAIN_FILE: &str = "chain.csv";
pub const ROUND_LOG_FILE: &str = "round_log.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const UNSEEN_FORECAST_FILE: &str = "unseen_forecast.csv";
pub const CURVE_FILE: &str = "cache_curve.csv";
pub const PLOT_FILE: &str = "cache_curve.svg";
pub const COMM_FILE: &str = "comm_bench.csv";

/// Default relative cache sizes 0.05, 0.10, ..., 0.50.
pub fn default_sizes() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Parser)]
#[command(name = "fedpop", version, about = "Federated Bayesian content popularity prediction")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse MovieLens files into catalog, request and per-node CSVs.
    Ingest,
    /// Run the sampler selected by `mode` and write the chain and round log.
    Train,
    /// Forecast the held-out period and, optionally, unseen contents.
    Predict {
        /// Chain checkpoint; defaults to `<out_dir>/chain.csv`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// CSV of `content_id,feat_0..feat_{Q-1}` rows for contents outside the catalog.
        #[arg(long)]
        unseen: Option<PathBuf>,
    },
    /// Replay the held-out trace through every cache policy.
    CacheSweep {
        /// Forecast CSV from `predict`; without it the prediction policy is skipped.
        #[arg(long)]
        forecasts: Option<PathBuf>,
        /// Comma-separated relative cache sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<f64>,
        /// Also render the curves to an SVG file.
        #[arg(long)]
        plot: bool,
    },
    /// RMSE against cumulative bits for each quantization level and native floats.
    CommBench {
        /// Comma-separated quantization levels; empty runs native only.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<u32>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Predict { checkpoint, unseen } => cmd_predict(&cfg, checkpoint.as_deref(), unseen.as_deref()),
        Command::CacheSweep { forecasts, sizes, plot } => cmd_cache_sweep(&cfg, forecasts.as_deref(), sizes, *plot),
        Command::CommBench { levels } => cmd_comm_bench(&cfg, levels),
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    body(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn node_file(cfg: &ExperimentConfig, m: usize) -> PathBuf {
    cfg.out_dir.join(NODES_DIR).join(format!("node_{m}.csv"))
}

fn load_events(cfg: &ExperimentConfig) -> Result<Vec<RawEvent>> {
    parse_events(open(&cfg.data_dir.join("u.data"))?)
}

pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<()> {
    let events = load_events(cfg)?;
    let catalog = parse_items(open(&cfg.data_dir.join("u.item"))?, cfg.features)?;
    let tag = vec![cfg.provenance()];
    write_file(&cfg.out_dir.join(CATALOG_FILE), |w| catalog.write_csv(w, &tag))?;

    let ids = most_requested(&events, cfg.contents);
    if ids.len() < cfg.contents {
        eprintln!("warning: only {} requested contents, fewer than contents = {}", ids.len(), cfg.contents);
    }
    let origin = events.iter().map(|e| e.timestamp).min().unwrap_or(0);
    let (matrix, report) = bin_requests_from(&events, &ids, origin, cfg.period_length, cfg.periods)?;
    write_file(&cfg.out_dir.join(REQUESTS_FILE), |w| matrix.write_csv(w, &tag))?;

    let part = partition(&events, cfg.nodes, cfg.partition, cfg.seed)?;
    let locals = local_request_matrices(&events, &part, &ids, origin, cfg.period_length, cfg.periods)?;
    for (m, local) in locals.iter().enumerate() {
        write_file(&node_file(cfg, m), |w| local.write_csv(w, &tag))?;
    }
    eprintln!(
        "ingested {} events: {} binned, {} outside {} periods, {} outside the top {} contents; catalog {} rows",
        events.len(),
        report.binned,
        report.out_of_window,
        cfg.periods,
        report.unknown_content,
        ids.len(),
        catalog.len()
    );
    Ok(())
}

/// Ingested artifacts for the configured experiment.
struct Inputs {
    catalog: ContentCatalog,
    train: RequestMatrix,
    holdout: Vec<f64>,
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let full = RequestMatrix::read_csv(open(&cfg.out_dir.join(REQUESTS_FILE))?)?;
    if full.num_periods() != cfg.periods || full.num_contents() != cfg.contents {
        return Err(Error::Config(format!(
            "{} holds {} contents x {} periods but the config asks for {} x {}; re-run ingest",
            REQUESTS_FILE,
            full.num_contents(),
            full.num_periods(),
            cfg.contents,
            cfg.periods
        )));
    }
    let all = ContentCatalog::read_csv(open(&cfg.out_dir.join(CATALOG_FILE))?)?;
    if all.dim() != cfg.features {
        return Err(Error::Config(format!("catalog has Q = {} features, config expects {}", all.dim(), cfg.features)));
    }
    let catalog = all.select(full.content_ids())?;
    let n = cfg.train_periods();
    Ok(Inputs { catalog, train: full.leading_periods(n), holdout: full.column(n) })
}

fn federated_config(cfg: &ExperimentConfig, mode: Mode) -> FederatedConfig {
    let mut f = FederatedConfig::new(cfg.sampler(), mode);
    f.participants = cfg.participants;
    f.weighting = cfg.weighting;
    f
}

fn run_training(cfg: &ExperimentConfig, inputs: &Inputs, mode: TrainMode, fmode: Mode) -> Result<FederatedRun> {
    let gp = model(&inputs.catalog, cfg.prior_shape, cfg.prior_rate)?;
    let n = cfg.train_periods();
    let locals = match mode {
        // a single node holding every request is the centralized sampler
        TrainMode::Local => vec![inputs.train.clone()],
        _ => (0..cfg.nodes)
            .map(|m| {
                let local = RequestMatrix::read_csv(open(&node_file(cfg, m))?)?;
                if local.content_ids() != inputs.train.content_ids() || local.num_periods() != cfg.periods {
                    return Err(Error::Config(format!("node file {m} does not match {REQUESTS_FILE}; re-run ingest")));
                }
                Ok(local.leading_periods(n))
            })
            .collect::<Result<_>>()?,
    };
    let fcfg = match mode {
        TrainMode::Local => FederatedConfig::new(cfg.sampler(), Mode::Native),
        _ => federated_config(cfg, fmode),
    };
    let mut nodes = build_nodes(&locals, cfg.seed)?;
    let mut run = run_federated(&gp, &mut nodes, &fcfg, Some(&inputs.holdout))?;
    if mode == TrainMode::Local {
        for row in &mut run.log {
            row.cumulative_bits = 0;
        }
        run.comm = Default::default();
    }
    Ok(run)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let tag = vec![cfg.provenance(), format!("mode={}", cfg.canonical_mode())];
    let chain_path = cfg.out_dir.join(CHAIN_FILE);
    match run_training(cfg, &inputs, cfg.mode, cfg.federated_mode()) {
        Ok(run) => {
            write_file(&chain_path, |w| run.chain.write_csv(w, &tag))?;
            write_file(&cfg.out_dir.join(ROUND_LOG_FILE), |w| write_round_log(w, &run.log, &tag))?;
            let last = run.log.last().and_then(|r| r.rmse_holdout).unwrap_or(f64::NAN);
            eprintln!(
                "kept {} samples, {} gradient evaluations, holdout rmse {last:.4}, {} bits sent",
                run.chain.len(),
                run.chain.gradient_eval_count,
                run.comm.cumulative_bits
            );
            Ok(())
        }
        Err(Error::Diverged { step, message, partial }) => {
            let mut tag = tag;
            tag.push(format!("partial=diverged step={step}"));
            write_file(&chain_path, |w| partial.write_csv(w, &tag))?;
            Err(Error::Diverged { step, message, partial })
        }
        Err(e) => Err(e),
    }
}

fn read_unseen(path: &Path, q: usize) -> Result<(Vec<u32>, Vec<UnseenQuery>)> {
    let (_, rows) = read_numeric_csv(open(path)?)?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut queries = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.len() != q + 1 {
            return Err(Error::Argument(format!(
                "{} line {line}: expected content_id plus Q = {q} features, found {} features",
                path.display(),
                row.len().saturating_sub(1)
            )));
        }
        ids.push(parse_id(&row[0], line)?);
        queries.push(UnseenQuery { features: parse_floats(&row[1..], line)? });
    }
    Ok((ids, queries))
}

pub fn cmd_predict(cfg: &ExperimentConfig, checkpoint: Option<&Path>, unseen: Option<&Path>) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let chain_path = checkpoint.map_or_else(|| cfg.out_dir.join(CHAIN_FILE), Path::to_path_buf);
    let chain = SampleChain::read_csv(open(&chain_path)?)?;
    if chain.num_contents() != inputs.catalog.len() {
        return Err(Error::Argument(format!(
            "checkpoint has {} contents, catalog has {}",
            chain.num_contents(),
            inputs.catalog.len()
        )));
    }
    let unseen_rows = unseen.map(|p| read_unseen(p, inputs.catalog.dim())).transpose()?;
    let tag = vec![cfg.provenance()];
    let n = cfg.train_periods();
    let forecast = predict_seen(&chain)?.at_horizon(n);
    write_file(&cfg.out_dir.join(FORECAST_FILE), |w| {
        forecast.write_csv(w, inputs.catalog.ids(), Some(&inputs.holdout), &tag)
    })?;
    eprintln!("holdout rmse {:.4}", rmse(&forecast.predicted, &inputs.holdout)?);
    if let Some((ids, queries)) = unseen_rows {
        let mut predicted = Vec::with_capacity(queries.len());
        for q in &queries {
            predicted.extend(predict_unseen(&chain, q, &inputs.catalog)?.predicted);
        }
        let f = PopularityForecast::new(predicted).at_horizon(n);
        write_file(&cfg.out_dir.join(UNSEEN_FORECAST_FILE), |w| f.write_csv(w, &ids, None, &tag))?;
    }
    Ok(())
}

/// Reads the `predicted` column of a forecast CSV in catalog order.
pub fn read_forecast(path: &Path, content_ids: &[u32]) -> Result<Vec<f64>> {
    let (_, rows) = read_numeric_csv(open(path)?)?;
    let mut by_id = std::collections::HashMap::new();
    for (line, row) in rows {
        if row.len() < 2 {
            return Err(Error::Parse { line, message: "expected content_id,predicted".into() });
        }
        let v = parse_floats(&row[1..2], line)?[0];
        by_id.insert(parse_id(&row[0], line)?, v);
    }
    content_ids
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| Error::Argument(format!("forecast has no row for content {id}"))))
        .collect()
}

pub fn cmd_cache_sweep(cfg: &ExperimentConfig, forecasts: Option<&Path>, sizes: &[f64], plot: bool) -> Result<()> {
    let sizes = if sizes.is_empty() { default_sizes() } else { sizes.to_vec() };
    if let Some(bad) = sizes.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Argument(format!("relative cache size {bad} outside (0, 1]")));
    }
    let inputs = load_inputs(cfg)?;
    let ids = inputs.catalog.ids().to_vec();
    let start = cfg.train_periods();
    let mut policies = Vec::new();
    match forecasts {
        Some(p) => policies.push(PolicySpec::Prefill {
            name: "prediction".into(),
            forecasts: PeriodForecasts::single(start, read_forecast(p, &ids)?),
        }),
        None => eprintln!("warning: no forecasts given, skipping the prediction policy"),
    }
    let ar = ar_baseline(&inputs.train, cfg.ar_order)?;
    policies.push(PolicySpec::Prefill { name: "AR".into(), forecasts: PeriodForecasts::single(start, ar.predicted) });
    policies.extend([
        PolicySpec::Lru,
        PolicySpec::Lfu,
        PolicySpec::Fifo,
        PolicySpec::Random { seed: cfg.seed, repeats: cfg.random_repeats },
    ]);
    let events = load_events(cfg)?;
    let trace = build_trace(&events, &ids, inputs.train.origin, cfg.period_length, start..start + cfg.trace_periods);
    let curve = sweep(&trace, &policies, &sizes, &ids)?;
    let tag = vec![cfg.provenance()];
    write_file(&cfg.out_dir.join(CURVE_FILE), |w| curve.write_csv(w, &tag))?;
    if plot {
        write_file(&cfg.out_dir.join(PLOT_FILE), |w| {
            w.write_all(render_svg(&curve).as_bytes())?;
            Ok(())
        })?;
    }
    eprintln!("replayed {} requests through {} policies at {} sizes", trace.len(), policies.len(), sizes.len());
    Ok(())
}

fn write_comm_rows<W: Write>(mut w: W, groups: &[(String, Vec<RoundLogRow>)], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "s,round,cumulative_bits,rmse")?;
    for (label, rows) in groups {
        for r in rows {
            let rmse = r.rmse_holdout.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{label},{},{},{rmse}", r.round, r.cumulative_bits)?;
        }
    }
    Ok(())
}

pub fn cmd_comm_bench(cfg: &ExperimentConfig, levels: &[u32]) -> Result<()> {
    if levels.contains(&0) {
        return Err(Error::Config("quantization levels must be at least 1".into()));
    }
    let inputs = load_inputs(cfg)?;
    let mut groups = Vec::new();
    let modes = std::iter::once(Mode::Native).chain(levels.iter().map(|&s| Mode::Quantized(s)));
    for mode in modes {
        let run = run_training(cfg, &inputs, TrainMode::FederatedNative, mode)?;
        let label = match mode {
            Mode::Native => "native".to_string(),
            Mode::Quantized(s) => s.to_string(),
        };
        eprintln!("{label}: {} bits", run.comm.cumulative_bits);
        groups.push((label, run.log));
    }
    let tag = vec![cfg.provenance()];
    write_file(&cfg.out_dir.join(COMM_FILE), |w| write_comm_rows(w, &groups, &tag))
}

impl ExperimentConfig {
    fn canonical_mode(&self) -> String {
        match self.mode {
            TrainMode::FederatedQuantized => format!("federated-quantized s={}", self.levels),
            TrainMode::FederatedNative => "federated-native".into(),
            TrainMode::Local => "local".into(),
        }
    }
}
