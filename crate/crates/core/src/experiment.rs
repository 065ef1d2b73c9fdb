//! MovieLens-style experiment pipelines shared by the command-line tool,
//! the examples and the end-to-end tests.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::cache_sim::{build_trace, sweep, HitRateCurve, PeriodForecasts, PolicySpec, Request};
use crate::data_ingest::{
    bin_requests_from, local_request_matrices, most_requested, parse_events, parse_items, partition, ContentCatalog,
    PartitionStrategy, RawEvent, RequestMatrix,
};
use crate::error::{Error, Result};
use crate::federated::{build_nodes, run_federated, FederatedConfig, FederatedRun, Mode, RoundLogRow};
use crate::gp_model::{GpPrior, HyperPriors, PoissonData};
use crate::predictor::{ar_baseline, predict_seen, rmse};
use crate::sampler::{run_sampler_from, GradientMode, SampleChain, SamplerConfig, SamplerState};

/// Twelve hours.
pub const DEFAULT_PERIOD_SECONDS: i64 = 12 * 3600;

/// Raw rating events plus the full item catalog.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub events: Vec<RawEvent>,
    pub catalog: ContentCatalog,
}

impl Dataset {
    /// Reads `u.data` and `u.item` from `dir`.
    pub fn load(dir: &Path, feature_dim: usize) -> Result<Self> {
        let events = parse_events(BufReader::new(File::open(dir.join("u.data"))?))?;
        let catalog = parse_items(File::open(dir.join("u.item"))?, feature_dim)?;
        Ok(Self { events, catalog })
    }
}

/// The experiment view: the `F` most requested items, binned on a fixed grid
/// that starts at the earliest event.
#[derive(Debug, Clone)]
pub struct Workload {
    pub catalog: ContentCatalog,
    pub events: Vec<RawEvent>,
    pub origin: i64,
    pub period_length: i64,
}

impl Workload {
    pub fn top_requested(data: &Dataset, num_contents: usize, period_length: i64) -> Result<Self> {
        if period_length <= 0 {
            return Err(Error::arg("period length must be positive"));
        }
        let ids = most_requested(&data.events, num_contents);
        if ids.len() < num_contents {
            return Err(Error::arg(format!("only {} requested items, asked for {num_contents}", ids.len())));
        }
        let catalog = data.catalog.select(&ids)?;
        let origin = data.events.iter().map(|e| e.timestamp).min().unwrap_or(0);
        let keep: std::collections::HashSet<u32> = ids.iter().copied().collect();
        let events = data.events.iter().filter(|e| keep.contains(&e.item_id)).copied().collect();
        Ok(Self { catalog, events, origin, period_length })
    }

    pub fn content_ids(&self) -> &[u32] {
        self.catalog.ids()
    }

    /// Counts for periods `0..n`.
    pub fn matrix(&self, n: usize) -> Result<RequestMatrix> {
        bin_requests_from(&self.events, self.content_ids(), self.origin, self.period_length, n).map(|(m, _)| m)
    }

    /// Training counts for `0..n` and the observed counts of period `n`.
    pub fn train_and_actual(&self, n: usize) -> Result<(RequestMatrix, Vec<f64>)> {
        let full = self.matrix(n + 1)?;
        Ok((full.leading_periods(n), full.column(n)))
    }

    /// Per-node matrices over periods `0..n`.
    pub fn node_matrices(&self, n: usize, nodes: usize, strategy: PartitionStrategy, seed: u64) -> Result<Vec<RequestMatrix>> {
        let p = partition(&self.events, nodes, strategy, seed)?;
        local_request_matrices(&self.events, &p, self.content_ids(), self.origin, self.period_length, n)
    }

    pub fn trace(&self, periods: std::ops::Range<usize>) -> Vec<Request> {
        build_trace(&self.events, self.content_ids(), self.origin, self.period_length, periods)
    }
}

/// Gamma(A, B) priors shared by every hyperparameter.
pub fn model(catalog: &ContentCatalog, shape: f64, rate: f64) -> Result<GpPrior> {
    GpPrior::new(catalog.clone(), HyperPriors::uniform(catalog.dim(), shape, rate)?)
}

/// Chain trained on periods `0..n` and its RMSE against period `n`.
pub fn rmse_at(
    workload: &Workload,
    gp: &GpPrior,
    n: usize,
    config: &SamplerConfig,
    mode: GradientMode,
) -> Result<(f64, SampleChain)> {
    let (train, actual) = workload.train_and_actual(n)?;
    let data = PoissonData::new(&train);
    let chain = run_sampler_from(gp, &data, config, SamplerState::initial(gp, &data), mode)?;
    let forecast = predict_seen(&chain)?;
    Ok((rmse(&forecast.predicted, &actual)?, chain))
}

/// Federated run on `M` user-hash partitions of periods `0..n`, scored
/// against period `n`.
pub fn federated_at(
    workload: &Workload,
    gp: &GpPrior,
    n: usize,
    nodes: usize,
    config: &FederatedConfig,
    strategy: PartitionStrategy,
) -> Result<FederatedRun> {
    let (_, actual) = workload.train_and_actual(n)?;
    let locals = workload.node_matrices(n, nodes, strategy, config.sampler.seed)?;
    let mut fap = build_nodes(&locals, config.sampler.seed)?;
    run_federated(gp, &mut fap, config, Some(&actual))
}

/// One comm-bench group: label, level (`None` for native) and round log.
pub type BenchGroup = (String, Option<u32>, Vec<RoundLogRow>);

/// Quantized-vs-native comparison rows `(label, s, round, cumulative_bits,
/// rmse)`, one group per level plus the native run.
pub fn comm_bench(
    workload: &Workload,
    gp: &GpPrior,
    n: usize,
    nodes: usize,
    sampler: &SamplerConfig,
    levels: &[u32],
    strategy: PartitionStrategy,
) -> Result<Vec<BenchGroup>> {
    let mut out = Vec::new();
    let modes = std::iter::once(Mode::Native).chain(levels.iter().map(|&s| Mode::Quantized(s)));
    for mode in modes {
        let cfg = FederatedConfig::new(sampler.clone(), mode);
        let run = federated_at(workload, gp, n, nodes, &cfg, strategy)?;
        let (label, s) = match mode {
            Mode::Native => ("native".to_string(), None),
            Mode::Quantized(s) => (format!("s={s}"), Some(s)),
        };
        out.push((label, s, run.log));
    }
    Ok(out)
}

/// Settings for the rolling cache experiment.
#[derive(Debug, Clone)]
pub struct CacheExperiment {
    /// Periods used for the first training run.
    pub train_periods: usize,
    /// Held-out periods replayed through the caches.
    pub test_periods: usize,
    pub initial: SamplerConfig,
    /// Warm-started retraining at each later period boundary.
    pub refresh: SamplerConfig,
    pub ar_order: usize,
    pub random_repeats: usize,
    pub relative_sizes: Vec<f64>,
}

/// Forecasts for each held-out period from data strictly before it.
#[derive(Debug, Clone)]
pub struct RollingForecasts {
    pub model: PeriodForecasts,
    pub ar: PeriodForecasts,
}

pub fn rolling_forecasts(workload: &Workload, gp: &GpPrior, exp: &CacheExperiment) -> Result<RollingForecasts> {
    let mut model = PeriodForecasts::default();
    let mut ar = PeriodForecasts::default();
    let mut state: Option<SamplerState> = None;
    for p in exp.train_periods..exp.train_periods + exp.test_periods {
        let train = workload.matrix(p)?;
        let data = PoissonData::new(&train);
        let (cfg, init) = match state.take() {
            None => (&exp.initial, SamplerState::initial(gp, &data)),
            Some(s) => (&exp.refresh, s),
        };
        let mut cfg = cfg.clone();
        cfg.seed = cfg.seed.wrapping_add(p as u64);
        let chain = run_sampler_from(gp, &data, &cfg, init, GradientMode::Svrg)?;
        model.insert(p, predict_seen(&chain)?.predicted);
        state = chain.final_state.clone();
        ar.insert(p, ar_baseline(&train, exp.ar_order)?.predicted);
    }
    Ok(RollingForecasts { model, ar })
}

/// Hit-rate curves of the prediction and AR prefill policies and the classic
/// policies over the held-out trace.
pub fn cache_curves(workload: &Workload, forecasts: &RollingForecasts, exp: &CacheExperiment, seed: u64) -> Result<HitRateCurve> {
    let start = exp.train_periods;
    let trace = workload.trace(start..start + exp.test_periods);
    let policies = vec![
        PolicySpec::Prefill { name: "prediction".into(), forecasts: forecasts.model.clone() },
        PolicySpec::Prefill { name: "AR".into(), forecasts: forecasts.ar.clone() },
        PolicySpec::Lru,
        PolicySpec::Lfu,
        PolicySpec::Fifo,
        PolicySpec::Random { seed, repeats: exp.random_repeats },
    ];
    sweep(&trace, &policies, &exp.relative_sizes, workload.content_ids())
}
