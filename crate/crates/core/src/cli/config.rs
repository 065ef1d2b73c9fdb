use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data_ingest::{PartitionStrategy, GENRES};
use crate::error::{Error, Result};
use crate::experiment::DEFAULT_PERIOD_SECONDS;
use crate::federated::{Mode, Weighting};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Local,
    FederatedNative,
    FederatedQuantized,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(TrainMode::Local),
            "federated-native" => Ok(TrainMode::FederatedNative),
            "federated-quantized" => Ok(TrainMode::FederatedQuantized),
            other => Err(Error::Config(format!(
                "mode must be local, federated-native or federated-quantized, got {other:?}"
            ))),
        }
    }
}

impl TrainMode {
    fn as_str(self) -> &'static str {
        match self {
            TrainMode::Local => "local",
            TrainMode::FederatedNative => "federated-native",
            TrainMode::FederatedQuantized => "federated-quantized",
        }
    }
}

/// Every experiment knob. Loaded from a flat `key = value` file and then
/// overridden by `key=value` pairs from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// F.
    pub contents: usize,
    /// N ingested periods; the last one is held out from training.
    pub periods: usize,
    pub period_length: i64,
    /// Q.
    pub features: usize,
    /// M.
    pub nodes: usize,
    pub partition: PartitionStrategy,
    pub mode: TrainMode,
    /// Quantization level s.
    pub levels: u32,
    pub weighting: Weighting,
    pub participants: Option<usize>,
    pub total_steps: Option<usize>,
    pub inner_steps: Option<usize>,
    pub minibatch: Option<usize>,
    pub step_size: Option<f64>,
    pub friction: Option<f64>,
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub ar_order: usize,
    /// Periods replayed by `cache-sweep`, starting at the held-out one.
    pub trace_periods: usize,
    pub random_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: "data/ml-100k".into(),
            out_dir: "out".into(),
            contents: 200,
            periods: 81,
            period_length: DEFAULT_PERIOD_SECONDS,
            features: 10,
            nodes: 5,
            partition: PartitionStrategy::UserHash,
            mode: TrainMode::Local,
            levels: 4096,
            weighting: Weighting::Uniform,
            participants: None,
            total_steps: None,
            inner_steps: None,
            minibatch: None,
            step_size: None,
            friction: None,
            burn_in: None,
            seed: 0,
            prior_shape: 1.0,
            prior_rate: 1.0,
            ar_order: 3,
            trace_periods: 1,
            random_repeats: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data_dir" => self.data_dir = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "contents" => self.contents = parse(key, v)?,
            "periods" => self.periods = parse(key, v)?,
            "period_length" => self.period_length = parse(key, v)?,
            "features" => self.features = parse(key, v)?,
            "nodes" => self.nodes = parse(key, v)?,
            "partition" => self.partition = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "s" => self.levels = parse(key, v)?,
            "weighting" => {
                self.weighting = match v {
                    "uniform" => Weighting::Uniform,
                    "dataset-size" => Weighting::DatasetSize,
                    _ => return Err(Error::Config(format!("weighting must be uniform or dataset-size, got {v:?}"))),
                }
            }
            "participants" => self.participants = opt(key, v)?,
            "total_steps" => self.total_steps = opt(key, v)?,
            "inner_steps" => self.inner_steps = opt(key, v)?,
            "minibatch" => self.minibatch = opt(key, v)?,
            "step_size" => self.step_size = opt(key, v)?,
            "friction" => self.friction = opt(key, v)?,
            "burn_in" => self.burn_in = opt(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "prior_shape" => self.prior_shape = parse(key, v)?,
            "prior_rate" => self.prior_rate = parse(key, v)?,
            "ar_order" => self.ar_order = parse(key, v)?,
            "trace_periods" => self.trace_periods = parse(key, v)?,
            "random_repeats" => self.random_repeats = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training periods, `N − 1`.
    pub fn train_periods(&self) -> usize {
        self.periods.saturating_sub(1)
    }

    pub fn sampler(&self) -> SamplerConfig {
        let mut s = SamplerConfig::defaults_for(self.contents * self.train_periods());
        if let Some(l) = self.inner_steps {
            s.inner_steps = l;
        }
        if let Some(v) = self.total_steps {
            s.total_steps = v;
        }
        if let Some(v) = self.minibatch {
            s.minibatch = v;
        }
        if let Some(v) = self.step_size {
            s.step_size = v;
        }
        if let Some(v) = self.friction {
            s.friction = v;
        }
        s.burn_in = match self.burn_in {
            Some(v) => v,
            None if self.total_steps.is_some() || self.inner_steps.is_some() => s.default_burn_in(),
            None => s.burn_in,
        };
        s.seed = self.seed;
        s
    }

    pub fn federated_mode(&self) -> Mode {
        match self.mode {
            TrainMode::FederatedQuantized => Mode::Quantized(self.levels),
            _ => Mode::Native,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.contents < 1 {
            return bad("contents must be at least 1".into());
        }
        if self.periods < 2 {
            return bad(format!("periods must be at least 2 (one is held out), got {}", self.periods));
        }
        if self.period_length <= 0 {
            return bad(format!("period_length must be positive, got {}", self.period_length));
        }
        if self.features < 2 || self.features > GENRES.len() + 2 {
            return bad(format!("features must be in 2..={}, got {}", GENRES.len() + 2, self.features));
        }
        if self.nodes < 1 {
            return bad("nodes must be at least 1".into());
        }
        if self.levels < 1 {
            return bad("s must be at least 1".into());
        }
        if self.participants.is_some_and(|k| k < 1 || k > self.nodes) {
            return bad(format!("participants must be in [1, {}]", self.nodes));
        }
        if !(self.prior_shape > 0.0 && self.prior_rate > 0.0) {
            return bad("prior_shape and prior_rate must be positive".into());
        }
        if self.ar_order < 1 || self.ar_order >= self.train_periods() {
            return bad(format!("ar_order must be in [1, {})", self.train_periods()));
        }
        if self.trace_periods < 1 {
            return bad("trace_periods must be at least 1".into());
        }
        self.sampler().validate(self.contents * self.train_periods())
    }

    /// Canonical `key=value` listing, sorted by key.
    pub fn canonical(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("data_dir", self.data_dir.display().to_string());
        kv.insert("out_dir", self.out_dir.display().to_string());
        kv.insert("contents", self.contents.to_string());
        kv.insert("periods", self.periods.to_string());
        kv.insert("period_length", self.period_length.to_string());
        kv.insert("features", self.features.to_string());
        kv.insert("nodes", self.nodes.to_string());
        kv.insert(
            "partition",
            match self.partition {
                PartitionStrategy::UserHash => "user-hash",
                PartitionStrategy::RoundRobin => "round-robin",
            }
            .into(),
        );
        kv.insert("mode", self.mode.as_str().into());
        kv.insert("s", self.levels.to_string());
        kv.insert(
            "weighting",
            match self.weighting {
                Weighting::Uniform => "uniform",
                Weighting::DatasetSize => "dataset-size",
            }
            .into(),
        );
        kv.insert("participants", show(&self.participants));
        kv.insert("total_steps", show(&self.total_steps));
        kv.insert("inner_steps", show(&self.inner_steps));
        kv.insert("minibatch", show(&self.minibatch));
        kv.insert("step_size", show(&self.step_size));
        kv.insert("friction", show(&self.friction));
        kv.insert("burn_in", show(&self.burn_in));
        kv.insert("seed", self.seed.to_string());
        kv.insert("prior_shape", self.prior_shape.to_string());
        kv.insert("prior_rate", self.prior_rate.to_string());
        kv.insert("ar_order", self.ar_order.to_string());
        kv.insert("trace_periods", self.trace_periods.to_string());
        kv.insert("random_repeats", self.random_repeats.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// The comment line carried by every CSV artifact.
    pub fn provenance(&self) -> String {
        format!("config_sha256={} seed={}", self.hash(), self.seed)
    }
}
