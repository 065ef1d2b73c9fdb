//! Edge-cache replay: hit rate of caching policies over a request trace.
//!
//! Contents have unit size, so capacity counts items. Classic policies
//! update on every request; prefill policies load the top-`capacity`
//! forecast contents at each period start and stay fixed within the period.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::Write;

use rand::Rng;

use crate::data_ingest::{period_of, RawEvent};
use crate::error::{Error, Result};
use crate::rng::{self, Stream, StreamRng};

/// One request: content index (into the catalog) and period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub period: usize,
    pub content: usize,
}

/// Time-ordered requests. Each event is one request; events for unknown
/// contents or outside the window are dropped.
pub fn build_trace(
    events: &[RawEvent],
    content_ids: &[u32],
    origin: i64,
    period_length: i64,
    periods: std::ops::Range<usize>,
) -> Vec<Request> {
    let index: HashMap<u32, usize> = content_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut sorted: Vec<&RawEvent> = events.iter().collect();
    sorted.sort_by_key(|e| (e.timestamp, e.user_id, e.item_id));
    sorted
        .into_iter()
        .filter_map(|e| {
            let content = *index.get(&e.item_id)?;
            let period = period_of(e.timestamp, origin, period_length, periods.end)?;
            (period >= periods.start).then_some(Request { period, content })
        })
        .collect()
}

pub trait CachePolicy {
    fn name(&self) -> String;
    /// Called at each new period before its first request.
    fn begin_period(&mut self, _period: usize) {}
    /// Serves one request; returns whether it hit.
    fn request(&mut self, content: usize) -> bool;
    fn resident(&self) -> Vec<usize>;
    fn capacity(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct Lru {
    capacity: usize,
    tick: u64,
    last_use: HashMap<usize, u64>,
    order: BTreeMap<u64, usize>,
}

impl Lru {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, tick: 0, last_use: HashMap::new(), order: BTreeMap::new() }
    }
}

impl CachePolicy for Lru {
    fn name(&self) -> String {
        "LRU".into()
    }

    fn request(&mut self, content: usize) -> bool {
        self.tick += 1;
        if let Some(old) = self.last_use.insert(content, self.tick) {
            self.order.remove(&old);
            self.order.insert(self.tick, content);
            return true;
        }
        self.last_use.remove(&content);
        if self.capacity == 0 {
            return false;
        }
        if self.last_use.len() == self.capacity {
            let (_, victim) = self.order.pop_first().expect("full cache is non-empty");
            self.last_use.remove(&victim);
        }
        self.last_use.insert(content, self.tick);
        self.order.insert(self.tick, content);
        false
    }

    fn resident(&self) -> Vec<usize> {
        self.order.values().copied().collect()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Least frequently used; counts persist across evictions and ties evict
/// the least recently used.
#[derive(Debug, Clone)]
pub struct Lfu {
    capacity: usize,
    tick: u64,
    counts: HashMap<usize, u64>,
    keys: HashMap<usize, (u64, u64)>,
    order: BTreeSet<(u64, u64, usize)>,
}

impl Lfu {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, tick: 0, counts: HashMap::new(), keys: HashMap::new(), order: BTreeSet::new() }
    }
}

impl CachePolicy for Lfu {
    fn name(&self) -> String {
        "LFU".into()
    }

    fn request(&mut self, content: usize) -> bool {
        self.tick += 1;
        let count = {
            let c = self.counts.entry(content).or_insert(0);
            *c += 1;
            *c
        };
        let key = (count, self.tick);
        if let Some(old) = self.keys.insert(content, key) {
            self.order.remove(&(old.0, old.1, content));
            self.order.insert((key.0, key.1, content));
            return true;
        }
        self.keys.remove(&content);
        if self.capacity == 0 {
            return false;
        }
        if self.keys.len() == self.capacity {
            let (_, _, victim) = self.order.pop_first().expect("full cache is non-empty");
            self.keys.remove(&victim);
        }
        self.keys.insert(content, key);
        self.order.insert((key.0, key.1, content));
        false
    }

    fn resident(&self) -> Vec<usize> {
        self.order.iter().map(|k| k.2).collect()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

#[derive(Debug, Clone)]
pub struct Fifo {
    capacity: usize,
    queue: VecDeque<usize>,
}

impl Fifo {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, queue: VecDeque::new() }
    }
}

impl CachePolicy for Fifo {
    fn name(&self) -> String {
        "FIFO".into()
    }

    fn request(&mut self, content: usize) -> bool {
        if self.queue.contains(&content) {
            return true;
        }
        if self.capacity == 0 {
            return false;
        }
        if self.queue.len() == self.capacity {
            self.queue.pop_front();
        }
        self.queue.push_back(content);
        false
    }

    fn resident(&self) -> Vec<usize> {
        self.queue.iter().copied().collect()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Random replacement.
#[derive(Debug, Clone)]
pub struct RandomEviction {
    capacity: usize,
    slots: Vec<usize>,
    rng: StreamRng,
}

impl RandomEviction {
    pub fn new(capacity: usize, seed: u64, repeat: u64) -> Self {
        Self { capacity, slots: Vec::new(), rng: rng::stream(seed, Stream::Cache, repeat) }
    }
}

impl CachePolicy for RandomEviction {
    fn name(&self) -> String {
        "RC".into()
    }

    fn request(&mut self, content: usize) -> bool {
        if self.slots.contains(&content) {
            return true;
        }
        if self.capacity == 0 {
            return false;
        }
        if self.slots.len() == self.capacity {
            let i = self.rng.random_range(0..self.slots.len());
            self.slots[i] = content;
        } else {
            self.slots.push(content);
        }
        false
    }

    fn resident(&self) -> Vec<usize> {
        self.slots.clone()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Forecasts keyed by the period they are used for. A period without its
/// own forecast reuses the latest earlier one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeriodForecasts {
    pub by_period: BTreeMap<usize, Vec<f64>>,
}

impl PeriodForecasts {
    pub fn single(period: usize, forecast: Vec<f64>) -> Self {
        Self { by_period: BTreeMap::from([(period, forecast)]) }
    }

    pub fn insert(&mut self, period: usize, forecast: Vec<f64>) {
        self.by_period.insert(period, forecast);
    }

    pub fn for_period(&self, period: usize) -> Option<&[f64]> {
        self.by_period.range(..=period).next_back().map(|(_, v)| v.as_slice())
    }
}

/// Indices of the `k` largest forecasts, ties by ascending content id.
pub fn top_k(forecast: &[f64], content_ids: &[u32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..forecast.len()).collect();
    order.sort_by(|&a, &b| forecast[b].total_cmp(&forecast[a]).then(content_ids[a].cmp(&content_ids[b])));
    order.truncate(k);
    order
}

/// Static per-period cache filled from forecasts.
#[derive(Debug, Clone)]
pub struct Prefill {
    name: String,
    capacity: usize,
    forecasts: PeriodForecasts,
    content_ids: Vec<u32>,
    resident: Vec<bool>,
}

impl Prefill {
    pub fn new(name: impl Into<String>, capacity: usize, forecasts: PeriodForecasts, content_ids: Vec<u32>) -> Self {
        let resident = vec![false; content_ids.len()];
        Self { name: name.into(), capacity, forecasts, content_ids, resident }
    }
}

impl CachePolicy for Prefill {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn begin_period(&mut self, period: usize) {
        self.resident.iter_mut().for_each(|r| *r = false);
        if let Some(f) = self.forecasts.for_period(period) {
            for i in top_k(f, &self.content_ids, self.capacity) {
                self.resident[i] = true;
            }
        }
    }

    fn request(&mut self, content: usize) -> bool {
        self.resident.get(content).copied().unwrap_or(false)
    }

    fn resident(&self) -> Vec<usize> {
        (0..self.resident.len()).filter(|&i| self.resident[i]).collect()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayStats {
    pub hits: u64,
    pub total: u64,
}

impl ReplayStats {
    pub fn misses(&self) -> u64 {
        self.total - self.hits
    }

    pub fn hit_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Replays `trace` in order through `policy`.
pub fn replay(trace: &[Request], policy: &mut dyn CachePolicy) -> ReplayStats {
    let mut stats = ReplayStats::default();
    let mut current = None;
    for r in trace {
        if current != Some(r.period) {
            policy.begin_period(r.period);
            current = Some(r.period);
        }
        stats.total += 1;
        if policy.request(r.content) {
            stats.hits += 1;
        }
    }
    stats
}

/// Policies a sweep can build at any capacity.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Lru,
    Lfu,
    Fifo,
    /// Random replacement averaged over `repeats` seeded runs.
    Random { seed: u64, repeats: usize },
    Prefill { name: String, forecasts: PeriodForecasts },
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Lru => "LRU".into(),
            PolicySpec::Lfu => "LFU".into(),
            PolicySpec::Fifo => "FIFO".into(),
            PolicySpec::Random { .. } => "RC".into(),
            PolicySpec::Prefill { name, .. } => name.clone(),
        }
    }

    fn runs(&self) -> usize {
        match self {
            PolicySpec::Random { repeats, .. } => (*repeats).max(1),
            _ => 1,
        }
    }

    pub fn build(&self, capacity: usize, repeat: usize, content_ids: &[u32]) -> Box<dyn CachePolicy> {
        match self {
            PolicySpec::Lru => Box::new(Lru::new(capacity)),
            PolicySpec::Lfu => Box::new(Lfu::new(capacity)),
            PolicySpec::Fifo => Box::new(Fifo::new(capacity)),
            PolicySpec::Random { seed, .. } => Box::new(RandomEviction::new(capacity, *seed, repeat as u64)),
            PolicySpec::Prefill { name, forecasts } => {
                Box::new(Prefill::new(name.clone(), capacity, forecasts.clone(), content_ids.to_vec()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub policy: String,
    pub relative_size: f64,
    pub hit_rate: f64,
    /// Summed over repeats for randomized policies.
    pub hits: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HitRateCurve {
    pub points: Vec<CurvePoint>,
}

impl HitRateCurve {
    pub fn get(&self, policy: &str, relative_size: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.policy == policy && (p.relative_size - relative_size).abs() < 1e-12)
    }

    pub fn policies(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.points {
            if !names.contains(&p.policy) {
                names.push(p.policy.clone());
            }
        }
        names
    }

    /// `policy,relative_size,hit_rate,hits,total`.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "policy,relative_size,hit_rate,hits,total")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", p.policy, p.relative_size, p.hit_rate, p.hits, p.total)?;
        }
        Ok(())
    }
}

/// `round(relative_size · F)`.
pub fn capacity_for(relative_size: f64, num_contents: usize) -> usize {
    (relative_size * num_contents as f64).round() as usize
}

/// One replay per (policy, size), capacity `round(size·F)`.
pub fn sweep(
    trace: &[Request],
    policies: &[PolicySpec],
    relative_sizes: &[f64],
    content_ids: &[u32],
) -> Result<HitRateCurve> {
    if let Some(bad) = relative_sizes.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::arg(format!("relative cache size {bad} outside (0, 1]")));
    }
    let f = content_ids.len();
    let mut curve = HitRateCurve::default();
    for spec in policies {
        for &rel in relative_sizes {
            let cap = capacity_for(rel, f);
            let mut hits = 0;
            let mut total = 0;
            for repeat in 0..spec.runs() {
                let mut policy = spec.build(cap, repeat, content_ids);
                let s = replay(trace, policy.as_mut());
                hits += s.hits;
                total += s.total;
            }
            let hit_rate = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
            curve.points.push(CurvePoint { policy: spec.name(), relative_size: rel, hit_rate, hits, total });
        }
    }
    Ok(curve)
}
