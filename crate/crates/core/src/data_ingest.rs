//! MovieLens-100K ingestion: rating events, item features, per-period request
//! counts and the split of events across simulated edge nodes.
//!
//! Ratings are read as request counts: an event with rating 4 contributes four
//! requests for its item in the period containing its timestamp.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::rng;

/// Genre columns of `u.item`, in file order.
pub const GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

/// One line of `u.data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

/// Parses tab-separated `user \t item \t rating \t timestamp` lines.
///
/// Blank lines are skipped. Any other malformed line is an error carrying its
/// 1-based line number.
pub fn parse_events<R: BufRead>(reader: R) -> Result<Vec<RawEvent>> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        events.push(parse_event_line(trimmed, lineno)?);
    }
    Ok(events)
}

fn parse_event_line(line: &str, lineno: usize) -> Result<RawEvent> {
    let bad = |message: String| Error::Parse { line: lineno, message };
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
    }
    let user_id: u32 = fields[0]
        .parse()
        .map_err(|_| bad(format!("bad user id {:?}", fields[0])))?;
    let item_id: u32 = fields[1]
        .parse()
        .map_err(|_| bad(format!("bad item id {:?}", fields[1])))?;
    let rating: u8 = fields[2]
        .parse()
        .map_err(|_| bad(format!("bad rating {:?}", fields[2])))?;
    let timestamp: i64 = fields[3]
        .parse()
        .map_err(|_| bad(format!("bad timestamp {:?}", fields[3])))?;
    if item_id < 1 {
        return Err(bad("item id must be >= 1".into()));
    }
    if !(1..=5).contains(&rating) {
        return Err(bad(format!("rating {rating} outside 1..=5")));
    }
    Ok(RawEvent { user_id, item_id, rating, timestamp })
}

/// How the 19 genre flags and the release date were folded into Q features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapping {
    /// Indices into [`GENRES`], most frequent first.
    pub genres: Vec<usize>,
    pub year_min: f64,
    pub year_max: f64,
    /// Normalized value used for items without a release date.
    pub year_fill: f64,
}

impl FeatureMapping {
    /// One-line description suitable for a CSV comment.
    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.genres.iter().map(|&g| GENRES[g]).collect();
        format!(
            "genres=[{}] year=minmax({},{}) year_fill={} bias=1.0",
            names.join(";"),
            self.year_min,
            self.year_max,
            self.year_fill
        )
    }
}

/// Content library: ids, Q-dimensional feature vectors and unit sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCatalog {
    ids: Vec<u32>,
    features: Vec<f64>,
    sizes: Vec<f64>,
    dim: usize,
    mapping: Option<FeatureMapping>,
}

impl ContentCatalog {
    /// Builds a catalog from explicit rows. All rows must share one dimension,
    /// ids must be unique and values finite.
    pub fn from_rows(ids: Vec<u32>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::arg("catalog ids and feature rows differ in length"));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(ids.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::arg(format!(
                    "feature dimension mismatch: expected {dim}, found {}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg("non-finite feature value"));
            }
            features.extend_from_slice(row);
        }
        let mut seen = HashMap::with_capacity(ids.len());
        for &id in &ids {
            if seen.insert(id, ()).is_some() {
                return Err(Error::arg(format!("duplicate content id {id}")));
            }
        }
        let sizes = vec![1.0; ids.len()];
        Ok(Self { ids, features, sizes, dim, mapping: None })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Feature dimension Q.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn feature(&self, f: usize) -> &[f64] {
        &self.features[f * self.dim..(f + 1) * self.dim]
    }

    pub fn size(&self, f: usize) -> f64 {
        self.sizes[f]
    }

    pub fn mapping(&self) -> Option<&FeatureMapping> {
        self.mapping.as_ref()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Sub-catalog with the given ids, in the given order.
    pub fn select(&self, ids: &[u32]) -> Result<Self> {
        let index: HashMap<u32, usize> =
            self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let &f = index
                .get(id)
                .ok_or_else(|| Error::arg(format!("content {id} not in catalog")))?;
            rows.push(self.feature(f).to_vec());
        }
        let mut out = Self::from_rows(ids.to_vec(), rows)?;
        out.dim = self.dim;
        out.mapping = self.mapping.clone();
        Ok(out)
    }

    /// `content_id,feat_0..feat_{Q-1}` with optional leading `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        if let Some(m) = &self.mapping {
            writeln!(w, "# feature_map: {}", m.describe())?;
        }
        write!(w, "content_id")?;
        for q in 0..self.dim {
            write!(w, ",feat_{q}")?;
        }
        writeln!(w)?;
        for (f, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.feature(f) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (_, rows) = read_numeric_csv(r)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut feats = Vec::with_capacity(rows.len());
        for (line, row) in rows {
            let id = parse_id(&row[0], line)?;
            ids.push(id);
            feats.push(parse_floats(&row[1..], line)?);
        }
        Self::from_rows(ids, feats)
    }
}

/// Parses a pipe-separated `u.item` stream (latin-1) into a catalog with
/// `target_dim` features per content.
///
/// The features are the `target_dim - 2` most frequent genre flags in the
/// file, the min-max normalized release year and a constant 1.0.
pub fn parse_items<R: Read>(mut reader: R, target_dim: usize) -> Result<ContentCatalog> {
    if target_dim < 2 || target_dim - 2 > GENRES.len() {
        return Err(Error::arg(format!(
            "feature dimension must be in 2..={}, got {target_dim}",
            GENRES.len() + 2
        )));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    // latin-1 maps each byte to the code point of the same value
    let text: String = bytes.iter().map(|&b| b as char).collect();

    struct Item {
        id: u32,
        flags: [bool; 19],
        year: Option<f64>,
    }
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 5 + GENRES.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "expected {} genre flags after 5 leading fields, found {} fields",
                    GENRES.len(),
                    fields.len()
                ),
            });
        }
        let id: u32 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad item id {:?}", fields[0]),
        })?;
        let flag_start = fields.len() - GENRES.len();
        let mut flags = [false; 19];
        for (g, raw) in fields[flag_start..].iter().enumerate() {
            flags[g] = match raw.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("genre flag {g} is {other:?}, expected 0 or 1"),
                    })
                }
            };
        }
        let year = parse_release_year(fields[2]);
        items.push(Item { id, flags, year });
    }

    let mut counts = [0usize; 19];
    for item in &items {
        for (g, &on) in item.flags.iter().enumerate() {
            counts[g] += usize::from(on);
        }
    }
    let mut order: Vec<usize> = (0..GENRES.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let genres: Vec<usize> = order.into_iter().take(target_dim - 2).collect();

    let known: Vec<f64> = items.iter().filter_map(|i| i.year).collect();
    let (year_min, year_max) = known
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    let normalize = |y: f64| {
        if year_max > year_min {
            (y - year_min) / (year_max - year_min)
        } else {
            0.0
        }
    };
    let year_fill = if known.is_empty() {
        0.0
    } else {
        known.iter().map(|&y| normalize(y)).sum::<f64>() / known.len() as f64
    };

    let mut ids = Vec::with_capacity(items.len());
    let mut rows = Vec::with_capacity(items.len());
    for item in &items {
        let mut row: Vec<f64> =
            genres.iter().map(|&g| if item.flags[g] { 1.0 } else { 0.0 }).collect();
        row.push(item.year.map_or(year_fill, normalize));
        row.push(1.0);
        ids.push(item.id);
        rows.push(row);
    }
    let mut catalog = ContentCatalog::from_rows(ids, rows)?;
    catalog.dim = target_dim;
    catalog.mapping = Some(FeatureMapping {
        genres,
        year_min: if known.is_empty() { 0.0 } else { year_min },
        year_max: if known.is_empty() { 0.0 } else { year_max },
        year_fill,
    });
    Ok(catalog)
}

fn parse_release_year(field: &str) -> Option<f64> {
    let field = field.trim();
    let tail = field.rsplit('-').next()?;
    tail.parse::<u32>().ok().map(f64::from)
}

/// Request counts r[f][n] for F contents over N periods.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestMatrix {
    content_ids: Vec<u32>,
    counts: Vec<f64>,
    num_periods: usize,
    /// Seconds per period.
    pub period_length: i64,
    /// Timestamp at which period 0 starts.
    pub origin: i64,
}

impl RequestMatrix {
    pub fn zeros(content_ids: Vec<u32>, num_periods: usize, period_length: i64, origin: i64) -> Self {
        let counts = vec![0.0; content_ids.len() * num_periods];
        Self { content_ids, counts, num_periods, period_length, origin }
    }

    /// Builds a matrix from row-major counts. Counts must be non-negative.
    pub fn from_counts(content_ids: Vec<u32>, num_periods: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != content_ids.len() * num_periods {
            return Err(Error::arg("count buffer does not match F x N"));
        }
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::arg("request counts must be finite and non-negative"));
        }
        Ok(Self { content_ids, counts, num_periods, period_length: 1, origin: 0 })
    }

    pub fn num_contents(&self) -> usize {
        self.content_ids.len()
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    pub fn content_ids(&self) -> &[u32] {
        &self.content_ids
    }

    pub fn get(&self, f: usize, n: usize) -> f64 {
        self.counts[f * self.num_periods + n]
    }

    pub fn add(&mut self, f: usize, n: usize, amount: f64) {
        self.counts[f * self.num_periods + n] += amount;
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.counts[f * self.num_periods..(f + 1) * self.num_periods]
    }

    /// Row-major F x N buffer.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Counts of one period across all contents.
    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.num_contents()).map(|f| self.get(f, n)).collect()
    }

    /// The first `n` periods.
    pub fn leading_periods(&self, n: usize) -> Self {
        let n = n.min(self.num_periods);
        let mut counts = Vec::with_capacity(self.num_contents() * n);
        for f in 0..self.num_contents() {
            counts.extend_from_slice(&self.row(f)[..n]);
        }
        Self {
            content_ids: self.content_ids.clone(),
            counts,
            num_periods: n,
            period_length: self.period_length,
            origin: self.origin,
        }
    }

    /// `content_id,period_0..period_{N-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "# period_length={} origin={}", self.period_length, self.origin)?;
        write!(w, "content_id")?;
        for n in 0..self.num_periods {
            write!(w, ",period_{n}")?;
        }
        writeln!(w)?;
        for (f, id) in self.content_ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.row(f) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (comments, rows) = read_numeric_csv(r)?;
        let mut ids = Vec::with_capacity(rows.len());
        let mut counts = Vec::new();
        let mut width = None;
        for (line, row) in rows {
            ids.push(parse_id(&row[0], line)?);
            let vals = parse_floats(&row[1..], line)?;
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(Error::Parse { line, message: "ragged request row".into() });
            }
            counts.extend(vals);
        }
        let mut m = Self::from_counts(ids, width.unwrap_or(0), counts)?;
        for c in comments {
            for kv in c.split_whitespace() {
                if let Some(v) = kv.strip_prefix("period_length=") {
                    m.period_length = v.parse().unwrap_or(m.period_length);
                } else if let Some(v) = kv.strip_prefix("origin=") {
                    m.origin = v.parse().unwrap_or(m.origin);
                }
            }
        }
        Ok(m)
    }
}

/// What happened to events during binning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinReport {
    pub binned: usize,
    /// Events before the origin or at/after period N.
    pub out_of_window: usize,
    /// Events for items not in the content list.
    pub unknown_content: usize,
}

/// Sums ratings per (content, period). Period 0 starts at the earliest event
/// timestamp.
pub fn bin_requests(
    events: &[RawEvent],
    content_ids: &[u32],
    period_length: i64,
    num_periods: usize,
) -> Result<(RequestMatrix, BinReport)> {
    let origin = events.iter().map(|e| e.timestamp).min().unwrap_or(0);
    bin_requests_from(events, content_ids, origin, period_length, num_periods)
}

/// As [`bin_requests`] with an explicit origin.
pub fn bin_requests_from(
    events: &[RawEvent],
    content_ids: &[u32],
    origin: i64,
    period_length: i64,
    num_periods: usize,
) -> Result<(RequestMatrix, BinReport)> {
    if period_length <= 0 {
        return Err(Error::arg("period length must be positive"));
    }
    let index: HashMap<u32, usize> =
        content_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut matrix = RequestMatrix::zeros(content_ids.to_vec(), num_periods, period_length, origin);
    let mut report = BinReport::default();
    for e in events {
        let Some(&f) = index.get(&e.item_id) else {
            report.unknown_content += 1;
            continue;
        };
        match period_of(e.timestamp, origin, period_length, num_periods) {
            Some(n) => {
                matrix.add(f, n, f64::from(e.rating));
                report.binned += 1;
            }
            None => report.out_of_window += 1,
        }
    }
    Ok((matrix, report))
}

/// Period index of a timestamp, or `None` outside `[origin, origin + N*len)`.
pub fn period_of(timestamp: i64, origin: i64, period_length: i64, num_periods: usize) -> Option<usize> {
    if timestamp < origin {
        return None;
    }
    let n = ((timestamp - origin) / period_length) as usize;
    (n < num_periods).then_some(n)
}

/// Item ids ordered by total request mass (sum of ratings), ties by id.
pub fn most_requested(events: &[RawEvent], k: usize) -> Vec<u32> {
    let mut mass: HashMap<u32, u64> = HashMap::new();
    for e in events {
        *mass.entry(e.item_id).or_default() += u64::from(e.rating);
    }
    let mut items: Vec<(u32, u64)> = mass.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    items.into_iter().take(k).map(|(id, _)| id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartitionStrategy {
    /// Each user is pinned to one node by a seeded hash of the user id.
    #[default]
    UserHash,
    /// Event i goes to node i mod M, in input order.
    RoundRobin,
}

impl std::str::FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user-hash" => Ok(Self::UserHash),
            "round-robin" => Ok(Self::RoundRobin),
            other => Err(Error::Config(format!("unknown partition strategy {other:?}"))),
        }
    }
}

/// Assignment of every event to one of M nodes (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    num_nodes: usize,
    assignments: Vec<usize>,
}

impl Partition {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn node_of(&self, event: usize) -> usize {
        self.assignments[event]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn node_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_nodes];
        for &m in &self.assignments {
            sizes[m] += 1;
        }
        sizes
    }

    /// Events owned by node `m`, in input order.
    pub fn local_events(&self, events: &[RawEvent], m: usize) -> Vec<RawEvent> {
        events
            .iter()
            .zip(&self.assignments)
            .filter(|(_, &node)| node == m)
            .map(|(e, _)| *e)
            .collect()
    }
}

pub fn partition(
    events: &[RawEvent],
    num_nodes: usize,
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<Partition> {
    if num_nodes < 1 {
        return Err(Error::arg("number of nodes must be at least 1"));
    }
    let m = num_nodes as u64;
    let assignments = match strategy {
        PartitionStrategy::UserHash => events
            .iter()
            .map(|e| (rng::hash_u64(seed, u64::from(e.user_id)) % m) as usize)
            .collect(),
        PartitionStrategy::RoundRobin => (0..events.len()).map(|i| i % num_nodes).collect(),
    };
    Ok(Partition { num_nodes, assignments })
}

/// Per-node request matrices over a shared content list and time window.
pub fn local_request_matrices(
    events: &[RawEvent],
    partition: &Partition,
    content_ids: &[u32],
    origin: i64,
    period_length: i64,
    num_periods: usize,
) -> Result<Vec<RequestMatrix>> {
    (0..partition.num_nodes())
        .map(|m| {
            let local = partition.local_events(events, m);
            bin_requests_from(&local, content_ids, origin, period_length, num_periods).map(|(mat, _)| mat)
        })
        .collect()
}

type CsvRows = (Vec<String>, Vec<(usize, Vec<String>)>);

/// Splits a simple numeric CSV into `#` comments and data rows (header
/// skipped). Rows keep their line numbers.
pub(crate) fn read_numeric_csv<R: BufRead>(r: R) -> Result<CsvRows> {
    let mut comments = Vec::new();
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        rows.push((idx + 1, line.split(',').map(|s| s.trim().to_string()).collect()));
    }
    Ok((comments, rows))
}

pub(crate) fn parse_id(s: &str, line: usize) -> Result<u32> {
    s.parse().map_err(|_| Error::Parse { line, message: format!("bad content id {s:?}") })
}

pub(crate) fn parse_floats(fields: &[String], line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("bad number {s:?}") }))
        .collect()
}
