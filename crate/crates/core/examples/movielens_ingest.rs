//! Loads MovieLens 100K, builds the feature catalog, bins the most requested
//! movies into twelve-hour periods and splits users across edge nodes.
//!
//! ```text
//! cargo run --release --example movielens_ingest -- data/ml-100k
//! ```

use std::path::PathBuf;

use fedpop::data_ingest::{bin_requests, most_requested, partition, PartitionStrategy};
use fedpop::experiment::{Dataset, DEFAULT_PERIOD_SECONDS};

fn main() -> fedpop::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data/ml-100k".into());
    let data = Dataset::load(&dir, 10)?;
    println!("{} events, {} items", data.events.len(), data.catalog.len());
    if let Some(m) = data.catalog.mapping() {
        println!("features: {}", m.describe());
    }

    let ids = most_requested(&data.events, 200);
    let (matrix, report) = bin_requests(&data.events, &ids, DEFAULT_PERIOD_SECONDS, 90)?;
    println!("top {} items over {} periods: {report:?}", ids.len(), matrix.num_periods());
    let per_period: Vec<f64> = (0..matrix.num_periods()).map(|n| matrix.column(n).iter().sum()).collect();
    let busiest = per_period.iter().cloned().fold(0.0, f64::max);
    println!("requests per period: mean {:.0}, max {busiest}", matrix.total() / per_period.len() as f64);

    let p = partition(&data.events, 5, PartitionStrategy::UserHash, 0)?;
    println!("events per node (user hash): {:?}", p.node_sizes());
    let p = partition(&data.events, 5, PartitionStrategy::RoundRobin, 0)?;
    println!("events per node (round robin): {:?}", p.node_sizes());
    Ok(())
}
