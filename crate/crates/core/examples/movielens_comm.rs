//! Bits on the wire against forecast error for five edge nodes on
//! MovieLens, with float messages and at several quantization levels.
//!
//! ```text
//! cargo run --release --example movielens_comm -- data/ml-100k
//! ```

use std::path::PathBuf;

use fedpop::data_ingest::PartitionStrategy;
use fedpop::experiment::{comm_bench, model, Dataset, Workload, DEFAULT_PERIOD_SECONDS};
use fedpop::sampler::SamplerConfig;

fn main() -> fedpop::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data/ml-100k".into());
    let data = Dataset::load(&dir, 10)?;
    let workload = Workload::top_requested(&data, 200, DEFAULT_PERIOD_SECONDS)?;
    let gp = model(&workload.catalog, 1.0, 1.0)?;
    let n = 80;
    let mut sampler = SamplerConfig::defaults_for(200 * n);
    sampler.total_steps = 2_000;
    sampler.burn_in = 40;

    let rows = comm_bench(&workload, &gp, n, 5, &sampler, &[16, 256, 4096], PartitionStrategy::UserHash)?;
    let native = rows[0].2.last().map_or(1, |r| r.cumulative_bits);
    println!("{:<8} {:>14} {:>10} {:>8}", "mode", "bits", "vs native", "rmse");
    for (label, _, log) in &rows {
        let Some(last) = log.last() else { continue };
        println!(
            "{label:<8} {:>14} {:>9.1}% {:>8.4}",
            last.cumulative_bits,
            100.0 * last.cumulative_bits as f64 / native as f64,
            last.rmse_holdout.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
