//! Cache hit rates on MovieLens: the model's rolling forecasts and the AR
//! baseline prefill the cache each period, against LRU, LFU, FIFO and random
//! replacement.
//!
//! ```text
//! cargo run --release --example movielens_cache -- data/ml-100k
//! ```

use std::path::PathBuf;

use fedpop::experiment::{cache_curves, model, rolling_forecasts, CacheExperiment, Dataset, Workload, DEFAULT_PERIOD_SECONDS};
use fedpop::sampler::SamplerConfig;

fn main() -> fedpop::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data/ml-100k".into());
    let data = Dataset::load(&dir, 10)?;
    let workload = Workload::top_requested(&data, 200, DEFAULT_PERIOD_SECONDS)?;
    let gp = model(&workload.catalog, 1.0, 1.0)?;

    let initial = SamplerConfig::defaults_for(200 * 80);
    let mut refresh = initial.clone();
    refresh.total_steps = 1_000;
    refresh.burn_in = 20;
    let exp = CacheExperiment {
        train_periods: 80,
        test_periods: 10,
        initial,
        refresh,
        ar_order: 3,
        random_repeats: 20,
        relative_sizes: vec![0.05, 0.1, 0.2, 0.3, 0.5],
    };
    let forecasts = rolling_forecasts(&workload, &gp, &exp)?;
    let curve = cache_curves(&workload, &forecasts, &exp, 0)?;

    print!("{:<11}", "policy");
    for s in &exp.relative_sizes {
        print!("{:>8}", format!("{:.0}%", s * 100.0));
    }
    println!();
    for name in curve.policies() {
        print!("{name:<11}");
        for &s in &exp.relative_sizes {
            print!("{:>8.3}", curve.get(&name, s).map_or(f64::NAN, |p| p.hit_rate));
        }
        println!();
    }
    Ok(())
}
