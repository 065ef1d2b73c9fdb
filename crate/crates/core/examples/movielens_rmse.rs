//! RMSE of SVRG-HMC and the full-gradient HMC reference on MovieLens as the
//! number of training periods grows.
//!
//! ```text
//! cargo run --release --example movielens_rmse -- data/ml-100k
//! ```

use std::path::PathBuf;
use std::time::Instant;

use fedpop::experiment::{model, rmse_at, Dataset, Workload, DEFAULT_PERIOD_SECONDS};
use fedpop::sampler::{GradientMode, SamplerConfig};

fn main() -> fedpop::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data/ml-100k".into());
    let data = Dataset::load(&dir, 10)?;
    let workload = Workload::top_requested(&data, 200, DEFAULT_PERIOD_SECONDS)?;
    let gp = model(&workload.catalog, 1.0, 1.0)?;

    for n in [20, 40, 80] {
        let mut cfg = SamplerConfig::defaults_for(200 * n);
        cfg.seed = 7;
        let t = Instant::now();
        let (svrg, _) = rmse_at(&workload, &gp, n, &cfg, GradientMode::Svrg)?;
        let svrg_time = t.elapsed();
        let t = Instant::now();
        let (hmc, _) = rmse_at(&workload, &gp, n, &cfg, GradientMode::FullHmc)?;
        println!(
            "N={n:>3}  svrg-hmc rmse={svrg:.4} ({:.1?})  hmc rmse={hmc:.4} ({:.1?})",
            svrg_time,
            t.elapsed()
        );
    }
    Ok(())
}
