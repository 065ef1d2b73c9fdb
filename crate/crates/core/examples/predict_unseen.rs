//! Forecasts for contents that never appeared in training, read off the
//! kernel from their features alone.

use fedpop::data_ingest::{ContentCatalog, RequestMatrix};
use fedpop::gp_model::{GpPrior, HyperPriors, PoissonData};
use fedpop::predictor::{predict_unseen, UnseenQuery};
use fedpop::sampler::{run_sampler, SamplerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

const F: usize = 50;
const Q: usize = 2;
const N: usize = 20;

fn rate(x: &[f64]) -> f64 {
    (0.5 + 3.0 * x[0] - x[1]).exp()
}

fn main() -> fedpop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<Vec<f64>> = (0..F).map(|_| (0..Q).map(|_| rng.random::<f64>()).collect()).collect();
    let mut counts = Vec::with_capacity(F * N);
    for x in &rows {
        let p = Poisson::new(rate(x)).unwrap();
        counts.extend((0..N).map(|_| p.sample(&mut rng)));
    }
    let ids: Vec<u32> = (1..=F as u32).collect();
    let catalog = ContentCatalog::from_rows(ids.clone(), rows)?;
    let gp = GpPrior::new(catalog.clone(), HyperPriors::uniform(Q, 1.0, 1.0)?)?;
    let data = PoissonData::new(&RequestMatrix::from_counts(ids, N, counts)?);

    let mut cfg = SamplerConfig::defaults_for(F * N);
    cfg.total_steps = 3_000;
    cfg.burn_in = 60;
    let chain = run_sampler(&gp, &data, &cfg)?;

    let mean_rate = data.mean_counts().iter().sum::<f64>() / F as f64;
    println!("catalog mean rate {mean_rate:.2}");
    println!("{:>12} {:>10} {:>10}", "features", "true", "forecast");
    for x in [[0.1, 0.9], [0.5, 0.5], [0.9, 0.1], [0.95, 0.0]] {
        let forecast = predict_unseen(&chain, &UnseenQuery { features: x.to_vec() }, &catalog)?;
        println!("{:>12} {:>10.2} {:>10.2}", format!("{x:?}"), rate(&x), forecast.predicted[0]);
    }
    Ok(())
}
