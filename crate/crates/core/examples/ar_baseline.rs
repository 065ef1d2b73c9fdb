//! Per-content autoregressive forecasts on noisy seasonal series.

use fedpop::data_ingest::RequestMatrix;
use fedpop::predictor::{ar_baseline, rmse};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

const F: usize = 20;
const N: usize = 60;

fn level(f: usize, n: usize) -> f64 {
    let base = 5.0 + f as f64;
    base * (1.0 + 0.5 * (n as f64 * std::f64::consts::PI / 2.0 + f as f64).sin())
}

fn main() -> fedpop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = Vec::with_capacity(F * N);
    for f in 0..F {
        counts.extend((0..N).map(|n| Poisson::new(level(f, n)).unwrap().sample(&mut rng)));
    }
    let ids: Vec<u32> = (1..=F as u32).collect();
    let train = RequestMatrix::from_counts(ids, N, counts)?;
    let truth: Vec<f64> = (0..F).map(|f| level(f, N)).collect();

    let last: Vec<f64> = (0..F).map(|f| train.get(f, N - 1)).collect();
    let mean: Vec<f64> = (0..F).map(|f| train.row(f).iter().sum::<f64>() / N as f64).collect();
    println!("last value   rmse {:.3}", rmse(&last, &truth)?);
    println!("series mean  rmse {:.3}", rmse(&mean, &truth)?);
    for p in 1..=5 {
        let ar = ar_baseline(&train, p)?;
        println!("AR({p})        rmse {:.3}", rmse(&ar.predicted, &truth)?);
    }
    Ok(())
}
