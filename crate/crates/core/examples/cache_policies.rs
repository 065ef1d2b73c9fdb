//! Hit rate against cache size on a Zipf trace whose popular set drifts
//! every period. A prefill cache driven by the true rates is the reference.

use fedpop::cache_sim::{sweep, PeriodForecasts, PolicySpec, Request};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: usize = 100;
const PERIODS: usize = 6;
const PER_PERIOD: usize = 2_000;

fn main() -> fedpop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids: Vec<u32> = (1..=F as u32).collect();
    let mut trace = Vec::new();
    let mut oracle = PeriodForecasts::default();
    for period in 0..PERIODS {
        // rank r holds content (r + 7·period) mod F
        let weights: Vec<f64> = (0..F).map(|c| 1.0 / ((c + F - 7 * period % F) % F + 1) as f64).collect();
        let total: f64 = weights.iter().sum();
        oracle.insert(period, weights.clone());
        for _ in 0..PER_PERIOD {
            let mut u = rng.random::<f64>() * total;
            let content = weights.iter().position(|&w| {
                u -= w;
                u <= 0.0
            });
            trace.push(Request { period, content: content.unwrap_or(F - 1) });
        }
    }

    let policies = [
        PolicySpec::Prefill { name: "oracle".into(), forecasts: oracle },
        PolicySpec::Lru,
        PolicySpec::Lfu,
        PolicySpec::Fifo,
        PolicySpec::Random { seed: 1, repeats: 10 },
    ];
    let sizes = [0.05, 0.1, 0.2, 0.4];
    let curve = sweep(&trace, &policies, &sizes, &ids)?;

    print!("{:<8}", "policy");
    for s in sizes {
        print!("{:>8}", format!("{:.0}%", s * 100.0));
    }
    println!();
    for name in curve.policies() {
        print!("{name:<8}");
        for s in sizes {
            print!("{:>8.3}", curve.get(&name, s).map_or(f64::NAN, |p| p.hit_rate));
        }
        println!();
    }
    Ok(())
}
