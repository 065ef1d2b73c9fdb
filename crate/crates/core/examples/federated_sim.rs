//! Five edge nodes each see a random share of every content's requests.
//! The same SVRG-HMC chain runs with float messages and with quantized,
//! Elias-coded messages; bits on the wire and forecast error are compared.

use fedpop::data_ingest::{ContentCatalog, RequestMatrix};
use fedpop::federated::{build_nodes, run_federated, FederatedConfig, Mode};
use fedpop::gp_model::{GpPrior, HyperPriors};
use fedpop::predictor::{predict_seen, rmse};
use fedpop::sampler::SamplerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

const F: usize = 30;
const Q: usize = 3;
const N: usize = 25;
const M: usize = 5;

fn main() -> fedpop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..F).map(|_| (0..Q).map(|_| rng.random::<f64>()).collect()).collect();
    let rates: Vec<f64> = rows.iter().map(|x| (1.0 + 2.0 * x[0] - x[1]).exp()).collect();
    let ids: Vec<u32> = (1..=F as u32).collect();

    // per node share of the traffic, then binomial splitting of each count
    let weights: Vec<f64> = (0..M).map(|_| rng.random_range(0.5..1.5)).collect();
    let total_w: f64 = weights.iter().sum();
    let mut local = vec![vec![0.0; F * N]; M];
    let mut holdout = vec![0.0; F];
    for (f, &r) in rates.iter().enumerate() {
        let p = Poisson::new(r).unwrap();
        for n in 0..=N {
            let c: f64 = p.sample(&mut rng);
            if n == N {
                holdout[f] = c;
                continue;
            }
            let mut left = c as u64;
            let mut mass = total_w;
            for m in 0..M {
                let take = if m + 1 == M { left } else { Binomial::new(left, weights[m] / mass).unwrap().sample(&mut rng) };
                local[m][f * N + n] = take as f64;
                left -= take;
                mass -= weights[m];
            }
        }
    }
    let locals: Vec<RequestMatrix> =
        local.into_iter().map(|c| RequestMatrix::from_counts(ids.clone(), N, c)).collect::<Result<_, _>>()?;
    let catalog = ContentCatalog::from_rows(ids, rows)?;
    let gp = GpPrior::new(catalog, HyperPriors::uniform(Q, 1.0, 1.0)?)?;

    let mut sampler = SamplerConfig::defaults_for(F * N);
    sampler.total_steps = 2_000;
    sampler.burn_in = 40;
    sampler.seed = 2;

    println!("{:<10} {:>14} {:>12} {:>8}", "mode", "bits", "vs native", "rmse");
    let mut native_bits = 0;
    for mode in [Mode::Native, Mode::Quantized(4096), Mode::Quantized(256), Mode::Quantized(16)] {
        let mut nodes = build_nodes(&locals, sampler.seed)?;
        let run = run_federated(&gp, &mut nodes, &FederatedConfig::new(sampler.clone(), mode), Some(&holdout))?;
        let bits = run.comm.cumulative_bits;
        if mode == Mode::Native {
            native_bits = bits;
        }
        let label = match mode {
            Mode::Native => "native".to_string(),
            Mode::Quantized(s) => format!("s={s}"),
        };
        let err = rmse(&predict_seen(&run.chain)?.predicted, &holdout)?;
        println!("{label:<10} {bits:>14} {:>11.1}% {err:>8.4}", 100.0 * bits as f64 / native_bits as f64);
    }
    Ok(())
}
