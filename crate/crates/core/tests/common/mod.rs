#![allow(dead_code)]

use std::path::PathBuf;

use fedpop::data_ingest::{ContentCatalog, RequestMatrix};
use fedpop::gp_model::{GpPrior, HyperPriors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `F` contents with `Q` uniform features in `[0, 1)`.
pub fn catalog(f: usize, q: usize, seed: u64) -> ContentCatalog {
    let mut r = rng(seed);
    let rows = (0..f).map(|_| (0..q).map(|_| r.random::<f64>()).collect()).collect();
    ContentCatalog::from_rows((1..=f as u32).collect(), rows).unwrap()
}

pub fn model(catalog: &ContentCatalog) -> GpPrior {
    GpPrior::new(catalog.clone(), HyperPriors::uniform(catalog.dim(), 1.0, 1.0).unwrap()).unwrap()
}

/// Poisson counts with per-content rates `rates`, `n` periods each.
pub fn poisson_matrix(rates: &[f64], n: usize, seed: u64) -> RequestMatrix {
    let mut r = rng(seed);
    let mut counts = Vec::with_capacity(rates.len() * n);
    for &rate in rates {
        let p = Poisson::new(rate).unwrap();
        counts.extend((0..n).map(|_| p.sample(&mut r)));
    }
    RequestMatrix::from_counts((1..=rates.len() as u32).collect(), n, counts).unwrap()
}

/// Splits every count of `m` across `parts` matrices, one unit at a time.
pub fn split_counts(m: &RequestMatrix, parts: usize, seed: u64) -> Vec<RequestMatrix> {
    let mut r = rng(seed);
    let mut out = vec![vec![0.0; m.counts().len()]; parts];
    for (i, &c) in m.counts().iter().enumerate() {
        for _ in 0..c as u64 {
            out[r.random_range(0..parts)][i] += 1.0;
        }
    }
    out.into_iter()
        .map(|c| RequestMatrix::from_counts(m.content_ids().to_vec(), m.num_periods(), c).unwrap())
        .collect()
}

/// `data/ml-100k` at the workspace root, when it has been fetched.
pub fn movielens_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k");
    (dir.join("u.data").is_file() && dir.join("u.item").is_file()).then_some(dir)
}
