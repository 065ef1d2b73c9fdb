use std::sync::atomic::{AtomicU64, Ordering};

use crate::data_ingest::RequestMatrix;
use crate::error::{Error, Result};

use super::ParameterVector;

/// Poisson observation terms of the posterior.
///
/// Datum `i = f·N + n` contributes `δ_i(τ) = −r[f][n]·λ_f + share·e^{λ_f}`
/// (the constant `log r!` is dropped). `share` is the fraction of the global
/// request rate this data set observes: 1 for the full data, `π_m` for an
/// edge node that sees a thinned `π_m` share of all requests, so that node
/// terms add up to the centralized ones.
///
/// Every per-datum gradient evaluation bumps an internal counter.
#[derive(Debug)]
pub struct PoissonData {
    counts: Vec<f64>,
    num_contents: usize,
    num_periods: usize,
    share: f64,
    evaluations: AtomicU64,
}

impl Clone for PoissonData {
    fn clone(&self) -> Self {
        Self {
            counts: self.counts.clone(),
            num_contents: self.num_contents,
            num_periods: self.num_periods,
            share: self.share,
            evaluations: AtomicU64::new(self.evaluations()),
        }
    }
}

/// Anchor snapshot for the variance-reduced estimator: the anchor point, all
/// per-datum gradients there and their full sum `g` per content.
#[derive(Debug, Clone)]
pub struct SvrgAnchor {
    pub params: ParameterVector,
    pub datum_gradients: Vec<f64>,
    pub full: Vec<f64>,
}

impl PoissonData {
    pub fn new(matrix: &RequestMatrix) -> Self {
        Self::with_share(matrix, 1.0)
    }

    pub fn with_share(matrix: &RequestMatrix, share: f64) -> Self {
        Self {
            counts: matrix.counts().to_vec(),
            num_contents: matrix.num_contents(),
            num_periods: matrix.num_periods(),
            share,
            evaluations: AtomicU64::new(0),
        }
    }

    /// Row-major F x N counts.
    pub fn from_counts(num_contents: usize, num_periods: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != num_contents * num_periods {
            return Err(Error::arg("count buffer does not match F x N"));
        }
        Ok(Self { counts, num_contents, num_periods, share: 1.0, evaluations: AtomicU64::new(0) })
    }

    pub fn num_contents(&self) -> usize {
        self.num_contents
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    /// Number of per-datum terms, NF.
    pub fn num_data(&self) -> usize {
        self.num_contents * self.num_periods
    }

    pub fn share(&self) -> f64 {
        self.share
    }

    pub fn count(&self, datum: usize) -> f64 {
        self.counts[datum]
    }

    pub fn content_of(&self, datum: usize) -> usize {
        datum / self.num_periods
    }

    /// Mean request count per period for each content.
    pub fn mean_counts(&self) -> Vec<f64> {
        (0..self.num_contents)
            .map(|f| {
                let row = &self.counts[f * self.num_periods..(f + 1) * self.num_periods];
                if row.is_empty() {
                    0.0
                } else {
                    row.iter().sum::<f64>() / row.len() as f64
                }
            })
            .collect()
    }

    /// Total per-datum gradient evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    /// `∂δ_i/∂λ_f` for the content `f` owning datum `i`.
    #[inline]
    pub fn datum_gradient(&self, datum: usize, lambda: &[f64]) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let f = datum / self.num_periods;
        -self.counts[datum] + self.share * lambda[f].exp()
    }

    /// `Σ_i δ_i(τ)`.
    pub fn value(&self, lambda: &[f64]) -> f64 {
        let mut total = 0.0;
        for (row, &l) in self.counts.chunks(self.num_periods.max(1)).zip(lambda) {
            let rate = self.share * l.exp();
            for &r in row {
                total += -r * l + rate;
            }
        }
        total
    }

    /// Sum of per-datum gradients over `data`, accumulated per content in
    /// iteration order.
    pub(crate) fn accumulate(&self, data: impl IntoIterator<Item = usize>, lambda: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_contents];
        for i in data {
            acc[self.content_of(i)] += self.datum_gradient(i, lambda);
        }
        acc
    }

    /// Data-term gradient over all NF terms.
    pub fn full_gradient(&self, lambda: &[f64]) -> Vec<f64> {
        self.accumulate(0..self.num_data(), lambda)
    }

    /// Computes every per-datum gradient at `params` (NF evaluations).
    pub fn anchor(&self, params: &ParameterVector) -> SvrgAnchor {
        let lambda = params.lambda();
        let datum_gradients: Vec<f64> = (0..self.num_data()).map(|i| self.datum_gradient(i, lambda)).collect();
        let mut full = vec![0.0; self.num_contents];
        for (i, g) in datum_gradients.iter().enumerate() {
            full[self.content_of(i)] += g;
        }
        SvrgAnchor { params: params.clone(), datum_gradients, full }
    }

    /// `(NF/b)·Σ_{i∈I}(∇δ_i(τ) − ∇δ_i(ω)) + g`, one fresh evaluation per
    /// minibatch index; anchor gradients come from the snapshot.
    pub fn svrg_data_gradient(&self, lambda: &[f64], anchor: &SvrgAnchor, minibatch: &[usize]) -> Vec<f64> {
        let scale = self.num_data() as f64 / minibatch.len() as f64;
        let mut acc = vec![0.0; self.num_contents];
        for &i in minibatch {
            acc[self.content_of(i)] += self.datum_gradient(i, lambda) - anchor.datum_gradients[i];
        }
        acc.iter().zip(&anchor.full).map(|(c, g)| scale * c + g).collect()
    }

    pub(crate) fn check_minibatch(&self, minibatch: &[usize]) -> Result<()> {
        if minibatch.is_empty() {
            return Err(Error::arg("minibatch must not be empty"));
        }
        if let Some(&bad) = minibatch.iter().find(|&&i| i >= self.num_data()) {
            return Err(Error::arg(format!("datum index {bad} out of range (NF = {})", self.num_data())));
        }
        Ok(())
    }
}
