//! Point forecasts from a posterior chain, RMSE scoring and an AR baseline.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::data_ingest::{ContentCatalog, RequestMatrix};
use crate::error::{Error, Result};
use crate::gp_model::{build_kernel_matrix, sek_kernel, JitterPolicy};
use crate::sampler::SampleChain;

/// Predicted next-period request counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityForecast {
    pub predicted: Vec<f64>,
    /// Period index being forecast, when known.
    pub horizon: Option<usize>,
}

impl PopularityForecast {
    pub fn new(predicted: Vec<f64>) -> Self {
        Self { predicted, horizon: None }
    }

    pub fn at_horizon(mut self, n: usize) -> Self {
        self.horizon = Some(n);
        self
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    /// `content_id,predicted,actual,abs_error`; the last two columns stay
    /// empty without ground truth.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        content_ids: &[u32],
        actual: Option<&[f64]>,
        comments: &[String],
    ) -> Result<()> {
        if content_ids.len() != self.predicted.len() || actual.is_some_and(|a| a.len() != self.predicted.len()) {
            return Err(Error::arg("forecast, ids and actuals differ in length"));
        }
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "content_id,predicted,actual,abs_error")?;
        for (i, (id, p)) in content_ids.iter().zip(&self.predicted).enumerate() {
            match actual {
                Some(a) => writeln!(w, "{id},{p},{},{}", a[i], (p - a[i]).abs())?,
                None => writeln!(w, "{id},{p},,")?,
            }
        }
        Ok(())
    }
}

/// Feature vector of a content outside the training catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenQuery {
    pub features: Vec<f64>,
}

/// Mean of `e^{λ^{(s)}}` over the chain, per content.
pub fn predict_seen(chain: &SampleChain) -> Result<PopularityForecast> {
    let first = chain.samples.first().ok_or_else(|| Error::State("empty chain".into()))?;
    let f = first.num_contents();
    let mut acc = vec![0.0; f];
    for s in &chain.samples {
        for (a, l) in acc.iter_mut().zip(s.lambda()) {
            *a += l.exp();
        }
    }
    let n = chain.samples.len() as f64;
    Ok(PopularityForecast::new(acc.into_iter().map(|a| a / n).collect()))
}

/// Knobs for [`predict_unseen_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnseenOptions {
    pub jitter: JitterPolicy,
    /// Drop the nugget `β0` from `K'`.
    pub zero_nugget: bool,
}

/// Per sample, condition the Gaussian on the catalog log-rates:
/// `μ = k'ᵀK'⁻¹λ`, `σ = β1 − k'ᵀK'⁻¹k'`, and average `e^{μ + σ/2}`.
pub fn predict_unseen(chain: &SampleChain, query: &UnseenQuery, catalog: &ContentCatalog) -> Result<PopularityForecast> {
    predict_unseen_with(chain, query, catalog, UnseenOptions::default())
}

pub fn predict_unseen_with(
    chain: &SampleChain,
    query: &UnseenQuery,
    catalog: &ContentCatalog,
    options: UnseenOptions,
) -> Result<PopularityForecast> {
    if chain.is_empty() {
        return Err(Error::State("empty chain".into()));
    }
    if query.features.len() != catalog.dim() {
        return Err(Error::arg(format!(
            "unseen content has {} features, expected Q = {}",
            query.features.len(),
            catalog.dim()
        )));
    }
    let mut total = 0.0;
    for sample in &chain.samples {
        let (mu, sigma) = conditional_moments(sample.lambda(), &sample.beta(), &query.features, catalog, options)?;
        total += (mu + 0.5 * sigma).exp();
    }
    Ok(PopularityForecast::new(vec![total / chain.len() as f64]))
}

/// Conditional mean and variance of `λ_{F+1}` for one hyperparameter draw.
pub fn conditional_moments(
    lambda: &[f64],
    beta: &[f64],
    x: &[f64],
    catalog: &ContentCatalog,
    options: UnseenOptions,
) -> Result<(f64, f64)> {
    if lambda.len() != catalog.len() {
        return Err(Error::arg("sample does not match the catalog size"));
    }
    let mut beta = beta.to_vec();
    if options.zero_nugget {
        beta[0] = 0.0;
    }
    let kernel = build_kernel_matrix(catalog, &beta, options.jitter)?;
    let k_star: Vec<f64> = (0..catalog.len())
        .map(|f| sek_kernel(catalog.feature(f), x, &beta))
        .collect::<Result<_>>()?;
    let w = kernel.solve(&k_star);
    let mu: f64 = w.iter().zip(lambda).map(|(a, l)| a * l).sum();
    let explained: f64 = w.iter().zip(&k_star).map(|(a, k)| a * k).sum();
    let prior_var = sek_kernel(x, x, &beta)?;
    let mut sigma = prior_var - explained;
    if sigma < 0.0 {
        if sigma < -1e-8 * beta[1] {
            return Err(Error::numerical(format!("negative predictive variance {sigma:e}")));
        }
        sigma = 0.0;
    }
    Ok((mu, sigma))
}

/// `sqrt(mean((predicted − actual)²))`.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} predictions, {} actuals",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::arg("cannot score an empty forecast"));
    }
    let sq: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

const AR_RIDGE: f64 = 1e-6;

/// Per-content AR(p) with intercept, fit by ridge-regularized least squares,
/// forecasting the period after the last one. Constant series forecast
/// themselves; forecasts are clamped at 0.
pub fn ar_baseline(requests: &RequestMatrix, order: usize) -> Result<PopularityForecast> {
    let n = requests.num_periods();
    if n <= order {
        return Err(Error::arg(format!("AR({order}) needs more than {order} periods, got {n}")));
    }
    let predicted = (0..requests.num_contents())
        .map(|f| ar_forecast(requests.row(f), order))
        .collect::<Result<_>>()?;
    Ok(PopularityForecast::new(predicted).at_horizon(n))
}

/// One-step-ahead AR(p) forecast of a single series.
pub fn ar_forecast(series: &[f64], order: usize) -> Result<f64> {
    let n = series.len();
    if n <= order {
        return Err(Error::arg(format!("AR({order}) needs more than {order} points")));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Ok(series[0].max(0.0));
    }
    let k = order + 1;
    let rows = n - order;
    let mut x = DMatrix::zeros(rows, k);
    let mut y = DVector::zeros(rows);
    for (r, t) in (order..n).enumerate() {
        x[(r, 0)] = 1.0;
        for j in 1..=order {
            x[(r, j)] = series[t - j];
        }
        y[r] = series[t];
    }
    let mut xtx = x.transpose() * &x;
    for j in 0..k {
        xtx[(j, j)] += AR_RIDGE;
    }
    let xty = x.transpose() * y;
    let coef = xtx
        .cholesky()
        .ok_or_else(|| Error::numerical("AR normal equations are not positive definite"))?
        .solve(&xty);
    let mut next = coef[0];
    for j in 1..=order {
        next += coef[j] * series[n - j];
    }
    Ok(next.max(0.0))
}
