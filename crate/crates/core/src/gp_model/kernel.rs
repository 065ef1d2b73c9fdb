use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data_ingest::ContentCatalog;
use crate::error::{Error, Result};

/// Squared exponential kernel between two feature vectors.
///
/// `beta` is the full hyperparameter vector `[β0, β1, β2, ..., β_{Q+1}]`;
/// `β1` is the amplitude and `β_{q+2}` the inverse squared lengthscale of
/// feature `q`. `β0` (the nugget) is not used here.
pub fn sek_kernel(x_i: &[f64], x_j: &[f64], beta: &[f64]) -> Result<f64> {
    if x_i.len() != x_j.len() {
        return Err(Error::arg(format!(
            "feature dimension mismatch: {} vs {}",
            x_i.len(),
            x_j.len()
        )));
    }
    if beta.len() != x_i.len() + 2 {
        return Err(Error::arg(format!(
            "expected {} hyperparameters for Q = {}, got {}",
            x_i.len() + 2,
            x_i.len(),
            beta.len()
        )));
    }
    Ok(sek_unchecked(x_i, x_j, beta))
}

#[inline]
pub(crate) fn sek_unchecked(x_i: &[f64], x_j: &[f64], beta: &[f64]) -> f64 {
    let mut s = 0.0;
    for q in 0..x_i.len() {
        let d = x_i[q] - x_j[q];
        s += beta[q + 2] * d * d;
    }
    beta[1] * (-s).exp()
}

/// Diagonal regularization added on top of `β0·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterPolicy {
    /// Start at `initial · mean(diag)` and multiply by 10 on each failed
    /// factorization, up to `max · mean(diag)`.
    Escalating { initial: f64, max: f64 },
    /// Exactly this absolute jitter, no retries.
    Fixed(f64),
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy::Escalating { initial: 1e-8, max: 1e-2 }
    }
}

/// `K' = K + (β0 + jitter)·I` over a catalog, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    sek: DMatrix<f64>,
    k_prime: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    beta: Vec<f64>,
}

impl KernelMatrix {
    /// The SEK part `K` (no nugget, no jitter).
    pub fn sek(&self) -> &DMatrix<f64> {
        &self.sek
    }

    pub fn k_prime(&self) -> &DMatrix<f64> {
        &self.k_prime
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.k_prime.nrows()
    }

    /// `K'^{-1} v` via the cached factor.
    pub fn solve(&self, v: &[f64]) -> DVector<f64> {
        self.chol.solve(&DVector::from_column_slice(v))
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Builds `K'` for all catalog contents from the hyperparameters `beta`.
pub fn build_kernel_matrix(catalog: &ContentCatalog, beta: &[f64], jitter: JitterPolicy) -> Result<KernelMatrix> {
    let f = catalog.len();
    if f == 0 {
        return Err(Error::arg("cannot build a kernel over an empty catalog"));
    }
    if beta.len() != catalog.dim() + 2 {
        return Err(Error::arg(format!(
            "expected {} hyperparameters, got {}",
            catalog.dim() + 2,
            beta.len()
        )));
    }
    if beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::numerical(format!("invalid kernel hyperparameters {beta:?}")));
    }
    let mut sek = DMatrix::zeros(f, f);
    for i in 0..f {
        let xi = catalog.feature(i);
        sek[(i, i)] = beta[1];
        for j in 0..i {
            let v = sek_unchecked(xi, catalog.feature(j), beta);
            sek[(i, j)] = v;
            sek[(j, i)] = v;
        }
    }
    let nugget = beta[0];
    let (mut jitter, max_jitter) = match jitter {
        JitterPolicy::Escalating { initial, max } => {
            let mean_diag = beta[1] + nugget;
            (initial * mean_diag, max * mean_diag)
        }
        JitterPolicy::Fixed(j) => (j, j),
    };
    loop {
        let mut k_prime = sek.clone();
        for i in 0..f {
            k_prime[(i, i)] += nugget + jitter;
        }
        if let Some(chol) = Cholesky::new(k_prime.clone()) {
            return Ok(KernelMatrix { sek, k_prime, chol, jitter, beta: beta.to_vec() });
        }
        if jitter >= max_jitter || jitter == 0.0 {
            return Err(Error::numerical(format!(
                "Cholesky factorization of K' failed with final jitter {jitter:e}"
            )));
        }
        jitter = (jitter * 10.0).min(max_jitter);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_amplitude() {
        let x = [0.3, -1.2];
        assert_eq!(sek_kernel(&x, &x, &[0.5, 2.5, 1.0, 3.0]).unwrap(), 2.5);
    }

    #[test]
    fn zero_lengthscales_flatten_the_kernel() {
        let v = sek_kernel(&[5.0, 1.0], &[-3.0, 0.0], &[1.0, 1.7, 0.0, 0.0]).unwrap();
        assert_eq!(v, 1.7);
    }

    #[test]
    fn hand_evaluated_pair() {
        let v = sek_kernel(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 2.0, 1.0, 1.0]).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.7358).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(sek_kernel(&[1.0], &[1.0, 2.0], &[1.0, 1.0, 1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn single_content_matrix() {
        let cat = ContentCatalog::from_rows(vec![1], vec![vec![0.2, 0.4]]).unwrap();
        let k = build_kernel_matrix(&cat, &[0.5, 1.5, 1.0, 1.0], JitterPolicy::default()).unwrap();
        let expected = 1.5 + 0.5 + k.jitter();
        assert_eq!(k.k_prime()[(0, 0)], expected);
        assert!((k.jitter() - 1e-8 * 2.0).abs() < 1e-22);
    }

    #[test]
    fn singular_kernel_without_jitter_fails() {
        let cat = ContentCatalog::from_rows(vec![1, 2], vec![vec![0.0], vec![0.0]]).unwrap();
        let err = build_kernel_matrix(&cat, &[0.0, 1.0, 1.0], JitterPolicy::Fixed(0.0));
        assert!(matches!(err, Err(Error::Numerical(_))));
        // escalation rescues the same matrix
        let k = build_kernel_matrix(&cat, &[0.0, 1.0, 1.0], JitterPolicy::default()).unwrap();
        assert!(k.jitter() > 0.0);
    }
}
