//! Hierarchical Poisson / Gaussian-process popularity model.
//!
//! Requests follow `r[f][n] ~ Poisson(e^{λ_f})`, the log-rates are jointly
//! Gaussian `λ ~ N(0, K')` with `K' = K + β0·I` and `K` a squared exponential
//! kernel over content features, and every `β_q = e^{ρ_q}` carries a
//! `Gamma(A_q, B_q)` prior. The sampled state is `τ = [λ_1..λ_F, ρ_0..ρ_{Q+1}]`.
//!
//! [`neg_log_posterior`] is `φ(τ)` without the normalizing constant, which
//! changes neither gradients nor sampling.

mod kernel;
mod likelihood;

pub use kernel::{build_kernel_matrix, sek_kernel, JitterPolicy, KernelMatrix};
pub use likelihood::{PoissonData, SvrgAnchor};

use crate::data_ingest::ContentCatalog;
use crate::error::{Error, Result};

/// Gamma prior shapes `A_q` and inverse scales `B_q`, one per `β_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPriors {
    shape: Vec<f64>,
    rate: Vec<f64>,
}

impl HyperPriors {
    pub fn new(shape: Vec<f64>, rate: Vec<f64>) -> Result<Self> {
        if shape.len() != rate.len() {
            return Err(Error::arg("prior shape and rate lengths differ"));
        }
        if shape.iter().chain(&rate).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::arg("Gamma prior parameters must be positive"));
        }
        Ok(Self { shape, rate })
    }

    /// Same `(A, B)` for all Q+2 hyperparameters.
    pub fn uniform(feature_dim: usize, shape: f64, rate: f64) -> Result<Self> {
        Self::new(vec![shape; feature_dim + 2], vec![rate; feature_dim + 2])
    }

    pub fn shape(&self) -> &[f64] {
        &self.shape
    }

    pub fn rate(&self) -> &[f64] {
        &self.rate
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }
}

/// `τ = [λ_1..λ_F, ρ_0..ρ_{Q+1}]` stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    num_contents: usize,
}

impl ParameterVector {
    pub fn new(lambda: &[f64], rho: &[f64]) -> Self {
        let mut values = Vec::with_capacity(lambda.len() + rho.len());
        values.extend_from_slice(lambda);
        values.extend_from_slice(rho);
        Self { values, num_contents: lambda.len() }
    }

    pub fn from_flat(values: Vec<f64>, num_contents: usize) -> Result<Self> {
        if num_contents > values.len() {
            return Err(Error::arg("parameter vector shorter than F"));
        }
        Ok(Self { values, num_contents })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.values[..self.num_contents]
    }

    pub fn rho(&self) -> &[f64] {
        &self.values[self.num_contents..]
    }

    pub fn lambda_mut(&mut self) -> &mut [f64] {
        &mut self.values[..self.num_contents]
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.values[self.num_contents..]
    }

    /// `β_q = e^{ρ_q}`, always positive.
    pub fn beta(&self) -> Vec<f64> {
        self.rho().iter().map(|r| r.exp()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_contents(&self) -> usize {
        self.num_contents
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `∇φ(τ)`, aligned with [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    num_contents: usize,
}

impl GradientVector {
    pub fn new(values: Vec<f64>, num_contents: usize) -> Self {
        Self { values, num_contents }
    }

    pub fn zeros(len: usize, num_contents: usize) -> Self {
        Self { values: vec![0.0; len], num_contents }
    }

    pub fn lambda(&self) -> &[f64] {
        &self.values[..self.num_contents]
    }

    pub fn rho(&self) -> &[f64] {
        &self.values[self.num_contents..]
    }

    pub fn num_contents(&self) -> usize {
        self.num_contents
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Adds `scale · data` onto the λ block.
    pub fn add_lambda_scaled(&mut self, data: &[f64], scale: f64) {
        for (g, d) in self.values[..self.num_contents].iter_mut().zip(data) {
            *g += scale * d;
        }
    }
}

/// Everything of the posterior that does not depend on the request data:
/// content features, hyperpriors and jitter policy.
#[derive(Debug, Clone)]
pub struct GpPrior {
    pub catalog: ContentCatalog,
    pub priors: HyperPriors,
    pub jitter: JitterPolicy,
}

impl GpPrior {
    pub fn new(catalog: ContentCatalog, priors: HyperPriors) -> Result<Self> {
        if priors.len() != catalog.dim() + 2 {
            return Err(Error::arg(format!(
                "expected {} hyperpriors for Q = {}, got {}",
                catalog.dim() + 2,
                catalog.dim(),
                priors.len()
            )));
        }
        Ok(Self { catalog, priors, jitter: JitterPolicy::default() })
    }

    pub fn num_contents(&self) -> usize {
        self.catalog.len()
    }

    /// Dimension of τ, F + Q + 2.
    pub fn param_dim(&self) -> usize {
        self.catalog.len() + self.catalog.dim() + 2
    }

    pub fn kernel(&self, params: &ParameterVector) -> Result<KernelMatrix> {
        self.check(params)?;
        build_kernel_matrix(&self.catalog, &params.beta(), self.jitter)
    }

    fn check(&self, params: &ParameterVector) -> Result<()> {
        if params.num_contents() != self.catalog.len() || params.len() != self.param_dim() {
            return Err(Error::arg(format!(
                "parameter vector has shape ({}, {}), model expects ({}, {})",
                params.num_contents(),
                params.len(),
                self.catalog.len(),
                self.param_dim()
            )));
        }
        if !params.is_finite() {
            return Err(Error::numerical("non-finite parameter vector"));
        }
        Ok(())
    }

    /// `½ log det K' + ½ λᵀK'⁻¹λ + Σ_q (−A_q ρ_q + B_q e^{ρ_q})`.
    pub fn value(&self, params: &ParameterVector, kernel: &KernelMatrix) -> f64 {
        let lambda = params.lambda();
        let alpha = kernel.solve(lambda);
        let quad: f64 = lambda.iter().zip(alpha.iter()).map(|(l, a)| l * a).sum();
        let hyper: f64 = params
            .rho()
            .iter()
            .zip(self.priors.shape().iter().zip(self.priors.rate()))
            .map(|(rho, (a, b))| -a * rho + b * rho.exp())
            .sum();
        0.5 * kernel.log_det() + 0.5 * quad + hyper
    }

    /// Gradient of the GP and Gamma-prior terms. These do not depend on the
    /// data, so every estimator computes them exactly.
    pub fn gradient(&self, params: &ParameterVector, kernel: &KernelMatrix) -> GradientVector {
        let f_count = self.catalog.len();
        let q_dim = self.catalog.dim();
        let lambda = params.lambda();
        let beta = kernel.beta();
        let alpha = kernel.solve(lambda);

        let mut grad = GradientVector::zeros(self.param_dim(), f_count);
        grad.values[..f_count].copy_from_slice(alpha.as_slice());

        // W = K'^{-1} − ααᵀ; ∂φ/∂ρ_q = ½ Σ_ij W_ij (∂K'/∂ρ_q)_ij + prior terms.
        let inv = kernel.inverse();
        let sek = kernel.sek();
        let mut trace_w = 0.0;
        let mut amp = 0.0;
        let mut scale_acc = vec![0.0; q_dim];
        for j in 0..f_count {
            let xj = self.catalog.feature(j);
            let wjj = inv[(j, j)] - alpha[j] * alpha[j];
            trace_w += wjj;
            amp += 0.5 * wjj * sek[(j, j)];
            for i in 0..j {
                let wk = (inv[(i, j)] - alpha[i] * alpha[j]) * sek[(i, j)];
                amp += wk;
                let xi = self.catalog.feature(i);
                for q in 0..q_dim {
                    let d = xi[q] - xj[q];
                    scale_acc[q] += wk * d * d;
                }
            }
        }
        let rho_grad = &mut grad.values[f_count..];
        rho_grad[0] = 0.5 * beta[0] * trace_w;
        rho_grad[1] = amp;
        for q in 0..q_dim {
            rho_grad[q + 2] = -beta[q + 2] * scale_acc[q];
        }
        for (q, g) in rho_grad.iter_mut().enumerate() {
            *g += -self.priors.shape()[q] + self.priors.rate()[q] * params.rho()[q].exp();
        }
        grad
    }
}

fn finite_or(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!("non-finite {what}")))
    }
}

fn finite_grad(grad: GradientVector) -> Result<GradientVector> {
    if grad.is_finite() {
        Ok(grad)
    } else {
        Err(Error::numerical("non-finite gradient"))
    }
}

fn check_data(gp: &GpPrior, data: &PoissonData) -> Result<()> {
    if data.num_contents() != gp.num_contents() {
        return Err(Error::arg(format!(
            "request data has {} contents, catalog has {}",
            data.num_contents(),
            gp.num_contents()
        )));
    }
    Ok(())
}

/// `φ(τ)` up to the constant `log H`.
pub fn neg_log_posterior(
    gp: &GpPrior,
    data: &PoissonData,
    params: &ParameterVector,
    kernel: &KernelMatrix,
) -> Result<f64> {
    check_data(gp, data)?;
    gp.check(params)?;
    finite_or(data.value(params.lambda()) + gp.value(params, kernel), "negative log posterior")
}

/// Exact `∇φ(τ)` over every datum.
pub fn full_gradient(
    gp: &GpPrior,
    data: &PoissonData,
    params: &ParameterVector,
    kernel: &KernelMatrix,
) -> Result<GradientVector> {
    check_data(gp, data)?;
    gp.check(params)?;
    let mut grad = gp.gradient(params, kernel);
    let d = data.full_gradient(params.lambda());
    grad.add_lambda_scaled(&d, 1.0);
    finite_grad(grad)
}

/// Minibatch estimate: the likelihood part summed over `minibatch` and scaled
/// by `NF / b`; GP and prior parts exact.
pub fn stochastic_gradient(
    gp: &GpPrior,
    data: &PoissonData,
    params: &ParameterVector,
    minibatch: &[usize],
    kernel: &KernelMatrix,
) -> Result<GradientVector> {
    check_data(gp, data)?;
    gp.check(params)?;
    data.check_minibatch(minibatch)?;
    let mut grad = gp.gradient(params, kernel);
    let scale = data.num_data() as f64 / minibatch.len() as f64;
    let acc = data.accumulate(minibatch.iter().copied(), params.lambda());
    let d: Vec<f64> = acc.iter().map(|a| scale * a).collect();
    grad.add_lambda_scaled(&d, 1.0);
    finite_grad(grad)
}

/// Variance-reduced estimate anchored at `anchor`: GP and prior parts at
/// `params`, plus `(NF/b)·Σ_{i∈I}(∇δ_i(params) − ∇δ_i(ω)) + g`.
pub fn svrg_corrected_gradient(
    gp: &GpPrior,
    data: &PoissonData,
    params: &ParameterVector,
    anchor: &SvrgAnchor,
    minibatch: &[usize],
    kernel: &KernelMatrix,
) -> Result<GradientVector> {
    check_data(gp, data)?;
    gp.check(params)?;
    data.check_minibatch(minibatch)?;
    let mut grad = gp.gradient(params, kernel);
    let d = data.svrg_data_gradient(params.lambda(), anchor, minibatch);
    grad.add_lambda_scaled(&d, 1.0);
    finite_grad(grad)
}

#[cfg(test)]
mod tests;
