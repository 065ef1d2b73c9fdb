//! SVRG-HMC posterior sampling.
//!
//! Each outer round snapshots the anchor `ω` and every per-datum gradient
//! there, then takes `L` friction-HMC steps driven by the variance-reduced
//! gradient. One sample is kept per outer round after the first. There is no
//! Metropolis correction, so the chain carries the usual discretization bias.

use std::io::{BufRead, Write};

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gp_model::{
    full_gradient, neg_log_posterior, stochastic_gradient, svrg_corrected_gradient, GpPrior, GradientVector,
    ParameterVector, PoissonData,
};
use crate::rng::{self, Stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Total inner-step budget S.
    pub total_steps: usize,
    /// Inner-loop length L.
    pub inner_steps: usize,
    /// Minibatch size b.
    pub minibatch: usize,
    /// Step size h.
    pub step_size: f64,
    /// Friction D.
    pub friction: f64,
    /// Samples dropped from the front of the chain.
    pub burn_in: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Defaults for a data set with `num_data` = NF terms: h = 1e-3, D = 10,
    /// L = 10, b = max(1, NF/20), and S giving 500 kept samples after a 20%
    /// burn-in.
    pub fn defaults_for(num_data: usize) -> Self {
        let kept = 500;
        let collected = kept * 5 / 4;
        Self {
            total_steps: (collected + 1) * 10,
            inner_steps: 10,
            minibatch: (num_data / 20).max(1),
            step_size: 1e-3,
            friction: 10.0,
            burn_in: collected - kept,
            seed: 0,
        }
    }

    /// Outer rounds S/L.
    pub fn outer_rounds(&self) -> usize {
        self.total_steps / self.inner_steps
    }

    /// Samples recorded before burn-in is removed, S/L − 1.
    pub fn collected(&self) -> usize {
        self.outer_rounds().saturating_sub(1)
    }

    /// Chain length after burn-in.
    pub fn kept(&self) -> usize {
        self.collected().saturating_sub(self.burn_in)
    }

    /// 20% of the collected samples.
    pub fn default_burn_in(&self) -> usize {
        self.collected() / 5
    }

    pub fn validate(&self, num_data: usize) -> Result<()> {
        let h = self.step_size;
        let d = self.friction;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("step size h must be positive, got {h}")));
        }
        if !(d.is_finite() && d >= 1.0) {
            return Err(Error::Config(format!("friction D must be at least 1, got {d}")));
        }
        if d * h >= 1.0 {
            return Err(Error::Config(format!("D·h must be below 1, got {}", d * h)));
        }
        if self.inner_steps < 1 {
            return Err(Error::Config("inner-loop length L must be at least 1".into()));
        }
        if self.minibatch < 1 || self.minibatch > num_data {
            return Err(Error::Config(format!(
                "minibatch size b = {} outside [1, NF = {num_data}]",
                self.minibatch
            )));
        }
        if !self.total_steps.is_multiple_of(self.inner_steps) {
            return Err(Error::Config(format!(
                "S = {} is not a multiple of L = {}",
                self.total_steps, self.inner_steps
            )));
        }
        if self.collected() == 0 {
            return Err(Error::Config("S/L must be at least 2 to record a sample".into()));
        }
        if self.burn_in >= self.collected() {
            return Err(Error::Config(format!(
                "burn-in {} leaves no samples out of {}",
                self.burn_in,
                self.collected()
            )));
        }
        Ok(())
    }
}

/// Auxiliary momentum θ.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub theta: Vec<f64>,
}

impl MomentumState {
    pub fn zeros(dim: usize) -> Self {
        Self { theta: vec![0.0; dim] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub tau: ParameterVector,
    pub momentum: MomentumState,
}

impl SamplerState {
    /// λ_f = log(mean count + 1), ρ = 0, θ = 0.
    pub fn initial(gp: &GpPrior, data: &PoissonData) -> Self {
        let lambda: Vec<f64> = data.mean_counts().iter().map(|m| (m + 1.0).ln()).collect();
        let rho = vec![0.0; gp.catalog.dim() + 2];
        let tau = ParameterVector::new(&lambda, &rho);
        let dim = tau.len();
        Self { tau, momentum: MomentumState::zeros(dim) }
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.momentum.theta.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleChain {
    pub samples: Vec<ParameterVector>,
    /// `φ` at each kept sample.
    pub diagnostics: Vec<f64>,
    pub gradient_eval_count: u64,
    /// State after the last step taken (the last finite one on divergence).
    pub final_state: Option<SamplerState>,
}

impl SampleChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_contents(&self) -> usize {
        self.samples.first().map_or(0, |s| s.num_contents())
    }

    /// Writes the chain as CSV: a version line, free comments, then one row
    /// per sample with its `φ` value and the full τ.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        let first = self.samples.first().ok_or_else(|| Error::State("cannot write an empty chain".into()))?;
        let f = first.num_contents();
        let r = first.len() - f;
        writeln!(w, "# {CHAIN_VERSION} contents={f} hyper={r} gradient_evals={}", self.gradient_eval_count)?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut header = String::from("sample,neg_log_posterior");
        for i in 0..f {
            header.push_str(&format!(",lambda_{i}"));
        }
        for q in 0..r {
            header.push_str(&format!(",rho_{q}"));
        }
        writeln!(w, "{header}")?;
        for (s, (tau, nlp)) in self.samples.iter().zip(&self.diagnostics).enumerate() {
            let mut line = format!("{s},{nlp}");
            for v in tau.as_slice() {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (comments, rows) = crate::data_ingest::read_numeric_csv(r)?;
        let head = comments
            .first()
            .ok_or_else(|| Error::Parse { line: 1, message: "missing chain version line".into() })?;
        let mut fields = head.split_whitespace();
        if fields.next() != Some(CHAIN_VERSION) {
            return Err(Error::Parse { line: 1, message: format!("unsupported chain format {head:?}") });
        }
        let mut f = None;
        let mut evals = 0;
        for kv in fields {
            match kv.split_once('=') {
                Some(("contents", v)) => f = v.parse::<usize>().ok(),
                Some(("gradient_evals", v)) => evals = v.parse().unwrap_or(0),
                _ => {}
            }
        }
        let f = f.ok_or_else(|| Error::Parse { line: 1, message: "missing contents= field".into() })?;
        let mut chain = SampleChain { gradient_eval_count: evals, ..Default::default() };
        for (line, row) in rows {
            let values = crate::data_ingest::parse_floats(&row, line)?;
            if values.len() < f + 2 {
                return Err(Error::Parse { line, message: "sample row too short".into() });
            }
            chain.diagnostics.push(values[1]);
            chain.samples.push(ParameterVector::from_flat(values[2..].to_vec(), f)?);
        }
        if let Some(bad) = chain.samples.iter().position(|s| s.len() != chain.samples[0].len()) {
            return Err(Error::Parse { line: bad + 1, message: "ragged sample rows".into() });
        }
        Ok(chain)
    }
}

const CHAIN_VERSION: &str = "fedpop-chain-v1";

/// One friction-HMC update:
/// `θ' = (1 − Dh)θ − h∇̃ + √(2Dh)·η`, `τ' = τ + hθ'`.
pub fn svrg_hmc_step(
    state: &SamplerState,
    gradient: &GradientVector,
    step_size: f64,
    friction: f64,
    noise: &[f64],
) -> Result<SamplerState> {
    let h = step_size;
    let decay = 1.0 - friction * h;
    let diffusion = (2.0 * friction * h).sqrt();
    let mut next = state.clone();
    for (k, th) in next.momentum.theta.iter_mut().enumerate() {
        *th = decay * *th - h * gradient.values[k] + diffusion * noise[k];
    }
    for (t, th) in next.tau.as_mut_slice().iter_mut().zip(&next.momentum.theta) {
        *t += h * th;
    }
    if !next.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            message: "non-finite parameters or momentum".into(),
            partial: Box::new(SampleChain { final_state: Some(state.clone()), ..Default::default() }),
        });
    }
    Ok(next)
}

/// Which gradient drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Variance-reduced minibatch gradient.
    #[default]
    Svrg,
    /// Exact full gradient every step.
    FullHmc,
    /// Plain minibatch gradient without correction.
    Sghmc,
}

pub(crate) fn draw_minibatch(rng: &mut StreamRng, num_data: usize, b: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, num_data, b).into_vec();
    idx.sort_unstable();
    idx
}

pub(crate) fn draw_noise(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Collects samples and applies burn-in as the run goes.
pub(crate) struct Recorder {
    burn_in: usize,
    seen: usize,
    pub chain: SampleChain,
}

impl Recorder {
    pub(crate) fn new(burn_in: usize) -> Self {
        Self { burn_in, seen: 0, chain: SampleChain::default() }
    }

    /// Counts one collection point and keeps it once burn-in has passed;
    /// `nlp` is only evaluated for kept samples.
    pub(crate) fn record(&mut self, tau: &ParameterVector, nlp: impl FnOnce() -> Result<f64>) -> Result<bool> {
        self.seen += 1;
        if self.seen <= self.burn_in {
            return Ok(false);
        }
        let value = nlp()?;
        self.chain.samples.push(tau.clone());
        self.chain.diagnostics.push(value);
        Ok(true)
    }

    pub(crate) fn diverged(mut self, step: usize, err: Error, last: &SamplerState, evals: u64) -> Error {
        self.chain.final_state = Some(last.clone());
        self.chain.gradient_eval_count = evals;
        Error::Diverged { step, message: err.to_string(), partial: Box::new(self.chain) }
    }
}

/// SVRG-HMC from the default initial state.
pub fn run_sampler(gp: &GpPrior, data: &PoissonData, config: &SamplerConfig) -> Result<SampleChain> {
    run_sampler_from(gp, data, config, SamplerState::initial(gp, data), GradientMode::Svrg)
}

/// Same update rule driven by the exact gradient, or by the uncorrected
/// minibatch gradient with [`GradientMode::Sghmc`].
pub fn hmc_reference_sampler(
    gp: &GpPrior,
    data: &PoissonData,
    config: &SamplerConfig,
    mode: GradientMode,
) -> Result<SampleChain> {
    run_sampler_from(gp, data, config, SamplerState::initial(gp, data), mode)
}

/// Runs a chain from an explicit starting state (warm start).
pub fn run_sampler_from(
    gp: &GpPrior,
    data: &PoissonData,
    config: &SamplerConfig,
    init: SamplerState,
    mode: GradientMode,
) -> Result<SampleChain> {
    let nf = data.num_data();
    config.validate(nf)?;
    if init.tau.len() != gp.param_dim() || init.momentum.theta.len() != gp.param_dim() {
        return Err(Error::arg("initial state does not match the model dimension"));
    }
    let mut mb_rng = rng::stream(config.seed, Stream::Minibatch, 0);
    let mut noise_rng = rng::stream(config.seed, Stream::Noise, 0);
    let start_evals = data.evaluations();
    let mut recorder = Recorder::new(config.burn_in);
    let mut state = init;
    let mut step = 0;

    for outer in 0..config.outer_rounds() {
        let anchor = (mode == GradientMode::Svrg).then(|| data.anchor(&state.tau));
        for _ in 0..config.inner_steps {
            let result = (|| {
                let kernel = gp.kernel(&state.tau)?;
                let grad = match mode {
                    GradientMode::Svrg => {
                        let batch = draw_minibatch(&mut mb_rng, nf, config.minibatch);
                        let anchor = anchor.as_ref().expect("anchor computed for SVRG");
                        svrg_corrected_gradient(gp, data, &state.tau, anchor, &batch, &kernel)?
                    }
                    GradientMode::Sghmc => {
                        let batch = draw_minibatch(&mut mb_rng, nf, config.minibatch);
                        stochastic_gradient(gp, data, &state.tau, &batch, &kernel)?
                    }
                    GradientMode::FullHmc => full_gradient(gp, data, &state.tau, &kernel)?,
                };
                let eta = draw_noise(&mut noise_rng, state.tau.len());
                svrg_hmc_step(&state, &grad, config.step_size, config.friction, &eta)
            })();
            match result {
                Ok(next) => state = next,
                Err(e) => return Err(recorder.diverged(step, e, &state, data.evaluations() - start_evals)),
            }
            step += 1;
        }
        if outer >= 1 {
            let nlp = || {
                let kernel = gp.kernel(&state.tau)?;
                neg_log_posterior(gp, data, &state.tau, &kernel)
            };
            if let Err(e) = recorder.record(&state.tau, nlp) {
                return Err(recorder.diverged(step, e, &state, data.evaluations() - start_evals));
            }
        }
    }
    let mut chain = recorder.chain;
    chain.gradient_eval_count = data.evaluations() - start_evals;
    chain.final_state = Some(state);
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_ingest::ContentCatalog;
    use crate::gp_model::HyperPriors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(f: usize, n: usize, seed: u64) -> (GpPrior, PoissonData) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..f).map(|_| vec![rng.random_range(0.0..1.0), 1.0]).collect();
        let cat = ContentCatalog::from_rows((1..=f as u32).collect(), rows).unwrap();
        let gp = GpPrior::new(cat, HyperPriors::uniform(2, 1.0, 1.0).unwrap()).unwrap();
        let counts = (0..f * n).map(|_| f64::from(rng.random_range(0u32..6))).collect();
        (gp, PoissonData::from_counts(f, n, counts).unwrap())
    }

    fn config(s: usize, l: usize, b: usize) -> SamplerConfig {
        SamplerConfig { total_steps: s, inner_steps: l, minibatch: b, step_size: 1e-3, friction: 10.0, burn_in: 0, seed: 5 }
    }

    fn scalar_state(tau: f64, theta: f64) -> SamplerState {
        SamplerState {
            tau: ParameterVector::from_flat(vec![tau], 0).unwrap(),
            momentum: MomentumState { theta: vec![theta] },
        }
    }

    #[test]
    fn hand_arithmetic_step() {
        let g = GradientVector::new(vec![2.0], 0);
        // Dh = 0.5 with h = 0.1
        let next = svrg_hmc_step(&scalar_state(0.0, 1.0), &g, 0.1, 5.0, &[0.0]).unwrap();
        assert!((next.momentum.theta[0] - 0.3).abs() < 1e-15);
        assert!((next.tau.as_slice()[0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let g = GradientVector::new(vec![3.0], 0);
        let s = scalar_state(0.4, -0.2);
        assert_eq!(svrg_hmc_step(&s, &g, 0.0, 10.0, &[1.5]).unwrap(), s);
    }

    #[test]
    fn full_friction_kills_momentum() {
        let g = GradientVector::new(vec![0.0], 0);
        let next = svrg_hmc_step(&scalar_state(0.7, 4.0), &g, 0.1, 10.0, &[0.0]).unwrap();
        assert_eq!(next.momentum.theta[0], 0.0);
        assert_eq!(next.tau.as_slice()[0], 0.7);
    }

    #[test]
    fn non_finite_step_reports_last_state() {
        let g = GradientVector::new(vec![f64::INFINITY], 0);
        let s = scalar_state(0.1, 0.0);
        match svrg_hmc_step(&s, &g, 0.01, 1.0, &[0.0]) {
            Err(Error::Diverged { partial, .. }) => assert_eq!(partial.final_state, Some(s)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let ok = config(40, 10, 2);
        assert!(ok.validate(12).is_ok());
        assert!(SamplerConfig { step_size: 0.2, ..ok.clone() }.validate(12).is_err());
        assert!(SamplerConfig { friction: 0.5, ..ok.clone() }.validate(12).is_err());
        assert!(SamplerConfig { minibatch: 13, ..ok.clone() }.validate(12).is_err());
        assert!(SamplerConfig { total_steps: 45, ..ok.clone() }.validate(12).is_err());
        assert!(SamplerConfig { burn_in: 3, ..ok }.validate(12).is_err());
    }

    #[test]
    fn defaults_keep_five_hundred() {
        let c = SamplerConfig::defaults_for(4000);
        assert_eq!(c.kept(), 500);
        assert_eq!(c.burn_in, c.default_burn_in());
        assert_eq!(c.minibatch, 200);
        assert!(c.validate(4000).is_ok());
    }

    #[test]
    fn chain_length_and_eval_count() {
        let (gp, data) = toy(4, 5, 1);
        let mut cfg = config(60, 5, 3);
        cfg.burn_in = 4;
        let chain = run_sampler(&gp, &data, &cfg).unwrap();
        assert_eq!(chain.len(), 60 / 5 - 1 - 4);
        assert_eq!(chain.gradient_eval_count, 12 * (20 + 3 * 5));
    }

    #[test]
    fn same_seed_same_chain() {
        let (gp, data) = toy(3, 4, 2);
        let cfg = config(40, 4, 2);
        let a = run_sampler(&gp, &data, &cfg).unwrap();
        let b = run_sampler(&gp, &data, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        let other = run_sampler(&gp, &data, &SamplerConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.samples, other.samples);
    }

    #[test]
    fn degenerate_svrg_equals_hmc() {
        let (gp, data) = toy(3, 2, 3);
        let cfg = config(30, 1, 6);
        let svrg = run_sampler(&gp, &data, &cfg).unwrap();
        let hmc = hmc_reference_sampler(&gp, &data, &cfg, GradientMode::FullHmc).unwrap();
        let sghmc = hmc_reference_sampler(&gp, &data, &cfg, GradientMode::Sghmc).unwrap();
        assert_eq!(svrg.samples, hmc.samples);
        assert_eq!(sghmc.samples, hmc.samples);
    }

    #[test]
    fn noiseless_small_steps_descend() {
        let (gp, data) = toy(1, 3, 4);
        let mut state = SamplerState::initial(&gp, &data);
        state.tau.as_mut_slice()[0] = 3.0;
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let k = gp.kernel(&state.tau).unwrap();
            let v = neg_log_posterior(&gp, &data, &state.tau, &k).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
            let g = full_gradient(&gp, &data, &state.tau, &k).unwrap();
            let zero = vec![0.0; state.tau.len()];
            state = svrg_hmc_step(&state, &g, 1e-3, 999.0, &zero).unwrap();
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (gp, data) = toy(3, 4, 7);
        let chain = run_sampler(&gp, &data, &config(40, 4, 2)).unwrap();
        let mut buf = Vec::new();
        chain.write_csv(&mut buf, &["seed=5".into()]).unwrap();
        let back = SampleChain::read_csv(&buf[..]).unwrap();
        assert_eq!(back.samples, chain.samples);
        assert_eq!(back.diagnostics, chain.diagnostics);
        assert_eq!(back.gradient_eval_count, chain.gradient_eval_count);
    }

    #[test]
    fn wrong_checkpoint_version_is_rejected() {
        let text = "# other-v9 contents=1\nsample,x\n0,1,2,3\n";
        assert!(SampleChain::read_csv(text.as_bytes()).is_err());
    }
}
