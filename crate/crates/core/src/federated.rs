//! In-process simulation of federated SVRG-HMC across edge nodes.
//!
//! Every round the server broadcasts τ, each participant returns its
//! variance-reduced likelihood gradient combined with the prior terms, and
//! the server averages the messages and takes one friction-HMC step. Node
//! anchors refresh every `L` rounds and one sample is kept every `L` rounds,
//! so a single node reproduces the local sampler step for step.
//!
//! Node `m` holds a thinned share `π_m` of the request stream, so its
//! likelihood uses rate `π_m·e^{λ}` and the node terms add up to the
//! centralized likelihood.

use std::io::Write;

use rand::seq::index;

use crate::codec::{decode_gradient, encode_gradient, EncodedGradient};
use crate::data_ingest::RequestMatrix;
use crate::error::{Error, Result};
use crate::gp_model::{GpPrior, GradientVector, ParameterVector, PoissonData, SvrgAnchor};
use crate::predictor::rmse;
use crate::quantizer::{dequantize, quantize};
use crate::rng::{self, Stream, StreamRng};
use crate::sampler::{draw_minibatch, draw_noise, svrg_hmc_step, Recorder, SampleChain, SamplerConfig, SamplerState};

/// Unquantized float messages, or quantized and Elias-coded with level `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Native,
    Quantized(u32),
}

/// How the server averages node messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Each message carries `M ×` its local likelihood gradient; plain mean.
    #[default]
    Uniform,
    /// Each message carries `1/π_m ×` its local gradient; `π`-weighted mean.
    DatasetSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedConfig {
    pub sampler: SamplerConfig,
    pub mode: Mode,
    /// Participants per round; `None` means all nodes.
    pub participants: Option<usize>,
    pub weighting: Weighting,
}

impl FederatedConfig {
    pub fn new(sampler: SamplerConfig, mode: Mode) -> Self {
        Self { sampler, mode, participants: None, weighting: Weighting::Uniform }
    }
}

/// One simulated edge node.
#[derive(Debug, Clone)]
pub struct FapNode {
    pub id: usize,
    pub data: PoissonData,
    pub anchor: Option<SvrgAnchor>,
    minibatch_rng: StreamRng,
    quantize_rng: StreamRng,
}

impl FapNode {
    /// `share` is the node's fraction `π_m` of all requests.
    pub fn new(id: usize, local: &RequestMatrix, share: f64, seed: u64) -> Self {
        Self {
            id,
            data: PoissonData::with_share(local, share),
            anchor: None,
            minibatch_rng: rng::stream(seed, Stream::Minibatch, id as u64),
            quantize_rng: rng::stream(seed, Stream::Quantize, id as u64),
        }
    }

    pub fn share(&self) -> f64 {
        self.data.share()
    }
}

/// Nodes over per-node matrices with `π_m = local mass / total mass`
/// (`1/M` each when there are no requests at all).
pub fn build_nodes(locals: &[RequestMatrix], seed: u64) -> Result<Vec<FapNode>> {
    if locals.is_empty() {
        return Err(Error::arg("at least one node is required"));
    }
    let shape = (locals[0].num_contents(), locals[0].num_periods());
    if locals.iter().any(|m| (m.num_contents(), m.num_periods()) != shape) {
        return Err(Error::arg("node request matrices differ in shape"));
    }
    let total: f64 = locals.iter().map(|m| m.total()).sum();
    let m = locals.len() as f64;
    Ok(locals
        .iter()
        .enumerate()
        .map(|(id, local)| {
            let share = if total > 0.0 { local.total() / total } else { 1.0 / m };
            FapNode::new(id, local, share, seed)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Raw(GradientVector),
    Encoded(EncodedGradient),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub node_id: usize,
    pub round_index: usize,
    pub payload: Payload,
    pub payload_bits: u64,
}

/// Read-only state shared by every node in a round.
#[derive(Debug, Clone)]
pub struct RoundContext<'a> {
    pub round: usize,
    pub tau: &'a ParameterVector,
    /// GP and hyperprior gradient at τ.
    pub prior: &'a GradientVector,
    pub num_nodes: usize,
    pub config: &'a FederatedConfig,
}

/// The node's gradient message before any quantization.
fn local_gradient(node: &mut FapNode, ctx: &RoundContext<'_>) -> Result<GradientVector> {
    let cfg = &ctx.config.sampler;
    let nf = node.data.num_data();
    if cfg.minibatch > nf {
        return Err(Error::Config(format!("minibatch {} exceeds local NF = {nf}", cfg.minibatch)));
    }
    if ctx.round.is_multiple_of(cfg.inner_steps) || node.anchor.is_none() {
        node.anchor = Some(node.data.anchor(ctx.tau));
    }
    let anchor = node.anchor.as_ref().expect("anchor refreshed above");
    let batch = draw_minibatch(&mut node.minibatch_rng, nf, cfg.minibatch);
    let d = node.data.svrg_data_gradient(ctx.tau.lambda(), anchor, &batch);
    let scale = match ctx.config.weighting {
        Weighting::Uniform => ctx.num_nodes as f64,
        Weighting::DatasetSize if node.share() > 0.0 => 1.0 / node.share(),
        Weighting::DatasetSize => 0.0,
    };
    let mut g = ctx.prior.clone();
    g.add_lambda_scaled(&d, scale);
    if !g.is_finite() {
        return Err(Error::numerical("non-finite node gradient"));
    }
    Ok(g)
}

fn wrap(node: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Node { node, source: Box::new(e) }
}

/// Unquantized node message.
pub fn local_round(node: &mut FapNode, ctx: &RoundContext<'_>) -> Result<RoundMessage> {
    let g = local_gradient(node, ctx).map_err(wrap(node.id))?;
    let bits = 64 * g.len() as u64;
    Ok(RoundMessage { node_id: node.id, round_index: ctx.round, payload: Payload::Raw(g), payload_bits: bits })
}

/// Node message quantized with level `s` and Elias-coded.
pub fn quantized_local_round(node: &mut FapNode, ctx: &RoundContext<'_>, s: u32) -> Result<RoundMessage> {
    let id = node.id;
    let g = local_gradient(node, ctx).map_err(wrap(id))?;
    let q = quantize(&g.values, s, &mut node.quantize_rng).map_err(wrap(id))?;
    let e = encode_gradient(&q).map_err(wrap(id))?;
    let bits = e.total_bits as u64;
    Ok(RoundMessage { node_id: id, round_index: ctx.round, payload: Payload::Encoded(e), payload_bits: bits })
}

/// Server side of the simulation.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub state: SamplerState,
    pub round: usize,
    pub participants: Vec<usize>,
    pub cumulative_bits: u64,
}

/// Decodes and averages one message per participant, then steps θ and τ.
///
/// `shares` holds `π_m` for every node and is used only by
/// [`Weighting::DatasetSize`].
pub fn server_aggregate(
    messages: &[RoundMessage],
    server: &mut ServerState,
    config: &FederatedConfig,
    shares: &[f64],
    noise: &[f64],
) -> Result<GradientVector> {
    let dim = server.state.tau.len();
    let f = server.state.tau.num_contents();
    if messages.len() != server.participants.len()
        || server.participants.iter().any(|p| !messages.iter().any(|m| m.node_id == *p))
    {
        return Err(Error::State(format!(
            "round {}: expected messages from nodes {:?}",
            server.round, server.participants
        )));
    }
    let mut decoded = Vec::with_capacity(messages.len());
    for m in messages {
        if m.round_index != server.round {
            return Err(Error::State(format!("node {} sent round {} during round {}", m.node_id, m.round_index, server.round)));
        }
        let values = match (&m.payload, config.mode) {
            (Payload::Raw(g), _) => g.values.clone(),
            (Payload::Encoded(e), Mode::Quantized(s)) => dequantize(&decode_gradient(e, dim, s).map_err(wrap(m.node_id))?),
            (Payload::Encoded(_), Mode::Native) => return Err(Error::State("encoded payload in native mode".into())),
        };
        if values.len() != dim {
            return Err(Error::State(format!("node {} sent {} components, expected {dim}", m.node_id, values.len())));
        }
        decoded.push((m.node_id, values));
    }
    let mut agg = decoded[0].1.clone();
    let weights: Vec<f64> = match config.weighting {
        Weighting::Uniform => vec![1.0; decoded.len()],
        Weighting::DatasetSize => decoded.iter().map(|(id, _)| shares[*id]).collect(),
    };
    let wsum: f64 = weights.iter().sum();
    if decoded.len() > 1 || weights[0] != 1.0 {
        if wsum <= 0.0 {
            return Err(Error::numerical("participant weights sum to zero"));
        }
        for a in agg.iter_mut() {
            *a *= weights[0];
        }
        for ((_, v), w) in decoded.iter().zip(&weights).skip(1) {
            for (a, x) in agg.iter_mut().zip(v) {
                *a += w * x;
            }
        }
        for a in agg.iter_mut() {
            *a /= wsum;
        }
    }
    let grad = GradientVector::new(agg, f);
    let cfg = &config.sampler;
    server.state = svrg_hmc_step(&server.state, &grad, cfg.step_size, cfg.friction, noise)?;
    server.cumulative_bits += messages.iter().map(|m| m.payload_bits).sum::<u64>();
    server.round += 1;
    Ok(grad)
}

/// Bits sent per round and in total.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommReport {
    pub per_round_bits: Vec<u64>,
    pub cumulative_bits: u64,
}

/// One row of the round log, written every `L` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLogRow {
    pub round: usize,
    /// RMSE of the running posterior-mean forecast (the current state's
    /// forecast while still in burn-in) against held-out counts.
    pub rmse_holdout: Option<f64>,
    pub cumulative_bits: u64,
    pub neg_log_posterior: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FederatedRun {
    pub chain: SampleChain,
    pub comm: CommReport,
    pub log: Vec<RoundLogRow>,
}

/// Writes `round,rmse_holdout,cumulative_bits,neg_log_posterior`.
pub fn write_round_log<W: Write>(mut w: W, rows: &[RoundLogRow], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "round,rmse_holdout,cumulative_bits,neg_log_posterior")?;
    for r in rows {
        let rmse = r.rmse_holdout.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{rmse},{},{}", r.round, r.cumulative_bits, r.neg_log_posterior)?;
    }
    Ok(())
}

fn global_nlp(gp: &GpPrior, nodes: &[FapNode], tau: &ParameterVector) -> Result<f64> {
    let kernel = gp.kernel(tau)?;
    let data: f64 = nodes.iter().map(|n| n.data.value(tau.lambda())).sum();
    let v = data + gp.value(tau, &kernel);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical("non-finite negative log posterior"))
    }
}

/// Starting state pooled over all nodes.
pub fn initial_state(gp: &GpPrior, nodes: &[FapNode]) -> SamplerState {
    let f = gp.num_contents();
    let n = nodes.first().map_or(0, |x| x.data.num_periods());
    let mut pooled = vec![0.0; f * n];
    for node in nodes {
        for (i, p) in pooled.iter_mut().enumerate() {
            *p += node.data.count(i);
        }
    }
    let data = PoissonData::from_counts(f, n, pooled).expect("pooled counts match F x N");
    SamplerState::initial(gp, &data)
}

/// Full federated run from the pooled initial state.
pub fn run_federated(
    gp: &GpPrior,
    nodes: &mut [FapNode],
    config: &FederatedConfig,
    holdout: Option<&[f64]>,
) -> Result<FederatedRun> {
    let init = initial_state(gp, nodes);
    run_federated_from(gp, nodes, config, holdout, init)
}

pub fn run_federated_from(
    gp: &GpPrior,
    nodes: &mut [FapNode],
    config: &FederatedConfig,
    holdout: Option<&[f64]>,
    init: SamplerState,
) -> Result<FederatedRun> {
    let m = nodes.len();
    if m == 0 {
        return Err(Error::arg("at least one node is required"));
    }
    let cfg = &config.sampler;
    let nf = nodes[0].data.num_data();
    cfg.validate(nf)?;
    if let Mode::Quantized(0) = config.mode {
        return Err(Error::Config("quantization level s must be at least 1".into()));
    }
    let k = config.participants.unwrap_or(m);
    if k == 0 || k > m {
        return Err(Error::Config(format!("participants per round must be in [1, {m}], got {k}")));
    }
    if holdout.is_some_and(|h| h.len() != gp.num_contents()) {
        return Err(Error::arg("holdout length differs from F"));
    }
    if init.tau.len() != gp.param_dim() {
        return Err(Error::arg("initial state does not match the model dimension"));
    }
    for (i, n) in nodes.iter_mut().enumerate() {
        if n.id != i {
            return Err(Error::arg("node ids must be 0..M in order"));
        }
        n.anchor = None;
    }
    let shares: Vec<f64> = nodes.iter().map(|n| n.share()).collect();
    let mut noise_rng = rng::stream(cfg.seed, Stream::Noise, 0);
    let mut part_rng = rng::stream(cfg.seed, Stream::Participants, 0);
    let mut server = ServerState { state: init, round: 0, participants: (0..m).collect(), cumulative_bits: 0 };
    let mut recorder = Recorder::new(cfg.burn_in);
    let mut comm = CommReport::default();
    let mut log = Vec::new();
    let mut running = vec![0.0; gp.num_contents()];
    let evals_before: u64 = nodes.iter().map(|n| n.data.evaluations()).sum();
    let evals = |nodes: &[FapNode]| nodes.iter().map(|n| n.data.evaluations()).sum::<u64>() - evals_before;

    for outer in 0..cfg.outer_rounds() {
        for _ in 0..cfg.inner_steps {
            let before = server.cumulative_bits;
            let step = server.round;
            let result = (|| {
                if k < m {
                    let mut chosen = index::sample(&mut part_rng, m, k).into_vec();
                    chosen.sort_unstable();
                    server.participants = chosen;
                }
                let kernel = gp.kernel(&server.state.tau)?;
                let prior = gp.gradient(&server.state.tau, &kernel);
                let tau = server.state.tau.clone();
                let ctx = RoundContext { round: server.round, tau: &tau, prior: &prior, num_nodes: m, config };
                let mut messages = Vec::with_capacity(server.participants.len());
                for &p in &server.participants {
                    let msg = match config.mode {
                        Mode::Native => local_round(&mut nodes[p], &ctx)?,
                        Mode::Quantized(s) => quantized_local_round(&mut nodes[p], &ctx, s)?,
                    };
                    messages.push(msg);
                }
                let eta = draw_noise(&mut noise_rng, tau.len());
                server_aggregate(&messages, &mut server, config, &shares, &eta)
            })();
            if let Err(e) = result {
                let last = server.state.clone();
                return Err(recorder.diverged(step, e, &last, evals(nodes)));
            }
            comm.per_round_bits.push(server.cumulative_bits - before);
        }
        if outer >= 1 {
            let tau = server.state.tau.clone();
            let recorded = recorder.record(&tau, || global_nlp(gp, nodes, &tau));
            let kept = match recorded {
                Ok(k) => k,
                Err(e) => {
                    let last = server.state.clone();
                    return Err(recorder.diverged(server.round, e, &last, evals(nodes)));
                }
            };
            let nlp = match recorder.chain.diagnostics.last() {
                Some(v) if kept => *v,
                _ => global_nlp(gp, nodes, &tau).unwrap_or(f64::NAN),
            };
            let rmse_holdout = match holdout {
                Some(actual) => {
                    let forecast: Vec<f64> = if kept {
                        for (r, l) in running.iter_mut().zip(tau.lambda()) {
                            *r += l.exp();
                        }
                        let n = recorder.chain.samples.len() as f64;
                        running.iter().map(|r| r / n).collect()
                    } else {
                        tau.lambda().iter().map(|l| l.exp()).collect()
                    };
                    Some(rmse(&forecast, actual)?)
                }
                None => None,
            };
            log.push(RoundLogRow {
                round: server.round,
                rmse_holdout,
                cumulative_bits: server.cumulative_bits,
                neg_log_posterior: nlp,
            });
        }
    }
    let mut chain = recorder.chain;
    chain.gradient_eval_count = evals(nodes);
    chain.final_state = Some(server.state);
    comm.cumulative_bits = server.cumulative_bits;
    Ok(FederatedRun { chain, comm, log })
}
