use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data_ingest::RequestMatrix;

struct Instance {
    gp: GpPrior,
    data: PoissonData,
    params: ParameterVector,
}

fn random_instance(seed: u64, f: usize, q: usize, n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..f).map(|_| (0..q).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let catalog = ContentCatalog::from_rows((1..=f as u32).collect(), rows).unwrap();
    let shape: Vec<f64> = (0..q + 2).map(|_| rng.random_range(0.5..3.0)).collect();
    let rate: Vec<f64> = (0..q + 2).map(|_| rng.random_range(0.5..3.0)).collect();
    let gp = GpPrior::new(catalog, HyperPriors::new(shape, rate).unwrap()).unwrap();
    let counts: Vec<f64> = (0..f * n).map(|_| f64::from(rng.random_range(0u32..8))).collect();
    let data = PoissonData::from_counts(f, n, counts).unwrap();
    let params = random_params(&mut rng, f, q);
    Instance { gp, data, params }
}

fn random_params(rng: &mut ChaCha8Rng, f: usize, q: usize) -> ParameterVector {
    let lambda: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.5)).collect();
    let rho: Vec<f64> = (0..q + 2).map(|_| rng.random_range(-1.0..0.7)).collect();
    ParameterVector::new(&lambda, &rho)
}

fn phi(inst: &Instance, params: &ParameterVector) -> f64 {
    let k = inst.gp.kernel(params).unwrap();
    neg_log_posterior(&inst.gp, &inst.data, params, &k).unwrap()
}

/// Log-density of every factor of the unnormalized posterior evaluated
/// directly (dense inverse and determinant, explicit Poisson, Gaussian and
/// Gamma densities including the ρ Jacobian), then stripped of the constants
/// that φ omits.
fn naive_phi(inst: &Instance, params: &ParameterVector, jitter: f64) -> f64 {
    let f = inst.gp.num_contents();
    let lambda = params.lambda();
    let beta = params.beta();
    let cat = &inst.gp.catalog;
    let mut kp = DMatrix::zeros(f, f);
    for i in 0..f {
        for j in 0..f {
            let mut s = 0.0;
            for (q, (a, b)) in cat.feature(i).iter().zip(cat.feature(j)).enumerate() {
                s += beta[q + 2] * (a - b).powi(2);
            }
            kp[(i, j)] = beta[1] * (-s).exp() + if i == j { beta[0] + jitter } else { 0.0 };
        }
    }
    let det = kp.clone().lu().determinant();
    let inv = kp.try_inverse().unwrap();
    let lv = DVector::from_column_slice(lambda);
    let quad = (lv.transpose() * &inv * &lv)[(0, 0)];

    let mut log_post = 0.0;
    let mut log_fact = 0.0;
    for (fi, &l) in lambda.iter().enumerate() {
        for n in 0..inst.data.num_periods() {
            let r = inst.data.count(fi * inst.data.num_periods() + n);
            let lf: f64 = (1..=r as u64).map(|k| (k as f64).ln()).sum();
            log_fact += lf;
            log_post += r * l - l.exp() - lf;
        }
    }
    let gauss_const = 0.5 * f as f64 * (2.0 * std::f64::consts::PI).ln();
    log_post += -0.5 * det.ln() - 0.5 * quad - gauss_const;

    let mut gamma_const = 0.0;
    for (q, rho) in params.rho().iter().enumerate() {
        let a = inst.gp.priors.shape()[q];
        let b = inst.gp.priors.rate()[q];
        let norm = a * b.ln() - ln_gamma(a);
        gamma_const += norm;
        // Gamma log-density in β plus log|dβ/dρ| = ρ
        log_post += norm + (a - 1.0) * rho - b * rho.exp() + rho;
    }
    -log_post - log_fact - gauss_const + gamma_const
}

/// Lanczos approximation, test-only.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[test]
fn hand_evaluated_single_content() {
    let catalog = ContentCatalog::from_rows(vec![1], vec![vec![0.0]]).unwrap();
    let gp = GpPrior::new(catalog, HyperPriors::uniform(1, 1.0, 1.0).unwrap()).unwrap();
    let m = RequestMatrix::from_counts(vec![1], 1, vec![0.0]).unwrap();
    let data = PoissonData::new(&m);
    let params = ParameterVector::new(&[0.0], &[0.0, 0.0, 0.0]);
    let k = gp.kernel(&params).unwrap();
    let v = neg_log_posterior(&gp, &data, &params, &k).unwrap();
    // e^0 + ½log(β1+β0+jitter) + 0 + three prior terms of (0 + 1)
    let expected = 1.0 + 0.5 * (2.0 + k.jitter()).ln() + 3.0;
    assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
}

#[test]
fn zero_requests_drop_the_linear_term() {
    let inst = random_instance(3, 3, 2, 4);
    let zero = PoissonData::from_counts(3, 4, vec![0.0; 12]).unwrap();
    let k = inst.gp.kernel(&inst.params).unwrap();
    let with_zero = neg_log_posterior(&inst.gp, &zero, &inst.params, &k).unwrap();
    let exp_sum: f64 = inst.params.lambda().iter().map(|l| 4.0 * l.exp()).sum();
    let gp_part = inst.gp.value(&inst.params, &k);
    assert!((with_zero - exp_sum - gp_part).abs() < 1e-12);
}

#[test]
fn matches_naive_density_oracle() {
    for (seed, f) in [(1u64, 1usize), (2, 2), (3, 3), (4, 4), (5, 4)] {
        let inst = random_instance(seed, f, 2, 3);
        let k = inst.gp.kernel(&inst.params).unwrap();
        let fast = neg_log_posterior(&inst.gp, &inst.data, &inst.params, &k).unwrap();
        let slow = naive_phi(&inst, &inst.params, k.jitter());
        let rel = (fast - slow).abs() / slow.abs().max(1e-300);
        assert!(rel < 1e-10, "F={f}: {fast} vs {slow} (rel {rel:e})");
    }
}

#[test]
fn poisson_term_vanishes_at_the_rate_matching_count() {
    let r = 5.0f64;
    let catalog = ContentCatalog::from_rows(vec![1], vec![vec![0.0]]).unwrap();
    let m = RequestMatrix::from_counts(vec![1], 1, vec![r]).unwrap();
    let data = PoissonData::new(&m);
    let lambda = r.ln();
    assert!(data.full_gradient(&[lambda])[0].abs() < 1e-14);
    drop(catalog);
}

#[test]
fn zero_requests_gradient_is_plug_in() {
    let inst = random_instance(9, 4, 2, 3);
    let zero = PoissonData::from_counts(4, 3, vec![0.0; 12]).unwrap();
    let params = ParameterVector::new(&[0.0; 4], inst.params.rho());
    let k = inst.gp.kernel(&params).unwrap();
    let g = full_gradient(&inst.gp, &zero, &params, &k).unwrap();
    // λ = 0 ⇒ K'^{-1}λ = 0, so each λ-component is N·e^0 = 3
    for v in g.lambda() {
        assert!((v - 3.0).abs() < 1e-14);
    }
}

fn max_rel_fd_error(inst: &Instance, params: &ParameterVector) -> f64 {
    let k = inst.gp.kernel(params).unwrap();
    let g = full_gradient(&inst.gp, &inst.data, params, &k).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for c in 0..params.len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[c] += h;
        let mut minus = params.clone();
        minus.as_mut_slice()[c] -= h;
        let fd = (phi(inst, &plus) - phi(inst, &minus)) / (2.0 * h);
        let rel = (g.values[c] - fd).abs() / fd.abs().max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let inst = random_instance(11, 5, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let params = random_params(&mut rng, 5, 3);
        let err = max_rel_fd_error(&inst, &params);
        assert!(err <= 1e-4, "relative error {err:e}");
    }
}

fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[test]
fn full_minibatch_is_the_full_gradient() {
    let inst = random_instance(21, 3, 2, 2);
    let k = inst.gp.kernel(&inst.params).unwrap();
    let all: Vec<usize> = (0..inst.data.num_data()).collect();
    let s = stochastic_gradient(&inst.gp, &inst.data, &inst.params, &all, &k).unwrap();
    let f = full_gradient(&inst.gp, &inst.data, &inst.params, &k).unwrap();
    assert_eq!(s, f);
}

#[test]
fn minibatch_estimators_are_unbiased_under_enumeration() {
    // NF = 6
    let inst = random_instance(22, 3, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let k = inst.gp.kernel(&inst.params).unwrap();
    let full = full_gradient(&inst.gp, &inst.data, &inst.params, &k).unwrap();
    let anchor_params = random_params(&mut rng, 3, 2);
    let anchor = inst.data.anchor(&anchor_params);
    let subsets = all_subsets(6, 2);
    assert_eq!(subsets.len(), 15);
    let mut mean_sg = vec![0.0; full.len()];
    let mut mean_svrg = vec![0.0; full.len()];
    for s in &subsets {
        let sg = stochastic_gradient(&inst.gp, &inst.data, &inst.params, s, &k).unwrap();
        let vr = svrg_corrected_gradient(&inst.gp, &inst.data, &inst.params, &anchor, s, &k).unwrap();
        for c in 0..full.len() {
            mean_sg[c] += sg.values[c] / subsets.len() as f64;
            mean_svrg[c] += vr.values[c] / subsets.len() as f64;
        }
    }
    for c in 0..full.len() {
        assert!((mean_sg[c] - full.values[c]).abs() < 1e-10);
        assert!((mean_svrg[c] - full.values[c]).abs() < 1e-10);
    }
}

#[test]
fn single_datum_touches_one_content() {
    let inst = random_instance(24, 3, 2, 2);
    let k = inst.gp.kernel(&inst.params).unwrap();
    let prior = inst.gp.gradient(&inst.params, &k);
    // datum 3 = content 1, period 1
    let g = stochastic_gradient(&inst.gp, &inst.data, &inst.params, &[3], &k).unwrap();
    for c in 0..3 {
        let diff = g.values[c] - prior.values[c];
        if c == 1 {
            assert!(diff.abs() > 0.0);
        } else {
            assert_eq!(diff, 0.0);
        }
    }
    assert_eq!(g.rho(), prior.rho());
}

#[test]
fn empty_minibatch_is_rejected() {
    let inst = random_instance(25, 2, 1, 2);
    let k = inst.gp.kernel(&inst.params).unwrap();
    assert!(matches!(
        stochastic_gradient(&inst.gp, &inst.data, &inst.params, &[], &k),
        Err(Error::Argument(_))
    ));
}

#[test]
fn svrg_at_anchor_returns_anchor_gradient() {
    let inst = random_instance(26, 3, 2, 2);
    let k = inst.gp.kernel(&inst.params).unwrap();
    let anchor = inst.data.anchor(&inst.params);
    let full = full_gradient(&inst.gp, &inst.data, &inst.params, &k).unwrap();
    for s in all_subsets(6, 2) {
        let vr = svrg_corrected_gradient(&inst.gp, &inst.data, &inst.params, &anchor, &s, &k).unwrap();
        assert_eq!(vr, full);
    }
}

#[test]
fn single_datum_dataset_svrg_is_exact() {
    let catalog = ContentCatalog::from_rows(vec![1], vec![vec![0.3]]).unwrap();
    let gp = GpPrior::new(catalog, HyperPriors::uniform(1, 1.0, 1.0).unwrap()).unwrap();
    let data = PoissonData::from_counts(1, 1, vec![4.0]).unwrap();
    let params = ParameterVector::new(&[0.7], &[0.1, -0.2, 0.3]);
    let anchor = data.anchor(&ParameterVector::new(&[-0.4], &[0.0, 0.0, 0.0]));
    let k = gp.kernel(&params).unwrap();
    let vr = svrg_corrected_gradient(&gp, &data, &params, &anchor, &[0], &k).unwrap();
    let full = full_gradient(&gp, &data, &params, &k).unwrap();
    for (a, b) in vr.values.iter().zip(&full.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn svrg_variance_is_smaller_near_the_anchor() {
    let inst = random_instance(27, 3, 2, 2);
    let mut params = inst.params.clone();
    for v in params.as_mut_slice() {
        *v += 1e-3;
    }
    let anchor = inst.data.anchor(&inst.params);
    let k = inst.gp.kernel(&params).unwrap();
    let subsets = all_subsets(6, 2);
    let variance = |f: &dyn Fn(&[usize]) -> GradientVector| {
        let draws: Vec<GradientVector> = subsets.iter().map(|s| f(s)).collect();
        let mut total = 0.0;
        for c in 0..draws[0].len() {
            let mean = draws.iter().map(|d| d.values[c]).sum::<f64>() / draws.len() as f64;
            total += draws.iter().map(|d| (d.values[c] - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        }
        total
    };
    let v_sg = variance(&|s| stochastic_gradient(&inst.gp, &inst.data, &params, s, &k).unwrap());
    let v_vr = variance(&|s| svrg_corrected_gradient(&inst.gp, &inst.data, &params, &anchor, s, &k).unwrap());
    assert!(v_vr <= v_sg, "svrg {v_vr} vs sgd {v_sg}");
}

#[test]
fn kernel_matrix_matches_pairwise_oracle() {
    let inst = random_instance(31, 3, 4, 1);
    let beta = inst.params.beta();
    let k = inst.gp.kernel(&inst.params).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let mut expected = sek_kernel(inst.gp.catalog.feature(i), inst.gp.catalog.feature(j), &beta).unwrap();
            if i == j {
                expected += beta[0] + k.jitter();
            }
            assert!((k.k_prime()[(i, j)] - expected).abs() <= 1e-15 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn evaluation_counter_counts_each_datum() {
    let inst = random_instance(32, 3, 2, 4);
    inst.data.reset_evaluations();
    let _ = inst.data.anchor(&inst.params);
    assert_eq!(inst.data.evaluations(), 12);
    let _ = inst.data.full_gradient(inst.params.lambda());
    assert_eq!(inst.data.evaluations(), 24);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_symmetric_and_positive_definite(seed in 0u64..10_000, f in 1usize..8, q in 1usize..4) {
        let inst = random_instance(seed, f, q, 1);
        let k = inst.gp.kernel(&inst.params).unwrap();
        let kp = k.k_prime();
        for i in 0..f {
            for j in 0..f {
                let scale = kp[(i, j)].abs().max(kp[(j, i)].abs()).max(1e-300);
                prop_assert!((kp[(i, j)] - kp[(j, i)]).abs() <= 1e-12 * scale);
            }
        }
        let l = k.cholesky_factor();
        prop_assert!((0..f).all(|i| l[(i, i)] > 0.0));
        prop_assert!(inst.params.beta().iter().all(|b| *b > 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..10_000, f in 1usize..=8) {
        let inst = random_instance(seed, f, 2, 3);
        let err = max_rel_fd_error(&inst, &inst.params);
        prop_assert!(err <= 1e-4, "relative error {:e}", err);
    }
}
