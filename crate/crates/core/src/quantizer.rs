//! Unbiased stochastic gradient quantization.
//!
//! Each coordinate's magnitude ratio `|v_i|/‖v‖₂` is randomly rounded to one
//! of the two neighbouring points of the grid `{0, 1/s, ..., 1}` so that the
//! expected reconstruction equals `v`.

use rand::Rng;

use crate::error::{Error, Result};

/// `(‖v‖₂, signs, levels)` with `levels[i] ∈ {0..s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGradient {
    pub norm: f64,
    /// `+1` or `-1`; zero coordinates carry `+1`.
    pub signs: Vec<i8>,
    pub levels: Vec<u32>,
    pub s: u32,
}

impl QuantizedGradient {
    /// The all-zero tuple of dimension `d`.
    pub fn zero(d: usize, s: u32) -> Self {
        Self { norm: 0.0, signs: vec![1; d], levels: vec![0; d], s }
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    /// Number of nonzero levels, `‖Q‖₀`.
    pub fn nonzeros(&self) -> usize {
        self.levels.iter().filter(|&&l| l != 0).count()
    }

    /// Same tuple with `+1` signs on every zero level, which is what a
    /// decoder recovers (zero levels are never transmitted).
    pub fn canonical(&self) -> Self {
        let mut c = self.clone();
        for (g, &l) in c.signs.iter_mut().zip(&self.levels) {
            if l == 0 {
                *g = 1;
            }
        }
        c
    }

    pub fn reconstruct(&self, i: usize) -> f64 {
        self.norm * f64::from(self.signs[i]) * f64::from(self.levels[i]) / f64::from(self.s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::arg("quantization level s must be at least 1"));
        }
        if self.signs.len() != self.levels.len() {
            return Err(Error::arg("signs and levels differ in length"));
        }
        if !(self.norm.is_finite() && self.norm >= 0.0) {
            return Err(Error::arg(format!("invalid norm {}", self.norm)));
        }
        if self.signs.iter().any(|&g| g != 1 && g != -1) {
            return Err(Error::arg("signs must be +1 or -1"));
        }
        if let Some(l) = self.levels.iter().find(|&&l| l > self.s) {
            return Err(Error::arg(format!("level {l} exceeds s = {}", self.s)));
        }
        Ok(())
    }
}

/// Draws `Q(v, s)`.
///
/// The zero vector maps to norm 0 with all levels 0. One uniform draw is
/// consumed per coordinate regardless of its value.
pub fn quantize<R: Rng + ?Sized>(v: &[f64], s: u32, rng: &mut R) -> Result<QuantizedGradient> {
    if s == 0 {
        return Err(Error::arg("quantization level s must be at least 1"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("cannot quantize a non-finite vector"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::arg("vector norm overflows"));
    }
    let d = v.len();
    let mut signs = Vec::with_capacity(d);
    let mut levels = Vec::with_capacity(d);
    let sf = f64::from(s);
    let scale = if norm == 0.0 { 0.0 } else { sf / norm };
    let exact = !scale.is_finite();
    for &x in v {
        let u: f64 = rng.random();
        signs.push(if x < 0.0 { -1 } else { 1 });
        let r = if exact { sf * (x.abs() / norm) } else { x.abs() * scale };
        let l = (r as u32).min(s - 1);
        let level = l + u32::from(u < r - f64::from(l));
        levels.push(level.min(s));
    }
    Ok(QuantizedGradient { norm, signs, levels, s })
}

/// `norm · sign_i · level_i / s` per coordinate.
pub fn dequantize(q: &QuantizedGradient) -> Vec<f64> {
    (0..q.dim()).map(|i| q.reconstruct(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_coordinate_is_exact() {
        for s in [1, 2, 7, 256] {
            let q = quantize(&[-2.5, 0.0, 0.0], s, &mut rng(1)).unwrap();
            assert_eq!(q.levels, vec![s, 0, 0]);
            assert_eq!(dequantize(&q), vec![-2.5, 0.0, 0.0]);
        }
    }

    #[test]
    fn three_four_five_distribution() {
        let mut r = rng(2);
        let n = 200_000;
        let mut high = 0;
        let mut sum = 0.0;
        for _ in 0..n {
            let q = quantize(&[3.0, 4.0], 2, &mut r).unwrap();
            assert!(q.levels[0] == 1 || q.levels[0] == 2);
            high += usize::from(q.levels[0] == 2);
            sum += q.reconstruct(0);
        }
        let p = high as f64 / n as f64;
        // P(level 2) = 0.2, reconstruction mean 3
        assert!((p - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / n as f64).sqrt());
        let se = 2.5 * (0.2f64 * 0.8 / n as f64).sqrt();
        assert!((sum / n as f64 - 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn equal_magnitudes_with_one_level() {
        let d = 16;
        let v = vec![0.3; d];
        let mut r = rng(3);
        let n = 100_000;
        let ones: usize = (0..n).map(|_| quantize(&v, 1, &mut r).unwrap().levels[5] as usize).sum();
        let p = 1.0 / (d as f64).sqrt();
        assert!((ones as f64 / n as f64 - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn zero_vector_round_trips() {
        let q = quantize(&[0.0; 5], 4, &mut rng(4)).unwrap();
        assert_eq!(q, QuantizedGradient::zero(5, 4));
        assert_eq!(dequantize(&q), vec![0.0; 5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize(&[1.0, f64::NAN], 4, &mut rng(5)).is_err());
        assert!(quantize(&[1.0], 0, &mut rng(5)).is_err());
    }

    #[test]
    fn monte_carlo_mean_matches_input() {
        let mut r = rng(6);
        let v: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = 100_000;
        let mut sum = [0.0; 10];
        let mut sq = [0.0; 10];
        for _ in 0..n {
            for (i, x) in dequantize(&quantize(&v, 4, &mut r).unwrap()).into_iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        for i in 0..10 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt().max(1e-12);
            assert!((mean - v[i]).abs() <= 3.5 * se, "coordinate {i}");
        }
    }

    proptest! {
        #[test]
        fn levels_stay_next_to_the_ratio(
            v in prop::collection::vec(-10.0f64..10.0, 1..40),
            s in 1u32..300,
            seed in any::<u64>(),
        ) {
            let q = quantize(&v, s, &mut rng(seed)).unwrap();
            prop_assert!(q.validate().is_ok());
            for (i, x) in v.iter().enumerate() {
                let ratio = if q.norm == 0.0 { 0.0 } else { x.abs() / q.norm };
                let l = f64::from(q.levels[i]);
                let sf = f64::from(s);
                prop_assert!(ratio >= (l - 1.0) / sf - 1e-12 && ratio <= (l + 1.0) / sf + 1e-12);
                prop_assert!(q.reconstruct(i).abs() <= q.norm * (1.0 + 1e-15));
                if *x == 0.0 {
                    prop_assert_eq!(q.signs[i], 1);
                    prop_assert_eq!(q.levels[i], 0);
                }
            }
        }

        #[test]
        fn same_seed_same_draw(v in prop::collection::vec(-1.0f64..1.0, 1..20), seed in any::<u64>()) {
            prop_assert_eq!(quantize(&v, 8, &mut rng(seed)).unwrap(), quantize(&v, 8, &mut rng(seed)).unwrap());
        }

        #[test]
        fn expected_sparsity_obeys_the_corrected_bound(
            v in prop::collection::vec(-1.0f64..1.0, 2..200),
            s in 1u32..20,
        ) {
            // exact expectation: Σ_i min(1, s·|v_i|/‖v‖)
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(norm > 0.0);
            let sf = f64::from(s);
            let expected: f64 = v.iter().map(|x| (sf * x.abs() / norm).min(1.0)).sum();
            let d = v.len() as f64;
            prop_assert!(expected <= sf * sf + sf * d.sqrt() + 1e-9);
            if s == 1 {
                prop_assert!(expected <= 1.0 + d.sqrt() + 1e-9);
            }
        }
    }
}
