//! Quantize a gradient at several levels, Elias-code it, and compare the
//! message size against sending 64-bit floats.

use fedpop::codec::{bit_budget_bound, calibrated_constant, decode_gradient, encode_gradient};
use fedpop::quantizer::{dequantize, quantize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> fedpop::Result<()> {
    let d = 2_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    println!("d = {d}, native message = {} bits", 64 * d);
    println!("{:>6} {:>9} {:>10} {:>10} {:>12}", "s", "nonzeros", "bits", "bound", "rel. error");

    for s in [1, 4, 16, 256, 4096] {
        let q = quantize(&v, s, &mut rng)?;
        let enc = encode_gradient(&q)?;
        assert_eq!(decode_gradient(&enc, d, s)?, q.canonical());
        let back = dequantize(&q);
        let err: f64 = v.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum();
        let bound = bit_budget_bound(d, s, calibrated_constant(d, s))
            .value()
            .map_or("n/a".to_string(), |b| format!("{b:.0}"));
        println!(
            "{s:>6} {:>9} {:>10} {bound:>10} {:>12.4}",
            q.nonzeros(),
            enc.total_bits,
            (err / norm2).sqrt()
        );
    }
    Ok(())
}
