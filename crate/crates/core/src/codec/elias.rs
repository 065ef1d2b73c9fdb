use super::bits::{BitReader, BitString};
use crate::error::{Error, Result};

fn bit_length(k: u64) -> u32 {
    64 - k.leading_zeros()
}

/// Recursive prefix code: start from `"0"` and, while `⌊log₂ k⌋ > 0`,
/// prepend `binary(k)` and set `k ← ⌊log₂ k⌋`.
///
/// `1 → "0"`, `2 → "100"`, `8 → "1110000"`.
pub fn elias_encode(k: u64) -> Result<BitString> {
    if k < 1 {
        return Err(Error::arg("Elias code is defined for k >= 1"));
    }
    let mut groups = Vec::new();
    let mut k = k;
    while k > 1 {
        groups.push(k);
        k = u64::from(bit_length(k) - 1);
    }
    let mut out = BitString::new();
    for &g in groups.iter().rev() {
        out.push_bits(g, bit_length(g));
    }
    out.push(false);
    Ok(out)
}

/// Appends `Elias(k)` to `out`.
pub fn elias_append(out: &mut BitString, k: u64) -> Result<()> {
    let code = elias_encode(k)?;
    out.extend(&code);
    Ok(())
}

/// Reads one codeword: `n = 1`; on a `1` bit, read `n` more bits and let
/// `n` be the (n+1)-bit value; stop on a `0` bit. Returns `(k, bits used)`.
pub fn elias_decode(reader: &mut BitReader<'_>) -> Result<(u64, usize)> {
    let start = reader.position();
    let mut n: u64 = 1;
    loop {
        if !reader.read_bit()? {
            return Ok((n, reader.position() - start));
        }
        if n > 63 {
            return Err(Error::Decode(format!("Elias group of {} bits overflows u64", n + 1)));
        }
        n = (1u64 << n) | reader.read_bits(n as u32)?;
    }
}

/// `|Elias(k)|` computed arithmetically: `1 + Σ_j (⌊log₂ k_j⌋ + 1)` over
/// `k_0 = k`, `k_{j+1} = ⌊log₂ k_j⌋` while `k_j > 1`.
pub fn elias_length(k: u64) -> usize {
    let mut total = 1;
    let mut k = k;
    while k > 1 {
        let lg = k.ilog2();
        total += lg as usize + 1;
        k = u64::from(lg);
    }
    total
}

/// The iterated-logarithm sum `log₂k + log₂log₂k + … + 1` taken over the
/// positive real terms only.
pub fn iterated_log_sum(k: u64) -> f64 {
    let mut total = 1.0;
    let mut x = k as f64;
    while x > 1.0 {
        x = x.log2();
        if x <= 0.0 {
            break;
        }
        total += x;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(k: u64) -> String {
        elias_encode(k).unwrap().to_string()
    }

    #[test]
    fn known_codewords() {
        assert_eq!(enc(1), "0");
        assert_eq!(enc(2), "100");
        assert_eq!(enc(3), "110");
        assert_eq!(enc(4), "101000");
        assert_eq!(enc(8), "1110000");
        assert!(elias_encode(0).is_err());
    }

    #[test]
    fn decode_known_codewords() {
        for (bits, k) in [("0", 1), ("1110000", 8), ("100", 2)] {
            let b = BitString::from_bit_str(bits).unwrap();
            assert_eq!(elias_decode(&mut b.reader()).unwrap(), (k, bits.len()));
        }
    }

    #[test]
    fn truncated_codeword_fails() {
        let b = BitString::from_bit_str("111000").unwrap();
        assert!(matches!(elias_decode(&mut b.reader()), Err(Error::Decode(_))));
        let b = BitString::from_bit_str("1").unwrap();
        assert!(elias_decode(&mut b.reader()).is_err());
    }

    #[test]
    fn concatenation_is_prefix_free() {
        let ks = [1u64, 17, 2, 1, 1_000_000, 8, 3, u64::MAX];
        let mut s = BitString::new();
        for &k in &ks {
            elias_append(&mut s, k).unwrap();
        }
        let mut r = s.reader();
        for &k in &ks {
            assert_eq!(elias_decode(&mut r).unwrap().0, k);
        }
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn length_formula_matches_encoder() {
        for k in (1..5000).chain([u64::MAX, 1 << 40]) {
            assert_eq!(elias_encode(k).unwrap().len(), elias_length(k), "k = {k}");
        }
    }

    #[test]
    fn real_valued_iterated_sum() {
        assert_eq!(iterated_log_sum(1), 1.0);
        assert_eq!(iterated_log_sum(2), 2.0);
        let v = iterated_log_sum(16);
        assert!((v - (1.0 + 4.0 + 2.0 + 1.0)).abs() < 1e-12);
    }
}
