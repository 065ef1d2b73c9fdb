//! Elias omega codewords for small integers, and code lengths further out.

use fedpop::codec::{elias_decode, elias_encode, elias_length, BitString};

fn main() -> fedpop::Result<()> {
    for k in 1..=17u64 {
        let code = elias_encode(k)?;
        let bits: String = (0..code.len()).map(|i| if code.get(i) { '1' } else { '0' }).collect();
        println!("{k:>3}  {bits}");
    }
    println!();
    for k in [100u64, 1_000, 65_536, 1 << 40, u64::MAX] {
        println!("|Elias({k})| = {}", elias_length(k));
    }

    // a stream of codewords decodes back in order
    let values = [5u64, 1, 300, 2, 1 << 33];
    let mut stream = BitString::new();
    for &k in &values {
        stream.extend(&elias_encode(k)?);
    }
    let mut reader = stream.reader();
    let decoded: Vec<u64> = values.iter().map(|_| elias_decode(&mut reader).map(|(k, _)| k)).collect::<Result<_, _>>()?;
    assert_eq!(decoded, values);
    println!("\nround trip of {values:?} in {} bits", stream.len());
    Ok(())
}
