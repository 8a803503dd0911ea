use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Var;

/// Inverted dropout: zero each entry with probability `rate` and scale the
/// survivors by `1 / (1 - rate)`. Identity when not training or `rate == 0`.
pub fn dropout<'t, R: Rng + ?Sized>(x: Var<'t>, rate: f64, training: bool, rng: &mut R) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    x.masked(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let tape = Tape::new();
        let x = tape.vector(vec![1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout(x, 0.0, true, &mut rng).unwrap().id(), x.id());
        assert_eq!(dropout(x, 0.5, false, &mut rng).unwrap().id(), x.id());
    }

    #[test]
    fn drop_fraction() {
        let tape = Tape::new();
        let n = 20_000;
        let x = tape.vector(vec![1.0; n]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = dropout(x, 0.3, true, &mut rng).unwrap().to_vec();
        let zeroed = y.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeroed - 0.3).abs() <= 0.05, "{zeroed}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
    }
}
