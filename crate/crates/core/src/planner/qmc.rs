//! Standard normal scenario draws from scrambled Sobol points or a seeded PRNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::Scalar;

const SOBOL_DIMS: usize = sobol_burley::NUM_DIMENSIONS as usize;
const MAX_POINTS: usize = 1 << 16;

fn group_seed(seed: u64, group: usize) -> u32 {
    // splitmix64 finaliser
    let mut z = seed ^ (group as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) as u32
}

/// `n` draws of a `dim`-dimensional standard normal vector.
///
/// With `qmc`, each point is an Owen-scrambled Sobol point pushed through the
/// inverse normal CDF; dimensions past the table size continue with an
/// independently scrambled copy of the sequence.
pub fn normal_scenarios<T: Scalar>(n: usize, dim: usize, seed: u64, qmc: bool) -> Result<Vec<Vec<T>>> {
    if qmc {
        if n > MAX_POINTS {
            return Err(Error::param("num_scenarios", format!("at most {MAX_POINTS} Sobol points")));
        }
        let normal = Normal::standard();
        let seeds: Vec<u32> = (0..dim.div_ceil(SOBOL_DIMS)).map(|g| group_seed(seed, g)).collect();
        Ok((0..n)
            .map(|j| {
                (0..dim)
                    .map(|k| {
                        let u = sobol_burley::sample(j as u32, (k % SOBOL_DIMS) as u32, seeds[k / SOBOL_DIMS]);
                        // centre of the 2^-24 cell, keeps u strictly inside (0, 1)
                        let u = u as f64 + 2f64.powi(-25);
                        T::lit(normal.inverse_cdf(u))
                    })
                    .collect()
            })
            .collect())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::lit(z)
                    })
                    .collect()
            })
            .collect())
    }
}
