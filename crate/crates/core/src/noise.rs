//! Code-capacity depolarizing noise and syndromes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::CssCode;
use crate::error::{Error, Result};
use crate::gf2::BitVector;

/// Each qubit independently suffers X, Y or Z with probability `p / 3` each.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepolarizingChannel {
    p: f64,
}

impl DepolarizingChannel {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(alloc::format!("physical error rate {p} outside [0, 1]")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Marginal probability that a qubit carries an X component (X or Y);
    /// by symmetry also the Z-component marginal.
    pub fn marginal_flip_probability(&self) -> f64 {
        2.0 * self.p / 3.0
    }
}

/// A Pauli error as its X and Z components; a Y sets both bits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliError {
    pub ex: BitVector,
    pub ez: BitVector,
}

impl PauliError {
    pub fn identity(n: usize) -> Self {
        Self { ex: BitVector::zeros(n), ez: BitVector::zeros(n) }
    }

    pub fn n(&self) -> usize {
        self.ex.len()
    }

    /// Number of qubits with a non-identity Pauli.
    pub fn weight(&self) -> usize {
        self.ex.words().iter().zip(self.ez.words()).map(|(a, b)| (a | b).count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &PauliError) -> PauliError {
        PauliError { ex: self.ex.xor(&other.ex), ez: self.ez.xor(&other.ez) }
    }
}

/// `sx = hz · ex` (detected by Z checks) and `sz = hx · ez`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Syndrome {
    pub sx: BitVector,
    pub sz: BitVector,
}

impl Syndrome {
    pub fn is_zero(&self) -> bool {
        self.sx.is_zero() && self.sz.is_zero()
    }
}

pub fn sample_error<R: Rng + ?Sized>(ch: &DepolarizingChannel, n: usize, rng: &mut R) -> PauliError {
    let mut e = PauliError::identity(n);
    let third = ch.p / 3.0;
    for q in 0..n {
        let u: f64 = rng.random();
        if u < third {
            e.ex.set(q, true);
        } else if u < 2.0 * third {
            e.ex.set(q, true);
            e.ez.set(q, true);
        } else if u < ch.p {
            e.ez.set(q, true);
        }
    }
    e
}

pub fn syndrome(code: &CssCode, e: &PauliError) -> Result<Syndrome> {
    Ok(Syndrome { sx: code.hz().mat_vec(&e.ex)?, sz: code.hx().mat_vec(&e.ez)? })
}

/// Random stream for one Monte Carlo shot.
///
/// Streams depend only on `(seed, shot)`, so results do not depend on how
/// shots are split across workers.
pub fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

/// Mixes a run seed with an index into a fresh 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
