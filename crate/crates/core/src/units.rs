//! Shot-noise-unit conventions, dB/linear conversions and the seeded
//! randomness contract shared by every stage.
//!
//! All variance-valued quantities downstream are expressed relative to the
//! vacuum shot noise, which is fixed at 1.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A variance expressed in shot-noise units (vacuum noise = 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Snu(f64);

impl Snu {
    pub const ZERO: Snu = Snu(0.0);
    pub const SHOT_NOISE: Snu = Snu(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(Snu(value))
        } else {
            Err(Error::invalid("snu", format!("variance must be finite and >= 0, got {value}")))
        }
    }

    /// Wraps a value that is allowed to be negative, such as a raw excess
    /// noise estimate that fluctuated below zero.
    pub fn signed(value: f64) -> Self {
        Snu(value)
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<Snu> for f64 {
    fn from(v: Snu) -> f64 {
        v.0
    }
}

/// Channel attenuation in dB. Always non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DbLoss(f64);

impl DbLoss {
    pub fn new(db: f64) -> Result<Self> {
        if db.is_finite() && db >= 0.0 {
            Ok(DbLoss(db))
        } else {
            Err(Error::invalid("loss_db", format!("loss must be finite and >= 0 dB, got {db}")))
        }
    }

    #[inline]
    pub fn db(self) -> f64 {
        self.0
    }

    pub fn transmittance(self) -> f64 {
        db_to_transmittance(self)
    }
}

impl TryFrom<f64> for DbLoss {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        DbLoss::new(v)
    }
}

impl From<DbLoss> for f64 {
    fn from(v: DbLoss) -> f64 {
        v.0
    }
}

/// Linear transmittance `10^(-L/10)` for a loss of `L` dB.
pub fn db_to_transmittance(loss: DbLoss) -> f64 {
    10f64.powf(-loss.0 / 10.0)
}

/// Inverse of [`db_to_transmittance`]. Rejects `t <= 0` and `t > 1`.
pub fn transmittance_to_db(t: f64) -> Result<DbLoss> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid("transmittance", format!("must lie in (0, 1], got {t}")));
    }
    // -0.0 for t == 1 would still be >= 0, but normalise it anyway.
    Ok(DbLoss((-10.0 * t.log10()).max(0.0)))
}

/// Root seed of a simulation run.
///
/// Every stochastic stage derives its own independent ChaCha20 stream from
/// the root seed and a stage label, so adding a stage never perturbs the
/// random numbers seen by the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Independent generator for the stage named `label`.
    pub fn stream(self, label: &str) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(fnv1a(label.as_bytes()));
        rng
    }

    /// Child seed, for stages that hand a seed on to further stages.
    pub fn derive(self, label: &str) -> RngSeed {
        RngSeed(self.0.rotate_left(17) ^ fnv1a(label.as_bytes()).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
