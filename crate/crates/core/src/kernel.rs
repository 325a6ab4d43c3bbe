//! Half-integer Matérn kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[default]
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl Smoothness {
    pub fn nu(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }

    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            x if x == 0.5 => Ok(Smoothness::Half),
            x if x == 1.5 => Ok(Smoothness::ThreeHalves),
            x if x == 2.5 => Ok(Smoothness::FiveHalves),
            _ => Err(Error::Config(alloc::format!("unsupported Matérn smoothness {nu}"))),
        }
    }
}

/// Matérn covariance at distance `r`.
pub fn matern(r: f64, length_scale: f64, signal_variance: f64, nu: Smoothness) -> f64 {
    matern_parts(r * r, length_scale, signal_variance, nu).value
}

/// Kernel value with its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaternParts {
    pub value: f64,
    /// With respect to the squared distance. Finite at zero distance for
    /// ν ≥ 3/2; for ν = 1/2 it is reported as 0 there (the one-sided limit
    /// diverges, but every use differentiates a distance that is
    /// identically zero on the diagonal).
    pub d_r2: f64,
    /// With respect to `ln ℓ`.
    pub d_log_length: f64,
}

pub fn matern_parts(r2: f64, length_scale: f64, signal_variance: f64, nu: Smoothness) -> MaternParts {
    let r = libm::sqrt(r2);
    let ell = length_scale;
    let sf2 = signal_variance;
    match nu {
        Smoothness::Half => {
            let s = r / ell;
            let e = sf2 * libm::exp(-s);
            let d_r2 = if r > 0.0 { -e / (2.0 * ell * r) } else { 0.0 };
            MaternParts { value: e, d_r2, d_log_length: e * s }
        }
        Smoothness::ThreeHalves => {
            let s = libm::sqrt(3.0) * r / ell;
            let e = sf2 * libm::exp(-s);
            MaternParts { value: e * (1.0 + s), d_r2: -1.5 * e / (ell * ell), d_log_length: e * s * s }
        }
        Smoothness::FiveHalves => {
            let s = libm::sqrt(5.0) * r / ell;
            let e = sf2 * libm::exp(-s);
            MaternParts {
                value: e * (1.0 + s + s * s / 3.0),
                d_r2: -5.0 * e * (1.0 + s) / (6.0 * ell * ell),
                d_log_length: e * s * s * (1.0 + s) / 3.0,
            }
        }
    }
}
