//! Equal-prior-mass discretization of continuous latent dimensions.
//!
//! A grid at index precision `r_q` partitions a Gaussian's support into
//! `2^r_q` buckets of equal prior mass. Bucket `b` covers prior quantiles
//! `[b / 2^r_q, (b + 1) / 2^r_q)` and is represented by its median. The
//! prior over bucket indices is therefore exactly uniform.
//!
//! The CDF and quantile are pinned implementations (statrs `erf`/`erf_inv`
//! with one Newton refinement on the quantile): the masses they induce
//! define the wire format, so bitstreams are not interchangeable with
//! implementations using a different approximation.

use crate::error::CoderError;
use statrs::function::erf::{erf, erfc_inv};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Standard normal CDF, accurate to well under 1e-7.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal quantile: inverse-erfc seed plus one Newton step, so
/// `std_normal_cdf(std_normal_quantile(p))` matches `p` to ~1e-12.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1), got {p}");
    let q = if p < 0.5 {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erfc_inv(2.0 * (1.0 - p))
    };
    let pdf = std_normal_pdf(q);
    if pdf > 1e-300 {
        q - (std_normal_cdf(q) - p) / pdf
    } else {
        q
    }
}

/// Standard logistic CDF (closed form).
pub fn std_logistic_cdf(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub const MAX_INDEX_PRECISION: u32 = 24;

/// Equal-prior-mass partition of one Gaussian latent dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationGrid {
    mu: f64,
    sigma: f64,
    r_q: u32,
}

impl DiscretizationGrid {
    /// Grid whose buckets have equal mass under `N(mu, sigma^2)`.
    pub fn new(mu: f64, sigma: f64, r_q: u32) -> Result<Self, CoderError> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(CoderError::InvalidDistribution(format!(
                "grid needs finite mu and sigma > 0, got mu={mu} sigma={sigma}"
            )));
        }
        if r_q > MAX_INDEX_PRECISION {
            return Err(CoderError::InvalidPrecisions(format!(
                "index precision r_q={r_q} above maximum {MAX_INDEX_PRECISION}"
            )));
        }
        Ok(DiscretizationGrid { mu, sigma, r_q })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn index_precision(&self) -> u32 {
        self.r_q
    }

    pub fn buckets(&self) -> u64 {
        1u64 << self.r_q
    }

    /// Lower boundary of bucket `b` (`-inf` for b = 0).
    pub fn boundary(&self, b: u64) -> f64 {
        if b == 0 {
            return f64::NEG_INFINITY;
        }
        if b >= self.buckets() {
            return f64::INFINITY;
        }
        self.mu + self.sigma * std_normal_quantile(b as f64 / self.buckets() as f64)
    }

    /// Bucket median: the prior quantile at `(b + 1/2) / 2^r_q`.
    pub fn centre(&self, b: u64) -> f64 {
        debug_assert!(b < self.buckets());
        let p = (2 * b + 1) as f64 / (2 * self.buckets()) as f64;
        self.mu + self.sigma * std_normal_quantile(p)
    }

    /// Index of the bucket containing `z`. Boundary ties go to the upper
    /// bucket (buckets are half-open on the right in quantile space).
    pub fn bucket_index(&self, z: f64) -> u64 {
        let u = std_normal_cdf((z - self.mu) / self.sigma);
        let idx = (u * self.buckets() as f64).floor() as i64;
        idx.clamp(0, self.buckets() as i64 - 1) as u64
    }

    /// Prior CDF evaluated in grid-index space: mass of buckets `< b`.
    /// Exactly `b / 2^r_q` by construction.
    pub fn index_mass_below(&self, b: u64) -> f64 {
        b as f64 / self.buckets() as f64
    }
}

/// Grids for one layer of a diagonal-Gaussian conditional prior, one grid
/// per dimension. For the top layer this is the static grid of the fixed
/// prior; for lower layers the parameters come from the higher-layer bucket
/// centres, which makes the discretization dynamic.
pub fn grids_for(
    mus: &[f64],
    sigmas: &[f64],
    r_q: u32,
) -> Result<Vec<DiscretizationGrid>, CoderError> {
    if mus.len() != sigmas.len() {
        return Err(CoderError::InvalidDistribution(
            "mu/sigma length mismatch".into(),
        ));
    }
    mus.iter()
        .zip(sigmas)
        .map(|(&m, &s)| DiscretizationGrid::new(m, s, r_q))
        .collect()
}
