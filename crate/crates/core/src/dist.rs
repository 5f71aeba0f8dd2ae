//! Sojourn-time distributions for service and switchover events.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::quad;

/// Upper quantile level used to truncate integrals over a duration.
pub const SUPPORT_LEVEL: f64 = 1.0 - 1e-9;

const QUANTILE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DurationDist {
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    Deterministic { value: f64 },
}

impl DurationDist {
    pub fn exponential(rate: f64) -> Self {
        DurationDist::Exponential { rate }
    }

    pub fn gamma(shape: f64, scale: f64) -> Self {
        DurationDist::Gamma { shape, scale }
    }

    pub fn deterministic(value: f64) -> Self {
        DurationDist::Deterministic { value }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            DurationDist::Exponential { rate } if !ok(rate) => {
                Err(Error::InvalidDistribution(format!("exponential rate {rate} must be positive")))
            }
            DurationDist::Gamma { shape, scale } if !ok(shape) || !ok(scale) => Err(Error::InvalidDistribution(
                format!("gamma shape {shape} and scale {scale} must be positive"),
            )),
            DurationDist::Deterministic { value } if !ok(value) => {
                Err(Error::InvalidDistribution(format!("deterministic value {value} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DurationDist::Exponential { rate } => 1.0 / rate,
            DurationDist::Gamma { shape, scale } => shape * scale,
            DurationDist::Deterministic { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DurationDist::Exponential { rate } => 1.0 / (rate * rate),
            DurationDist::Gamma { shape, scale } => shape * scale * scale,
            DurationDist::Deterministic { .. } => 0.0,
        }
    }

    /// Completion rate `1 / mean`.
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, DurationDist::Deterministic { .. })
    }

    /// Exponential distribution with the same mean.
    pub fn exponential_equivalent(&self) -> Self {
        DurationDist::Exponential { rate: self.rate() }
    }

    /// Density. Deterministic durations have no density and return 0.
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            DurationDist::Exponential { rate } => rate * (-rate * t).exp(),
            DurationDist::Gamma { shape, scale } => {
                if t == 0.0 {
                    return match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    };
                }
                ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
            }
            DurationDist::Deterministic { .. } => 0.0,
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            DurationDist::Exponential { rate } => -(-rate * t).exp_m1(),
            DurationDist::Gamma { shape, scale } => gamma_lr(shape, t / scale),
            DurationDist::Deterministic { value } => {
                if t >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Survival function `1 - cdf(t)`, computed without cancellation in the tail.
    pub fn sf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            DurationDist::Exponential { rate } => (-rate * t).exp(),
            DurationDist::Gamma { shape, scale } => gamma_ur(shape, t / scale),
            DurationDist::Deterministic { .. } => 1.0 - self.cdf(t),
        }
    }

    /// Inverse cdf. For Gamma this is a bisection to relative tolerance 1e-10.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..1.0).contains(&p), "quantile level {p} outside [0, 1)");
        match *self {
            DurationDist::Exponential { rate } => -(-p).ln_1p() / rate,
            DurationDist::Deterministic { value } => value,
            DurationDist::Gamma { .. } => {
                let upper = p > 0.5;
                let target = if upper { 1.0 - p } else { p };
                // g is increasing in t in both branches
                let g = |t: f64| if upper { target - self.sf(t) } else { self.cdf(t) - target };
                let mut lo = 0.0;
                let mut hi = self.mean().max(f64::MIN_POSITIVE);
                while g(hi) < 0.0 {
                    lo = hi;
                    hi *= 2.0;
                }
                while hi - lo > QUANTILE_TOL * hi.max(1e-300) {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// End of the effective support, `quantile(1 - 1e-9)`.
    pub fn support_end(&self) -> f64 {
        self.quantile(SUPPORT_LEVEL)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DurationDist::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            DurationDist::Gamma { shape, scale } => Gamma::new(shape, scale).expect("validated gamma").sample(rng),
            DurationDist::Deterministic { value } => value,
        }
    }

    /// `E[g(T)]` by adaptive quadrature up to the `1 - 1e-15` quantile; exact for deterministic durations.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F, abs_tol: f64) -> f64 {
        match *self {
            DurationDist::Deterministic { value } => g(value),
            _ => {
                let end = self.quantile(1.0 - 1e-15);
                let mode = match *self {
                    DurationDist::Gamma { shape, scale } if shape > 1.0 => (shape - 1.0) * scale,
                    _ => 0.0,
                };
                let mut breaks = vec![0.0];
                for x in [end * 1e-6, end * 1e-3, mode, end * 0.1, end * 0.5] {
                    if x > *breaks.last().unwrap() && x < end {
                        breaks.push(x);
                    }
                }
                breaks.push(end);
                match *self {
                    DurationDist::Gamma { shape, .. } if shape < 1.0 => {
                        // t = u^(1/shape) removes the density singularity at the origin
                        let p = 1.0 / shape;
                        let first = breaks[1];
                        let head = quad::integrate(
                            |u| {
                                let t = u.powf(p);
                                self.pdf(t) * g(t) * p * u.powf(p - 1.0)
                            },
                            0.0,
                            first.powf(shape),
                            abs_tol,
                        );
                        head + quad::integrate_pieces(|t| self.pdf(t) * g(t), &breaks[1..], abs_tol)
                    }
                    _ => quad::integrate_pieces(|t| self.pdf(t) * g(t), &breaks, abs_tol),
                }
            }
        }
    }
}
