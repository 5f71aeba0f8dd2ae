//! Scenario parameters and stability screening.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dist::DurationDist;
use crate::error::{Error, Result};

/// State-dependent arrival rates `(n1, n2) -> (lambda1, lambda2)` over the arrival lattice.
pub type RateFn = Arc<dyn Fn(usize, usize) -> (f64, f64) + Send + Sync>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruncationMode {
    /// Overflow mass is held at the capped arrival count.
    #[default]
    Absorbing,
    /// Overflow mass leaves the lattice.
    UnassignedOutflow,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub serve1: DurationDist,
    pub serve2: DurationDist,
    pub switch12: DurationDist,
    pub switch21: DurationDist,
    pub c1: f64,
    pub c2: f64,
    #[serde(rename = "K12", default)]
    pub k12: f64,
    #[serde(rename = "K21", default)]
    pub k21: f64,
    pub beta: f64,
    #[serde(rename = "X1")]
    pub x1: usize,
    #[serde(rename = "X2")]
    pub x2: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    #[serde(default)]
    pub truncation_mode: TruncationMode,
    #[serde(skip)]
    pub rate_fn: Option<RateFn>,
}

impl fmt::Debug for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScenarioConfig")
            .field("lambda", &(self.lambda1, self.lambda2))
            .field("serve", &(self.serve1, self.serve2))
            .field("switch", &(self.switch12, self.switch21))
            .field("c", &(self.c1, self.c2))
            .field("K", &(self.k12, self.k21))
            .field("beta", &self.beta)
            .field("X", &(self.x1, self.x2))
            .field("N", &(self.n1, self.n2))
            .field("truncation_mode", &self.truncation_mode)
            .field("rate_fn", &self.rate_fn.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rho1: f64,
    pub rho2: f64,
    pub rho: f64,
    pub stable: bool,
    /// 0-based index of the queue with the larger `c_i * lambda_i`, if any.
    pub priority_queue: Option<usize>,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn lambda(&self, q: usize) -> f64 {
        [self.lambda1, self.lambda2][q]
    }

    pub fn cost_rate(&self, q: usize) -> f64 {
        [self.c1, self.c2][q]
    }

    pub fn capacity(&self, q: usize) -> usize {
        [self.x1, self.x2][q]
    }

    pub fn serve(&self, q: usize) -> &DurationDist {
        [&self.serve1, &self.serve2][q]
    }

    /// Switch-over duration when leaving queue `from`.
    pub fn switch_from(&self, from: usize) -> &DurationDist {
        [&self.switch12, &self.switch21][from]
    }

    /// Lump cost when leaving queue `from`.
    pub fn switch_cost(&self, from: usize) -> f64 {
        [self.k12, self.k21][from]
    }

    /// Total arrival rate `lambda1 + lambda2`.
    pub fn arrival_rate(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    /// Holding cost rate of a state, `c1 n1 + c2 n2`.
    pub fn holding_rate(&self, n1: usize, n2: usize) -> f64 {
        self.c1 * n1 as f64 + self.c2 * n2 as f64
    }

    pub fn rates_at(&self, n1: usize, n2: usize) -> (f64, f64) {
        match &self.rate_fn {
            Some(f) => f(n1, n2),
            None => (self.lambda1, self.lambda2),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.rate_fn.is_none()
    }

    pub fn durations(&self) -> [&DurationDist; 4] {
        [&self.serve1, &self.serve2, &self.switch12, &self.switch21]
    }

    pub fn all_exponential(&self) -> bool {
        self.durations().iter().all(|d| matches!(d, DurationDist::Exponential { .. }))
    }

    /// Same scenario with every duration replaced by the exponential of equal mean.
    pub fn exponentialized(&self) -> Self {
        let mut cfg = self.clone();
        cfg.serve1 = self.serve1.exponential_equivalent();
        cfg.serve2 = self.serve2.exponential_equivalent();
        cfg.switch12 = self.switch12.exponential_equivalent();
        cfg.switch21 = self.switch21.exponential_equivalent();
        cfg
    }

    pub fn with_capacity(&self, x1: usize, x2: usize) -> Self {
        let mut cfg = self.clone();
        cfg.x1 = x1;
        cfg.x2 = x2;
        cfg
    }

    pub fn with_lattice(&self, n1: usize, n2: usize) -> Self {
        let mut cfg = self.clone();
        cfg.n1 = n1;
        cfg.n2 = n2;
        cfg
    }

    /// Checks parameter ranges without the stability condition.
    pub fn check_parameters(&self) -> Result<()> {
        for d in self.durations() {
            d.validate()?;
        }
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} must be finite and >= 0")))
            }
        };
        nonneg("lambda1", self.lambda1)?;
        nonneg("lambda2", self.lambda2)?;
        nonneg("c1", self.c1)?;
        nonneg("c2", self.c2)?;
        nonneg("K12", self.k12)?;
        nonneg("K21", self.k21)?;
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta = {} must be > 0", self.beta)));
        }
        if self.x1 == 0 || self.x2 == 0 || self.n1 == 0 || self.n2 == 0 {
            return Err(Error::InvalidConfig("X1, X2, N1, N2 must all be >= 1".into()));
        }
        Ok(())
    }

    pub fn stability(&self) -> StabilityReport {
        let rho1 = self.lambda1 * self.serve1.mean();
        let rho2 = self.lambda2 * self.serve2.mean();
        let rho = rho1 + rho2;
        let w1 = self.c1 * self.lambda1;
        let w2 = self.c2 * self.lambda2;
        let priority_queue = if w1 > w2 {
            Some(0)
        } else if w2 > w1 {
            Some(1)
        } else {
            None
        };
        StabilityReport { rho1, rho2, rho, stable: rho < 1.0, priority_queue }
    }
}

/// Validates parameters and rejects scenarios with `rho >= 1`.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Result<StabilityReport> {
    cfg.check_parameters()?;
    let report = cfg.stability();
    if !report.stable {
        return Err(Error::Unstable { rho: report.rho, rho1: report.rho1, rho2: report.rho2 });
    }
    Ok(report)
}

/// The two reference scenarios shipped with the CLI.
pub mod presets {
    use super::*;

    fn common(serve1: DurationDist, serve2: DurationDist, s12: DurationDist, s21: DurationDist) -> ScenarioConfig {
        ScenarioConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            serve1,
            serve2,
            switch12: s12,
            switch21: s21,
            c1: 1.0,
            c2: 1.0,
            k12: 0.0,
            k21: 0.0,
            beta: 0.05,
            x1: 40,
            x2: 40,
            n1: 35,
            n2: 35,
            truncation_mode: TruncationMode::Absorbing,
            rate_fn: None,
        }
    }

    /// Equal means and rates, very different variances.
    pub fn asymmetric_variance() -> ScenarioConfig {
        let mut cfg = common(
            DurationDist::gamma(1.0, 0.4),
            DurationDist::gamma(30.0, 0.4 / 30.0),
            DurationDist::gamma(30.0, 4.0 / 30.0),
            DurationDist::gamma(1.0, 0.4),
        );
        cfg.lambda1 = 0.8;
        cfg.lambda2 = 0.8;
        cfg
    }

    /// Priority queue 1 with slow switch-overs.
    pub fn slow_mode() -> ScenarioConfig {
        let mut cfg = common(
            DurationDist::gamma(30.0, 0.1 / 30.0),
            DurationDist::gamma(20.0, 0.5 / 20.0),
            DurationDist::gamma(30.0, 2.0 / 30.0),
            DurationDist::gamma(20.0, 3.0 / 20.0),
        );
        cfg.lambda1 = 1.5;
        cfg.lambda2 = 0.4;
        cfg.c1 = 2.0;
        cfg.c2 = 1.0;
        cfg
    }
}
