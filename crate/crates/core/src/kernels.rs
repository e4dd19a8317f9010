//! Sojourn-time distributions for the infected/immune period.
//!
//! The exact model uses a gamma distribution with arbitrary real shape. The
//! two finite-dimensional reductions replace it with a chain of exponential
//! stages: an Erlang chain (shape rounded to an integer, mean preserved) or a
//! hypoexponential chain matching both mean and variance.

use num_complex::Complex64;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{require_positive, Error, Result};

/// Below this multiple of the convergence abscissa, `s` is treated as zero
/// and the survival transform falls back to its Taylor expansion.
pub(crate) const TRANSFORM_ZERO: f64 = 1e-8;

/// A distribution of the time spent in the infected class, described through
/// its Laplace transform.
pub trait Sojourn {
    /// Expected sojourn time (months).
    fn mean(&self) -> f64;

    /// Second raw moment E[X^2] (months^2).
    fn second_moment(&self) -> f64;

    /// Transforms converge for `Re(s) > -abscissa()`.
    fn abscissa(&self) -> f64;

    /// Logarithm of E[exp(-sX)], principal branch. Callers must have checked
    /// the convergence half-plane.
    fn log_density_transform(&self, s: Complex64) -> Complex64;

    fn variance(&self) -> f64 {
        self.second_moment() - self.mean() * self.mean()
    }

    /// Laplace transform of the survival function, `∫ e^{-sa} F(a) da`.
    fn survival_transform(&self, s: Complex64) -> Result<Complex64> {
        let bound = self.abscissa();
        if !(s.re > -bound) {
            return Err(Error::DivergentTransform { re: s.re, bound: -bound });
        }
        if s.norm() < TRANSFORM_ZERO * bound {
            return Ok(Complex64::new(self.mean(), 0.0) - s * (0.5 * self.second_moment()));
        }
        // 1 - K̂(s) = -expm1(ln K̂(s)), evaluated without cancellation.
        Ok(-expm1_c(self.log_density_transform(s)) / s)
    }
}

/// Gamma-distributed sojourn time with real shape `j` and rate `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaKernel {
    shape: f64,
    rate: f64,
}

impl GammaKernel {
    /// Builds the kernel from its mean `tau` (months) and shape `j`.
    pub fn from_mean_shape(tau: f64, shape: f64) -> Result<Self> {
        require_positive("tau", tau)?;
        require_positive("shape", shape)?;
        Ok(Self {
            shape,
            rate: shape / tau,
        })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Probability density `b^j a^{j-1} e^{-ba} / Γ(j)`.
    pub fn density(&self, a: f64) -> Result<f64> {
        check_age(a)?;
        if a == 0.0 {
            return Ok(match self.shape {
                j if j < 1.0 => f64::INFINITY,
                j if j == 1.0 => self.rate,
                _ => 0.0,
            });
        }
        let j = self.shape;
        let log = j * self.rate.ln() + (j - 1.0) * a.ln() - self.rate * a - ln_gamma(j);
        Ok(log.exp())
    }

    /// Survival function `F(a) = Q(j, b a)` (regularized upper incomplete gamma).
    pub fn survival(&self, a: f64) -> Result<f64> {
        check_age(a)?;
        if a == 0.0 {
            return Ok(1.0);
        }
        Ok(gamma_ur(self.shape, self.rate * a))
    }

    /// Rate of return to susceptibility at infection-age `a`.
    pub fn hazard(&self, a: f64) -> Result<f64> {
        let survival = self.survival(a)?;
        if survival <= f64::MIN_POSITIVE {
            return Err(Error::HazardUndefined { age: a });
        }
        let density = self.density(a)?;
        Ok(density / survival)
    }

    /// `∫_0^∞ e^{-sa} F(a) da` for real `s > -b`.
    pub fn laplace_survival(&self, s: f64) -> Result<f64> {
        self.survival_transform(Complex64::new(s, 0.0)).map(|z| z.re)
    }

    /// Erlang chain with `[j]` stages (half-integers round up) and the same mean.
    pub fn erlang_round(&self) -> ErlangChain {
        let stages = ((self.shape + 0.5).floor() as usize).max(1);
        ErlangChain {
            stages,
            rate: stages as f64 / self.mean(),
        }
    }

    /// Hypoexponential chain with the same mean and variance.
    ///
    /// Uses `n = max(⌈j⌉, 2)` stages: `n - 2` with common rate `n/τ`, followed
    /// by rates `ν` and `μ`. Requires `j > 1`, since a hypoexponential
    /// distribution cannot have a coefficient of variation of one or more.
    pub fn hypoexp(&self) -> Result<HypoexpChain> {
        let j = self.shape;
        if j <= 1.0 {
            return Err(Error::UnsupportedShape { shape: j });
        }
        let tau = self.mean();
        let n = (j.ceil() as usize).max(2);
        let nf = n as f64;
        let spread = (nf * (nf - j) / (2.0 * j)).max(0.0).sqrt();
        Ok(HypoexpChain {
            stages: n,
            common_rate: nf / tau,
            nu: nf / (tau * (1.0 + spread)),
            mu: nf / (tau * (1.0 - spread)),
        })
    }
}

impl Sojourn for GammaKernel {
    fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    fn second_moment(&self) -> f64 {
        self.shape * (self.shape + 1.0) / (self.rate * self.rate)
    }

    fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    fn abscissa(&self) -> f64 {
        self.rate
    }

    fn log_density_transform(&self, s: Complex64) -> Complex64 {
        -self.shape * ln1p_c(s / self.rate)
    }
}

/// A finite concatenation of exponential stages.
pub trait StageChain {
    /// Stage exit rates in traversal order (1/month).
    fn rates(&self) -> Vec<f64>;

    fn stage_count(&self) -> usize {
        self.rates().len()
    }
}

/// Mean `Σ 1/r_i` and variance `Σ 1/r_i²` of a chain of exponential stages.
pub fn chain_moments<C: StageChain + ?Sized>(chain: &C) -> (f64, f64) {
    chain
        .rates()
        .iter()
        .fold((0.0, 0.0), |(m, v), r| (m + 1.0 / r, v + 1.0 / (r * r)))
}

/// Erlang chain: `stages` exponential stages sharing one rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangChain {
    pub stages: usize,
    pub rate: f64,
}

impl StageChain for ErlangChain {
    fn rates(&self) -> Vec<f64> {
        vec![self.rate; self.stages]
    }

    fn stage_count(&self) -> usize {
        self.stages
    }
}

/// Two-moment matched hypoexponential chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypoexpChain {
    pub stages: usize,
    pub common_rate: f64,
    pub nu: f64,
    pub mu: f64,
}

impl StageChain for HypoexpChain {
    /// Common-rate stages first, then `ν`, then `μ`.
    fn rates(&self) -> Vec<f64> {
        let mut rates = vec![self.common_rate; self.stages - 2];
        rates.push(self.nu);
        rates.push(self.mu);
        rates
    }

    fn stage_count(&self) -> usize {
        self.stages
    }
}

/// Sojourn distribution given by an explicit list of stage rates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseChain {
    rates: Vec<f64>,
}

impl PhaseChain {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(crate::error::invalid("rates", "chain needs at least one stage"));
        }
        for &r in &rates {
            require_positive("rate", r)?;
        }
        Ok(Self { rates })
    }

    pub fn from_chain<C: StageChain + ?Sized>(chain: &C) -> Self {
        Self {
            rates: chain.rates(),
        }
    }

    pub fn stage_rates(&self) -> &[f64] {
        &self.rates
    }
}

impl StageChain for PhaseChain {
    fn rates(&self) -> Vec<f64> {
        self.rates.clone()
    }
}

impl Sojourn for PhaseChain {
    fn mean(&self) -> f64 {
        self.rates.iter().map(|r| 1.0 / r).sum()
    }

    fn second_moment(&self) -> f64 {
        let (mean, var) = chain_moments(self);
        var + mean * mean
    }

    fn abscissa(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn log_density_transform(&self, s: Complex64) -> Complex64 {
        self.rates.iter().map(|&r| -ln1p_c(s / r)).sum()
    }
}

fn check_age(a: f64) -> Result<()> {
    if a.is_nan() || a < 0.0 {
        Err(crate::error::invalid("age", format!("must be non-negative, got {a}")))
    } else {
        Ok(())
    }
}

/// `ln(1 + z)` accurate for small `|z|`.
pub(crate) fn ln1p_c(z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let re = 0.5 * (2.0 * x + x * x + y * y).ln_1p();
    let im = y.atan2(1.0 + x);
    Complex64::new(re, im)
}

/// `exp(w) - 1` accurate for small `|w|`.
pub(crate) fn expm1_c(w: Complex64) -> Complex64 {
    let half_sin = (0.5 * w.im).sin();
    let re = w.re.exp_m1() * w.im.cos() - 2.0 * half_sin * half_sin;
    let im = w.re.exp() * w.im.sin();
    Complex64::new(re, im)
}
