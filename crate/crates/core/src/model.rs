//! Analytic layer: reproduction number, Malthusian parameter, equilibria,
//! and the characteristic equation at the endemic equilibrium.
//!
//! Infectivity decays exponentially with infection-age, `β(a) = β0 e^{-kd a}`,
//! so every integral of the form `∫ e^{-λa} β(a) F(a) da` reduces to the
//! survival transform of the sojourn kernel evaluated at `λ + kd`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{invalid, require_nonnegative, require_positive, Error, Result};
use crate::kernels::{GammaKernel, Sojourn};

/// Exponentially waning infectivity `β(a) = beta0 · e^{-decay · a}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfectivityProfile {
    pub beta0: f64,
    pub decay: f64,
}

impl InfectivityProfile {
    pub fn new(beta0: f64, decay: f64) -> Result<Self> {
        require_nonnegative("beta0", beta0)?;
        require_nonnegative("kd", decay)?;
        Ok(Self { beta0, decay })
    }

    pub fn at(&self, age: f64) -> f64 {
        self.beta0 * (-self.decay * age).exp()
    }
}

/// One epidemic model instance: the gamma sojourn kernel plus infectivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kernel: GammaKernel,
    pub infectivity: InfectivityProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    DiseaseFree,
    Endemic,
}

/// A constant solution of the renewal equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub susceptible: f64,
    /// Constant incidence `i(t, 0)` (1/month).
    pub incidence: f64,
    pub infected: f64,
    pub kind: EquilibriumKind,
}

impl ModelSpec {
    pub fn new(kernel: GammaKernel, infectivity: InfectivityProfile) -> Self {
        Self { kernel, infectivity }
    }

    /// Model whose `beta0` is chosen so that the basic reproduction number is `r0`.
    pub fn calibrated(kernel: GammaKernel, kd: f64, r0: f64) -> Result<Self> {
        let beta0 = calibrate_beta0(&kernel, kd, r0)?;
        Ok(Self::new(kernel, InfectivityProfile::new(beta0, kd)?))
    }

    pub fn tau(&self) -> f64 {
        self.kernel.mean()
    }

    pub fn reproduction_number(&self) -> f64 {
        reproduction_number(&self.kernel, &self.infectivity)
    }

    pub fn malthusian(&self) -> Result<f64> {
        malthusian(&self.kernel, &self.infectivity)
    }

    pub fn equilibria(&self) -> (Equilibrium, Option<Equilibrium>) {
        equilibria(&self.kernel, &self.infectivity)
    }

    pub fn ee_char(&self, lambda: Complex64) -> Result<Complex64> {
        ee_characteristic(&self.kernel, &self.infectivity, lambda)
    }
}

/// `R0 = ∫ β(a) F(a) da`.
pub fn reproduction_number<K: Sojourn + ?Sized>(kernel: &K, infectivity: &InfectivityProfile) -> f64 {
    if infectivity.beta0 == 0.0 {
        return 0.0;
    }
    infectivity.beta0 * real_transform(kernel, infectivity.decay)
}

/// Maximal infectivity `beta0` that yields the requested `r0`.
pub fn calibrate_beta0<K: Sojourn + ?Sized>(kernel: &K, kd: f64, r0: f64) -> Result<f64> {
    require_positive("r0", r0)?;
    require_nonnegative("kd", kd)?;
    Ok(r0 / real_transform(kernel, kd))
}

fn real_transform<K: Sojourn + ?Sized>(kernel: &K, s: f64) -> f64 {
    // s >= 0 always lies inside the convergence half-plane
    kernel
        .survival_transform(Complex64::new(s, 0.0))
        .map(|z| z.re)
        .unwrap_or(f64::NAN)
}

/// Euler–Lotka function `F(λ) = ∫ e^{-λa} β(a) F(a) da`.
pub fn euler_lotka<K: Sojourn + ?Sized>(
    kernel: &K,
    infectivity: &InfectivityProfile,
    lambda: Complex64,
) -> Result<Complex64> {
    Ok(kernel.survival_transform(lambda + infectivity.decay)? * infectivity.beta0)
}

/// Unique real root `r` of `F(λ) = 1`.
///
/// `F` is strictly decreasing on `(-(b + kd), ∞)` and blows up at the left
/// end, so a bracket always exists when `beta0 > 0`.
pub fn malthusian<K: Sojourn + ?Sized>(kernel: &K, infectivity: &InfectivityProfile) -> Result<f64> {
    let r0 = reproduction_number(kernel, infectivity);
    if !(r0 > 0.0) {
        return Err(Error::NoRoot(format!("R0 = {r0}")));
    }
    // calibration to R0 = 1 lands within rounding of 1, where the root is 0
    if (r0 - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(0.0);
    }
    let f = |lambda: f64| -> Result<f64> {
        Ok(euler_lotka(kernel, infectivity, Complex64::new(lambda, 0.0))?.re - 1.0)
    };

    let (mut lo, mut hi) = if r0 > 1.0 {
        let mut hi = kernel.abscissa().max(1.0);
        while f(hi)? > 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::NoRoot("upper bracket diverged".into()));
            }
        }
        (0.0, hi)
    } else {
        let edge = -(kernel.abscissa() + infectivity.decay);
        let mut k = 1;
        loop {
            let lo = edge * (1.0 - 0.5f64.powi(k));
            if f(lo)? > 0.0 {
                break (lo, 0.0);
            }
            k += 1;
            if k > 60 {
                return Err(Error::NoRoot("lower bracket reached the abscissa".into()));
            }
        }
    };

    while hi - lo > 1e-6 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut r = 0.5 * (lo + hi);
    for _ in 0..50 {
        let value = f(r)?;
        if value.abs() <= 1e-14 {
            break;
        }
        let slope = complex_step_slope(|z| euler_lotka(kernel, infectivity, z), r)?;
        let next = r - value / slope;
        r = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if f(r)? > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
    }
    if f(r)?.abs() > 1e-12 {
        return Err(Error::NoRoot(format!("Newton polish stalled at {r}")));
    }
    Ok(r)
}

fn complex_step_slope(f: impl Fn(Complex64) -> Result<Complex64>, x: f64) -> Result<f64> {
    let h = 1e-20 * (1.0 + x.abs());
    Ok(f(Complex64::new(x, h))?.im / h)
}

/// Disease-free equilibrium and, when `R0 > 1`, the endemic equilibrium.
pub fn equilibria<K: Sojourn + ?Sized>(
    kernel: &K,
    infectivity: &InfectivityProfile,
) -> (Equilibrium, Option<Equilibrium>) {
    let dfe = Equilibrium {
        susceptible: 1.0,
        incidence: 0.0,
        infected: 0.0,
        kind: EquilibriumKind::DiseaseFree,
    };
    let r0 = reproduction_number(kernel, infectivity);
    let ee = (r0 > 1.0).then(|| {
        let infected = 1.0 - 1.0 / r0;
        Equilibrium {
            susceptible: 1.0 / r0,
            incidence: infected / kernel.mean(),
            infected,
            kind: EquilibriumKind::Endemic,
        }
    });
    (dfe, ee)
}

/// Residual of the characteristic equation at the endemic equilibrium:
/// `1 - [ (1 - R0)/τ · L_F(λ) + β0/R0 · L_F(λ + kd) ]`.
pub fn ee_characteristic<K: Sojourn + ?Sized>(
    kernel: &K,
    infectivity: &InfectivityProfile,
    lambda: Complex64,
) -> Result<Complex64> {
    let r0 = reproduction_number(kernel, infectivity);
    let survival = kernel.survival_transform(lambda)?;
    let weighted = euler_lotka(kernel, infectivity, lambda)?;
    Ok(Complex64::new(1.0, 0.0) - (survival * ((1.0 - r0) / kernel.mean()) + weighted / r0))
}

/// Residual of the Euler–Lotka equation `1 - F(λ)` (characteristic equation at the DFE).
pub fn dfe_characteristic<K: Sojourn + ?Sized>(
    kernel: &K,
    infectivity: &InfectivityProfile,
    lambda: Complex64,
) -> Result<Complex64> {
    Ok(Complex64::new(1.0, 0.0) - euler_lotka(kernel, infectivity, lambda)?)
}

/// Rectangle of the complex plane searched for characteristic roots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootRegion {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
    pub grid: usize,
}

impl RootRegion {
    /// `Re ∈ [-5/τ, 2/τ]`, `Im ∈ [0, 4π/τ]`, 40×40 seeds, clipped to the
    /// transform's convergence half-plane.
    pub fn around(tau: f64, abscissa: f64) -> Self {
        Self {
            re_min: (-5.0 / tau).max(-0.95 * abscissa),
            re_max: 2.0 / tau,
            im_max: 4.0 * std::f64::consts::PI / tau,
            grid: 40,
        }
    }
}

/// Roots of a holomorphic residual in the upper half of `region`, found by
/// Newton iteration from a uniform seed grid. Roots closer than 1e-6 are merged.
pub fn characteristic_roots(
    residual: impl Fn(Complex64) -> Result<Complex64>,
    region: &RootRegion,
) -> Vec<Complex64> {
    let n = region.grid.max(2);
    let mut roots: Vec<Complex64> = Vec::new();
    let re_span = region.re_max - region.re_min;
    let slack = 0.05 * re_span.max(region.im_max);
    for a in 0..n {
        for b in 0..n {
            let seed = Complex64::new(
                region.re_min + re_span * a as f64 / (n - 1) as f64,
                region.im_max * b as f64 / (n - 1) as f64,
            );
            let Some(root) = complex_newton(&residual, seed) else {
                continue;
            };
            let inside = root.re >= region.re_min - slack
                && root.re <= region.re_max + slack
                && root.im >= -1e-9
                && root.im <= region.im_max + slack;
            if inside && roots.iter().all(|r| (r - root).norm() > 1e-6) {
                roots.push(Complex64::new(root.re, root.im.max(0.0)));
            }
        }
    }
    roots.sort_by(|x, y| y.re.total_cmp(&x.re));
    roots
}

/// Damped complex Newton; returns a root with residual ≤ 1e-10.
pub(crate) fn complex_newton(
    residual: &impl Fn(Complex64) -> Result<Complex64>,
    seed: Complex64,
) -> Option<Complex64> {
    let mut z = seed;
    let mut fz = residual(z).ok()?;
    for _ in 0..60 {
        if fz.norm() <= 1e-14 {
            break;
        }
        let h = 1e-7 * (1.0 + z.norm());
        let slope = (residual(z + h).ok()? - residual(z - h).ok()?) / (2.0 * h);
        if slope.norm() == 0.0 || !slope.is_finite() {
            return None;
        }
        let step = fz / slope;
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial = z - step * damping;
            if let Ok(ft) = residual(trial) {
                if ft.is_finite() && ft.norm() < fz.norm() {
                    z = trial;
                    fz = ft;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
        if (step * damping).norm() <= 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    (fz.norm() <= 1e-10).then_some(z)
}

/// Parameters that can be swept in continuation and Hopf searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    /// Gamma shape `j`.
    Shape,
    /// Mean sojourn time `τ`.
    Tau,
    /// Infectivity decay rate `kd`.
    Decay,
    /// Basic reproduction number.
    R0,
}

impl Param {
    pub fn name(&self) -> &'static str {
        match self {
            Param::Shape => "j",
            Param::Tau => "tau",
            Param::Decay => "kd",
            Param::R0 => "r0",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "j" | "shape" | "shape_j" => Ok(Param::Shape),
            "tau" => Ok(Param::Tau),
            "kd" => Ok(Param::Decay),
            "r0" | "R0" => Ok(Param::R0),
            other => Err(invalid("param", format!("unknown parameter `{other}`"))),
        }
    }
}

/// A model parameterised the way the experiments are: `(τ, j, kd, R0)`, with
/// `beta0` derived from `R0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub tau: f64,
    pub shape: f64,
    pub kd: f64,
    pub r0: f64,
}

impl Scenario {
    pub fn new(tau: f64, shape: f64, kd: f64, r0: f64) -> Self {
        Self { tau, shape, kd, r0 }
    }

    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::Shape => self.shape,
            Param::Tau => self.tau,
            Param::Decay => self.kd,
            Param::R0 => self.r0,
        }
    }

    pub fn with(mut self, param: Param, value: f64) -> Self {
        match param {
            Param::Shape => self.shape = value,
            Param::Tau => self.tau = value,
            Param::Decay => self.kd = value,
            Param::R0 => self.r0 = value,
        }
        self
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let kernel = GammaKernel::from_mean_shape(self.tau, self.shape)?;
        ModelSpec::calibrated(kernel, self.kd, self.r0)
    }
}

/// A parameter value at which the endemic characteristic equation has a
/// purely imaginary root pair `±iω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfCrossing {
    pub param: f64,
    pub omega: f64,
}

/// Locates Hopf points of the exact model by solving `ee_char(iω) = 0` as two
/// real equations in `(param, ω)`, using damped Newton from a grid of seeds.
///
/// Returns every distinct crossing inside `bracket`, sorted by parameter.
pub fn hopf_oracle(scenario: &Scenario, param: Param, bracket: (f64, f64)) -> Result<Vec<HopfCrossing>> {
    let (lo, hi) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    let residual = |p: f64, omega: f64| -> Option<[f64; 2]> {
        let model = scenario.with(param, p).model().ok()?;
        if model.reproduction_number() <= 1.0 {
            return None;
        }
        let z = model.ee_char(Complex64::new(0.0, omega)).ok()?;
        z.is_finite().then_some([z.re, z.im])
    };

    let omega_max = 4.0 * std::f64::consts::PI / scenario.tau.max(1e-3);
    let mut found: Vec<HopfCrossing> = Vec::new();
    const P_SEEDS: usize = 9;
    const W_SEEDS: usize = 24;
    for a in 0..P_SEEDS {
        let p0 = lo + (hi - lo) * a as f64 / (P_SEEDS - 1) as f64;
        for b in 1..=W_SEEDS {
            let w0 = omega_max * b as f64 / W_SEEDS as f64;
            let Some((p, omega)) = newton_2d(&residual, p0, w0, (lo, hi)) else {
                continue;
            };
            if p < lo || p > hi || omega <= 1e-6 {
                continue;
            }
            if found
                .iter()
                .all(|c| (c.param - p).abs() > 1e-6 * (1.0 + p.abs()) || (c.omega - omega).abs() > 1e-6)
            {
                found.push(HopfCrossing { param: p, omega });
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoCrossing {
            param: param.name(),
            lo,
            hi,
        });
    }
    found.sort_by(|x, y| x.param.total_cmp(&y.param));
    Ok(found)
}

fn newton_2d(
    residual: &impl Fn(f64, f64) -> Option<[f64; 2]>,
    mut p: f64,
    mut w: f64,
    bracket: (f64, f64),
) -> Option<(f64, f64)> {
    let span = bracket.1 - bracket.0;
    let norm = |g: [f64; 2]| g[0].hypot(g[1]);
    let mut g = residual(p, w)?;
    for _ in 0..60 {
        if norm(g) <= 1e-14 {
            break;
        }
        let hp = 1e-7 * (1.0 + p.abs());
        let hw = 1e-7 * (1.0 + w.abs());
        let gp1 = residual(p + hp, w)?;
        let gp0 = residual(p - hp, w)?;
        let gw1 = residual(p, w + hw)?;
        let gw0 = residual(p, w - hw)?;
        let j = [
            [(gp1[0] - gp0[0]) / (2.0 * hp), (gw1[0] - gw0[0]) / (2.0 * hw)],
            [(gp1[1] - gp0[1]) / (2.0 * hp), (gw1[1] - gw0[1]) / (2.0 * hw)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dp = (j[1][1] * g[0] - j[0][1] * g[1]) / det;
        let dw = (j[0][0] * g[1] - j[1][0] * g[0]) / det;
        let mut damping = 1.0;
        // keep each Newton step within a fraction of the bracket
        let limit = 0.25 * span.max(1e-3);
        if dp.abs() > limit {
            damping = limit / dp.abs();
        }
        let mut accepted = false;
        for _ in 0..20 {
            let (tp, tw) = (p - damping * dp, w - damping * dw);
            if let Some(gt) = residual(tp, tw) {
                if norm(gt) < norm(g) {
                    p = tp;
                    w = tw;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
        if p < bracket.0 - span || p > bracket.1 + span {
            return None;
        }
    }
    (norm(g) <= 1e-10).then_some((p, w.abs()))
}
