//! Finite-dimensional ODE reductions of the renewal equation.
//!
//! Chain state layout: `[I, Λ, I_1..I_m, L_1..L_m]`. Stage variables are
//! flow-scaled: at constant incidence `c` every `I_i` equals `c`, and
//! `L_i = c·β0·Π_{k≤i} r_k/(r_k + kd)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::kernels::{PhaseChain, Sojourn, StageChain};
use crate::model::{reproduction_number, ModelSpec, Scenario};
use crate::pseudospectral::{build_ps_system, build_scheme, default_rho, DEFAULT_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Erlang,
    Hypoexp,
    Pseudospectral,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Erlang => "erlang",
            Method::Hypoexp => "hypoexp",
            Method::Pseudospectral => "pseudospectral",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "erlang" => Ok(Method::Erlang),
            "hypoexp" => Ok(Method::Hypoexp),
            "pseudospectral" | "ps" => Ok(Method::Pseudospectral),
            other => Err(invalid("method", format!("unknown method `{other}`"))),
        }
    }
}

/// Epidemiological observables recovered from a state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub susceptible: f64,
    pub infected: f64,
    /// Force of infection Λ (1/month).
    pub force: f64,
    /// Incidence Λ·S (1/month).
    pub incidence: f64,
}

/// An autonomous ODE system approximating the renewal equation.
pub trait OdeSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn method(&self) -> Method;

    /// The exact model this system approximates.
    fn model(&self) -> &ModelSpec;

    fn rhs(&self, x: &[f64], dx: &mut [f64]);

    fn observables(&self, x: &[f64]) -> Observables;

    /// `∫ β F` for the approximating kernel (or quadrature rule).
    fn reproduction_number(&self) -> f64;

    /// State realizing a constant incidence history with `I(0) = i0`.
    fn constant_history_state(&self, i0: f64) -> Result<Vec<f64>>;

    /// Jacobian of `rhs`. Central differences with `h_i = 1e-6·max(1, |x_i|)`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(self, x)
    }

    /// Names and values of per-stage columns for state dumps.
    fn stage_columns(&self, _x: &[f64]) -> Vec<(String, f64)> {
        Vec::new()
    }

    /// Prevalence at the endemic equilibrium of this system, if it exists.
    fn endemic_prevalence(&self) -> Option<f64> {
        let r0 = self.reproduction_number();
        (r0 > 1.0).then(|| 1.0 - 1.0 / r0)
    }

    fn field(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.rhs(x, &mut dx);
        dx
    }
}

pub fn fd_jacobian<S: OdeSystem + ?Sized>(system: &S, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for k in 0..n {
        let h = 1e-6 * x[k].abs().max(1.0);
        probe[k] = x[k] + h;
        system.rhs(&probe, &mut plus);
        probe[k] = x[k] - h;
        system.rhs(&probe, &mut minus);
        probe[k] = x[k];
        for i in 0..n {
            jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

pub(crate) fn check_prevalence(i0: f64) -> Result<f64> {
    if i0.is_finite() && (0.0..1.0).contains(&i0) {
        Ok(i0)
    } else {
        Err(invalid("i0", format!("must lie in [0, 1), got {i0}")))
    }
}

/// Linear chain of exponential stages (Erlang or hypoexponential).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSystem {
    model: ModelSpec,
    chain: PhaseChain,
    method: Method,
    /// Decay rate of deviations of `I`, `Λ` from their stage sums.
    relax: f64,
}

impl ChainSystem {
    fn new(model: &ModelSpec, chain: PhaseChain, method: Method) -> Self {
        let fastest = chain.stage_rates().iter().fold(0.0f64, |m, r| m.max(*r));
        Self {
            model: *model,
            relax: fastest + model.infectivity.decay,
            chain,
            method,
        }
    }

    pub fn chain(&self) -> &PhaseChain {
        &self.chain
    }

    pub fn stages(&self) -> usize {
        self.chain.stage_count()
    }

    fn beta0(&self) -> f64 {
        self.model.infectivity.beta0
    }

    fn kd(&self) -> f64 {
        self.model.infectivity.decay
    }
}

/// Erlang linear-chain reduction: shape rounded to `m` stages, mean kept.
pub fn build_erlang_system(model: &ModelSpec) -> ChainSystem {
    ChainSystem::new(model, PhaseChain::from_chain(&model.kernel.erlang_round()), Method::Erlang)
}

/// Hypoexponential reduction matching mean and variance of the gamma kernel.
pub fn build_hypoexp_system(model: &ModelSpec) -> Result<ChainSystem> {
    Ok(ChainSystem::new(model, PhaseChain::from_chain(&model.kernel.hypoexp()?), Method::Hypoexp))
}

impl OdeSystem for ChainSystem {
    fn dim(&self) -> usize {
        2 + 2 * self.stages()
    }

    fn method(&self) -> Method {
        self.method
    }

    fn model(&self) -> &ModelSpec {
        &self.model
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let m = self.stages();
        let rates = self.chain.stage_rates();
        let (beta0, kd) = (self.beta0(), self.kd());
        let incidence = x[1] * (1.0 - x[0]);
        let stages = &x[2..2 + m];
        let loads = &x[2 + m..];

        // I and Λ duplicate the stage sums Σ I_i/r_i and Σ L_i/r_i; the drift
        // terms vanish on that manifold and make the redundant directions decay
        let mut occupancy = 0.0;
        let mut load_sum = 0.0;
        for i in 0..m {
            occupancy += stages[i] / rates[i];
            load_sum += loads[i] / rates[i];
        }
        dx[0] = incidence - stages[m - 1] - self.relax * (x[0] - occupancy);
        dx[1] = beta0 * incidence - kd * x[1] - loads[m - 1] - self.relax * (x[1] - load_sum);
        let mut inflow = incidence;
        let mut load_in = beta0 * incidence;
        for i in 0..m {
            let r = rates[i];
            dx[2 + i] = r * (inflow - stages[i]);
            dx[2 + m + i] = r * load_in - (r + kd) * loads[i];
            inflow = stages[i];
            load_in = loads[i];
        }
    }

    fn observables(&self, x: &[f64]) -> Observables {
        let susceptible = 1.0 - x[0];
        Observables {
            susceptible,
            infected: x[0],
            force: x[1],
            incidence: x[1] * susceptible,
        }
    }

    fn reproduction_number(&self) -> f64 {
        reproduction_number(&self.chain, &self.model.infectivity)
    }

    fn constant_history_state(&self, i0: f64) -> Result<Vec<f64>> {
        check_prevalence(i0)?;
        let m = self.stages();
        let c = i0 / self.chain.mean();
        let mut state = vec![0.0; self.dim()];
        state[0] = i0;
        state[1] = c * self.reproduction_number();
        let mut load = c * self.beta0();
        for (i, r) in self.chain.stage_rates().iter().enumerate() {
            state[2 + i] = c;
            load *= r / (r + self.kd());
            state[2 + m + i] = load;
        }
        Ok(state)
    }

    fn stage_columns(&self, x: &[f64]) -> Vec<(String, f64)> {
        let m = self.stages();
        let stages = (0..m).map(|i| (format!("I_{}", i + 1), x[2 + i]));
        let loads = (0..m).map(|i| (format!("L_{}", i + 1), x[2 + m + i]));
        stages.chain(loads).collect()
    }
}

/// Which reduction to build, with discretization settings for collocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Erlang,
    Hypoexp,
    Pseudospectral { degree: usize, rho: Option<f64> },
}

impl Reduction {
    pub fn pseudospectral() -> Self {
        Reduction::Pseudospectral {
            degree: DEFAULT_DEGREE,
            rho: None,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Reduction::Erlang => Method::Erlang,
            Reduction::Hypoexp => Method::Hypoexp,
            Reduction::Pseudospectral { .. } => Method::Pseudospectral,
        }
    }

    pub fn build(&self, model: &ModelSpec) -> Result<Box<dyn OdeSystem>> {
        Ok(match *self {
            Reduction::Erlang => Box::new(build_erlang_system(model)),
            Reduction::Hypoexp => Box::new(build_hypoexp_system(model)?),
            Reduction::Pseudospectral { degree, rho } => {
                let rho = rho.unwrap_or_else(|| default_rho(&model.kernel));
                Box::new(build_ps_system(model, build_scheme(degree, rho)?)?)
            }
        })
    }

    pub fn build_scenario(&self, scenario: &Scenario) -> Result<Box<dyn OdeSystem>> {
        self.build(&scenario.model()?)
    }
}

/// Chain reduction used as the time-domain reference: the hypoexponential
/// chain when the shape allows it (exact for integer shapes), Erlang otherwise.
pub fn time_domain_reduction(shape: f64) -> Reduction {
    if shape > 1.0 {
        Reduction::Hypoexp
    } else {
        Reduction::Erlang
    }
}
