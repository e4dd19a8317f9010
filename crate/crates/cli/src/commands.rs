//! One function per subcommand. Each returns the documents to write; all
//! text is a pure function of the config.

use std::fmt::Write as _;

use agesis::bifurcation::{
    classify_hopf, continue_equilibrium, eigenvalues, endemic_equilibrium, hopf_boundary, boundary_csv, linearize,
    BifurcationKind, ContinuationOptions, CriticalityOptions, PlaneFamily, ScenarioFamily,
};
use agesis::dynamics::{
    bistability_probe, classify_attractor, integrate, report_csv, suggested_horizon, IntegrateOptions, ProbeOptions,
    Sampling, DEFAULT_EPS_EQ, DEFAULT_WINDOW,
};
use agesis::output::{num, CsvTable};
use agesis::reductions::OdeSystem;
use agesis::Error;

use crate::config::{ConfigError, Horizon, ScenarioConfig};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::UnsupportedShape { .. } => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

/// The main document plus named companions (written next to it as
/// `<stem>.<name>.csv`).
#[derive(Debug, Default)]
pub struct Documents {
    pub main: String,
    pub extra: Vec<(&'static str, String)>,
    pub warnings: Vec<String>,
}

impl Documents {
    fn single(main: String) -> Self {
        Self { main, ..Self::default() }
    }
}

fn build(config: &ScenarioConfig) -> Result<Box<dyn OdeSystem>, Failure> {
    Ok(config.reduction().build_scenario(&config.scenario)?)
}

/// Real part of the slowest mode at the attracting candidate: the leading
/// endemic eigenvalue, or the Malthusian parameter without an endemic state.
fn leading_rate(system: &dyn OdeSystem) -> Result<f64, Failure> {
    match endemic_equilibrium(system)? {
        Some(ee) => Ok(eigenvalues(&linearize(system, &ee), false)?.first().map_or(0.0, |z| z.re)),
        None => Ok(system.model().malthusian()?),
    }
}

/// The horizon to use and, for fixed horizons, a warning when the leading
/// eigenvalue is too slow to settle inside it.
fn horizon(config: &ScenarioConfig, system: &dyn OdeSystem) -> Result<(f64, Option<String>), Failure> {
    let tau = config.scenario.tau;
    let rate = leading_rate(system)?;
    let needed = suggested_horizon(tau, rate, DEFAULT_EPS_EQ, DEFAULT_WINDOW);
    Ok(match config.horizon {
        Horizon::Auto => (needed, None),
        Horizon::Fixed(t) if t < needed => (
            t,
            Some(format!(
                "leading eigenvalue real part {} needs t_end >= {} months to classify; t_end = {} may be undersampled (set `t_end = auto`)",
                num(rate),
                num(needed),
                num(t)
            )),
        ),
        Horizon::Fixed(t) => (t, None),
    })
}

pub fn info(config: &ScenarioConfig) -> Result<Documents, Failure> {
    let system = build(config)?;
    let model = system.model();
    let s = &config.scenario;
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("method", config.method.to_string());
    line("dimension", system.dim().to_string());
    if let agesis::reductions::Reduction::Pseudospectral { degree, .. } = config.reduction() {
        line("d", degree.to_string());
        line("rho", num(config.rho.unwrap_or_else(|| agesis::pseudospectral::default_rho(&model.kernel))));
    }
    line("tau", num(s.tau));
    line("shape_j", num(s.shape));
    line("kd", num(s.kd));
    line("beta0", num(model.infectivity.beta0));
    line("r0", num(s.r0));
    line("r0_method", num(system.reproduction_number()));
    line("malthusian_r", num(model.malthusian()?));
    let (dfe, ee) = model.equilibria();
    line("dfe_S", num(dfe.susceptible));
    line("dfe_I", num(dfe.infected));
    match ee {
        Some(ee) => {
            line("ee_S", num(ee.susceptible));
            line("ee_I", num(ee.infected));
            line("ee_incidence", num(ee.incidence));
        }
        None => line("ee", "none".into()),
    }
    Ok(Documents::single(out))
}

pub fn simulate(config: &ScenarioConfig) -> Result<Documents, Failure> {
    let [i0] = config.i0[..] else {
        return Err(ConfigError("`i0`: simulate takes a single initial prevalence".into()).into());
    };
    let system = build(config)?;
    let (t_end, warning) = horizon(config, system.as_ref())?;
    let opts = IntegrateOptions {
        rel_tol: config.rel_tol,
        abs_tol: config.abs_tol,
        sampling: Sampling::Every(config.dt),
        keep_states: true,
        ..IntegrateOptions::default()
    };
    let traj = integrate(system.as_ref(), &system.constant_history_state(i0)?, t_end, &opts)?;
    let mut table = traj.to_csv(system.as_ref());
    table.comment(format!("method={} dimension={} t_end={}", config.method, system.dim(), num(t_end)));
    match classify_attractor(&traj, DEFAULT_WINDOW, DEFAULT_EPS_EQ) {
        Ok(r) => table.comment(format!(
            "attractor kind={} I_inf={} amplitude={} period={}",
            r.kind,
            r.i_inf.map(num).unwrap_or_default(),
            num(r.amplitude),
            r.period.map(num).unwrap_or_default()
        )),
        Err(e) => table.comment(format!("attractor unavailable: {e}")),
    }
    Ok(Documents { main: table.render(), extra: Vec::new(), warnings: warning.into_iter().collect() })
}

pub fn eigs(config: &ScenarioConfig, full: bool) -> Result<Documents, Failure> {
    let system = build(config)?;
    let (label, state) = match endemic_equilibrium(system.as_ref())? {
        Some(ee) => ("endemic", ee),
        None => ("disease-free", system.constant_history_state(0.0)?),
    };
    let eig = eigenvalues(&linearize(system.as_ref(), &state), full)?;
    let mut table = CsvTable::new(["equilibrium", "re", "im"]);
    for z in &eig {
        table.push([label.to_string(), num(z.re), num(z.im)]);
    }
    table.comment(format!("method={} dimension={} retained={}", config.method, system.dim(), eig.len()));
    Ok(Documents::single(table.render()))
}

pub fn continuation(config: &ScenarioConfig, full: bool) -> Result<Documents, Failure> {
    let sweep = config.sweep()?;
    let family = ScenarioFamily::new(config.scenario, sweep.param, config.reduction());
    let step = (sweep.to - sweep.from).abs() / sweep.steps as f64;
    let opts = ContinuationOptions {
        initial_step: step,
        max_step: Some(step),
        full_spectrum: full,
        ..ContinuationOptions::default()
    };
    let mut branch = continue_equilibrium(&family, (sweep.from, sweep.to), &opts)?;
    let mut notes = Vec::new();
    if config.criticality {
        let copts = CriticalityOptions::default();
        for b in branch.bifurcations.iter_mut().filter(|b| b.kind == BifurcationKind::Hopf) {
            let report = classify_hopf(&family, b, &copts);
            b.criticality = report.criticality();
            let amps = |side: &[(f64, f64)]| side.iter().map(|(d, a)| format!("{}:{}", num(*d), num(*a))).collect::<Vec<_>>().join(" ");
            notes.push(format!(
                "hopf at param={}: chain hopf {}, unstable side {}, stable side {}",
                num(b.param),
                report.chain_hopf.map(num).unwrap_or_else(|| "none".into()),
                amps(&report.unstable_side),
                amps(&report.stable_side)
            ));
            notes.extend(report.diagnostics.iter().map(|d| format!("hopf at param={}: {d}", num(b.param))));
        }
    }
    let mut bif = branch.bifurcations_csv();
    for n in notes {
        bif.comment(n);
    }
    Ok(Documents {
        main: branch.to_csv().render(),
        extra: vec![("bifurcations", bif.render())],
        warnings: Vec::new(),
    })
}

pub fn boundary(config: &ScenarioConfig) -> Result<Documents, Failure> {
    let (grid, sweep) = (config.grid()?, config.sweep()?);
    let family = PlaneFamily { base: config.scenario, p: grid.param, q: sweep.param, reduction: config.reduction() };
    let points = hopf_boundary(&family, &grid.grid(), (sweep.from, sweep.to))?;
    let mut table = boundary_csv(&points);
    table.comment(format!("p={} q={} method={}", grid.param, sweep.param, config.method));
    Ok(Documents::single(table.render()))
}

pub fn bistability(config: &ScenarioConfig) -> Result<Documents, Failure> {
    let system = build(config)?;
    let (t_end, warning) = horizon(config, system.as_ref())?;
    let opts = ProbeOptions::new(t_end, config.scenario.tau).with_tolerances(config.rel_tol, config.abs_tol);
    let reports = bistability_probe(system.as_ref(), &config.i0, &opts);
    let mut table = report_csv(&reports);
    table.comment(format!("method={} dimension={} t_end={}", config.method, system.dim(), num(t_end)));
    Ok(Documents { main: table.render(), extra: Vec::new(), warnings: warning.into_iter().collect() })
}
