//! Time integration and long-run attractor classification.

use std::fmt;

use crate::error::{Error, Result};
use crate::output::{num, CsvTable};
use crate::parallel::par_map;
use crate::reductions::OdeSystem;

/// Which points of the solution are stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Every accepted step.
    Steps,
    /// A uniform grid `t = k·dt`, filled by dense output.
    Every(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub sampling: Sampling,
    /// Samples before this time are dropped (the integration still starts at 0).
    pub record_from: f64,
    /// Keep full state vectors alongside the observables.
    pub keep_states: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 50_000_000,
            sampling: Sampling::Steps,
            record_from: 0.0,
            keep_states: false,
        }
    }
}

/// Sampled solution with its observables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
    pub force: Vec<f64>,
    pub incidence: Vec<f64>,
    /// Present when `keep_states` was requested.
    pub states: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
    /// Mean sojourn time of the model, used for window checks.
    pub tau: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn record(&mut self, system: &(impl OdeSystem + ?Sized), t: f64, x: &[f64], keep: bool) {
        let obs = system.observables(x);
        self.t.push(t);
        self.susceptible.push(obs.susceptible);
        self.infected.push(obs.infected);
        self.force.push(obs.force);
        self.incidence.push(obs.incidence);
        if keep {
            self.states.push(x.to_vec());
        }
    }

    /// `t,S,I,Lambda,incidence`, plus stage columns when states were kept.
    pub fn to_csv(&self, system: &(impl OdeSystem + ?Sized)) -> CsvTable {
        let mut header: Vec<String> = ["t", "S", "I", "Lambda", "incidence"].map(String::from).to_vec();
        if let Some(first) = self.states.first() {
            header.extend(system.stage_columns(first).into_iter().map(|(name, _)| name));
        }
        let mut table = CsvTable::new(header);
        for k in 0..self.len() {
            let mut row = vec![
                num(self.t[k]),
                num(self.susceptible[k]),
                num(self.infected[k]),
                num(self.force[k]),
                num(self.incidence[k]),
            ];
            if let Some(x) = self.states.get(k) {
                row.extend(system.stage_columns(x).into_iter().map(|(_, v)| num(v)));
            }
            table.push(row);
        }
        table
    }
}

// Dormand–Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `system` from `state0` at `t = 0` to `t_end` with the
/// Dormand–Prince 5(4) pair and its fourth-order dense output.
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    state0: &[f64],
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(crate::error::invalid("t_end", format!("must be positive, got {t_end}")));
    }
    if !(opts.rel_tol > 0.0 && opts.abs_tol > 0.0) {
        return Err(crate::error::invalid("rel_tol", "tolerances must be positive"));
    }
    if let Sampling::Every(dt) = opts.sampling {
        if !(dt > 0.0) {
            return Err(crate::error::invalid("dt", "sampling interval must be positive"));
        }
    }
    let n = state0.len();
    let mut traj = Trajectory {
        tau: system.model().tau(),
        ..Trajectory::default()
    };

    let mut t = 0.0;
    let mut y = state0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut dense = vec![vec![0.0; n]; 5];
    let mut sample = vec![0.0; n];

    system.rhs(&y, &mut k[0]);
    let mut h = initial_step(system, &y, &k[0], t_end, opts);
    let mut next_sample = 0usize;
    let sample_time = |i: usize, dt: f64| (i as f64 * dt).min(t_end);

    match opts.sampling {
        Sampling::Steps if opts.record_from <= 0.0 => traj.record(system, 0.0, &y, opts.keep_states),
        Sampling::Every(dt) => {
            next_sample = (opts.record_from / dt).ceil().max(0.0) as usize;
            if next_sample == 0 {
                traj.record(system, 0.0, &y, opts.keep_states);
                next_sample = 1;
            }
        }
        _ => {}
    }

    let mut rejected_last = false;
    while t < t_end {
        if traj.steps + traj.rejected >= opts.max_steps {
            return Err(Error::StepBudget { t, steps: traj.steps });
        }
        if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let (k1, rest) = k.split_first_mut().expect("seven stages");
        let [k2, k3, k4, k5, k6, k7] = rest else { unreachable!() };
        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        system.rhs(&stage, k2);
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        system.rhs(&stage, k3);
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        system.rhs(&stage, k4);
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        system.rhs(&stage, k5);
        for i in 0..n {
            stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        system.rhs(&stage, k6);
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        system.rhs(&y_new, k7);

        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            traj.rejected += 1;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            if let Sampling::Every(dt) = opts.sampling {
                if sample_time(next_sample, dt) <= t_new {
                    for i in 0..n {
                        let diff = y_new[i] - y[i];
                        let bspl = h * k1[i] - diff;
                        dense[0][i] = y[i];
                        dense[1][i] = diff;
                        dense[2][i] = bspl;
                        dense[3][i] = diff - h * k7[i] - bspl;
                        dense[4][i] = h
                            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                    }
                    loop {
                        let ts = sample_time(next_sample, dt);
                        if ts > t_new || (next_sample > 0 && sample_time(next_sample - 1, dt) >= t_end) {
                            break;
                        }
                        let theta = (ts - t) / h;
                        let theta1 = 1.0 - theta;
                        for i in 0..n {
                            sample[i] = dense[0][i]
                                + theta
                                    * (dense[1][i]
                                        + theta1 * (dense[2][i] + theta * (dense[3][i] + theta1 * dense[4][i])));
                        }
                        traj.record(system, ts, &sample, opts.keep_states);
                        next_sample += 1;
                    }
                }
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            traj.steps += 1;
            if opts.sampling == Sampling::Steps && t >= opts.record_from {
                traj.record(system, t, &y, opts.keep_states);
            }
            let factor = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
            h *= if rejected_last { factor.min(1.0) } else { factor };
            rejected_last = false;
        } else {
            traj.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            rejected_last = true;
        }
    }
    traj.final_state = y;
    Ok(traj)
}

fn initial_step<S: OdeSystem + ?Sized>(system: &S, y: &[f64], f0: &[f64], t_end: f64, opts: &IntegrateOptions) -> f64 {
    let sc = |i: usize| opts.abs_tol + opts.rel_tol * y[i].abs();
    let n = y.len() as f64;
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, f)| v + h0 * f).collect();
    let mut f1 = vec![0.0; y.len()];
    system.rhs(&y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / sc(i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractorKind {
    Equilibrium,
    Periodic,
    Undecided,
}

impl AttractorKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttractorKind::Equilibrium => "equilibrium",
            AttractorKind::Periodic => "periodic",
            AttractorKind::Undecided => "undecided",
        }
    }
}

impl fmt::Display for AttractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttractorReport {
    pub kind: AttractorKind,
    /// Window mean of `I` for equilibria.
    pub i_inf: Option<f64>,
    /// Peak-to-trough of `I` over the window.
    pub amplitude: f64,
    /// Mean spacing of upward mean-crossings for periodic orbits (months).
    pub period: Option<f64>,
    pub window: (f64, f64),
}

pub const DEFAULT_WINDOW: f64 = 0.2;
pub const DEFAULT_EPS_EQ: f64 = 1e-6;

/// Classifies the trailing `window_fraction` of a trajectory.
pub fn classify_attractor(traj: &Trajectory, window_fraction: f64, eps_eq: f64) -> Result<AttractorReport> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData("trajectory has fewer than two samples".into()));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(crate::error::invalid("window", "fraction must lie in (0, 1]"));
    }
    let (t0, t1) = (traj.t[0], traj.t[traj.len() - 1]);
    if traj.tau > 0.0 && t1 - t0 < 20.0 * traj.tau * (1.0 - 1e-12) {
        return Err(Error::InsufficientData(format!(
            "trajectory spans {} months, fewer than 20 mean sojourn times",
            t1 - t0
        )));
    }
    let start = t1 - window_fraction * (t1 - t0);
    let first = traj.t.partition_point(|&t| t < start);
    classify_window(&traj.t[first..], &traj.infected[first..], eps_eq)
}

pub(crate) fn classify_window(t: &[f64], i: &[f64], eps_eq: f64) -> Result<AttractorReport> {
    if t.len() < 3 {
        return Err(Error::InsufficientData("classification window holds fewer than three samples".into()));
    }
    let window = (t[0], t[t.len() - 1]);
    let (lo, hi) = i.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let amplitude = hi - lo;
    let mean = mean_trapezoid(t, i);
    if amplitude < eps_eq {
        return Ok(AttractorReport {
            kind: AttractorKind::Equilibrium,
            i_inf: Some(mean),
            amplitude,
            period: None,
            window,
        });
    }
    let crossings: Vec<f64> = (1..t.len())
        .filter(|&k| i[k - 1] < mean && i[k] >= mean)
        .map(|k| t[k - 1] + (mean - i[k - 1]) * (t[k] - t[k - 1]) / (i[k] - i[k - 1]))
        .collect();
    if crossings.len() < 3 {
        return Ok(AttractorReport {
            kind: AttractorKind::Undecided,
            i_inf: None,
            amplitude,
            period: None,
            window,
        });
    }
    let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    Ok(AttractorReport {
        kind: AttractorKind::Periodic,
        i_inf: None,
        amplitude,
        period: Some(period),
        window,
    })
}

fn mean_trapezoid(t: &[f64], v: &[f64]) -> f64 {
    let span = t[t.len() - 1] - t[0];
    if span <= 0.0 {
        return v.iter().sum::<f64>() / v.len() as f64;
    }
    let area: f64 = (1..t.len()).map(|k| 0.5 * (v[k] + v[k - 1]) * (t[k] - t[k - 1])).sum();
    area / span
}

/// Settings shared by all probes of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub t_end: f64,
    pub integrate: IntegrateOptions,
    pub window_fraction: f64,
    pub eps_eq: f64,
}

impl ProbeOptions {
    /// Uniform sampling at `τ/20` restricted to the classification window.
    pub fn new(t_end: f64, tau: f64) -> Self {
        let window_fraction = DEFAULT_WINDOW;
        Self {
            t_end,
            integrate: IntegrateOptions {
                sampling: Sampling::Every(tau / 20.0),
                record_from: (1.0 - window_fraction) * t_end * (1.0 - 1e-9),
                ..IntegrateOptions::default()
            },
            window_fraction,
            eps_eq: DEFAULT_EPS_EQ,
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.integrate.rel_tol = rel_tol;
        self.integrate.abs_tol = abs_tol;
        self
    }
}

/// Integrates from `state0` and classifies the trailing window.
pub fn run_and_classify<S: OdeSystem + ?Sized>(system: &S, state0: &[f64], opts: &ProbeOptions) -> Result<AttractorReport> {
    let traj = integrate(system, state0, opts.t_end, &opts.integrate)?;
    // the record starts at the window, so classify everything that was kept
    let (t0, t1) = (traj.t.first().copied().unwrap_or(0.0), opts.t_end);
    let start = t1 - opts.window_fraction * t1;
    let first = traj.t.partition_point(|&t| t < start.max(t0));
    classify_window(&traj.t[first..], &traj.infected[first..], opts.eps_eq)
}

/// One constant-history run per initial prevalence; failures stay per probe.
pub fn bistability_probe<S: OdeSystem + ?Sized>(
    system: &S,
    i0_list: &[f64],
    opts: &ProbeOptions,
) -> Vec<(f64, Result<AttractorReport>)> {
    par_map(i0_list, |&i0| {
        let report = system
            .constant_history_state(i0)
            .and_then(|x| run_and_classify(system, &x, opts));
        (i0, report)
    })
}

/// Horizon long enough for a mode decaying (or growing) at rate `leading_re`
/// to cross `eps_eq` before the classification window opens. Starts from
/// the largest possible peak-to-trough, 1.
pub fn suggested_horizon(tau: f64, leading_re: f64, eps_eq: f64, window_fraction: f64) -> f64 {
    let rate = leading_re.abs().max(1e-7);
    let settle = (1.0 / eps_eq).ln() / rate / (1.0 - window_fraction);
    (50.0 * tau).max(settle).min(1e7)
}

/// `I0,kind,I_inf,amplitude,period`.
pub fn report_csv(reports: &[(f64, Result<AttractorReport>)]) -> CsvTable {
    let mut table = CsvTable::new(["I0", "kind", "I_inf", "amplitude", "period"]);
    for (i0, report) in reports {
        match report {
            Ok(r) => table.push([
                num(*i0),
                r.kind.label().to_string(),
                r.i_inf.map(num).unwrap_or_default(),
                num(r.amplitude),
                r.period.map(num).unwrap_or_default(),
            ]),
            Err(e) => {
                table.push([num(*i0), "error".into(), String::new(), String::new(), String::new()]);
                table.comment(format!("I0={} error: {e}", num(*i0)));
            }
        }
    }
    table
}
