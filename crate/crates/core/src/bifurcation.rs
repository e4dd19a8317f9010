//! Equilibria, linear stability, one-parameter continuation, Hopf boundaries
//! in parameter planes, and simulation-based Hopf criticality.

use std::fmt;

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dynamics::{run_and_classify, AttractorKind, ProbeOptions};
use crate::error::{invalid, Error, Result};
use crate::model::{Param, Scenario};
use crate::output::{num, CsvTable};
use crate::parallel::par_map;
use crate::reductions::{time_domain_reduction, Method, OdeSystem, Reduction};

pub const EQUILIBRIUM_TOL: f64 = 1e-12;
pub const MAX_NEWTON: usize = 50;
pub const RETAINED_EIGENVALUES: usize = 6;
/// Eigenvalues with `|Im|` below this count as real.
const IMAG_TOL: f64 = 1e-6;
/// Largest `|Δ(iω)|` of the exact characteristic equation at which a Hopf
/// crossing of a collocated system is accepted as a root.
pub const HOPF_RESIDUAL_TOL: f64 = 1e-4;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton: residual `‖f‖₂ ≤ 1e-12` within 50 iterations.
pub fn find_equilibrium(system: &(impl OdeSystem + ?Sized), seed: &[f64]) -> Result<Vec<f64>> {
    newton(system, seed, MAX_NEWTON)
}

fn newton(system: &(impl OdeSystem + ?Sized), seed: &[f64], max_iter: usize) -> Result<Vec<f64>> {
    let mut x = seed.to_vec();
    let mut f = system.field(&x);
    let mut res = norm(&f);
    for _ in 0..max_iter {
        if res <= EQUILIBRIUM_TOL {
            return Ok(x);
        }
        let jac = system.jacobian(&x);
        let Some(step) = jac.lu().solve(&DVector::from_iterator(f.len(), f.iter().map(|v| -v))) else {
            break;
        };
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + damping * s).collect();
            let ft = system.field(&trial);
            let rt = norm(&ft);
            if rt.is_finite() && rt < res {
                x = trial;
                f = ft;
                res = rt;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if res <= EQUILIBRIUM_TOL {
        Ok(x)
    } else {
        Err(Error::NoEquilibrium {
            iterations: max_iter,
            residual: res,
        })
    }
}

/// Jacobian of the vector field at `state`.
pub fn linearize(system: &(impl OdeSystem + ?Sized), state: &[f64]) -> DMatrix<f64> {
    system.jacobian(state)
}

/// Spectrum sorted by descending real part (then descending imaginary part).
/// Unless `full`, only the leading six are kept, extended by one when the cut
/// would split a conjugate pair.
pub fn eigenvalues(matrix: &DMatrix<f64>, full: bool) -> Result<Vec<Complex64>> {
    let mut m = matrix.clone();
    balance_parlett_reinsch(&mut m);
    let schur = Schur::try_new(m, f64::EPSILON, 100_000).ok_or(Error::Eigen)?;
    let mut eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    if eig.iter().any(|z| !z.is_finite()) {
        return Err(Error::Eigen);
    }
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    if !full && eig.len() > RETAINED_EIGENVALUES {
        let mut keep = RETAINED_EIGENVALUES;
        let last = eig[keep - 1];
        if last.im > IMAG_TOL && (eig[keep] - last.conj()).norm() <= 1e-8 * (1.0 + last.norm()) {
            keep += 1;
        }
        eig.truncate(keep);
    }
    Ok(eig)
}

/// Leading eigenvalue with positive imaginary part.
pub fn leading_pair(eig: &[Complex64]) -> Option<Complex64> {
    eig.iter()
        .filter(|z| z.im > IMAG_TOL)
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .copied()
}

/// A one-parameter family of reductions.
pub trait Family: Sync {
    fn system(&self, p: f64) -> Result<Box<dyn OdeSystem>>;

    /// Parameter value in `[lo, hi]` where the exact `R0` equals 1, if any.
    fn transcritical(&self, lo: f64, hi: f64) -> Option<f64>;

    fn name(&self) -> &'static str;

    /// `|Δ(iω)|` of the exact endemic characteristic equation at `p`, for
    /// families whose spectrum should reproduce it. `None` skips the check.
    fn characteristic_residual(&self, _p: f64, _omega: f64) -> Option<f64> {
        None
    }
}

/// `p ↦ reduction of base.with(param, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioFamily {
    pub base: Scenario,
    pub param: Param,
    pub reduction: Reduction,
}

impl ScenarioFamily {
    pub fn new(base: Scenario, param: Param, reduction: Reduction) -> Self {
        Self { base, param, reduction }
    }

    pub fn scenario(&self, p: f64) -> Scenario {
        self.base.with(self.param, p)
    }
}

impl Family for ScenarioFamily {
    fn system(&self, p: f64) -> Result<Box<dyn OdeSystem>> {
        self.reduction.build_scenario(&self.scenario(p))
    }

    fn transcritical(&self, lo: f64, hi: f64) -> Option<f64> {
        // R0 is held fixed by calibration unless it is the swept parameter
        (self.param == Param::R0 && lo.min(hi) <= 1.0 && 1.0 <= lo.max(hi)).then_some(1.0)
    }

    fn name(&self) -> &'static str {
        self.param.name()
    }

    /// Checked for collocation only: chain reductions have their own, shifted
    /// Hopf points by design.
    fn characteristic_residual(&self, p: f64, omega: f64) -> Option<f64> {
        if self.reduction.method() != Method::Pseudospectral {
            return None;
        }
        let model = self.scenario(p).model().ok()?;
        Some(model.ee_char(Complex64::new(0.0, omega)).map_or(f64::INFINITY, |z| z.norm()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub param: f64,
    pub state: Vec<f64>,
    pub i_star: f64,
    pub eigenvalues: Vec<Complex64>,
    pub stable: bool,
}

impl BranchPoint {
    pub fn leading(&self) -> Complex64 {
        self.eigenvalues.first().copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BifurcationKind {
    Hopf,
    Transcritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criticality {
    Supercritical,
    Subcritical,
    Unclassified,
}

impl fmt::Display for BifurcationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BifurcationKind::Hopf => "hopf",
            BifurcationKind::Transcritical => "transcritical",
        })
    }
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criticality::Supercritical => "supercritical",
            Criticality::Subcritical => "subcritical",
            Criticality::Unclassified => "unclassified",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationPoint {
    pub kind: BifurcationKind,
    pub param: f64,
    pub omega: Option<f64>,
    pub criticality: Criticality,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub bifurcations: Vec<BifurcationPoint>,
    /// Hopf crossings of the discretized system whose critical pair is not a
    /// root of the exact characteristic equation.
    pub rejected: Vec<BifurcationPoint>,
    /// Why the branch stopped before the end of the range, if it did.
    pub stopped: Option<String>,
}

impl Branch {
    pub fn hopf_points(&self) -> impl Iterator<Item = &BifurcationPoint> {
        self.bifurcations.iter().filter(|b| b.kind == BifurcationKind::Hopf)
    }

    /// `param,I_star,re_lambda1,im_lambda1,stable`.
    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(["param", "I_star", "re_lambda1", "im_lambda1", "stable"]);
        for p in &self.points {
            let lead = p.leading();
            table.push([num(p.param), num(p.i_star), num(lead.re), num(lead.im), p.stable.to_string()]);
        }
        for r in &self.rejected {
            table.comment(format!(
                "rejected hopf at param={} omega={}: not a characteristic root",
                num(r.param),
                r.omega.map(num).unwrap_or_default()
            ));
        }
        if let Some(reason) = &self.stopped {
            table.comment(format!("stopped: {reason}"));
        }
        table
    }

    /// `kind,param,omega,criticality`.
    pub fn bifurcations_csv(&self) -> CsvTable {
        bifurcations_csv(&self.bifurcations)
    }
}

pub fn bifurcations_csv(points: &[BifurcationPoint]) -> CsvTable {
    let mut table = CsvTable::new(["kind", "param", "omega", "criticality"]);
    for b in points {
        table.push([
            b.kind.to_string(),
            num(b.param),
            b.omega.map(num).unwrap_or_default(),
            b.criticality.to_string(),
        ]);
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub initial_step: f64,
    pub min_step: f64,
    /// Defaults to one fiftieth of the range.
    pub max_step: Option<f64>,
    pub corrector_iterations: usize,
    /// Bisection tolerance on the parameter at Hopf points.
    pub hopf_tol: f64,
    pub full_spectrum: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            min_step: 1e-5,
            max_step: None,
            corrector_iterations: 8,
            hopf_tol: 1e-8,
            full_spectrum: false,
        }
    }
}

/// Endemic equilibrium of `system` by Newton from its constant-history seed.
pub fn endemic_equilibrium(system: &(impl OdeSystem + ?Sized)) -> Result<Option<Vec<f64>>> {
    let Some(prevalence) = system.endemic_prevalence() else {
        return Ok(None);
    };
    let seed = system.constant_history_state(prevalence)?;
    find_equilibrium(system, &seed).map(Some)
}

fn branch_point(system: &dyn OdeSystem, p: f64, state: Vec<f64>, full: bool) -> Result<BranchPoint> {
    let eig = eigenvalues(&linearize(system, &state), full)?;
    let stable = eig.iter().all(|z| z.re < 0.0);
    Ok(BranchPoint {
        param: p,
        i_star: system.observables(&state).infected,
        state,
        eigenvalues: eig,
        stable,
    })
}

/// Real part of the leading complex pair at the endemic equilibrium, with its
/// imaginary part. `None` when the equilibrium does not exist.
pub fn leading_pair_at(family: &dyn Family, p: f64) -> Result<Option<Complex64>> {
    let system = family.system(p)?;
    let Some(state) = endemic_equilibrium(system.as_ref())? else {
        return Ok(None);
    };
    Ok(leading_pair(&eigenvalues(&linearize(system.as_ref(), &state), true)?))
}

/// Natural-parameter continuation of the endemic equilibrium from `range.0`
/// towards `range.1` with secant prediction and Newton correction.
pub fn continue_equilibrium(family: &dyn Family, range: (f64, f64), opts: &ContinuationOptions) -> Result<Branch> {
    let (start, end) = range;
    let span = (end - start).abs();
    if !(span > 0.0) || !span.is_finite() {
        return Err(invalid("range", "must have two distinct finite endpoints"));
    }
    let dir = (end - start).signum();
    let max_step = opts.max_step.unwrap_or(span / 50.0);
    let mut branch = Branch::default();

    let tc = family.transcritical(start, end);
    if let Some(p) = tc {
        branch.bifurcations.push(BifurcationPoint {
            kind: BifurcationKind::Transcritical,
            param: p,
            omega: None,
            criticality: Criticality::Unclassified,
        });
    }

    let mut p = start;
    let mut first = None;
    for attempt in 0..2 {
        let system = family.system(p)?;
        if let Some(state) = endemic_equilibrium(system.as_ref())? {
            first = Some(branch_point(system.as_ref(), p, state, opts.full_spectrum)?);
            break;
        }
        match (attempt, tc) {
            (0, Some(t)) if (t - start) * dir >= 0.0 && (end - t) * dir > 0.0 => {
                p = t + dir * (1e-6 * span).max(1e-9);
            }
            _ => break,
        }
    }
    let Some(first) = first else {
        branch.stopped = Some(format!("no endemic equilibrium at {} = {}", family.name(), num(p)));
        return Ok(branch);
    };
    branch.points.push(first);

    let mut h = opts.initial_step.abs().clamp(opts.min_step, max_step);
    while (end - branch.points.last().expect("nonempty").param) * dir > 1e-12 * span {
        let last = branch.points.last().expect("nonempty");
        let p_last = last.param;
        // snap to the end rather than leave a rounding-sized last step
        let p_next = if (end - (p_last + dir * h)) * dir < 1e-9 * span { end } else { p_last + dir * h };
        let system = family.system(p_next)?;
        if system.endemic_prevalence().is_none() {
            branch.stopped = Some(format!("endemic equilibrium lost at {} = {}", family.name(), num(p_next)));
            break;
        }

        let mut seeds = Vec::new();
        if let Some(prev) = branch.points.iter().rev().nth(1) {
            if prev.state.len() == last.state.len() && last.state.len() == system.dim() {
                let t = (p_next - p_last) / (p_last - prev.param);
                seeds.push(last.state.iter().zip(&prev.state).map(|(a, b)| a + t * (a - b)).collect::<Vec<_>>());
            }
        }
        if let Some(prevalence) = system.endemic_prevalence() {
            seeds.push(system.constant_history_state(prevalence)?);
        }
        let corrected = seeds
            .iter()
            .find_map(|seed| newton(system.as_ref(), seed, opts.corrector_iterations).ok());

        let Some(state) = corrected else {
            h *= 0.5;
            if h < opts.min_step {
                branch.stopped = Some(format!("corrector failed below minimum step at {} = {}", family.name(), num(p_next)));
                break;
            }
            continue;
        };
        let point = branch_point(system.as_ref(), p_next, state, opts.full_spectrum)?;

        if let (Some(a), Some(b)) = (leading_pair(&last.eigenvalues), leading_pair(&point.eigenvalues)) {
            if (a.re < 0.0) != (b.re < 0.0) {
                let hopf = refine_hopf(family, p_last, p_next, opts.hopf_tol)?;
                let residual = hopf.omega.and_then(|w| family.characteristic_residual(hopf.param, w));
                if residual.is_some_and(|r| !(r <= HOPF_RESIDUAL_TOL)) {
                    branch.rejected.push(hopf);
                } else {
                    branch.bifurcations.push(hopf);
                }
            }
        }
        branch.points.push(point);
        h = (1.3 * h).min(max_step);
    }
    branch
        .bifurcations
        .sort_by(|a, b| ((a.param - start) * dir).total_cmp(&((b.param - start) * dir)));
    Ok(branch)
}

/// Bisection on the sign of the leading pair's real part.
fn refine_hopf(family: &dyn Family, a: f64, b: f64, tol: f64) -> Result<BifurcationPoint> {
    let sign_at = |p: f64| -> Result<Option<Complex64>> { leading_pair_at(family, p) };
    let za = sign_at(a)?.ok_or(Error::NoCrossing { param: family.name(), lo: a, hi: b })?;
    let (mut lo, mut hi) = (a, b);
    let lo_unstable = za.re >= 0.0;
    let mut last = za;
    while (hi - lo).abs() > tol * lo.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        let Some(z) = sign_at(mid)? else { break };
        if (z.re >= 0.0) == lo_unstable {
            lo = mid;
        } else {
            hi = mid;
        }
        last = z;
    }
    Ok(BifurcationPoint {
        kind: BifurcationKind::Hopf,
        param: 0.5 * (lo + hi),
        omega: Some(last.im),
        criticality: Criticality::Unclassified,
    })
}

/// `(p, q) ↦ reduction of base with both parameters set`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFamily {
    pub base: Scenario,
    pub p: Param,
    pub q: Param,
    pub reduction: Reduction,
}

impl PlaneFamily {
    /// The one-parameter slice at fixed `p`, free in `q`.
    pub fn slice(&self, p: f64) -> ScenarioFamily {
        ScenarioFamily::new(self.base.with(self.p, p), self.q, self.reduction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub p: f64,
    pub q: f64,
}

/// Number of `q` samples used to count stability switches in each bracket.
pub const BOUNDARY_SCAN: usize = 16;

/// For each `p` in the grid, the `q` in `q_bracket` where the leading pair
/// crosses the imaginary axis, to tolerance 1e-6. Grid points without a
/// switch are omitted; more than one switch is an error.
pub fn hopf_boundary(family: &PlaneFamily, p_grid: &[f64], q_bracket: (f64, f64)) -> Result<Vec<BoundaryPoint>> {
    let results = par_map(p_grid, |&p| boundary_at(family, p, q_bracket));
    let mut out = Vec::new();
    for r in results {
        if let Some(point) = r? {
            out.push(point);
        }
    }
    Ok(out)
}

fn boundary_at(family: &PlaneFamily, p: f64, (lo, hi): (f64, f64)) -> Result<Option<BoundaryPoint>> {
    let slice = family.slice(p);
    let mut samples = Vec::with_capacity(BOUNDARY_SCAN);
    for k in 0..BOUNDARY_SCAN {
        let q = lo + (hi - lo) * k as f64 / (BOUNDARY_SCAN - 1) as f64;
        match leading_pair_at(&slice, q) {
            Ok(Some(z)) => samples.push((q, z.re)),
            Ok(None) => {}
            Err(Error::InvalidParameter { .. } | Error::UnsupportedShape { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let switches: Vec<(f64, f64)> = samples
        .windows(2)
        .filter(|w| (w[0].1 < 0.0) != (w[1].1 < 0.0))
        .map(|w| (w[0].0, w[1].0))
        .collect();
    match switches.len() {
        0 => Ok(None),
        1 => {
            let (a, b) = switches[0];
            let hopf = refine_hopf(&slice, a, b, 1e-6 / a.abs().max(b.abs()).max(1.0))?;
            Ok(Some(BoundaryPoint { p, q: hopf.param }))
        }
        n => Err(Error::AmbiguousBracket { lo, hi, switches: n }),
    }
}

/// `p,q_hopf`.
pub fn boundary_csv(points: &[BoundaryPoint]) -> CsvTable {
    let mut table = CsvTable::new(["p", "q_hopf"]);
    for b in points {
        table.push([num(b.p), num(b.q)]);
    }
    table
}

/// Settings for the simulation protocol of [`classify_hopf`].
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalityOptions {
    /// Relative parameter offsets from the Hopf point, increasing.
    pub deltas: Vec<f64>,
    /// Relative perturbation of the equilibrium on the unstable side.
    pub perturbation: f64,
    /// Prevalence offset of the far probe on the stable side.
    pub far_offset: f64,
    /// Amplitude ratio window for square-root scaling between consecutive deltas.
    pub ratio: (f64, f64),
    /// Largest amplitude still considered small near the Hopf point.
    pub small_amplitude: f64,
    /// Smallest amplitude counted as a finite-amplitude cycle.
    pub large_amplitude: f64,
    /// Relative half-width of the window searched for the simulated
    /// reduction's own Hopf point.
    pub search_window: f64,
}

impl Default for CriticalityOptions {
    fn default() -> Self {
        Self {
            deltas: vec![0.02, 0.04],
            perturbation: 1e-4,
            far_offset: 0.1,
            ratio: (1.1, 2.0),
            small_amplitude: 0.5,
            large_amplitude: 0.01,
            search_window: 0.25,
        }
    }
}

/// Evidence gathered while classifying one Hopf point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticalityReport {
    pub criticality: Option<Criticality>,
    /// Hopf point of the simulated chain reduction the offsets are taken from.
    pub chain_hopf: Option<f64>,
    /// `(delta, amplitude)` on the unstable side.
    pub unstable_side: Vec<(f64, f64)>,
    /// `(delta, amplitude)` of the far probe on the stable side (0 for equilibria).
    pub stable_side: Vec<(f64, f64)>,
    pub diagnostics: Vec<String>,
}

impl CriticalityReport {
    pub fn criticality(&self) -> Criticality {
        self.criticality.unwrap_or(Criticality::Unclassified)
    }
}

/// Horizon for a run whose leading mode grows or decays at `rate`.
fn protocol_horizon(tau: f64, rate: f64, perturbation: f64) -> f64 {
    let rate = rate.abs().max(1e-5);
    // growth from the perturbation to O(1) and settling onto the cycle
    let t = ((1.0 / perturbation).ln() + 10.0) / rate / 0.8;
    t.max(50.0 * tau).min(2e5)
}

/// Hopf point of `family` nearest to `p`, within `p·(1 ± window)`.
fn nearest_hopf(family: &dyn Family, p: f64, window: f64) -> Result<Option<BifurcationPoint>> {
    const SAMPLES: usize = 50;
    let grid: Vec<f64> = (0..=SAMPLES)
        .map(|k| p * (1.0 - window + 2.0 * window * k as f64 / SAMPLES as f64))
        .collect();
    let mut samples = Vec::with_capacity(grid.len());
    for &q in &grid {
        match leading_pair_at(family, q) {
            Ok(Some(z)) => samples.push((q, z.re)),
            Ok(None) | Err(Error::InvalidParameter { .. } | Error::UnsupportedShape { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let bracket = samples
        .windows(2)
        .filter(|w| (w[0].1 < 0.0) != (w[1].1 < 0.0))
        .map(|w| (w[0].0, w[1].0))
        .min_by(|a, b| (0.5 * (a.0 + a.1) - p).abs().total_cmp(&(0.5 * (b.0 + b.1) - p).abs()));
    match bracket {
        Some((a, b)) => refine_hopf(family, a, b, 1e-8).map(Some),
        None => Ok(None),
    }
}

/// Simulation-based criticality of a Hopf point of `family`.
///
/// Simulations use the chain reduction of each scenario (hypoexponential for
/// shape above one, which is exact for integer shapes). The chain's own Hopf
/// point nearest to `hopf` is located first and all offsets are relative to
/// it, since a non-integer shape moves it. On the unstable side a
/// supercritical point gives small cycles whose amplitude grows like `√δ`,
/// while a subcritical one jumps to a cycle whose amplitude barely depends on
/// `δ`. On the stable side a subcritical point coexists with a large cycle
/// that a far probe reaches.
pub fn classify_hopf(family: &ScenarioFamily, hopf: &BifurcationPoint, opts: &CriticalityOptions) -> CriticalityReport {
    let mut report = CriticalityReport::default();
    let Some(&probe_delta) = opts.deltas.first() else {
        report.diagnostics.push("empty delta list".into());
        return report;
    };
    let chain = ScenarioFamily::new(
        family.base,
        family.param,
        time_domain_reduction(family.scenario(hopf.param).shape),
    );
    let p_c = match nearest_hopf(&chain, hopf.param, opts.search_window) {
        Ok(Some(h)) => h.param,
        Ok(None) => {
            report.diagnostics.push(format!(
                "the {} reduction has no Hopf point within {}% of {}",
                chain.reduction.method(),
                num(100.0 * opts.search_window),
                num(hopf.param)
            ));
            return report;
        }
        Err(e) => {
            report.diagnostics.push(format!("locating the chain Hopf point: {e}"));
            return report;
        }
    };
    report.chain_hopf = Some(p_c);

    let side_of = |delta: f64| -> Result<Option<Complex64>> { leading_pair_at(&chain, p_c * (1.0 + delta)) };
    let unstable_dir = match (side_of(probe_delta), side_of(-probe_delta)) {
        (Ok(Some(up)), Ok(Some(down))) if up.re > 0.0 && down.re < 0.0 => 1.0,
        (Ok(Some(up)), Ok(Some(down))) if up.re < 0.0 && down.re > 0.0 => -1.0,
        other => {
            report.diagnostics.push(format!("no sign change of the leading pair around the Hopf point: {other:?}"));
            return report;
        }
    };

    let simulate = |delta: f64, offset: Option<f64>| -> Result<(f64, AttractorKind)> {
        let p = p_c * (1.0 + delta);
        let system = chain.system(p)?;
        let tau = chain.scenario(p).tau;
        let prevalence = system
            .endemic_prevalence()
            .ok_or_else(|| Error::InsufficientData("no endemic equilibrium".into()))?;
        let ee = find_equilibrium(system.as_ref(), &system.constant_history_state(prevalence)?)?;
        let rate = leading_pair(&eigenvalues(&linearize(system.as_ref(), &ee), true)?).map_or(1.0, |z| z.re);
        let start = match offset {
            None => prevalence * (1.0 + opts.perturbation),
            Some(off) => (prevalence + off).min(0.999),
        };
        let state0 = system.constant_history_state(start)?;
        let probe = ProbeOptions::new(protocol_horizon(tau, rate, opts.perturbation), tau);
        let r = run_and_classify(system.as_ref(), &state0, &probe)?;
        Ok((r.amplitude, r.kind))
    };

    let mut runs: Vec<(f64, Option<f64>)> = opts.deltas.iter().map(|&d| (unstable_dir * d, None)).collect();
    runs.extend(opts.deltas.iter().map(|&d| (-unstable_dir * d, Some(opts.far_offset))));
    let results = par_map(&runs, |&(delta, offset)| simulate(delta, offset));

    let n = opts.deltas.len();
    let mut unstable_ok = true;
    for (k, r) in results[..n].iter().enumerate() {
        match r {
            Ok((amp, kind)) => {
                report.unstable_side.push((opts.deltas[k], *amp));
                if *kind != AttractorKind::Periodic {
                    unstable_ok = false;
                    report.diagnostics.push(format!("delta {} on the unstable side: {kind}", opts.deltas[k]));
                }
            }
            Err(e) => {
                unstable_ok = false;
                report.diagnostics.push(format!("delta {} on the unstable side: {e}", opts.deltas[k]));
            }
        }
    }
    let mut far_cycle = false;
    for (k, r) in results[n..].iter().enumerate() {
        match r {
            Ok((amp, kind)) => {
                let amp = if *kind == AttractorKind::Equilibrium { 0.0 } else { *amp };
                report.stable_side.push((opts.deltas[k], amp));
                far_cycle |= *kind == AttractorKind::Periodic && amp > opts.large_amplitude;
            }
            Err(e) => report.diagnostics.push(format!("delta {} on the stable side: {e}", opts.deltas[k])),
        }
    }

    let ratios: Vec<f64> = report.unstable_side.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let measured = unstable_ok && !ratios.is_empty();
    let sqrt_scaling = measured
        && ratios.iter().all(|r| (opts.ratio.0..=opts.ratio.1).contains(r))
        && report.unstable_side.iter().all(|(_, a)| *a < opts.small_amplitude);
    let jump = measured
        && ratios.iter().all(|r| *r < opts.ratio.0)
        && report.unstable_side.iter().all(|(_, a)| *a > opts.large_amplitude);

    report.criticality = Some(if far_cycle || jump {
        Criticality::Subcritical
    } else if sqrt_scaling {
        Criticality::Supercritical
    } else {
        Criticality::Unclassified
    });
    report
}

/// Classified boundary point used for Generalized Hopf localization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedPoint {
    pub p: f64,
    pub q: f64,
    pub criticality: Criticality,
}

/// Midpoint between the last supercritical and the next subcritical point
/// along a traced boundary, or the reverse transition.
pub fn gh_midpoint(points: &[ClassifiedPoint]) -> Option<BoundaryPoint> {
    let known: Vec<&ClassifiedPoint> = points
        .iter()
        .filter(|c| c.criticality != Criticality::Unclassified)
        .collect();
    known.windows(2).find(|w| w[0].criticality != w[1].criticality).map(|w| BoundaryPoint {
        p: 0.5 * (w[0].p + w[1].p),
        q: 0.5 * (w[0].q + w[1].q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hopf_oracle, malthusian};
    use crate::reductions::build_erlang_system;

    #[test]
    fn newton_from_exact_seed_and_zero() {
        let m = Scenario::new(5.0, 20.0, 2.0, 2.2).model().unwrap();
        let sys = build_erlang_system(&m);
        let seed = sys.constant_history_state(1.0 - 1.0 / 2.2).unwrap();
        assert_eq!(find_equilibrium(&sys, &seed).unwrap(), seed);
        let zero = vec![0.0; sys.dim()];
        assert_eq!(find_equilibrium(&sys, &zero).unwrap(), zero);
        let off: Vec<f64> = seed.iter().map(|v| v * 1.01).collect();
        let x = find_equilibrium(&sys, &off).unwrap();
        assert!((x[0] - (1.0 - 1.0 / 2.2)).abs() < 1e-10);
    }

    #[test]
    fn eigenvalue_retention_keeps_pairs() {
        let m = Scenario::new(5.0, 20.0, 2.0, 2.2).model().unwrap();
        let sys = Reduction::pseudospectral().build(&m).unwrap();
        let x = endemic_equilibrium(sys.as_ref()).unwrap().unwrap();
        let eig = eigenvalues(&linearize(sys.as_ref(), &x), false).unwrap();
        assert!(eig.len() == 6 || eig.len() == 7);
        for z in eig.iter().filter(|z| z.im.abs() > IMAG_TOL) {
            assert!(eig.iter().any(|w| (w - z.conj()).norm() < 1e-8));
        }
        assert!(eig.windows(2).all(|w| w[0].re >= w[1].re));
        let full = eigenvalues(&linearize(sys.as_ref(), &x), true).unwrap();
        assert_eq!(full.len(), 30);
    }

    #[test]
    fn ps_dfe_leading_eigenvalue() {
        let m = Scenario::new(5.0, 20.0, 2.0, 2.2).model().unwrap();
        let sys = Reduction::pseudospectral().build(&m).unwrap();
        let eig = eigenvalues(&linearize(sys.as_ref(), &vec![0.0; 30]), false).unwrap();
        let r = malthusian(&m.kernel, &m.infectivity).unwrap();
        assert!((eig[0].re - r).abs() <= 1e-8 && eig[0].im.abs() < 1e-8);
    }

    #[test]
    fn shape_sweep_stability_flip() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 8.0, 4.2, 2.2), Param::Shape, Reduction::pseudospectral());
        assert!(leading_pair_at(&family, 8.0).unwrap().unwrap().re < 0.0);
        assert!(leading_pair_at(&family, 8.6).unwrap().unwrap().re > 0.0);
    }

    #[test]
    fn continuation_over_decay_keeps_prevalence() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 20.0, 1.0, 3.75), Param::Decay, Reduction::pseudospectral());
        let branch = continue_equilibrium(&family, (1.0, 8.0), &ContinuationOptions::default()).unwrap();
        assert!(branch.stopped.is_none());
        assert!(branch.points.len() >= 50);
        for p in &branch.points {
            assert!((p.i_star - (1.0 - 1.0 / 3.75)).abs() <= 1e-8);
        }
        let hopf: Vec<_> = branch.hopf_points().collect();
        assert_eq!(hopf.len(), 2);
        // the bistable probe value sits just past the second crossing, where the EE is stable again
        assert!(hopf[0].param < 2.0 && hopf[1].param < 3.795 && 3.795 - hopf[1].param < 0.01);
        assert!(leading_pair_at(&family, 3.795).unwrap().unwrap().re < 0.0);
        let oracle = hopf_oracle(&family.base, Param::Decay, (1.0, 8.0)).unwrap();
        for (h, o) in hopf.iter().zip(&oracle) {
            assert!((h.param - o.param).abs() <= 5e-3);
            assert!((h.omega.unwrap() - o.omega).abs() <= 1e-3);
        }
    }

    #[test]
    fn transcritical_recorded_at_one() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 3.0, 1.0, 0.5), Param::R0, Reduction::Erlang);
        let branch = continue_equilibrium(&family, (0.5, 3.0), &ContinuationOptions::default()).unwrap();
        let tc: Vec<_> = branch
            .bifurcations
            .iter()
            .filter(|b| b.kind == BifurcationKind::Transcritical)
            .collect();
        assert_eq!(tc.len(), 1);
        assert_eq!(tc[0].param, 1.0);
        assert!(branch.points[0].param > 1.0 && branch.points[0].param < 1.0 + 1e-4);
    }

    #[test]
    fn boundary_rejects_multiple_switches() {
        let plane = PlaneFamily {
            base: Scenario::new(5.0, 20.0, 2.0, 3.75),
            p: Param::Tau,
            q: Param::Decay,
            reduction: Reduction::pseudospectral(),
        };
        assert!(matches!(
            hopf_boundary(&plane, &[5.0], (1.0, 8.0)),
            Err(Error::AmbiguousBracket { switches: 2, .. })
        ));
        let one = hopf_boundary(&plane, &[5.0], (1.0, 3.0)).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].q - 1.70891).abs() < 1e-3);
        assert!(hopf_boundary(&plane, &[5.0], (5.0, 8.0)).unwrap().is_empty());
    }

    #[test]
    fn collocation_artifact_crossing_is_rejected() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 8.0, 4.2, 2.2), Param::Shape, Reduction::pseudospectral());
        let branch = continue_equilibrium(&family, (2.0, 14.0), &ContinuationOptions::default()).unwrap();
        let hopf: Vec<_> = branch.hopf_points().collect();
        assert_eq!(hopf.len(), 1);
        assert!((hopf[0].param - 8.31).abs() < 0.05);
        assert!(!branch.rejected.is_empty());
        for r in &branch.rejected {
            let residual = family.characteristic_residual(r.param, r.omega.unwrap()).unwrap();
            assert!(residual > 1e-2);
        }
        let kept = family.characteristic_residual(hopf[0].param, hopf[0].omega.unwrap()).unwrap();
        assert!(kept < 1e-6);
        assert!(branch.to_csv().render().contains("# rejected hopf"));
    }

    #[test]
    fn chain_families_skip_the_residual_check() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 8.0, 4.2, 2.2), Param::Shape, Reduction::Hypoexp);
        assert_eq!(family.characteristic_residual(8.0, 1.0), None);
    }

    #[test]
    fn criticality_of_r0_sweeps() {
        let opts = CriticalityOptions::default();
        for (kd, want) in [
            (2.0, [Criticality::Supercritical, Criticality::Supercritical]),
            (5.0, [Criticality::Supercritical, Criticality::Subcritical]),
        ] {
            let family = ScenarioFamily::new(Scenario::new(5.0, 20.0, kd, 2.2), Param::R0, Reduction::pseudospectral());
            let branch = continue_equilibrium(&family, (1.0, 10.0), &ContinuationOptions::default()).unwrap();
            let hopf: Vec<_> = branch.hopf_points().collect();
            assert_eq!(hopf.len(), 2, "kd={kd}");
            for (h, w) in hopf.iter().zip(want) {
                let report = classify_hopf(&family, h, &opts);
                assert_eq!(report.criticality(), w, "kd={kd} {report:?}");
                // integer shape: the chain is exact, so its Hopf point coincides
                assert!((report.chain_hopf.unwrap() - h.param).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn criticality_uses_the_chain_hopf_point() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 8.0, 4.2, 2.2), Param::Shape, Reduction::pseudospectral());
        let hopf = refine_hopf(&family, 8.0, 8.6, 1e-8).unwrap();
        let report = classify_hopf(&family, &hopf, &CriticalityOptions::default());
        assert_eq!(report.criticality(), Criticality::Supercritical, "{report:?}");
        let chain = report.chain_hopf.unwrap();
        assert!(chain < hopf.param && hopf.param - chain < 0.3);
    }

    #[test]
    fn criticality_without_deltas_is_unclassified() {
        let family = ScenarioFamily::new(Scenario::new(5.0, 20.0, 2.0, 2.2), Param::R0, Reduction::pseudospectral());
        let hopf = BifurcationPoint { kind: BifurcationKind::Hopf, param: 2.17, omega: Some(0.85), criticality: Criticality::Unclassified };
        let opts = CriticalityOptions { deltas: vec![], ..Default::default() };
        let report = classify_hopf(&family, &hopf, &opts);
        assert_eq!(report.criticality(), Criticality::Unclassified);
        assert!(!report.diagnostics.is_empty());
    }

    #[test]
    fn gh_midpoint_between_classes() {
        let pts = [
            ClassifiedPoint { p: 1.0, q: 2.0, criticality: Criticality::Supercritical },
            ClassifiedPoint { p: 2.0, q: 2.5, criticality: Criticality::Unclassified },
            ClassifiedPoint { p: 3.0, q: 3.0, criticality: Criticality::Subcritical },
        ];
        assert_eq!(gh_midpoint(&pts), Some(BoundaryPoint { p: 2.0, q: 2.5 }));
        assert_eq!(gh_midpoint(&pts[..1]), None);
    }
}
