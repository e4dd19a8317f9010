//! Exponentially weighted collocation of the renewal equation on scaled
//! Laguerre–Radau nodes.
//!
//! The history state `v(θ) = ∫_0^θ i(t+s) ds`, `θ ≤ 0`, is represented by its
//! weighted samples `V_n = e^{ρθ_n} v(θ_n)` at `d` negative nodes, with the
//! boundary node `θ_0 = 0` carrying `v(0) = 0`. Nodes are `θ_n = -x_n/(2ρ)`
//! where `x_n` are the zeros of the generalized Laguerre polynomial
//! `L_d^{(1)}`, i.e. the interior extrema of `L_{d+1}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, require_positive, Result};
use crate::kernels::{GammaKernel, Sojourn};
use crate::model::ModelSpec;
use crate::output::{num, CsvTable};
use crate::reductions::{check_prevalence, Method, Observables, OdeSystem};

pub const DEFAULT_DEGREE: usize = 30;
pub const MIN_DEGREE: usize = 4;

/// Default weight rate `ρ = min(2√j, 3j/4)/τ`.
///
/// Resolving oscillations of period `~τ` over the node span needs `ρ ≳ 1/τ`;
/// the Radau functionals lose accuracy once `2ρ` exceeds the kernel rate
/// `j/τ` by much. `2√j/τ` sits between the two scales and keeps the leading
/// endemic eigenvalue converged from `d = 20` on; the cap at `3/4` of the
/// kernel rate binds for `j < 64/9`.
pub fn default_rho(kernel: &GammaKernel) -> f64 {
    let j = kernel.shape();
    (2.0 * j.sqrt()).min(0.75 * j) / kernel.mean()
}

/// Nodes, quadrature and weighted differentiation for one `(d, ρ)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationScheme {
    degree: usize,
    rho: f64,
    /// `θ_1 > … > θ_d`, all negative.
    nodes: Vec<f64>,
    /// Weights for `∫_0^∞ f(a) da` at `a = 0, -θ_1, …, -θ_d`.
    weights: Vec<f64>,
    /// Gauss–Radau weights for `∫_0^∞ p(a) e^{-2ρa} da` at the same abscissae.
    radau: Vec<f64>,
    /// `A_d`: maps `V` to the weighted derivative samples `e^{ρθ_m} φ'(θ_m)`.
    a_matrix: DMatrix<f64>,
    /// `(d+1)×d`: maps `V` to `φ'(θ_n)`, `n = 0..d`.
    derivative: DMatrix<f64>,
}

/// Builds the scheme. Requires `d ≥ 4` and `ρ > 0`.
pub fn build_scheme(degree: usize, rho: f64) -> Result<CollocationScheme> {
    if degree < MIN_DEGREE {
        return Err(invalid("d", format!("must be at least {MIN_DEGREE}, got {degree}")));
    }
    require_positive("rho", rho)?;
    let d = degree;
    let x = laguerre_zeros(d);

    let ln_radau: Vec<f64> = x
        .iter()
        .map(|&xk| {
            let (value, _) = laguerre1(d + 1, xk);
            -((d + 1) as f64).ln() - 2.0 * value.abs().ln()
        })
        .collect();

    let scale = 0.5 / rho;
    let mut weights = Vec::with_capacity(d + 1);
    let mut radau = Vec::with_capacity(d + 1);
    radau.push(scale / (d + 1) as f64);
    weights.push(scale / (d + 1) as f64);
    for (lw, xk) in ln_radau.iter().zip(&x) {
        radau.push(scale * lw.exp());
        weights.push(scale * (lw + xk).exp());
    }

    let mut theta = Vec::with_capacity(d + 1);
    theta.push(0.0);
    theta.extend(x.iter().map(|xk| -xk * scale));

    // barycentric weights as (ln|λ|, sign)
    let bary: Vec<(f64, f64)> = (0..=d)
        .map(|i| {
            let mut ln = 0.0;
            let mut sign = 1.0;
            for k in (0..=d).filter(|&k| k != i) {
                let diff = theta[i] - theta[k];
                ln -= diff.abs().ln();
                if diff < 0.0 {
                    sign = -sign;
                }
            }
            (ln, sign)
        })
        .collect();
    let diagonal: Vec<f64> = (0..=d)
        .map(|i| (0..=d).filter(|&k| k != i).map(|k| 1.0 / (theta[i] - theta[k])).sum())
        .collect();

    // D_in · exp(shift) computed without forming D_in, whose entries overflow for large d
    let entry = |i: usize, n: usize, shift: f64| -> f64 {
        if i == n {
            return diagonal[i] * shift.exp();
        }
        let diff = theta[i] - theta[n];
        let sign = bary[n].1 * bary[i].1 * diff.signum();
        sign * (bary[n].0 - bary[i].0 - diff.abs().ln() + shift).exp()
    };

    let a_matrix = DMatrix::from_fn(d, d, |m, n| entry(m + 1, n + 1, rho * (theta[m + 1] - theta[n + 1])));
    let derivative = DMatrix::from_fn(d + 1, d, |i, n| entry(i, n + 1, -rho * theta[n + 1]));

    Ok(CollocationScheme {
        degree,
        rho,
        nodes: theta[1..].to_vec(),
        weights,
        radau,
        a_matrix,
        derivative,
    })
}

/// Zeros of `L_d^{(1)}` in ascending order: Golub–Welsch, then one Newton polish.
fn laguerre_zeros(d: usize) -> Vec<f64> {
    let jacobi = DMatrix::from_fn(d, d, |i, k| {
        if i == k {
            2.0 * i as f64 + 2.0
        } else if i.abs_diff(k) == 1 {
            let m = i.max(k) as f64;
            (m * (m + 1.0)).sqrt()
        } else {
            0.0
        }
    });
    let mut zeros: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    zeros.sort_by(f64::total_cmp);
    for z in &mut zeros {
        let (value, slope) = laguerre1(d, *z);
        if slope != 0.0 {
            *z -= value / slope;
        }
    }
    zeros
}

/// `(L_n^{(1)}(x), d/dx L_n^{(1)}(x))` by the three-term recurrence.
fn laguerre1(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = 2.0 - x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 2.0 - x) * cur - (k + 1.0) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    // x L_n' = n L_n - (n + 1) L_{n-1}
    let n = n as f64;
    (cur, (n * cur - (n + 1.0) * prev) / x)
}

impl CollocationScheme {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Interior nodes `θ_1 > … > θ_d`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature abscissae `0, -θ_1, …, -θ_d`.
    pub fn abscissae(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.nodes.iter().map(|t| -t)).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radau_weights(&self) -> &[f64] {
        &self.radau
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn derivative_operator(&self) -> &DMatrix<f64> {
        &self.derivative
    }

    /// `e^{ρθ_n}` at the interior nodes.
    pub fn node_weights(&self) -> Vec<f64> {
        self.nodes.iter().map(|t| (self.rho * t).exp()).collect()
    }

    /// `∫_0^∞ f(a) da`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.abscissae().iter().zip(&self.weights).map(|(a, w)| w * f(*a)).sum()
    }

    /// `∫_0^∞ p(a) e^{-2ρa} da`.
    pub fn integrate_weighted(&self, p: impl Fn(f64) -> f64) -> f64 {
        self.abscissae().iter().zip(&self.radau).map(|(a, w)| w * p(*a)).sum()
    }

    /// One row per node (`k = 0` is the boundary node) with the rows of `A_d`.
    pub fn to_csv(&self) -> CsvTable {
        let d = self.degree;
        let mut header = vec!["k".to_string(), "theta".into(), "weight".into(), "radau_weight".into()];
        header.extend((1..=d).map(|n| format!("A_{n}")));
        let mut table = CsvTable::new(header);
        let mut first = vec!["0".to_string(), num(0.0), num(self.weights[0]), num(self.radau[0])];
        first.extend(std::iter::repeat_n(String::new(), d));
        table.push(first);
        for m in 0..d {
            let mut row = vec![
                (m + 1).to_string(),
                num(self.nodes[m]),
                num(self.weights[m + 1]),
                num(self.radau[m + 1]),
            ];
            row.extend((0..d).map(|n| num(self.a_matrix[(m, n)])));
            table.push(row);
        }
        table.comment(format!("d={d}"));
        table.comment(format!("rho={}", num(self.rho)));
        table
    }
}

/// The collocated system `V' = A_d V - w·N(V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsSystem {
    model: ModelSpec,
    scheme: CollocationScheme,
    w: DVector<f64>,
    /// `V ↦ Î(V)` as a row vector.
    g_infected: DVector<f64>,
    /// `V ↦ Λ̂(V)` as a row vector.
    g_force: DVector<f64>,
    /// Raw rule values of `∫ F` and `∫ βF` before normalization.
    quad_survival: f64,
    quad_r0: f64,
}

pub fn build_ps_system(model: &ModelSpec, scheme: CollocationScheme) -> Result<PsSystem> {
    let abscissae = scheme.abscissae();
    let mut survival_weights = Vec::with_capacity(abscissae.len());
    for (a, w) in abscissae.iter().zip(&scheme.weights) {
        survival_weights.push(w * model.kernel.survival(*a)?);
    }
    let force_weights: Vec<f64> = abscissae
        .iter()
        .zip(&survival_weights)
        .map(|(a, sw)| sw * model.infectivity.at(*a))
        .collect();
    let quad_survival: f64 = survival_weights.iter().sum();
    let quad_r0: f64 = force_weights.iter().sum();
    // Rescale both discrete kernels to their exact masses τ and R0. The rule
    // converges only algebraically for non-integer shapes (F·e^{ba} carries an
    // a^j term), and the masses alone fix the equilibrium and the threshold.
    let survival_scale = model.tau() / quad_survival;
    let force_scale = if quad_r0 > 0.0 { model.reproduction_number() / quad_r0 } else { 1.0 };
    let project = |row: &[f64], scale: f64| scheme.derivative.tr_mul(&DVector::from_column_slice(row)) * scale;
    let g_infected = project(&survival_weights, survival_scale);
    let g_force = project(&force_weights, force_scale);
    Ok(PsSystem {
        model: *model,
        w: DVector::from_vec(scheme.node_weights()),
        quad_survival,
        quad_r0,
        g_infected,
        g_force,
        scheme,
    })
}

impl PsSystem {
    pub fn scheme(&self) -> &CollocationScheme {
        &self.scheme
    }

    /// Raw rule value of `∫ F`, before the kernel is rescaled to `τ`.
    pub fn quadrature_mean(&self) -> f64 {
        self.quad_survival
    }

    /// Raw rule value of `∫ βF`, before the kernel is rescaled to `R0`.
    pub fn quadrature_r0(&self) -> f64 {
        self.quad_r0
    }

    fn functionals(&self, x: &[f64]) -> (f64, f64) {
        let v = DVector::from_column_slice(x);
        (self.g_infected.dot(&v), self.g_force.dot(&v))
    }
}

/// `V_n = c·θ_n·e^{ρθ_n}` with `c` chosen so that the observable `I` equals `i0`.
pub fn ps_constant_history_state(system: &PsSystem, i0: f64) -> Result<Vec<f64>> {
    check_prevalence(i0)?;
    let c = i0 / system.model.tau();
    Ok(system
        .scheme
        .nodes
        .iter()
        .zip(system.w.iter())
        .map(|(t, w)| c * t * w)
        .collect())
}

impl OdeSystem for PsSystem {
    fn dim(&self) -> usize {
        self.scheme.degree
    }

    fn method(&self) -> Method {
        Method::Pseudospectral
    }

    fn model(&self) -> &ModelSpec {
        &self.model
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let (infected, force) = self.functionals(x);
        let incidence = (1.0 - infected) * force;
        let v = DVector::from_column_slice(x);
        let av = &self.scheme.a_matrix * v;
        for m in 0..x.len() {
            dx[m] = av[m] - self.w[m] * incidence;
        }
    }

    fn observables(&self, x: &[f64]) -> Observables {
        let (infected, force) = self.functionals(x);
        Observables {
            susceptible: 1.0 - infected,
            infected,
            force,
            incidence: (1.0 - infected) * force,
        }
    }

    fn reproduction_number(&self) -> f64 {
        self.model.reproduction_number()
    }

    fn constant_history_state(&self, i0: f64) -> Result<Vec<f64>> {
        ps_constant_history_state(self, i0)
    }

    /// Exact Jacobian `A_d - w ⊗ ((1 - Î) g_Λ - Λ̂ g_I)`. Difference quotients are
    /// unusable here: state entries span many orders of magnitude.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (infected, force) = self.functionals(x);
        let grad = &self.g_force * (1.0 - infected) - &self.g_infected * force;
        &self.scheme.a_matrix - &self.w * grad.transpose()
    }

    fn stage_columns(&self, x: &[f64]) -> Vec<(String, f64)> {
        x.iter().enumerate().map(|(n, v)| (format!("V_{}", n + 1), *v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{malthusian, Scenario};
    use crate::reductions::fd_jacobian;
    use approx::assert_relative_eq;

    fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_scheme(3, 1.0).is_err());
        assert!(build_scheme(10, 0.0).is_err());
        assert!(build_scheme(10, -1.0).is_err());
    }

    #[test]
    fn nodes_are_negative_and_descending() {
        let s = build_scheme(30, 8.0).unwrap();
        let t = s.nodes();
        assert_eq!(t.len(), 30);
        assert!(t[0] < 0.0);
        assert!(t.windows(2).all(|p| p[1] < p[0]));
        for &theta in t {
            let (value, _) = laguerre1(30, -2.0 * 8.0 * theta);
            let (_, slope) = laguerre1(30, -16.0 * theta);
            assert!(value.abs() <= 1e-12 * slope.abs().max(1.0));
        }
    }

    #[test]
    fn radau_rule_is_exact_to_degree_2d() {
        for (d, rho) in [(4, 0.7), (10, 2.0), (30, 8.0), (60, 1.0)] {
            let s = build_scheme(d, rho).unwrap();
            let mut moment = 1.0 / (2.0 * rho);
            for k in 0..=2 * d {
                let got = s.integrate_weighted(|a| a.powi(k as i32));
                assert_relative_eq!(got, moment, max_relative = 1e-11);
                moment *= (k + 1) as f64 / (2.0 * rho);
            }
        }
    }

    #[test]
    fn quadrature_of_the_weight_itself() {
        let s = build_scheme(30, 8.0).unwrap();
        assert!((s.integrate(|a| (-16.0 * a).exp()) - 1.0 / 16.0).abs() <= 1e-12);
        assert_relative_eq!(s.radau_weights().iter().sum::<f64>(), 1.0 / 16.0, max_relative = 1e-13);
    }

    #[test]
    fn weighted_differentiation_is_exact_on_polynomials() {
        for (d, rho) in [(30, 8.0), (30, 2.0), (20, 0.5), (60, 1.0)] {
            let s = build_scheme(d, rho).unwrap();
            let w = s.node_weights();
            for k in 1..=10 {
                let v: Vec<f64> = s.nodes().iter().zip(&w).map(|(t, w)| w * t.powi(k)).collect();
                let want: Vec<f64> =
                    s.nodes().iter().zip(&w).map(|(t, w)| w * k as f64 * t.powi(k - 1)).collect();
                let got = s.a_matrix() * DVector::from_vec(v);
                assert!(max_rel_error(got.as_slice(), &want) <= 1e-10, "d={d} k={k}");
            }
        }
    }

    #[test]
    fn derivative_operator_recovers_boundary_slope() {
        let s = build_scheme(30, 2.0).unwrap();
        let w = s.node_weights();
        // φ(θ) = θ + θ^2 has φ'(0) = 1
        let v: Vec<f64> = s.nodes().iter().zip(&w).map(|(t, w)| w * (t + t * t)).collect();
        let u = s.derivative_operator() * DVector::from_vec(v);
        assert!((u[0] - 1.0).abs() < 1e-10);
        // unweighted samples lose digits in proportion to e^{-ρθ}
        for (n, t) in s.nodes().iter().enumerate().filter(|(_, t)| (-2.0 * *t).exp() < 1e4) {
            assert!((u[n + 1] - (1.0 + 2.0 * t)).abs() <= 1e-10 * (1.0 + 2.0 * t.abs()), "node {n}");
        }
    }

    #[test]
    fn survival_quadrature_at_default_rho() {
        let m = Scenario::new(5.0, 20.0, 2.0, 2.2).model().unwrap();
        let s = build_scheme(30, default_rho(&m.kernel)).unwrap();
        let q = s.integrate(|a| m.kernel.survival(a).unwrap());
        assert!((q - 5.0).abs() <= 1e-8 * 5.0);
    }

    #[test]
    fn equilibrium_and_dfe() {
        let m = Scenario::new(5.0, 20.0, 2.0, 2.2).model().unwrap();
        let sys = build_ps_system(&m, build_scheme(30, default_rho(&m.kernel)).unwrap()).unwrap();
        assert!(sys.field(&vec![0.0; 30]).iter().all(|&v| v == 0.0));
        let ee = m.equilibria().1.unwrap();
        let v: Vec<f64> = sys.scheme().nodes().iter().zip(sys.scheme().node_weights())
            .map(|(t, w)| ee.incidence * t * w)
            .collect();
        let residual: f64 = sys.field(&v).iter().map(|f| f * f).sum::<f64>().sqrt();
        assert!(residual <= 1e-8, "{residual}");
        assert!((sys.observables(&v).infected - ee.infected).abs() < 1e-8);

        let x = sys.constant_history_state(sys.endemic_prevalence().unwrap()).unwrap();
        let residual: f64 = sys.field(&x).iter().map(|f| f * f).sum::<f64>().sqrt();
        assert!(residual <= 1e-12);

        let x = sys.constant_history_state(0.73).unwrap();
        assert!((sys.observables(&x).infected - 0.73).abs() <= 1e-12);
        assert!(sys.constant_history_state(1.2).is_err());
    }

    #[test]
    fn analytic_jacobian_matches_differences_on_uniform_scale() {
        let m = Scenario::new(5.0, 4.0, 1.0, 2.0).model().unwrap();
        let sys = build_ps_system(&m, build_scheme(6, 0.4).unwrap()).unwrap();
        let x = sys.constant_history_state(0.3).unwrap();
        let exact = sys.jacobian(&x);
        let approx = fd_jacobian(&sys, &x);
        assert!((exact - approx).amax() < 1e-6);
    }

    #[test]
    fn dfe_spectrum_contains_malthusian() {
        let m = Scenario::new(5.0, 20.0, 2.0, 2.2).model().unwrap();
        let sys = build_ps_system(&m, build_scheme(30, default_rho(&m.kernel)).unwrap()).unwrap();
        let eig = sys.jacobian(&vec![0.0; 30]).complex_eigenvalues();
        let lead = eig.iter().max_by(|a, b| a.re.total_cmp(&b.re)).unwrap();
        let r = malthusian(&m.kernel, &m.infectivity).unwrap();
        assert!((lead.re - r).abs() <= 1e-8 && lead.im.abs() <= 1e-8, "{lead} vs {r}");
    }

    #[test]
    fn csv_dump_shape() {
        let s = build_scheme(5, 1.0).unwrap();
        let table = s.to_csv();
        assert_eq!(table.header().len(), 4 + 5);
        assert_eq!(table.rows().len(), 6);
    }
}
