//! Deterministic mean-field limit `I_t = (2p−1) q ∫_0^t φ(t−s) h(I_s) ds`.
//!
//! Two schemes on a uniform grid:
//!
//! - [`Scheme::VolterraTrapezoid`]: trapezoid quadrature of the convolution.
//!   The diagonal term makes `I(t_m)` implicit; it is resolved by fixed-point
//!   iteration, which contracts when `|(2p−1)q| · h_Lip · ‖φ‖ · Δt < 1`.
//! - [`Scheme::OdeRk4`]: for `φ(t) = e^{−λt}` the equation reduces to
//!   `I′ = −λ I + (2p−1) q h(I)`, integrated with classical Runge–Kutta.

use serde::{Deserialize, Serialize};

use crate::error::check_probability;
use crate::grid::TimeGrid;
use crate::kernels::{Kernel, TransferFunction};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    VolterraTrapezoid,
    OdeRk4,
}

impl Scheme {
    fn name(self) -> &'static str {
        match self {
            Scheme::VolterraTrapezoid => "volterra_trapezoid",
            Scheme::OdeRk4 => "ode_rk4",
        }
    }
}

/// Starting value of the fixed-point iteration at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialGuess {
    /// Value at the previous grid point.
    Previous,
    /// Explicit part of the quadrature (diagonal term dropped).
    Explicit,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Relaxation weight of each update, in `(0, 1]`.
    pub damping: f64,
    pub initial_guess: InitialGuess,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 50,
            tolerance: 1e-13,
            damping: 1.0,
            initial_guess: InitialGuess::Previous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetadata {
    pub p: f64,
    pub q: f64,
    pub kernel: String,
    pub transfer: String,
    pub scheme: Scheme,
    pub step: f64,
}

/// Function of time on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub metadata: PathMetadata,
}

impl IntensityPath {
    pub fn at(&self, m: usize) -> f64 {
        self.values[m]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("grid has at least one point")
    }

    /// `∫_0^T h(I_s) ds` by trapezoid on the grid.
    pub fn integrated_rate(&self, h: &TransferFunction) -> f64 {
        let rates: Vec<f64> = self.values.iter().map(|&x| h.eval(x)).collect();
        crate::grid::trapezoid(self.grid.step(), &rates)
    }

    /// `h(I)` on the grid.
    pub fn rates(&self, h: &TransferFunction) -> Vec<f64> {
        self.values.iter().map(|&x| h.eval(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldProblem<'a> {
    pub kernel: &'a Kernel,
    pub transfer: &'a TransferFunction,
    pub p: f64,
    pub q: f64,
    pub grid: TimeGrid,
}

impl MeanFieldProblem<'_> {
    fn coupling(&self) -> f64 {
        (2.0 * self.p - 1.0) * self.q
    }

    fn validate(&self) -> Result<()> {
        check_probability("p", self.p)?;
        check_probability("q", self.q)?;
        self.kernel.validate()?;
        self.transfer.validate()?;
        if self.grid.horizon() > self.kernel.max_time() {
            return Err(Error::Domain {
                t: self.grid.horizon(),
                max: self.kernel.max_time(),
            });
        }
        Ok(())
    }

    fn metadata(&self, scheme: Scheme) -> PathMetadata {
        PathMetadata {
            p: self.p,
            q: self.q,
            kernel: self.kernel.label(),
            transfer: self.transfer.label(),
            scheme,
            step: self.grid.step(),
        }
    }
}

pub fn solve_mean_field(
    kernel: &Kernel,
    transfer: &TransferFunction,
    p: f64,
    q: f64,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<IntensityPath> {
    let problem = MeanFieldProblem {
        kernel,
        transfer,
        p,
        q,
        grid,
    };
    match scheme {
        Scheme::VolterraTrapezoid => solve_trapezoid(&problem, SolverOptions::default()),
        Scheme::OdeRk4 => solve_rk4(&problem),
    }
}

pub fn solve_trapezoid(problem: &MeanFieldProblem<'_>, options: SolverOptions) -> Result<IntensityPath> {
    problem.validate()?;
    let grid = problem.grid;
    let step = grid.step();
    let c = problem.coupling();
    let h = problem.transfer;
    let phi = problem.kernel.sample_grid(step, grid.len())?;

    let factor = c.abs() * h.lipschitz() * problem.kernel.sup_norm() * step;
    if factor >= 1.0 {
        return Err(Error::StepSize { step, factor });
    }
    let damping = options.damping;
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::param("damping", "must lie in (0, 1]"));
    }

    let mut values = vec![0.0; grid.len()];
    let mut rates = vec![0.0; grid.len()];
    rates[0] = h.eval(0.0);
    if c != 0.0 {
        for m in 1..grid.len() {
            // Everything except the diagonal term 0.5·Δt·φ(0)·h(I_m).
            let interior: f64 = (1..m).map(|k| phi[m - k] * rates[k]).sum();
            let explicit = c * step * (0.5 * phi[m] * rates[0] + interior);
            let diagonal = 0.5 * c * step * phi[0];
            let mut x = match options.initial_guess {
                InitialGuess::Previous => values[m - 1],
                InitialGuess::Explicit => explicit,
                InitialGuess::Constant(v) => v,
            };
            for _ in 0..options.max_iterations {
                let next = explicit + diagonal * h.eval(x);
                let updated = (1.0 - damping) * x + damping * next;
                let delta = (updated - x).abs();
                x = updated;
                if delta <= options.tolerance * (1.0 + x.abs()) {
                    break;
                }
            }
            values[m] = x;
            rates[m] = h.eval(x);
        }
    }
    Ok(IntensityPath {
        grid,
        values,
        metadata: problem.metadata(Scheme::VolterraTrapezoid),
    })
}

pub fn solve_rk4(problem: &MeanFieldProblem<'_>) -> Result<IntensityPath> {
    problem.validate()?;
    let lambda = problem
        .kernel
        .decay_rate()
        .ok_or(Error::SchemeMismatch { scheme: Scheme::OdeRk4.name() })?;
    let c = problem.coupling();
    let h = problem.transfer;
    let grid = problem.grid;
    let dt = grid.step();
    let rhs = |x: f64| -lambda * x + c * h.eval(x);
    let mut values = vec![0.0; grid.len()];
    if c != 0.0 {
        for m in 1..grid.len() {
            let x = values[m - 1];
            let k1 = rhs(x);
            let k2 = rhs(x + 0.5 * dt * k1);
            let k3 = rhs(x + 0.5 * dt * k2);
            let k4 = rhs(x + dt * k3);
            values[m] = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    Ok(IntensityPath {
        grid,
        values,
        metadata: problem.metadata(Scheme::OdeRk4),
    })
}

/// Equilibria of `I′ = −λ I + (2p−1) q h(I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoints {
    pub roots: Vec<f64>,
    /// `|(2p−1)q| · h_Lip < λ`, which makes the root unique.
    pub unique_guaranteed: bool,
}

impl FixedPoints {
    pub fn unique(&self) -> Option<f64> {
        (self.roots.len() == 1).then(|| self.roots[0])
    }
}

pub fn fixed_point(kernel: &Kernel, transfer: &TransferFunction, p: f64, q: f64) -> Result<FixedPoints> {
    check_probability("p", p)?;
    check_probability("q", q)?;
    let lambda = kernel
        .decay_rate()
        .ok_or(Error::SchemeMismatch { scheme: "fixed_point" })?;
    let c = (2.0 * p - 1.0) * q;
    if c == 0.0 {
        return Ok(FixedPoints {
            roots: vec![0.0],
            unique_guaranteed: true,
        });
    }
    let g = |x: f64| c * transfer.eval(x) - lambda * x;
    // Every root satisfies x = c·h(x)/λ with 0 <= h <= ‖h‖.
    let reach = c * transfer.sup_norm() / lambda;
    let (lo, hi) = if reach < 0.0 { (reach, 0.0) } else { (0.0, reach) };
    let unique_guaranteed = c.abs() * transfer.lipschitz() < lambda;
    let roots = if unique_guaranteed {
        vec![refine_root(&g, transfer, c, lambda, lo, hi)]
    } else {
        scan_roots(&g, transfer, c, lambda, lo, hi)
    };
    Ok(FixedPoints {
        roots,
        unique_guaranteed,
    })
}

fn scan_roots(
    g: &impl Fn(f64) -> f64,
    h: &TransferFunction,
    c: f64,
    lambda: f64,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    const CELLS: usize = 4096;
    let width = (hi - lo) / CELLS as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut a = lo;
    let mut ga = g(a);
    for k in 1..=CELLS {
        let b = if k == CELLS { hi } else { lo + k as f64 * width };
        let gb = g(b);
        if ga == 0.0 {
            roots.push(a);
        } else if ga * gb < 0.0 {
            roots.push(refine_root(g, h, c, lambda, a, b));
        }
        a = b;
        ga = gb;
    }
    if ga == 0.0 {
        roots.push(a);
    }
    roots.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    roots
}

/// Safeguarded Newton–bisection on a bracket with a sign change (or zero width).
fn refine_root(
    g: &impl Fn(f64) -> f64,
    h: &TransferFunction,
    c: f64,
    lambda: f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut g_lo = g(lo);
    if g_lo == 0.0 {
        return lo;
    }
    if g(hi) == 0.0 || lo == hi {
        return hi;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if (gx < 0.0) == (g_lo < 0.0) {
            lo = x;
            g_lo = gx;
        } else {
            hi = x;
        }
        let newton = h
            .derivative(x)
            .map(|d| c * d - lambda)
            .filter(|d| *d != 0.0)
            .map(|d| x - gx / d);
        x = match newton {
            Some(nx) if nx > lo && nx < hi => nx,
            _ => 0.5 * (lo + hi),
        };
        if hi - lo <= 1e-12 * (1.0 + x.abs()) || g(x).abs() < 1e-15 {
            break;
        }
    }
    x
}

/// `max_m |trapezoid − rk4|` for an exponential kernel.
pub fn cross_validate_schemes(
    kernel: &Kernel,
    transfer: &TransferFunction,
    p: f64,
    q: f64,
    grid: TimeGrid,
) -> Result<f64> {
    let a = solve_mean_field(kernel, transfer, p, q, grid, Scheme::VolterraTrapezoid)?;
    let b = solve_mean_field(kernel, transfer, p, q, grid, Scheme::OdeRk4)?;
    Ok(max_abs_difference(&a.values, &b.values))
}

pub fn max_abs_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max-grid error of the trapezoid scheme against a closed form.
pub fn error_against(path: &IntensityPath, exact: impl Fn(f64) -> f64) -> f64 {
    path.grid
        .times()
        .iter()
        .zip(&path.values)
        .map(|(&t, v)| (v - exact(t)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> Kernel {
        Kernel::exponential(1.0).unwrap()
    }

    /// Bisection oracle for `λx = c·h(x)`.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) * f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) < 0.0) == (f(lo) < 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn balanced_case_is_identically_zero() {
        let grid = TimeGrid::with_intervals(5.0, 256).unwrap();
        for scheme in [Scheme::VolterraTrapezoid, Scheme::OdeRk4] {
            let path = solve_mean_field(&exp1(), &TransferFunction::arctan(), 0.5, 0.7, grid, scheme).unwrap();
            assert!(path.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_case_matches_closed_form() {
        let h = TransferFunction::constant(1.0).unwrap();
        let grid = TimeGrid::new(1.0, 2f64.powi(-12)).unwrap();
        let path = solve_mean_field(&exp1(), &h, 1.0, 1.0, grid, Scheme::VolterraTrapezoid).unwrap();
        assert!((path.last() - 0.632_120_558_828_557_7).abs() < 1e-6);
        assert_eq!(path.at(0), 0.0);
    }

    #[test]
    fn long_run_reaches_bisection_root() {
        let h = TransferFunction::arctan();
        let grid = TimeGrid::new(50.0, 50.0 / 2048.0).unwrap();
        let path = solve_mean_field(&exp1(), &h, 1.0, 0.5, grid, Scheme::VolterraTrapezoid).unwrap();
        let root = bisect(|x| 0.5 * h.eval(x) - x, 0.0, 1.0);
        assert!((path.last() - root).abs() < 1e-4, "{} vs {root}", path.last());
    }

    #[test]
    fn fixed_point_cases() {
        let h = TransferFunction::arctan();
        assert_eq!(fixed_point(&exp1(), &h, 0.5, 0.3).unwrap().roots, vec![0.0]);
        let c = TransferFunction::constant(1.5).unwrap();
        let k = Kernel::exponential(2.0).unwrap();
        let fp = fixed_point(&k, &c, 0.9, 0.5, ).unwrap();
        assert!((fp.unique().unwrap() - 0.8 * 0.5 * 1.5 / 2.0).abs() < 1e-12);
        let fp = fixed_point(&exp1(), &h, 0.8, 0.5).unwrap();
        assert!(fp.unique_guaranteed);
        let root = bisect(|x| 0.3 * h.eval(x) - x, 0.0, 1.0);
        assert!((fp.unique().unwrap() - root).abs() < 1e-12);
        let inhibitory = fixed_point(&exp1(), &h, 0.1, 0.9).unwrap();
        assert!(inhibitory.unique().unwrap() < 0.0);
    }

    #[test]
    fn fixed_point_scan_finds_all_roots() {
        // Steep sigmoid with strong coupling has three equilibria.
        let xs: Vec<f64> = (0..=400).map(|k| -2.0 + k as f64 * 0.01).collect();
        let sig = |x: f64| 2.0 / (1.0 + (-8.0 * (x - 1.0)).exp());
        let h = TransferFunction::Tabulated(crate::kernels::TabulatedTransfer {
            x0: -2.0,
            step: 0.01,
            values: xs.iter().map(|&x| sig(x)).collect(),
            derivatives: None,
        });
        let fp = fixed_point(&exp1(), &h, 1.0, 1.0).unwrap();
        assert!(!fp.unique_guaranteed);
        assert_eq!(fp.roots.len(), 3, "{:?}", fp.roots);
    }

    #[test]
    fn rk4_requires_exponential_kernel() {
        let k = Kernel::tabulate(|t| (-t).exp(), |t| -(-t).exp(), 4.0, 0.01).unwrap();
        let grid = TimeGrid::with_intervals(2.0, 64).unwrap();
        let err = solve_mean_field(&k, &TransferFunction::arctan(), 0.8, 0.5, grid, Scheme::OdeRk4);
        assert!(matches!(err, Err(Error::SchemeMismatch { .. })));
        assert!(fixed_point(&k, &TransferFunction::arctan(), 0.8, 0.5).is_err());
        // The trapezoid scheme handles the same kernel.
        let path = solve_mean_field(&k, &TransferFunction::arctan(), 0.8, 0.5, grid, Scheme::VolterraTrapezoid).unwrap();
        let reference = solve_mean_field(&exp1(), &TransferFunction::arctan(), 0.8, 0.5, grid, Scheme::OdeRk4).unwrap();
        assert!(max_abs_difference(&path.values, &reference.values) < 1e-4);
    }

    #[test]
    fn coarse_step_is_rejected() {
        let h = TransferFunction::Tabulated(crate::kernels::TabulatedTransfer {
            x0: 0.0,
            step: 1.0,
            values: vec![0.0, 100.0],
            derivatives: None,
        });
        let grid = TimeGrid::with_intervals(1.0, 4).unwrap();
        assert!(matches!(
            solve_mean_field(&exp1(), &h, 1.0, 1.0, grid, Scheme::VolterraTrapezoid),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn schemes_agree_and_converge() {
        let h1 = TransferFunction::constant(1.0).unwrap();
        let grid = TimeGrid::new(1.0, 2f64.powi(-10)).unwrap();
        assert!(cross_validate_schemes(&exp1(), &h1, 1.0, 1.0, grid).unwrap() < 1e-5);
        assert_eq!(cross_validate_schemes(&exp1(), &TransferFunction::arctan(), 0.5, 0.5, grid).unwrap(), 0.0);

        let exact = |t: f64| 1.0 - (-t).exp();
        let err = |k: i32| {
            let g = TimeGrid::new(1.0, 2f64.powi(-k)).unwrap();
            error_against(&solve_mean_field(&exp1(), &h1, 1.0, 1.0, g, Scheme::VolterraTrapezoid).unwrap(), exact)
        };
        let ratio = err(6) / err(7);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn excitatory_solution_is_monotone() {
        let grid = TimeGrid::with_intervals(10.0, 2048).unwrap();
        let path = solve_mean_field(&exp1(), &TransferFunction::arctan(), 0.8, 0.5, grid, Scheme::VolterraTrapezoid).unwrap();
        assert!(path.values.iter().all(|&v| v >= 0.0));
        assert!(path.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn initial_guess_does_not_change_solution() {
        let grid = TimeGrid::with_intervals(5.0, 1024).unwrap();
        let k = exp1();
        let h = TransferFunction::arctan();
        let problem = MeanFieldProblem { kernel: &k, transfer: &h, p: 0.9, q: 0.7, grid };
        let a = solve_trapezoid(&problem, SolverOptions::default()).unwrap();
        let b = solve_trapezoid(
            &problem,
            SolverOptions { initial_guess: InitialGuess::Constant(5.0), damping: 0.7, ..SolverOptions::default() },
        )
        .unwrap();
        assert!(max_abs_difference(&a.values, &b.values) < 1e-10);
    }
}
