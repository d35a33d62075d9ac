//! Interaction kernels φ and transfer functions h.

use std::f64::consts::FRAC_2_PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// φ sampled on a uniform grid `0, step, …, (len−1)·step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedKernel {
    pub step: f64,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `φ(t) = e^{−λt}`.
    Exponential { lambda: f64 },
    Tabulated(TabulatedKernel),
}

impl Kernel {
    pub fn exponential(lambda: f64) -> Result<Self> {
        let k = Kernel::Exponential { lambda };
        k.validate()?;
        Ok(k)
    }

    /// Tabulates `f` and `df` on `[0, t_max]` with the given step.
    pub fn tabulate(
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        t_max: f64,
        step: f64,
    ) -> Result<Self> {
        if !(step > 0.0 && t_max >= step) {
            return Err(Error::param("step", "need 0 < step <= t_max"));
        }
        let len = (t_max / step).round() as usize + 1;
        let times = (0..len).map(|m| m as f64 * step);
        let k = Kernel::Tabulated(TabulatedKernel {
            step,
            values: times.clone().map(f).collect(),
            derivatives: times.map(df).collect(),
        });
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Exponential { lambda } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::param("lambda", format!("{lambda} must be > 0")));
                }
            }
            Kernel::Tabulated(t) => {
                if !(t.step > 0.0) || t.values.len() < 2 {
                    return Err(Error::param("kernel", "tabulated kernel needs step > 0 and >= 2 values"));
                }
                if t.derivatives.len() != t.values.len() {
                    return Err(Error::param("kernel", "values and derivatives differ in length"));
                }
                if t.values.iter().chain(&t.derivatives).any(|v| !v.is_finite()) {
                    return Err(Error::param("kernel", "non-finite table entry"));
                }
            }
        }
        Ok(())
    }

    /// Decay rate λ for exponential kernels.
    pub fn decay_rate(&self) -> Option<f64> {
        match self {
            Kernel::Exponential { lambda } => Some(*lambda),
            Kernel::Tabulated(_) => None,
        }
    }

    /// Largest time at which φ is defined.
    pub fn max_time(&self) -> f64 {
        match self {
            Kernel::Exponential { .. } => f64::INFINITY,
            Kernel::Tabulated(t) => t.step * (t.values.len() - 1) as f64,
        }
    }

    /// `φ(t)`; linear interpolation for tabulated kernels.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match self {
            Kernel::Exponential { lambda } => (-lambda * t).exp(),
            Kernel::Tabulated(tab) => interpolate(tab.step, &tab.values, t),
        })
    }

    pub fn derivative(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match self {
            Kernel::Exponential { lambda } => -lambda * (-lambda * t).exp(),
            Kernel::Tabulated(tab) => interpolate(tab.step, &tab.derivatives, t),
        })
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let max = self.max_time();
        if t < 0.0 || t > max * (1.0 + 1e-12) || t.is_nan() {
            return Err(Error::Domain { t, max });
        }
        Ok(())
    }

    /// `‖φ‖`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Kernel::Exponential { .. } => 1.0,
            Kernel::Tabulated(t) => t.values.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    /// `‖φ′‖`.
    pub fn deriv_sup_norm(&self) -> f64 {
        match self {
            Kernel::Exponential { lambda } => *lambda,
            Kernel::Tabulated(t) => t.derivatives.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        }
    }

    /// Age beyond which `|φ| < tol · ‖φ‖` (capped at the table end).
    pub fn memory_horizon(&self, tol: f64) -> f64 {
        match self {
            Kernel::Exponential { lambda } => (1.0 / tol).ln() / lambda,
            Kernel::Tabulated(t) => {
                let cutoff = tol * self.sup_norm();
                match t.values.iter().rposition(|v| v.abs() >= cutoff) {
                    Some(last) => (t.step * (last + 1) as f64).min(self.max_time()),
                    None => 0.0,
                }
            }
        }
    }

    /// `φ(m · step)` for `m = 0..len`.
    pub fn sample_grid(&self, step: f64, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|m| self.eval(m as f64 * step)).collect()
    }

    pub fn label(&self) -> String {
        match self {
            Kernel::Exponential { lambda } => format!("exponential(lambda={lambda})"),
            Kernel::Tabulated(t) => format!("tabulated(step={}, len={})", t.step, t.values.len()),
        }
    }
}

fn interpolate(step: f64, values: &[f64], t: f64) -> f64 {
    let x = t / step;
    let i = x.floor() as usize;
    if i + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let frac = x - i as f64;
    if frac == 0.0 {
        values[i]
    } else {
        values[i] + frac * (values[i + 1] - values[i])
    }
}

/// h sampled on a uniform grid starting at `x0`; constant beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedTransfer {
    pub x0: f64,
    pub step: f64,
    pub values: Vec<f64>,
    /// Optional `h′` on the same grid.
    #[serde(default)]
    pub derivatives: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferFunction {
    /// `h(x) = 1 + (2/π) arctan x`.
    Arctan {},
    /// `h ≡ c`.
    Constant { value: f64 },
    Tabulated(TabulatedTransfer),
}

impl TransferFunction {
    pub fn arctan() -> Self {
        TransferFunction::Arctan {}
    }

    pub fn constant(value: f64) -> Result<Self> {
        let h = TransferFunction::Constant { value };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransferFunction::Arctan {} => Ok(()),
            TransferFunction::Constant { value } => {
                if *value >= 0.0 && value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("transfer", format!("constant {value} must be finite and >= 0")))
                }
            }
            TransferFunction::Tabulated(t) => {
                if !(t.step > 0.0) || t.values.len() < 2 {
                    return Err(Error::param("transfer", "tabulated transfer needs step > 0 and >= 2 values"));
                }
                if t.values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::param("transfer", "h must be finite and non-negative"));
                }
                if let Some(d) = &t.derivatives {
                    if d.len() != t.values.len() || d.iter().any(|v| !v.is_finite()) {
                        return Err(Error::param("transfer", "derivative table is malformed"));
                    }
                }
                Ok(())
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TransferFunction::Arctan {} => 1.0 + FRAC_2_PI * x.atan(),
            TransferFunction::Constant { value } => *value,
            TransferFunction::Tabulated(t) => tabulated_eval(t, &t.values, x),
        }
    }

    /// `h′(x)`, or `None` when the derivative is not available.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        match self {
            TransferFunction::Arctan {} => Some(FRAC_2_PI / (1.0 + x * x)),
            TransferFunction::Constant { .. } => Some(0.0),
            TransferFunction::Tabulated(t) => {
                let d = t.derivatives.as_ref()?;
                let u = (x - t.x0) / t.step;
                if u < 0.0 || u > (t.values.len() - 1) as f64 {
                    return Some(0.0);
                }
                Some(tabulated_eval(t, d, x))
            }
        }
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative(0.0).is_some()
    }

    /// `‖h‖ = sup h`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            TransferFunction::Arctan {} => 2.0,
            TransferFunction::Constant { value } => *value,
            TransferFunction::Tabulated(t) => t.values.iter().fold(0.0, |m, &v| f64::max(m, v)),
        }
    }

    /// Lipschitz constant of h.
    pub fn lipschitz(&self) -> f64 {
        match self {
            TransferFunction::Arctan {} => FRAC_2_PI,
            TransferFunction::Constant { .. } => 0.0,
            TransferFunction::Tabulated(t) => t
                .values
                .windows(2)
                .map(|w| ((w[1] - w[0]) / t.step).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Lipschitz constant of h′, when h′ is available.
    pub fn derivative_lipschitz(&self) -> Option<f64> {
        match self {
            // max |h''| = (2/π) · 9 / (8√3), attained at x = 1/√3.
            TransferFunction::Arctan {} => Some(FRAC_2_PI * 9.0 / (8.0 * 3f64.sqrt())),
            TransferFunction::Constant { .. } => Some(0.0),
            TransferFunction::Tabulated(t) => t.derivatives.as_ref().map(|d| {
                d.windows(2)
                    .map(|w| ((w[1] - w[0]) / t.step).abs())
                    .fold(0.0, f64::max)
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TransferFunction::Arctan {} => "arctan".into(),
            TransferFunction::Constant { value } => format!("constant({value})"),
            TransferFunction::Tabulated(t) => format!("tabulated(x0={}, step={}, len={})", t.x0, t.step, t.values.len()),
        }
    }
}

fn tabulated_eval(t: &TabulatedTransfer, table: &[f64], x: f64) -> f64 {
    let u = (x - t.x0) / t.step;
    if u <= 0.0 {
        return table[0];
    }
    interpolate(1.0, table, u)
}

/// `Σ_{s < t} φ(t − s)` over unit jumps at `events`.
///
/// Events at `t` itself are excluded; the integral runs over `[0, t)`.
pub fn convolve_jumps(kernel: &Kernel, t: f64, events: &[f64]) -> Result<f64> {
    if events.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedEvents);
    }
    let end = events.partition_point(|&s| s < t);
    events[..end].iter().map(|&s| kernel.eval(t - s)).sum()
}

/// `Σ_{s < t} φ(t − s) · a` over weighted jumps `(s, a)` sorted by time.
pub fn convolve_weighted_jumps(kernel: &Kernel, t: f64, jumps: &[(f64, f64)]) -> Result<f64> {
    if jumps.windows(2).any(|w| w[0].0 > w[1].0) {
        return Err(Error::UnsortedEvents);
    }
    let end = jumps.partition_point(|&(s, _)| s < t);
    jumps[..end]
        .iter()
        .map(|&(s, a)| Ok(kernel.eval(t - s)? * a))
        .sum()
}

/// Trapezoid quadrature of `∫_0^{t_m} φ(t_m − s) g(s) ds` on a uniform grid.
///
/// `phi[k]` must hold `φ(k · step)` and `g[k]` the density at `k · step`.
pub fn convolve_density(phi: &[f64], g: &[f64], step: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let interior: f64 = (1..m).map(|k| phi[m - k] * g[k]).sum();
    step * (0.5 * phi[m] * g[0] + interior + 0.5 * phi[0] * g[m])
}

/// Causal Stieltjes sum `Σ_{k < m} φ(t_m − t_k) ΔG_k` over grid increments.
pub fn convolve_increments(phi: &[f64], increments: &[f64], m: usize) -> f64 {
    (0..m).map(|k| phi[m - k] * increments[k]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_values() {
        let k = Kernel::exponential(1.0).unwrap();
        assert_eq!(k.eval(0.0).unwrap(), 1.0);
        let k2 = Kernel::exponential(2.0).unwrap();
        assert!((k2.eval(2f64.ln() / 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(k2.sup_norm(), 1.0);
        assert_eq!(k2.deriv_sup_norm(), 2.0);
        assert!(matches!(k.eval(-1.0), Err(Error::Domain { .. })));
        assert!(Kernel::exponential(0.0).is_err());
    }

    #[test]
    fn tabulated_is_exact_on_nodes_and_bounded_domain() {
        let k = Kernel::tabulate(|t| (-t).exp(), |t| -(-t).exp(), 4.0, 1.0 / 64.0).unwrap();
        for m in [0usize, 1, 17, 256] {
            let t = m as f64 / 64.0;
            assert_eq!(k.eval(t).unwrap(), (-t).exp());
        }
        let mid = k.eval(0.5 + 1.0 / 128.0).unwrap();
        assert!((mid - (-(0.5 + 1.0 / 128.0f64)).exp()).abs() < 1e-4);
        assert!(matches!(k.eval(4.5), Err(Error::Domain { .. })));
        assert!((k.memory_horizon(1e-12) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn arctan_transfer_properties() {
        let h = TransferFunction::arctan();
        assert_eq!(h.eval(0.0), 1.0);
        for x in [-100.0, -1.0, 0.3, 50.0] {
            let v = h.eval(x);
            assert!(v > 0.0 && v < 2.0);
            assert!((h.derivative(x).unwrap() - FRAC_2_PI / (1.0 + x * x)).abs() < 1e-15);
        }
        let lip = h.lipschitz();
        let probes: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.173).collect();
        for &x in &probes {
            for &y in &probes {
                assert!((h.eval(x) - h.eval(y)).abs() <= lip * (x - y).abs() + 1e-15);
            }
        }
        let dl = h.derivative_lipschitz().unwrap();
        let x = 1.0 / 3f64.sqrt();
        let num = (h.derivative(x + 1e-6).unwrap() - h.derivative(x - 1e-6).unwrap()) / 2e-6;
        assert!((num.abs() - dl).abs() < 1e-6);
    }

    #[test]
    fn tabulated_transfer_without_derivative() {
        let h = TransferFunction::Tabulated(TabulatedTransfer {
            x0: -1.0,
            step: 0.5,
            values: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            derivatives: None,
        });
        h.validate().unwrap();
        assert_eq!(h.eval(0.0), 1.0);
        assert_eq!(h.eval(-5.0), 0.5);
        assert_eq!(h.eval(9.0), 1.5);
        assert!((h.eval(0.25) - 1.125).abs() < 1e-15);
        assert!(h.derivative(0.0).is_none());
        assert!((h.lipschitz() - 0.5).abs() < 1e-15);
        assert!(TransferFunction::constant(-1.0).is_err());
    }

    #[test]
    fn jump_convolution() {
        let k = Kernel::exponential(1.0).unwrap();
        assert_eq!(convolve_jumps(&k, 3.0, &[]).unwrap(), 0.0);
        let lam = Kernel::exponential(1.7).unwrap();
        assert!((convolve_jumps(&lam, 2.0, &[0.5]).unwrap() - (-1.7f64 * 1.5).exp()).abs() < 1e-15);
        let v = convolve_jumps(&k, 1.0, &[0.2, 0.7]).unwrap();
        assert!((v - ((-0.8f64).exp() + (-0.3f64).exp())).abs() < 1e-15);
        // Strict left limit: an event at t does not count.
        assert_eq!(convolve_jumps(&k, 0.7, &[0.2, 0.7]).unwrap(), (-0.5f64).exp());
        assert!(matches!(convolve_jumps(&k, 1.0, &[0.7, 0.2]), Err(Error::UnsortedEvents)));
    }

    #[test]
    fn exponential_semigroup() {
        let lambda = 0.8;
        let k = Kernel::exponential(lambda).unwrap();
        let events = [0.1, 0.4, 1.3, 2.2, 2.9, 3.05];
        let (t, dt) = (2.5, 0.7);
        let at_t = convolve_jumps(&k, t, &events).unwrap();
        let fresh: f64 = events
            .iter()
            .filter(|&&s| s >= t && s < t + dt)
            .map(|s| k.eval(t + dt - s).unwrap())
            .sum();
        let at_later = convolve_jumps(&k, t + dt, &events).unwrap();
        assert!((at_later - ((-lambda * dt).exp() * at_t + fresh)).abs() < 1e-14);
    }

    #[test]
    fn density_convolution_matches_closed_form() {
        // ∫_0^t e^{-(t-s)} ds = 1 − e^{-t}.
        let step = 1.0 / 512.0;
        let m = 512;
        let phi: Vec<f64> = (0..=m).map(|k| (-(k as f64) * step).exp()).collect();
        let g = vec![1.0; m + 1];
        let v = convolve_density(&phi, &g, step, m);
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
        let inc = vec![step; m];
        let s = convolve_increments(&phi, &inc, m);
        assert!((s - (1.0 - (-1.0f64).exp())).abs() < 2e-3);
    }
}
