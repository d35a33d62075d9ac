//! Limiting fluctuation system around the mean-field solution.
//!
//! With `r_s = h(I_s)` the drivers are
//!
//! ```text
//! dḠ   = q ( W r + (2p−1) h′(I) K̄ ) dt + q √r dB
//! dGᵏ  = dḠ + √(q(1−q)) ( W̃ᵏ r dt + √r dB̃ᵏ )
//! K̄_t  = ∫_0^t φ(t−s) dḠ_s,    Kᵏ_t = ∫_0^t φ(t−s) dGᵏ_s
//! ```
//!
//! with `W ~ N(0, 4p(1−p))`, `W̃ᵏ ~ N(0, 1)` and independent Brownian
//! motions. The pair (Ḡ, K̄) is advanced by Euler–Maruyama; `K̄_{t_m}` is the
//! causal Stieltjes sum over the increments at steps `< m`, so each step is
//! explicit. Diffusion coefficients use the left endpoint.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::check_probability;
use crate::grid::{cumulative_trapezoid, TimeGrid};
use crate::kernels::{convolve_increments, Kernel, TransferFunction};
use crate::rng::{self, derive_seed, Stream};
use crate::stats::CovarianceEstimate;
use crate::volterra::IntensityPath;
use crate::{Error, Result};

/// Realised Gaussian drivers of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drivers {
    pub w: f64,
    pub w_tilde: Vec<f64>,
    /// Increments of B over each grid interval.
    pub db: Vec<f64>,
    /// `db_tilde[k]` are the increments of `B̃ᵏ`.
    pub db_tilde: Vec<Vec<f64>>,
}

impl Drivers {
    pub fn sample(p: f64, n_tracked: usize, grid: &TimeGrid, seed: u64) -> Self {
        let sd = grid.step().sqrt();
        let intervals = grid.intervals();
        let mut common = rng::stream(seed, Stream::CommonDriver);
        let w = (4.0 * p * (1.0 - p)).sqrt() * common.sample::<f64, _>(StandardNormal);
        let db = (0..intervals)
            .map(|_| sd * common.sample::<f64, _>(StandardNormal))
            .collect();
        let mut w_tilde = Vec::with_capacity(n_tracked);
        let mut db_tilde = Vec::with_capacity(n_tracked);
        for k in 0..n_tracked {
            let mut own = rng::stream(seed, Stream::VertexDriver(k as u32));
            w_tilde.push(own.sample::<f64, _>(StandardNormal));
            db_tilde.push(
                (0..intervals)
                    .map(|_| sd * own.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
        Drivers {
            w,
            w_tilde,
            db,
            db_tilde,
        }
    }

    /// All drivers zero (deterministic forcing-free run).
    pub fn zero(n_tracked: usize, grid: &TimeGrid) -> Self {
        let intervals = grid.intervals();
        Drivers {
            w: 0.0,
            w_tilde: vec![0.0; n_tracked],
            db: vec![0.0; intervals],
            db_tilde: vec![vec![0.0; intervals]; n_tracked],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Drivers {
            w: factor * self.w,
            w_tilde: self.w_tilde.iter().map(|x| factor * x).collect(),
            db: self.db.iter().map(|x| factor * x).collect(),
            db_tilde: self
                .db_tilde
                .iter()
                .map(|v| v.iter().map(|x| factor * x).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationSample {
    pub grid: TimeGrid,
    pub kbar: Vec<f64>,
    /// `k[j]` is the path of `K^{j+1}`.
    pub k: Vec<Vec<f64>>,
    pub drivers: Drivers,
    pub seed: Option<u64>,
}

impl FluctuationSample {
    /// `∫_0^t h′(I_s) K̄_s ds` on the grid.
    pub fn drift_integral(&self, mean_field: &IntensityPath, h: &TransferFunction) -> Result<Vec<f64>> {
        let hp = derivative_path(mean_field, h)?;
        let integrand: Vec<f64> = hp.iter().zip(&self.kbar).map(|(a, b)| a * b).collect();
        Ok(cumulative_trapezoid(self.grid.step(), &integrand))
    }
}

fn derivative_path(mean_field: &IntensityPath, h: &TransferFunction) -> Result<Vec<f64>> {
    mean_field
        .values
        .iter()
        .map(|&x| {
            h.derivative(x).ok_or_else(|| {
                Error::Capability(format!("transfer {} has no derivative h′", h.label()))
            })
        })
        .collect()
}

/// Precomputed coefficients shared by all samples on one mean-field path.
pub struct FluctuationModel<'a> {
    grid: TimeGrid,
    kernel: &'a Kernel,
    p: f64,
    q: f64,
    rates: Vec<f64>,
    sqrt_rates: Vec<f64>,
    derivs: Vec<f64>,
    phi: Vec<f64>,
    decay: Option<f64>,
}

impl<'a> FluctuationModel<'a> {
    pub fn new(
        mean_field: &IntensityPath,
        kernel: &'a Kernel,
        h: &TransferFunction,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        let grid = mean_field.grid;
        let derivs = derivative_path(mean_field, h)?;
        let rates = mean_field.rates(h);
        let phi = kernel.sample_grid(grid.step(), grid.len())?;
        Ok(FluctuationModel {
            grid,
            kernel,
            p,
            q,
            sqrt_rates: rates.iter().map(|r| r.sqrt()).collect(),
            rates,
            derivs,
            phi,
            decay: kernel.decay_rate().map(|l| (-l * grid.step()).exp()),
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Convolution `Σ_{i<m} φ(t_m − t_i) dG_i` for every `m`.
    fn convolve(&self, increments: &[f64]) -> Vec<f64> {
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        match self.decay {
            Some(decay) => {
                for m in 1..len {
                    out[m] = decay * (out[m - 1] + increments[m - 1]);
                }
            }
            None => {
                for (m, o) in out.iter_mut().enumerate() {
                    *o = convolve_increments(&self.phi, increments, m);
                }
            }
        }
        out
    }

    /// Integrates the system for given drivers.
    pub fn integrate(&self, drivers: &Drivers) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let intervals = self.grid.intervals();
        if drivers.db.len() != intervals || drivers.db_tilde.iter().any(|d| d.len() != intervals) {
            return Err(Error::Contract("driver increments do not match the grid".into()));
        }
        if drivers.w_tilde.len() != drivers.db_tilde.len() {
            return Err(Error::Contract("one W̃ per tracked vertex is required".into()));
        }
        let dt = self.grid.step();
        let q = self.q;
        let feedback = 2.0 * self.p - 1.0;
        let len = self.grid.len();

        let mut kbar = vec![0.0; len];
        let mut dg_bar = vec![0.0; intervals];
        for m in 0..intervals {
            kbar[m] = match self.decay {
                Some(decay) if m > 0 => decay * (kbar[m - 1] + dg_bar[m - 1]),
                Some(_) => 0.0,
                None => convolve_increments(&self.phi, &dg_bar, m),
            };
            dg_bar[m] = q
                * ((drivers.w * self.rates[m] + feedback * self.derivs[m] * kbar[m]) * dt
                    + self.sqrt_rates[m] * drivers.db[m]);
        }
        if intervals > 0 {
            kbar[intervals] = match self.decay {
                Some(decay) => decay * (kbar[intervals - 1] + dg_bar[intervals - 1]),
                None => convolve_increments(&self.phi, &dg_bar, intervals),
            };
        }

        let spread = (q * (1.0 - q)).sqrt();
        let ks = drivers
            .w_tilde
            .iter()
            .zip(&drivers.db_tilde)
            .map(|(&wt, db)| {
                let dg: Vec<f64> = (0..intervals)
                    .map(|m| {
                        dg_bar[m]
                            + spread * (wt * self.rates[m] * dt + self.sqrt_rates[m] * db[m])
                    })
                    .collect();
                self.convolve(&dg)
            })
            .collect();
        Ok((kbar, ks))
    }

    pub fn sample(&self, n_tracked: usize, seed: u64) -> Result<FluctuationSample> {
        let drivers = Drivers::sample(self.p, n_tracked, &self.grid, seed);
        let (kbar, k) = self.integrate(&drivers)?;
        Ok(FluctuationSample {
            grid: self.grid,
            kbar,
            k,
            drivers,
            seed: Some(seed),
        })
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }
}

pub fn simulate_fluctuations(
    mean_field: &IntensityPath,
    kernel: &Kernel,
    h: &TransferFunction,
    p: f64,
    q: f64,
    n_tracked: usize,
    seed: u64,
) -> Result<FluctuationSample> {
    FluctuationModel::new(mean_field, kernel, h, p, q)?.sample(n_tracked, seed)
}

/// Terminal values of one limit sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalValues {
    pub kbar: f64,
    pub k: Vec<f64>,
    /// `∫_0^T h′(I_s) K̄_s ds`.
    pub drift_integral: f64,
}

/// Draws `samples` independent limit samples and keeps only terminal values.
///
/// Sample `s` uses seed `derive_seed(master_seed, s)`.
pub fn sample_terminal_values(
    mean_field: &IntensityPath,
    kernel: &Kernel,
    h: &TransferFunction,
    p: f64,
    q: f64,
    n_tracked: usize,
    samples: usize,
    master_seed: u64,
) -> Result<Vec<TerminalValues>> {
    let model = FluctuationModel::new(mean_field, kernel, h, p, q)?;
    let hp = derivative_path(mean_field, h)?;
    let step = model.grid.step();
    (0..samples)
        .into_par_iter()
        .map(|s| {
            let sample = model.sample(n_tracked, derive_seed(master_seed, s as u64))?;
            let integrand: Vec<f64> = hp.iter().zip(&sample.kbar).map(|(a, b)| a * b).collect();
            Ok(TerminalValues {
                kbar: *sample.kbar.last().unwrap_or(&0.0),
                k: sample.k.iter().map(|p| *p.last().unwrap_or(&0.0)).collect(),
                drift_integral: crate::grid::trapezoid(step, &integrand),
            })
        })
        .collect()
}

/// Covariance of `(K̄_t, K¹_t, …, Kⁿ_t)` across samples, with jackknife SEs.
pub fn covariance_matrix(samples: &[FluctuationSample], t: f64) -> Result<CovarianceEstimate> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("at least two samples are required".into()))?;
    if samples.len() < 2 {
        return Err(Error::Contract("at least two samples are required".into()));
    }
    if samples.iter().any(|s| s.grid != first.grid || s.k.len() != first.k.len()) {
        return Err(Error::Contract("samples must share grid and tracked-vertex count".into()));
    }
    let m = first.grid.index_of(t)?;
    let mut columns = vec![samples.iter().map(|s| s.kbar[m]).collect::<Vec<_>>()];
    for k in 0..first.k.len() {
        columns.push(samples.iter().map(|s| s.k[k][m]).collect());
    }
    Ok(CovarianceEstimate::from_columns(&columns))
}

/// Columns `(K̄_T, K¹_T, …)` of terminal values, ready for covariance estimates.
pub fn terminal_columns(values: &[TerminalValues]) -> Vec<Vec<f64>> {
    let n = values.first().map_or(0, |v| v.k.len());
    let mut columns = vec![values.iter().map(|v| v.kbar).collect::<Vec<_>>()];
    for k in 0..n {
        columns.push(values.iter().map(|v| v.k[k]).collect());
    }
    columns
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volterra::{solve_mean_field, Scheme};

    fn mean_field(p: f64, q: f64, horizon: f64, intervals: usize) -> IntensityPath {
        let grid = TimeGrid::with_intervals(horizon, intervals).unwrap();
        solve_mean_field(
            &Kernel::exponential(1.0).unwrap(),
            &TransferFunction::arctan(),
            p,
            q,
            grid,
            Scheme::VolterraTrapezoid,
        )
        .unwrap()
    }

    #[test]
    fn paths_start_at_zero_and_are_reproducible() {
        let i = mean_field(0.8, 0.5, 3.0, 256);
        let k = Kernel::exponential(1.0).unwrap();
        let h = TransferFunction::arctan();
        let a = simulate_fluctuations(&i, &k, &h, 0.8, 0.5, 3, 99).unwrap();
        let b = simulate_fluctuations(&i, &k, &h, 0.8, 0.5, 3, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.kbar[0], 0.0);
        assert!(a.k.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn complete_graph_collapses_vertex_paths() {
        let i = mean_field(0.8, 1.0, 3.0, 256);
        let k = Kernel::exponential(1.0).unwrap();
        let s = simulate_fluctuations(&i, &k, &TransferFunction::arctan(), 0.8, 1.0, 4, 5).unwrap();
        for path in &s.k {
            assert_eq!(path, &s.kbar);
        }
    }

    #[test]
    fn zero_drivers_give_zero_paths() {
        let i = mean_field(0.9, 0.5, 3.0, 128);
        let k = Kernel::exponential(1.0).unwrap();
        let model = FluctuationModel::new(&i, &k, &TransferFunction::arctan(), 0.9, 0.5).unwrap();
        let (kbar, ks) = model.integrate(&Drivers::zero(2, &i.grid)).unwrap();
        assert!(kbar.iter().chain(ks.iter().flatten()).all(|&x| x == 0.0));
    }

    #[test]
    fn system_is_linear_in_drivers() {
        let i = mean_field(0.8, 0.5, 3.0, 256);
        let k = Kernel::exponential(1.0).unwrap();
        let model = FluctuationModel::new(&i, &k, &TransferFunction::arctan(), 0.8, 0.5).unwrap();
        let d = Drivers::sample(0.8, 2, &i.grid, 4);
        let (a, ka) = model.integrate(&d).unwrap();
        let (b, kb) = model.integrate(&d.scaled(2.0)).unwrap();
        for (x, y) in a.iter().zip(&b).chain(ka[1].iter().zip(&kb[1])) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn exponential_recursion_matches_direct_sum() {
        let i = mean_field(0.8, 0.5, 2.0, 128);
        let h = TransferFunction::arctan();
        let exp = Kernel::exponential(1.0).unwrap();
        let tab = Kernel::tabulate(|t| (-t).exp(), |t| -(-t).exp(), 2.0, 2.0 / 128.0).unwrap();
        let fast = simulate_fluctuations(&i, &exp, &h, 0.8, 0.5, 2, 8).unwrap();
        let slow = simulate_fluctuations(&i, &tab, &h, 0.8, 0.5, 2, 8).unwrap();
        let worst = fast
            .kbar
            .iter()
            .zip(&slow.kbar)
            .chain(fast.k[0].iter().zip(&slow.k[0]))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn missing_derivative_is_a_capability_error() {
        let i = mean_field(0.8, 0.5, 1.0, 16);
        let h = TransferFunction::Tabulated(crate::kernels::TabulatedTransfer {
            x0: -1.0,
            step: 0.5,
            values: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            derivatives: None,
        });
        let err = simulate_fluctuations(&i, &Kernel::exponential(1.0).unwrap(), &h, 0.8, 0.5, 1, 1);
        assert!(matches!(err, Err(Error::Capability(_))));
    }

    #[test]
    fn covariance_rejects_mismatched_grids() {
        let k = Kernel::exponential(1.0).unwrap();
        let h = TransferFunction::arctan();
        let a = simulate_fluctuations(&mean_field(0.8, 0.5, 1.0, 16), &k, &h, 0.8, 0.5, 1, 1).unwrap();
        let b = simulate_fluctuations(&mean_field(0.8, 0.5, 1.0, 32), &k, &h, 0.8, 0.5, 1, 1).unwrap();
        assert!(matches!(covariance_matrix(&[a.clone(), b], 1.0), Err(Error::Contract(_))));
        assert!(covariance_matrix(&[a], 1.0).is_err());
    }

    #[test]
    fn complete_graph_covariance_entries_coincide() {
        let i = mean_field(0.8, 1.0, 2.0, 64);
        let k = Kernel::exponential(1.0).unwrap();
        let h = TransferFunction::arctan();
        let samples: Vec<_> = (0..50)
            .map(|s| simulate_fluctuations(&i, &k, &h, 0.8, 1.0, 2, s).unwrap())
            .collect();
        let c = covariance_matrix(&samples, 2.0).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((c.cov[a][b] - c.cov[0][0]).abs() < 1e-12);
            }
        }
    }
}
