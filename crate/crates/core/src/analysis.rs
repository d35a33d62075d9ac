//! Statistical verification experiments.
//!
//! Each experiment simulates independent replicates in parallel, reduces
//! them in replicate order, and returns an [`ExperimentReport`] whose
//! verdicts are recomputed from its tables. Tolerances: 3 SE for mean-zero
//! checks, 4 pooled SE when two Monte Carlo sources are compared, 10 %
//! relative for the critical-case covariation slope.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::fluctuations::{sample_terminal_values, terminal_columns};
use crate::grid::{cumulative_trapezoid, TimeGrid};
use crate::kernels::{Kernel, TransferFunction};
use crate::network::{
    build_complementary_network, compute_weight_statistics, sample_network, NetworkConfiguration,
};
use crate::report::{
    Cell, CellRef, Check, ExperimentReport, Operand, ReplicateSeeds, SeedManifest, Series, Table,
};
use crate::rng::{derive_seed, replicate_seeds};
use crate::simulator::{
    extract_martingale_paths, jump_covariation, simulate, simulate_observed, tilde_weights,
    Backend, Scaling, SimulationConfig, SpikeTrains,
};
use crate::stats::{
    self, correlation, fisher_z, mean_estimate, median, normal_quantile, quantile,
    variance_estimate, CovarianceEstimate,
};
use crate::volterra::{solve_mean_field, IntensityPath, Scheme};
use crate::{Error, Result};

/// Index used to derive the master seed of limit-law samples.
const LIMIT_SEED_INDEX: u64 = 0xF1u64 << 56;
/// Index used to derive the seed of a network held fixed across replicates.
const FIXED_NETWORK_INDEX: u64 = 0xF2u64 << 56;
/// Largest number of points kept per plotted series.
const SERIES_POINTS: usize = 257;

/// Model parameters shared by all experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub p: f64,
    pub q: f64,
    pub kernel: Kernel,
    pub transfer: TransferFunction,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        crate::error::check_probability("p", self.p)?;
        crate::error::check_probability("q", self.q)?;
        self.kernel.validate()?;
        self.transfer.validate()
    }

    pub fn mean_field(&self, grid: TimeGrid) -> Result<IntensityPath> {
        solve_mean_field(
            &self.kernel,
            &self.transfer,
            self.p,
            self.q,
            grid,
            Scheme::VolterraTrapezoid,
        )
    }

    fn require_mean_field_regime(&self) -> Result<()> {
        if self.p == 0.5 {
            return Err(Error::WrongRegime(
                "p = 1/2 is the critical case; use the critical experiment".into(),
            ));
        }
        Ok(())
    }
}

/// Run parameters shared by all experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: f64,
    /// Grid intervals over `[0, T]`, shared by simulation and mean field.
    pub intervals: usize,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub backend: Backend,
    /// Monte Carlo samples of the limit law, where one is needed.
    #[serde(default = "default_limit_samples")]
    pub limit_samples: usize,
}

fn default_limit_samples() -> usize {
    10_000
}

impl RunSpec {
    pub fn new(horizon: f64, replicates: usize, master_seed: u64) -> Self {
        RunSpec {
            horizon,
            intervals: 2048,
            replicates,
            master_seed,
            backend: Backend::Thinning,
            limit_samples: default_limit_samples(),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_intervals(self.horizon, self.intervals)
    }

    fn sim_config(&self, scaling: Scaling, seed: u64) -> Result<SimulationConfig> {
        let mut cfg = SimulationConfig::new(self.horizon, scaling, seed)?;
        cfg.grid = self.grid()?;
        Ok(cfg)
    }

    /// `(network, simulation)` seeds of replicate `r` in group `group`.
    pub fn seeds(&self, group: u64, r: usize) -> (u64, u64) {
        replicate_seeds(derive_seed(self.master_seed, group), r)
    }

    fn limit_seed(&self) -> u64 {
        derive_seed(self.master_seed, LIMIT_SEED_INDEX)
    }
}

fn manifest(run: &RunSpec, groups: &[(String, u64)]) -> SeedManifest {
    let mut replicates = Vec::new();
    for (label, group) in groups {
        for r in 0..run.replicates {
            let (network, simulation) = run.seeds(*group, r);
            replicates.push(ReplicateSeeds {
                label: label.clone(),
                replicate: r,
                network,
                simulation,
            });
        }
    }
    SeedManifest {
        master: run.master_seed,
        replicates,
        limit: None,
    }
}

fn parallel<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count).into_par_iter().map(f).collect()
}

fn check_ns(ns: &[usize]) -> Result<()> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::param("n", "need at least one positive network size"));
    }
    Ok(())
}

fn label_n(n: usize) -> String {
    format!("N={n}")
}

/// Standard error of a sample median under approximate normality.
fn median_estimate(xs: &[f64]) -> Cell {
    let sd = stats::variance(xs).sqrt();
    Cell {
        value: median(xs),
        se: (std::f64::consts::PI / 2.0).sqrt() * sd / (xs.len() as f64).sqrt(),
        n: xs.len(),
    }
}

fn cov_cell(c: &CovarianceEstimate, a: usize, b: usize) -> Cell {
    c.entry(a, b).into()
}

fn mean_cell(c: &CovarianceEstimate, columns: &[Vec<f64>], a: usize) -> Cell {
    let e = mean_estimate(&columns[a]);
    debug_assert_eq!(e.n, c.n);
    e.into()
}

fn thin(grid: &TimeGrid, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let stride = grid.intervals().div_ceil(SERIES_POINTS - 1).max(1);
    let mut idx: Vec<usize> = (0..values.len()).step_by(stride).collect();
    if idx.last() != Some(&(values.len() - 1)) {
        idx.push(values.len() - 1);
    }
    (
        idx.iter().map(|&m| grid.time(m)).collect(),
        idx.iter().map(|&m| values[m]).collect(),
    )
}

fn series(name: &str, replicate: Option<usize>, grid: &TimeGrid, values: &[f64]) -> Series {
    let (t, values) = thin(grid, values);
    Series {
        name: name.into(),
        replicate,
        t,
        values,
    }
}

/// Total count `Σ_j Z^j_{t_m−}` on the grid.
fn total_count_path(trains: &SpikeTrains, grid: &TimeGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for j in 0..trains.n_vertices() {
        for (o, c) in out.iter_mut().zip(trains.count_path(j, grid)) {
            *o += c;
        }
    }
    out
}

/// Law of large numbers: sup-distance of finite-N inputs to the mean field.
pub fn lln_experiment(model: &ModelSpec, ns: &[usize], run: &RunSpec) -> Result<ExperimentReport> {
    model.validate()?;
    model.require_mean_field_regime()?;
    check_ns(ns)?;
    let grid = run.grid()?;
    let mf = model.mean_field(grid)?;

    let mut errors = Vec::with_capacity(ns.len());
    for &n in ns {
        let e = parallel(run.replicates, |r| {
            let (net_seed, sim_seed) = run.seeds(n as u64, r);
            let net = sample_network(n, model.p, model.q, net_seed)?;
            let cfg = run.sim_config(Scaling::MeanField, sim_seed)?;
            let mut sup: f64 = 0.0;
            let mut observer = |m: usize, _t: f64, inputs: &[f64]| {
                let target = mf.values[m];
                for &s in inputs {
                    sup = sup.max((s - target).abs());
                }
            };
            simulate_observed(run.backend, &net, &model.kernel, &model.transfer, &cfg, &mut observer)?;
            Ok(sup)
        })?;
        errors.push(e);
    }

    let groups: Vec<_> = ns.iter().map(|&n| (label_n(n), n as u64)).collect();
    let mut report = ExperimentReport::new(
        "lln",
        json!({ "model": model, "run": run, "ns": ns }),
        manifest(run, &groups),
    );
    let mut summary = Table::new("sup_error", &["median", "q25", "q75", "mean"]);
    let mut per_replicate = Table::new("sup_error_replicates", &["sup_error"]);
    for (&n, e) in ns.iter().zip(&errors) {
        let r = e.len();
        summary.push(
            label_n(n),
            vec![
                median_estimate(e),
                Cell { value: quantile(e, 0.25), se: f64::NAN, n: r },
                Cell { value: quantile(e, 0.75), se: f64::NAN, n: r },
                mean_estimate(e).into(),
            ],
        );
        for (i, &x) in e.iter().enumerate() {
            per_replicate.push(format!("{}/r={i}", label_n(n)), vec![Cell::exact(x)]);
        }
    }
    report.tables.push(summary);
    report.tables.push(per_replicate);
    report.series.push(series("mean_field_I", None, &grid, &mf.values));

    if ns.len() >= 2 {
        let medians: Vec<CellRef> = ns
            .iter()
            .map(|&n| CellRef::new("sup_error", label_n(n), "median"))
            .collect();
        report.criterion(
            "median_decreasing",
            "median sup-error strictly decreasing in N",
            Check::StrictlyDecreasing { cells: medians.clone() },
        );
        let (first, last) = (ns[0] as f64, ns[ns.len() - 1] as f64);
        let expected = (last / first).sqrt();
        report.criterion(
            "rate",
            "ratio of first to last median within a factor 2 of sqrt(N_last/N_first)",
            Check::RatioInRange {
                num: medians[0].clone(),
                den: medians[medians.len() - 1].clone(),
                lo: expected / 2.0,
                hi: expected * 2.0,
            },
        );
    }
    Ok(report.finalize())
}

/// Terminal fluctuation samples of one replicate.
struct CltReplicate {
    kbar: f64,
    k: Vec<f64>,
    linearisation_violation: bool,
    remainder: f64,
    linear: f64,
}

/// Central limit theorem: finite-N fluctuations against the limit law.
pub fn clt_experiment(
    model: &ModelSpec,
    n: usize,
    tracked: usize,
    run: &RunSpec,
) -> Result<ExperimentReport> {
    model.validate()?;
    model.require_mean_field_regime()?;
    check_ns(&[n])?;
    if tracked == 0 || tracked > n {
        return Err(Error::param("tracked", format!("need 1 <= tracked <= N, got {tracked}")));
    }
    let grid = run.grid()?;
    let mf = model.mean_field(grid)?;
    let last = grid.intervals();
    let i_t = mf.last();
    let h = &model.transfer;
    let hp_t = h.derivative(i_t);
    let h2_lip = h.derivative_lipschitz();
    let root_n = (n as f64).sqrt();

    let reps = parallel(run.replicates, |r| {
        let (net_seed, sim_seed) = run.seeds(n as u64, r);
        let net = sample_network(n, model.p, model.q, net_seed)?;
        let ws = compute_weight_statistics(&net);
        let residual = ws.decomposition_residual(model.q);
        if residual > 1e-9 {
            return Err(Error::Contract(format!("weight decomposition residual {residual:e}")));
        }
        let cfg = run.sim_config(Scaling::MeanField, sim_seed)?;
        let mut terminal = Vec::new();
        let mut observer = |m: usize, _t: f64, inputs: &[f64]| {
            if m == last {
                terminal = inputs.to_vec();
            }
        };
        simulate_observed(run.backend, &net, &model.kernel, h, &cfg, &mut observer)?;
        let k: Vec<f64> = terminal.iter().map(|s| root_n * (s - i_t)).collect();
        let kbar = root_n * (stats::mean(&terminal) - i_t);
        let kbar_alt = stats::mean(&k);
        if (kbar - kbar_alt).abs() > 1e-9 * (1.0 + kbar.abs()) {
            return Err(Error::Contract(format!("K̄ identity violated: {kbar} vs {kbar_alt}")));
        }
        let k1 = k[0];
        let (mut violation, mut remainder, mut linear) = (false, f64::NAN, f64::NAN);
        if let Some(hp) = hp_t {
            let exact = root_n * (h.eval(terminal[0]) - h.eval(i_t));
            linear = hp * k1;
            remainder = exact - linear;
            if let Some(l2) = h2_lip {
                violation = remainder.abs() > 0.5 * l2 * k1 * k1 / root_n + 1e-12 * (1.0 + exact.abs());
            }
        }
        Ok(CltReplicate {
            kbar,
            k: k[..tracked].to_vec(),
            linearisation_violation: violation,
            remainder,
            linear,
        })
    })?;

    let mut finite_cols = vec![reps.iter().map(|r| r.kbar).collect::<Vec<_>>()];
    for j in 0..tracked {
        finite_cols.push(reps.iter().map(|r| r.k[j]).collect());
    }
    let mut seeds = manifest(run, &[(label_n(n), n as u64)]);
    let limit_cols = if h.has_derivative() {
        seeds.limit = Some(run.limit_seed());
        let values = sample_terminal_values(
            &mf,
            &model.kernel,
            h,
            model.p,
            model.q,
            tracked,
            run.limit_samples,
            run.limit_seed(),
        )?;
        Some(terminal_columns(&values))
    } else {
        None
    };

    let mut report = ExperimentReport::new(
        "clt",
        json!({ "model": model, "run": run, "n": n, "tracked": tracked }),
        seeds,
    );
    let mut columns = vec!["mean_kbar", "mean_k1", "var_kbar", "var_k1", "var_k1_minus_kbar"];
    if tracked >= 2 {
        columns.extend(["cov_k1_k2", "var_minus_cov"]);
    }
    let mut table = Table::new("terminal_moments", &columns);
    let mut row = |label: &str, cols: &[Vec<f64>]| {
        let c = CovarianceEstimate::from_columns(cols);
        let diff: Vec<f64> = cols[1].iter().zip(&cols[0]).map(|(a, b)| a - b).collect();
        let mut cells = vec![
            mean_cell(&c, cols, 0),
            mean_cell(&c, cols, 1),
            cov_cell(&c, 0, 0),
            cov_cell(&c, 1, 1),
            variance_estimate(&diff).into(),
        ];
        if tracked >= 2 {
            // ½ Var(K¹ − K²) estimates Var(Kᵏ) − Cov(Kᵏ, Kˡ) for exchangeable k, l.
            let d12: Vec<f64> = cols[1].iter().zip(&cols[2]).map(|(a, b)| a - b).collect();
            let v = variance_estimate(&d12);
            cells.push(cov_cell(&c, 1, 2));
            cells.push(Cell { value: v.value / 2.0, se: v.se / 2.0, n: v.n });
        }
        table.push(label, cells);
    };
    row("finite_n", &finite_cols);
    if let Some(cols) = &limit_cols {
        row("limit", cols);
    }
    report.tables.push(table);

    let violations = reps.iter().filter(|r| r.linearisation_violation).count();
    let rem: Vec<f64> = reps.iter().map(|r| r.remainder.abs()).collect();
    let lin: Vec<f64> = reps.iter().map(|r| r.linear.abs()).collect();
    let mut lin_table = Table::new("linearisation", &["violations", "mean_abs_remainder", "mean_abs_linear"]);
    lin_table.push(
        "k1",
        vec![
            Cell::exact(violations as f64),
            mean_estimate(&rem).into(),
            mean_estimate(&lin).into(),
        ],
    );
    report.tables.push(lin_table);

    if limit_cols.is_some() {
        let fin = |c: &str| CellRef::new("terminal_moments", "finite_n", c);
        let lim = |c: &str| Operand::Cell(CellRef::new("terminal_moments", "limit", c));
        report.criterion(
            "mean_k1",
            "mean of K^{N,1}_T within 4 pooled SE of the limit mean",
            Check::WithinSe { a: fin("mean_k1"), b: lim("mean_k1"), k: 4.0 },
        );
        report.criterion(
            "var_k1",
            "Var(K^{N,1}_T) within 4 pooled SE of the limit variance",
            Check::WithinSe { a: fin("var_k1"), b: lim("var_k1"), k: 4.0 },
        );
        if tracked >= 2 {
            report.criterion(
                "cov_k1_k2",
                "Cov(K^{N,1}_T, K^{N,2}_T) within 4 pooled SE of the limit covariance",
                Check::WithinSe { a: fin("cov_k1_k2"), b: lim("cov_k1_k2"), k: 4.0 },
            );
        }
        if h2_lip.is_some() {
            report.criterion(
                "linearisation",
                "sqrt(N)(h(I^{N,1}_T) - h(I_T)) - h'(I_T)K^{N,1}_T within the Taylor bound for every replicate",
                Check::Exact {
                    a: CellRef::new("linearisation", "k1", "violations"),
                    b: Operand::Const(0.0),
                },
            );
        }
    }
    if tracked >= 2 && model.q > 0.0 && model.q < 1.0 {
        report.criterion(
            "diagonal_exceeds_offdiagonal",
            "Var(K^{N,k}_T) - Cov(K^{N,k}_T, K^{N,l}_T) exceeds 3 SE",
            Check::PositiveBySe {
                a: CellRef::new("terminal_moments", "finite_n", "var_minus_cov"),
                k: 3.0,
            },
        );
    }
    Ok(report.finalize())
}

/// Per-replicate statistics of the averaged compensated counts.
struct CompensatedReplicate {
    sup_average: f64,
    /// `(1/√N) Σ_j (Z^j_T − ∫h(I^{N,j}))`.
    own: f64,
    /// `(1/√N) Σ_j (Z^j_T − ∫h(I))`.
    mean_field: f64,
}

/// Averaged compensated counts: vanishing average, Gaussian rescaled sums,
/// and the drift-corrected sum against the mean-field compensator.
pub fn compensated_experiment(model: &ModelSpec, ns: &[usize], run: &RunSpec) -> Result<ExperimentReport> {
    model.validate()?;
    model.require_mean_field_regime()?;
    check_ns(ns)?;
    let grid = run.grid()?;
    let mf = model.mean_field(grid)?;
    let h = &model.transfer;
    let integrated = mf.integrated_rate(h);
    let step = grid.step();

    let mut per_n = Vec::with_capacity(ns.len());
    for &n in ns {
        let reps = parallel(run.replicates, |r| {
            let (net_seed, sim_seed) = run.seeds(n as u64, r);
            let net = sample_network(n, model.p, model.q, net_seed)?;
            let cfg = run.sim_config(Scaling::MeanField, sim_seed)?;
            let mut sum_h = vec![0.0; grid.len()];
            let mut observer = |m: usize, _t: f64, inputs: &[f64]| {
                sum_h[m] = inputs.iter().map(|&s| h.eval(s)).sum();
            };
            let (trains, _) =
                simulate_observed(run.backend, &net, &model.kernel, h, &cfg, &mut observer)?;
            let comp = cumulative_trapezoid(step, &sum_h);
            let counts = total_count_path(&trains, &grid);
            let nf = n as f64;
            let sup_average = counts
                .iter()
                .zip(&comp)
                .map(|(z, c)| ((z - c) / nf).abs())
                .fold(0.0, f64::max);
            let last = grid.intervals();
            Ok(CompensatedReplicate {
                sup_average,
                own: (counts[last] - comp[last]) / nf.sqrt(),
                mean_field: (counts[last] - nf * integrated) / nf.sqrt(),
            })
        })?;
        per_n.push(reps);
    }

    let groups: Vec<_> = ns.iter().map(|&n| (label_n(n), n as u64)).collect();
    let mut seeds = manifest(run, &groups);
    let limit = if h.has_derivative() {
        seeds.limit = Some(run.limit_seed());
        let values = sample_terminal_values(
            &mf,
            &model.kernel,
            h,
            model.p,
            model.q,
            0,
            run.limit_samples,
            run.limit_seed(),
        )?;
        let drift: Vec<f64> = values.iter().map(|v| v.drift_integral).collect();
        Some(variance_estimate(&drift))
    } else {
        None
    };

    let mut report = ExperimentReport::new(
        "compensated",
        json!({ "model": model, "run": run, "ns": ns }),
        seeds,
    );
    let mut sup_table = Table::new("sup_average", &["median", "mean"]);
    let mut columns = vec!["mean_own", "var_own", "mean_mf", "var_mf"];
    if limit.is_some() {
        columns.push("predicted_var_mf");
    }
    let mut terminal = Table::new("terminal", &columns);
    for (&n, reps) in ns.iter().zip(&per_n) {
        let sups: Vec<f64> = reps.iter().map(|r| r.sup_average).collect();
        sup_table.push(label_n(n), vec![median_estimate(&sups), mean_estimate(&sups).into()]);
        let own: Vec<f64> = reps.iter().map(|r| r.own).collect();
        let mfs: Vec<f64> = reps.iter().map(|r| r.mean_field).collect();
        let mut cells: Vec<Cell> = vec![
            mean_estimate(&own).into(),
            variance_estimate(&own).into(),
            mean_estimate(&mfs).into(),
            variance_estimate(&mfs).into(),
        ];
        if let Some(var_drift) = limit {
            // Var(A + B) with the limit law of the drift part A, Var B = ∫h(I),
            // and the A-B coupling read off the same finite-N paths.
            let drift: Vec<f64> = mfs.iter().zip(&own).map(|(c, b)| c - b).collect();
            let c = CovarianceEstimate::from_columns(&[drift, own.clone()]);
            let cross = c.entry(0, 1);
            cells.push(Cell {
                value: var_drift.value + integrated + 2.0 * cross.value,
                se: stats::pooled_se(&[var_drift.se, 2.0 * cross.se]),
                n: cross.n,
            });
        }
        terminal.push(label_n(n), cells);
    }
    let mut limit_row = vec![Cell::exact(0.0), Cell::exact(integrated), Cell::exact(0.0), Cell::exact(f64::NAN)];
    if let Some(var_drift) = limit {
        limit_row.push(Cell::exact(f64::NAN));
        let mut drift = Table::new("limit_drift", &["variance"]);
        drift.push("drift_integral", vec![var_drift.into()]);
        report.tables.push(drift);
    }
    terminal.push("limit", limit_row);
    report.tables.push(sup_table);
    report.tables.push(terminal);

    let largest = label_n(ns[ns.len() - 1]);
    if ns.len() >= 2 {
        report.criterion(
            "average_vanishes",
            "median sup of the averaged compensated counts lower at the largest N than at the smallest",
            Check::Less {
                a: CellRef::new("sup_average", largest.clone(), "median"),
                b: CellRef::new("sup_average", label_n(ns[0]), "median"),
            },
        );
    }
    let at = |c: &str| CellRef::new("terminal", largest.clone(), c);
    report.criterion(
        "rescaled_mean",
        "rescaled compensated sum has mean within 3 SE of 0",
        Check::WithinSe { a: at("mean_own"), b: Operand::Const(0.0), k: 3.0 },
    );
    report.criterion(
        "rescaled_variance",
        "rescaled compensated sum has variance within 3 SE of the integrated rate",
        Check::WithinSe {
            a: at("var_own"),
            b: Operand::Cell(CellRef::new("terminal", "limit", "var_own")),
            k: 3.0,
        },
    );
    if limit.is_some() {
        report.criterion(
            "drift_corrected_mean",
            "sum compensated by the mean field has mean within 3 SE of 0",
            Check::WithinSe { a: at("mean_mf"), b: Operand::Const(0.0), k: 3.0 },
        );
        report.criterion(
            "drift_corrected_variance",
            "sum compensated by the mean field has variance within 4 pooled SE of the coupled limit",
            Check::WithinSe {
                a: at("var_mf"),
                b: Operand::Cell(at("predicted_var_mf")),
                k: 4.0,
            },
        );
    }
    Ok(report.finalize())
}

/// Network used by the critical experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkChoice {
    /// A fresh Erdős–Rényi graph per replicate.
    #[default]
    Random,
    /// One complementary network, fixed across replicates.
    Complementary,
}

struct CriticalReplicate {
    slope_tilde00: f64,
    /// Time average of the mean rate `(1/N) Σ_j h(I^{N,j})`.
    mean_rate: f64,
    slope_tilde01: f64,
    slope_common: f64,
    increments: [Vec<f64>; 2],
    drift: [Vec<f64>; 2],
    series: Vec<Series>,
}

/// Critical case `p = ½` with `1/√N` scaling: covariation structure of the
/// compensated martingales and the drift at vertices 0 and 1.
pub fn critical_experiment(
    model: &ModelSpec,
    n: usize,
    run: &RunSpec,
    network: NetworkChoice,
) -> Result<ExperimentReport> {
    model.validate()?;
    if model.p != 0.5 {
        return Err(Error::WrongRegime(format!(
            "the critical experiment needs p = 1/2, got p = {}",
            model.p
        )));
    }
    if n < 2 {
        return Err(Error::param("n", "the critical experiment tracks vertices 0 and 1"));
    }
    if network == NetworkChoice::Complementary && model.q != 0.5 {
        return Err(Error::param("q", "the complementary network has q = 1/2"));
    }
    let grid = run.grid()?;
    let horizon = grid.horizon();
    let step = grid.step();
    let last = grid.intervals();
    let h = &model.transfer;
    let q = model.q;
    let fixed_seed = derive_seed(run.master_seed, FIXED_NETWORK_INDEX);
    let fixed = match network {
        NetworkChoice::Complementary => Some(build_complementary_network(n, fixed_seed)?),
        NetworkChoice::Random => None,
    };

    let reps = parallel(run.replicates, |r| {
        let (net_seed, sim_seed) = run.seeds(n as u64, r);
        let sampled;
        let net: &NetworkConfiguration = match &fixed {
            Some(net) => net,
            None => {
                sampled = sample_network(n, 0.5, q, net_seed)?;
                &sampled
            }
        };
        let cfg = run.sim_config(Scaling::Critical, sim_seed)?.with_full_recording();
        let out = simulate(run.backend, net, &model.kernel, h, &cfg)?;
        let paths = extract_martingale_paths(&out.trains, &out.recording, net, h, &[0, 1])?;
        for k in 0..2 {
            for m in 0..grid.len() {
                let lhs = paths.full[k][m];
                let rhs = paths.tilde[k][m] + q * paths.common[m];
                if (lhs - rhs).abs() > 1e-9 * (1.0 + lhs.abs()) {
                    return Err(Error::Contract(format!(
                        "martingale decomposition violated at vertex {k}, step {m}"
                    )));
                }
            }
        }
        let w0 = tilde_weights(net, 0);
        let w1 = tilde_weights(net, 1);
        let emp00 = jump_covariation(&out.trains, &grid, &w0, &w0);
        let emp01 = jump_covariation(&out.trains, &grid, &w0, &w1);
        let scale = 1.0 / (n as f64).sqrt();
        let wu: Vec<f64> = (0..n).map(|j| scale * net.sign(j)).collect();
        let emp_common = jump_covariation(&out.trains, &grid, &wu, &wu);

        // Approximants of the predictable covariation of M̃⁰.
        let full = out.recording.full.as_ref().expect("full recording requested");
        let sq: Vec<f64> = (0..n)
            .map(|j| {
                let d = net.adjacency().indicator(j, 0) - q;
                d * d / n as f64
            })
            .collect();
        let mut weighted_h = vec![0.0; grid.len()];
        for (j, path) in full.iter().enumerate() {
            if sq[j] != 0.0 {
                for (w, &s) in weighted_h.iter_mut().zip(path) {
                    *w += sq[j] * h.eval(s);
                }
            }
        }
        let individual = cumulative_trapezoid(step, &weighted_h);
        let mean_h_int = cumulative_trapezoid(step, &paths.mean_h);
        let sq_sum: f64 = sq.iter().sum();
        let averaged: Vec<f64> = mean_h_int.iter().map(|x| sq_sum * x).collect();
        let limit: Vec<f64> = mean_h_int.iter().map(|x| q * (1.0 - q) * x).collect();

        let increments = [0, 1].map(|k| paths.tilde[k].windows(2).map(|w| w[1] - w[0]).collect());
        let rep = Some(r);
        let series = vec![
            series("covariation_empirical_00", rep, &grid, &emp00),
            series("covariation_individual_rates_00", rep, &grid, &individual),
            series("covariation_mean_rate_00", rep, &grid, &averaged),
            series("covariation_limit_00", rep, &grid, &limit),
            series("drift_0", rep, &grid, &paths.drift[0]),
            series("drift_1", rep, &grid, &paths.drift[1]),
            series("martingale_0", rep, &grid, &paths.full[0]),
            series("martingale_1", rep, &grid, &paths.full[1]),
        ];
        Ok(CriticalReplicate {
            slope_tilde00: emp00[last] / horizon,
            mean_rate: mean_h_int[last] / horizon,
            slope_tilde01: emp01[last] / horizon,
            slope_common: q * q * emp_common[last] / horizon,
            increments,
            drift: [paths.drift[0].clone(), paths.drift[1].clone()],
            series,
        })
    })?;

    let mut seeds = manifest(run, &[(label_n(n), n as u64)]);
    if fixed.is_some() {
        for s in &mut seeds.replicates {
            s.network = fixed_seed;
        }
    }
    let mut report = ExperimentReport::new(
        "critical",
        json!({ "model": model, "run": run, "n": n, "network": network }),
        seeds,
    );

    let col = |f: &dyn Fn(&CriticalReplicate) -> f64| -> Cell {
        mean_estimate(&reps.iter().map(f).collect::<Vec<_>>()).into()
    };
    let mut slopes = Table::new("slopes", &["value"]);
    slopes.push("empirical_tilde00", vec![col(&|r| r.slope_tilde00)]);
    slopes.push("predicted_tilde00", vec![col(&|r| q * (1.0 - q) * r.mean_rate)]);
    slopes.push("empirical_tilde01", vec![col(&|r| r.slope_tilde01)]);
    slopes.push("empirical_common", vec![col(&|r| r.slope_common)]);
    slopes.push(
        "predicted_common",
        vec![col(&|r| q * q * r.mean_rate)],
    );
    report.tables.push(slopes);
    report.criterion(
        "tilde00_slope",
        "time-averaged slope of [M̃⁰, M̃⁰] within 10% of q(1-q) times the time-averaged mean rate",
        Check::RelativeWithin {
            a: CellRef::new("slopes", "empirical_tilde00", "value"),
            b: CellRef::new("slopes", "predicted_tilde00", "value"),
            rel: 0.1,
        },
    );

    // Pooled increment correlation of (M̃⁰, M̃¹).
    let inc0: Vec<f64> = reps.iter().flat_map(|r| r.increments[0].iter().copied()).collect();
    let inc1: Vec<f64> = reps.iter().flat_map(|r| r.increments[1].iter().copied()).collect();
    let corr = correlation(&inc0, &inc1);
    let z = fisher_z(corr, inc0.len());
    let mut incr = Table::new("increments", &["correlation", "fisher_z"]);
    incr.push(
        "tilde0_tilde1",
        vec![
            Cell { value: corr, se: 1.0 / (inc0.len() as f64 - 3.0).max(1.0).sqrt(), n: reps.len() },
            Cell { value: z, se: 1.0, n: reps.len() },
        ],
    );
    report.tables.push(incr);

    // Drift discrepancy between vertices 0 and 1 across replicates, measured
    // against the pooled SE of the two replicate bands.
    let r_count = reps.len();
    let mut best = (0usize, Cell::exact(0.0), 0.0f64, 0.0f64);
    let mut mean_drift = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for m in 0..grid.len() {
        let d0: Vec<f64> = reps.iter().map(|r| r.drift[0][m]).collect();
        let d1: Vec<f64> = reps.iter().map(|r| r.drift[1][m]).collect();
        let (e0, e1) = (mean_estimate(&d0), mean_estimate(&d1));
        let band = stats::pooled_se(&[e0.se, e1.se]);
        let diff: Vec<f64> = d0.iter().zip(&d1).map(|(a, b)| a - b).collect();
        let paired = mean_estimate(&diff).se;
        mean_drift[0][m] = e0.value;
        mean_drift[1][m] = e1.value;
        let gap = (e0.value - e1.value).abs();
        let score = if band > 0.0 { gap / band } else { 0.0 };
        if m == 0 || score > best.2 {
            best = (m, Cell { value: gap, se: band, n: r_count }, score, paired);
        }
    }
    let mut drift = Table::new("drift_gap", &["gap", "paired_se", "time"]);
    drift.push(
        "vertex0_minus_vertex1",
        vec![best.1, Cell::exact(best.3), Cell::exact(grid.time(best.0))],
    );
    report.tables.push(drift);

    match network {
        NetworkChoice::Random => report.criterion(
            "tilde01_slope_zero",
            "slope of the cross covariation [M̃⁰, M̃¹] within 3 SE of 0",
            Check::WithinSe {
                a: CellRef::new("slopes", "empirical_tilde01", "value"),
                b: Operand::Const(0.0),
                k: 3.0,
            },
        ),
        NetworkChoice::Complementary => {
            report.criterion(
                "increments_negatively_correlated",
                "increments of (M̃⁰, M̃¹) negatively correlated at the 1% level",
                Check::Below {
                    a: CellRef::new("increments", "tilde0_tilde1", "fisher_z"),
                    bound: normal_quantile(0.01),
                },
            );
            report.criterion(
                "drift_paths_differ",
                "drift paths at vertices 0 and 1 differ by more than 3 SE of their replicate bands at some grid time",
                Check::PositiveBySe {
                    a: CellRef::new("drift_gap", "vertex0_minus_vertex1", "gap"),
                    k: 3.0,
                },
            );
        }
    }

    for rep in reps {
        report.series.extend(rep.series);
    }
    report.series.push(series("drift_0_mean", None, &grid, &mean_drift[0]));
    report.series.push(series("drift_1_mean", None, &grid, &mean_drift[1]));
    Ok(report.finalize())
}

/// Asymptotic independence of the counting processes at finitely many vertices.
pub fn independence_experiment(
    model: &ModelSpec,
    ns: &[usize],
    vertices: usize,
    run: &RunSpec,
) -> Result<ExperimentReport> {
    model.validate()?;
    model.require_mean_field_regime()?;
    check_ns(ns)?;
    if vertices < 2 || ns.iter().any(|&n| vertices > n) {
        return Err(Error::param("vertices", "need 2 <= vertices <= N"));
    }
    let grid = run.grid()?;
    let mf = model.mean_field(grid)?;
    let expected_mean = mf.integrated_rate(&model.transfer);
    let horizon = grid.horizon();

    let mut per_n = Vec::with_capacity(ns.len());
    for &n in ns {
        let counts = parallel(run.replicates, |r| {
            let (net_seed, sim_seed) = run.seeds(n as u64, r);
            let net = sample_network(n, model.p, model.q, net_seed)?;
            let cfg = run.sim_config(Scaling::MeanField, sim_seed)?;
            let mut ignore = |_: usize, _: f64, _: &[f64]| {};
            let (trains, _) =
                simulate_observed(run.backend, &net, &model.kernel, &model.transfer, &cfg, &mut ignore)?;
            Ok((0..vertices)
                .map(|i| trains.count_before(i, horizon) as f64)
                .collect::<Vec<_>>())
        })?;
        per_n.push(counts);
    }

    let groups: Vec<_> = ns.iter().map(|&n| (label_n(n), n as u64)).collect();
    let mut report = ExperimentReport::new(
        "independence",
        json!({ "model": model, "run": run, "ns": ns, "vertices": vertices }),
        manifest(run, &groups),
    );
    let mut pairs = Table::new("pairwise", &["median_abs_corr", "max_abs_z"]);
    let mut marginal = Table::new("marginal", &["mean_count", "expected_mean", "chi2_p_value", "chi2_dof"]);
    for (&n, counts) in ns.iter().zip(&per_n) {
        let r = counts.len();
        let mut abs_corr = Vec::new();
        let mut max_z: f64 = 0.0;
        for a in 0..vertices {
            for b in (a + 1)..vertices {
                let xa: Vec<f64> = counts.iter().map(|c| c[a]).collect();
                let xb: Vec<f64> = counts.iter().map(|c| c[b]).collect();
                let c = correlation(&xa, &xb);
                let c = if c.is_finite() { c } else { 0.0 };
                abs_corr.push(c.abs());
                max_z = max_z.max(c.abs() * ((r as f64) - 1.0).sqrt());
            }
        }
        pairs.push(
            label_n(n),
            vec![
                Cell { value: median(&abs_corr), se: f64::NAN, n: r },
                Cell { value: max_z, se: 1.0, n: r },
            ],
        );
        let pooled: Vec<f64> = counts.iter().flatten().copied().collect();
        let (p_value, dof) = poisson_fit(&pooled, expected_mean);
        marginal.push(
            label_n(n),
            vec![
                mean_estimate(&pooled).into(),
                Cell::exact(expected_mean),
                Cell { value: p_value, se: f64::NAN, n: r },
                Cell::exact(dof as f64),
            ],
        );
    }
    report.tables.push(pairs);
    report.tables.push(marginal);

    let largest = label_n(ns[ns.len() - 1]);
    report.criterion(
        "pairwise_uncorrelated",
        "every pairwise count correlation within 3 SE of 0 at the largest N",
        Check::Below { a: CellRef::new("pairwise", largest.clone(), "max_abs_z"), bound: 3.0 },
    );
    report.criterion(
        "marginal_mean",
        "mean count at T within 3 SE of the integrated mean-field rate",
        Check::WithinSe {
            a: CellRef::new("marginal", largest.clone(), "mean_count"),
            b: Operand::Cell(CellRef::new("marginal", largest.clone(), "expected_mean")),
            k: 3.0,
        },
    );
    report.criterion(
        "marginal_poisson",
        "binned counts consistent with the Poisson law of the integrated rate (chi-square p > 0.01)",
        Check::Above { a: CellRef::new("marginal", largest, "chi2_p_value"), bound: 0.01 },
    );
    Ok(report.finalize())
}

/// Chi-square fit of counts to Poisson(`mean`), merging bins with expected
/// frequency below 5. Returns `(p-value, dof)`.
fn poisson_fit(counts: &[f64], mean: f64) -> (f64, usize) {
    let total = counts.len() as f64;
    let kmax = counts.iter().fold(0.0, |m: f64, &c| m.max(c)) as usize + 1;
    let kmax = kmax.max((mean + 10.0 * mean.sqrt()) as usize + 1);
    let pmf = stats::poisson_pmf(mean, kmax);
    let mut observed = Vec::new();
    let mut expected = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for k in 0..=kmax {
        o_acc += counts.iter().filter(|&&c| c as usize == k).count() as f64;
        e_acc += if k == kmax {
            total * (1.0 - pmf[..kmax].iter().sum::<f64>()).max(0.0) + total * pmf[kmax]
        } else {
            total * pmf[k]
        };
        if e_acc >= 5.0 {
            observed.push(o_acc);
            expected.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let (Some(o), Some(e)) = (observed.last_mut(), expected.last_mut()) {
        *o += o_acc;
        *e += e_acc;
    } else {
        return (1.0, 0);
    }
    let (_, dof, p) = stats::chi_square_gof(&observed, &expected, 0);
    (p, dof)
}

/// Thinning against time change: pooled per-vertex mean counts at T.
pub fn backend_comparison(model: &ModelSpec, n: usize, run: &RunSpec) -> Result<ExperimentReport> {
    model.validate()?;
    check_ns(&[n])?;
    let scaling = if model.p == 0.5 { Scaling::Critical } else { Scaling::MeanField };
    let per_backend = [Backend::Thinning, Backend::TimeChange].map(|backend| {
        parallel(run.replicates, |r| {
            let (net_seed, sim_seed) = run.seeds(n as u64, r);
            let net = sample_network(n, model.p, model.q, net_seed)?;
            let cfg = run.sim_config(scaling, sim_seed)?;
            let mut ignore = |_: usize, _: f64, _: &[f64]| {};
            let (trains, _) =
                simulate_observed(backend, &net, &model.kernel, &model.transfer, &cfg, &mut ignore)?;
            Ok(trains.total_events() as f64 / n as f64)
        })
    });
    let [thinning, time_change] = per_backend;
    let (thinning, time_change) = (thinning?, time_change?);
    let mut report = ExperimentReport::new(
        "backends",
        json!({ "model": model, "run": run, "n": n }),
        manifest(run, &[(label_n(n), n as u64)]),
    );
    let mut table = Table::new("mean_count", &["per_vertex"]);
    table.push("thinning", vec![mean_estimate(&thinning).into()]);
    table.push("time_change", vec![mean_estimate(&time_change).into()]);
    report.tables.push(table);
    report.criterion(
        "backends_agree",
        "pooled per-vertex mean counts agree within 3 pooled SE",
        Check::WithinSe {
            a: CellRef::new("mean_count", "thinning", "per_vertex"),
            b: Operand::Cell(CellRef::new("mean_count", "time_change", "per_vertex")),
            k: 3.0,
        },
    );
    Ok(report.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Status;

    fn arctan_model(p: f64, q: f64) -> ModelSpec {
        ModelSpec {
            p,
            q,
            kernel: Kernel::exponential(1.0).unwrap(),
            transfer: TransferFunction::arctan(),
        }
    }

    fn small_run(replicates: usize) -> RunSpec {
        RunSpec {
            horizon: 2.0,
            intervals: 128,
            replicates,
            master_seed: 17,
            backend: Backend::Thinning,
            limit_samples: 400,
        }
    }

    #[test]
    fn critical_p_is_rejected_by_mean_field_experiments() {
        let model = arctan_model(0.5, 0.5);
        let run = small_run(2);
        assert!(matches!(lln_experiment(&model, &[10], &run), Err(Error::WrongRegime(_))));
        assert!(matches!(clt_experiment(&model, 10, 2, &run), Err(Error::WrongRegime(_))));
        assert!(matches!(compensated_experiment(&model, &[10], &run), Err(Error::WrongRegime(_))));
        assert!(matches!(
            independence_experiment(&model, &[10], 2, &run),
            Err(Error::WrongRegime(_))
        ));
        assert!(matches!(
            critical_experiment(&arctan_model(0.8, 0.5), 10, &run, NetworkChoice::Random),
            Err(Error::WrongRegime(_))
        ));
    }

    #[test]
    fn empty_graph_has_zero_sup_error() {
        let report = lln_experiment(&arctan_model(0.8, 0.0), &[20, 40], &small_run(3)).unwrap();
        let t = report.table("sup_error").unwrap();
        for row in &t.rows {
            assert_eq!(row.cells[0].value, 0.0);
        }
    }

    #[test]
    fn verdicts_need_twenty_replicates() {
        let report = lln_experiment(&arctan_model(0.8, 0.5), &[20, 80], &small_run(5)).unwrap();
        assert!(report
            .verdicts
            .iter()
            .all(|v| v.status == Status::Insufficient));
        assert!(report.is_consistent());
    }

    #[test]
    fn complete_graph_fluctuations_coincide() {
        let report = clt_experiment(&arctan_model(0.8, 1.0), 30, 2, &small_run(4)).unwrap();
        let var = report.table("terminal_moments").unwrap().cell("finite_n", "var_k1_minus_kbar").unwrap();
        assert_eq!(var.value, 0.0);
    }

    #[test]
    fn constant_rate_rescaled_sum_variance_is_exact_in_expectation() {
        let model = ModelSpec {
            p: 0.8,
            q: 0.5,
            kernel: Kernel::exponential(1.0).unwrap(),
            transfer: TransferFunction::constant(1.5).unwrap(),
        };
        let report = compensated_experiment(&model, &[50], &small_run(40)).unwrap();
        let limit = report.table("terminal").unwrap().cell("limit", "var_own").unwrap();
        assert!((limit.value - 3.0).abs() < 1e-12);
        let v = report.verdict("rescaled_variance").unwrap();
        assert_eq!(v.status, Status::Pass, "{}", v.detail);
    }

    #[test]
    fn complete_graph_critical_tilde_is_zero() {
        let run = RunSpec { replicates: 2, ..small_run(2) };
        let report = critical_experiment(&arctan_model(0.5, 1.0), 40, &run, NetworkChoice::Random).unwrap();
        let slope = report.table("slopes").unwrap().cell("empirical_tilde00", "value").unwrap();
        assert_eq!(slope.value, 0.0);
    }

    #[test]
    fn complementary_network_needs_half_density() {
        let err = critical_experiment(&arctan_model(0.5, 0.3), 40, &small_run(2), NetworkChoice::Complementary);
        assert!(err.is_err());
    }

    #[test]
    fn empty_graph_counts_are_independent() {
        let report = independence_experiment(&arctan_model(0.8, 0.0), &[30], 4, &small_run(30)).unwrap();
        let v = report.verdict("pairwise_uncorrelated").unwrap();
        assert_eq!(v.status, Status::Pass, "{}", v.detail);
        let v = report.verdict("marginal_mean").unwrap();
        assert_eq!(v.status, Status::Pass, "{}", v.detail);
    }

    #[test]
    fn reports_are_reproducible() {
        let model = arctan_model(0.8, 0.5);
        let a = lln_experiment(&model, &[20], &small_run(3)).unwrap();
        let b = lln_experiment(&model, &[20], &small_run(3)).unwrap();
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.seeds, b.seeds);
    }
}
