//! Finite-N simulation of the non-linear Hawkes process.
//!
//! The input to vertex `i` is
//! `S_i(t) = θ_N Σ_j U_j V_{ji} Σ_{u ∈ Z^j, u < t} φ(t − u)` and vertex `i`
//! fires with intensity `h(S_i(t−))`. Two exact backends are provided:
//!
//! - [`simulate_thinning`]: one global Poisson stream of rate `N‖h‖`, each
//!   candidate assigned to a uniform vertex and accepted with probability
//!   `h(S_i)/‖h‖`.
//! - [`simulate_time_change`]: every vertex runs its own rate-`‖h‖` clock
//!   marked with acceptance uniforms, which realises the time-changed unit
//!   Poisson processes `Y_i` vertex by vertex.
//!
//! Exponential kernels use an O(1)-per-target update of the input; other
//! kernels recompute inputs from a truncated event history.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::grid::{cumulative_trapezoid, TimeGrid};
use crate::kernels::{Kernel, TransferFunction};
use crate::network::NetworkConfiguration;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Interaction scaling `θ_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `θ_N = 1/N`.
    MeanField,
    /// `θ_N = 1/√N`.
    Critical,
}

impl Scaling {
    pub fn theta(self, n: usize) -> f64 {
        match self {
            Scaling::MeanField => 1.0 / n as f64,
            Scaling::Critical => 1.0 / (n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Thinning,
    #[serde(rename = "timechange")]
    TimeChange,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thinning" => Ok(Backend::Thinning),
            "timechange" | "time_change" => Ok(Backend::TimeChange),
            other => Err(Error::param("backend", format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub grid: TimeGrid,
    pub scaling: Scaling,
    /// Vertices whose input paths are recorded on the grid.
    pub tracked: Vec<usize>,
    /// Record the input of every vertex (needed for compensators).
    pub record_full: bool,
    pub seed: u64,
    /// Events whose kernel weight fell below `tol · ‖φ‖` are dropped from
    /// the history of non-exponential kernels.
    pub history_tolerance: f64,
    /// Use history recomputation even for exponential kernels.
    pub force_history: bool,
}

impl SimulationConfig {
    /// Horizon `T` with the default grid `T/2048`.
    pub fn new(horizon: f64, scaling: Scaling, seed: u64) -> Result<Self> {
        Ok(SimulationConfig {
            grid: TimeGrid::default_for(horizon)?,
            scaling,
            tracked: Vec::new(),
            record_full: false,
            seed,
            history_tolerance: 1e-12,
            force_history: false,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn with_tracked(mut self, tracked: Vec<usize>) -> Self {
        self.tracked = tracked;
        self
    }

    pub fn with_full_recording(mut self) -> Self {
        self.record_full = true;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if let Some(&bad) = self.tracked.iter().find(|&&i| i >= n) {
            return Err(Error::param("tracked", format!("vertex {bad} >= N = {n}")));
        }
        if !(self.history_tolerance > 0.0 && self.history_tolerance < 1.0) {
            return Err(Error::param("history_tolerance", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Per-vertex event times, strictly increasing within each vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrains {
    trains: Vec<Vec<f64>>,
}

impl SpikeTrains {
    pub fn new(trains: Vec<Vec<f64>>) -> Result<Self> {
        if trains
            .iter()
            .any(|tr| tr.windows(2).any(|w| w[0] >= w[1]))
        {
            return Err(Error::UnsortedEvents);
        }
        Ok(SpikeTrains { trains })
    }

    pub fn n_vertices(&self) -> usize {
        self.trains.len()
    }

    pub fn train(&self, i: usize) -> &[f64] {
        &self.trains[i]
    }

    pub fn trains(&self) -> &[Vec<f64>] {
        &self.trains
    }

    pub fn total_events(&self) -> usize {
        self.trains.iter().map(Vec::len).sum()
    }

    /// Number of events of vertex `i` strictly before `t`.
    pub fn count_before(&self, i: usize, t: f64) -> usize {
        self.trains[i].partition_point(|&s| s < t)
    }

    /// All events as `(t, vertex)` sorted by time.
    pub fn merged(&self) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = self
            .trains
            .iter()
            .enumerate()
            .flat_map(|(i, tr)| tr.iter().map(move |&t| (t, i)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    /// `Z^i_{t_m−}` on every grid point.
    pub fn count_path(&self, i: usize, grid: &TimeGrid) -> Vec<f64> {
        let train = &self.trains[i];
        let mut out = Vec::with_capacity(grid.len());
        let mut k = 0;
        for m in 0..grid.len() {
            let t = grid.time(m);
            while k < train.len() && train[k] < t {
                k += 1;
            }
            out.push(k as f64);
        }
        out
    }
}

/// Called at every grid time with the inputs `S_i(t_m−)` of all vertices.
pub trait GridObserver {
    fn observe(&mut self, m: usize, t: f64, inputs: &[f64]);
}

impl<F: FnMut(usize, f64, &[f64])> GridObserver for F {
    fn observe(&mut self, m: usize, t: f64, inputs: &[f64]) {
        self(m, t, inputs)
    }
}

/// Input paths sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub grid: TimeGrid,
    pub tracked: Vec<usize>,
    /// `tracked_paths[k][m] = S_{tracked[k]}(t_m)`.
    pub tracked_paths: Vec<Vec<f64>>,
    /// `full[i][m] = S_i(t_m)` when full recording was requested.
    pub full: Option<Vec<Vec<f64>>>,
}

impl Recording {
    fn new(grid: TimeGrid, tracked: Vec<usize>, n: usize, full: bool) -> Self {
        Recording {
            grid,
            tracked_paths: vec![Vec::with_capacity(grid.len()); tracked.len()],
            tracked,
            full: full.then(|| vec![Vec::with_capacity(grid.len()); n]),
        }
    }

    pub fn path(&self, vertex: usize) -> Option<&[f64]> {
        if let Some(k) = self.tracked.iter().position(|&i| i == vertex) {
            return Some(&self.tracked_paths[k]);
        }
        self.full.as_ref().map(|f| f[vertex].as_slice())
    }
}

impl GridObserver for Recording {
    fn observe(&mut self, _m: usize, _t: f64, inputs: &[f64]) {
        for (path, &i) in self.tracked_paths.iter_mut().zip(&self.tracked) {
            path.push(inputs[i]);
        }
        if let Some(full) = &mut self.full {
            for (path, &s) in full.iter_mut().zip(inputs) {
                path.push(s);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub candidates: u64,
    pub accepted: u64,
    /// Candidates whose time had to be nudged by one ulp to stay distinct.
    pub tie_incidents: u64,
    /// Largest observed `h(S_i)/‖h‖`.
    pub max_acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub trains: SpikeTrains,
    pub recording: Recording,
    pub diagnostics: Diagnostics,
}

/// Exact exponential-kernel input: `S_i(t) = acc_i · e^{−λ(t − t_ref)}`.
struct ExponentialInputs<'a> {
    net: &'a NetworkConfiguration,
    theta: f64,
    lambda: f64,
    reference: f64,
    acc: Vec<f64>,
}

impl ExponentialInputs<'_> {
    const REBASE: f64 = 1e12;

    fn rebase(&mut self, t: f64) {
        let factor = (-self.lambda * (t - self.reference)).exp();
        for a in &mut self.acc {
            *a *= factor;
        }
        self.reference = t;
    }
}

struct HistoryInputs<'a> {
    net: &'a NetworkConfiguration,
    kernel: &'a Kernel,
    theta: f64,
    memory: f64,
    events: VecDeque<(f64, usize)>,
}

enum InputState<'a> {
    Exponential(ExponentialInputs<'a>),
    History(HistoryInputs<'a>),
}

impl<'a> InputState<'a> {
    fn new(net: &'a NetworkConfiguration, kernel: &'a Kernel, cfg: &SimulationConfig) -> Self {
        let theta = cfg.scaling.theta(net.n());
        match kernel.decay_rate() {
            Some(lambda) if !cfg.force_history => InputState::Exponential(ExponentialInputs {
                net,
                theta,
                lambda,
                reference: 0.0,
                acc: vec![0.0; net.n()],
            }),
            _ => InputState::History(HistoryInputs {
                net,
                kernel,
                theta,
                memory: kernel.memory_horizon(cfg.history_tolerance).min(kernel.max_time()),
                events: VecDeque::new(),
            }),
        }
    }

    fn value(&self, i: usize, t: f64) -> f64 {
        match self {
            InputState::Exponential(s) => s.acc[i] * (-s.lambda * (t - s.reference)).exp(),
            InputState::History(s) => {
                let adj = s.net.adjacency();
                let mut total = 0.0;
                for &(u, j) in &s.events {
                    let age = t - u;
                    if age <= 0.0 || age > s.memory || !adj.get(j, i) {
                        continue;
                    }
                    total += s.net.sign(j) * s.kernel.eval(age).unwrap_or(0.0);
                }
                s.theta * total
            }
        }
    }

    fn snapshot(&self, t: f64, out: &mut [f64]) {
        match self {
            InputState::Exponential(s) => {
                let factor = (-s.lambda * (t - s.reference)).exp();
                for (o, a) in out.iter_mut().zip(&s.acc) {
                    *o = a * factor;
                }
            }
            InputState::History(s) => {
                out.fill(0.0);
                let adj = s.net.adjacency();
                for &(u, j) in &s.events {
                    let age = t - u;
                    if age <= 0.0 || age > s.memory {
                        continue;
                    }
                    let w = s.theta * s.net.sign(j) * s.kernel.eval(age).unwrap_or(0.0);
                    for i in adj.targets(j) {
                        out[i] += w;
                    }
                }
            }
        }
    }

    fn add_event(&mut self, j: usize, t: f64) {
        match self {
            InputState::Exponential(s) => {
                let mut growth = (s.lambda * (t - s.reference)).exp();
                if growth > ExponentialInputs::REBASE {
                    s.rebase(t);
                    growth = 1.0;
                }
                let w = s.theta * s.net.sign(j) * growth;
                for i in s.net.adjacency().targets(j) {
                    s.acc[i] += w;
                }
            }
            InputState::History(s) => {
                while let Some(&(u, _)) = s.events.front() {
                    if t - u > s.memory {
                        s.events.pop_front();
                    } else {
                        break;
                    }
                }
                s.events.push_back((t, j));
            }
        }
    }
}

/// Shared event loop bookkeeping: grid flushing and event storage.
struct Run<'a, O> {
    state: InputState<'a>,
    grid: TimeGrid,
    next_grid: usize,
    buffer: Vec<f64>,
    observer: &'a mut O,
    trains: Vec<Vec<f64>>,
    diagnostics: Diagnostics,
    last_time: f64,
    h_sup: f64,
}

impl<'a, O: GridObserver> Run<'a, O> {
    fn new(
        net: &'a NetworkConfiguration,
        kernel: &'a Kernel,
        h: &TransferFunction,
        cfg: &SimulationConfig,
        observer: &'a mut O,
    ) -> Self {
        Run {
            state: InputState::new(net, kernel, cfg),
            grid: cfg.grid,
            next_grid: 0,
            buffer: vec![0.0; net.n()],
            observer,
            trains: vec![Vec::new(); net.n()],
            diagnostics: Diagnostics::default(),
            last_time: f64::NEG_INFINITY,
            h_sup: h.sup_norm(),
        }
    }

    /// Reports every grid point `t_m <= t` using the pre-event state.
    fn flush_until(&mut self, t: f64) {
        while self.next_grid < self.grid.len() && self.grid.time(self.next_grid) <= t {
            let tm = self.grid.time(self.next_grid);
            self.state.snapshot(tm, &mut self.buffer);
            self.observer.observe(self.next_grid, tm, &self.buffer);
            self.next_grid += 1;
        }
    }

    /// Keeps candidate times strictly increasing across the whole system.
    fn distinct_time(&mut self, t: f64) -> f64 {
        if t <= self.last_time {
            self.diagnostics.tie_incidents += 1;
            self.last_time.next_up()
        } else {
            t
        }
    }

    /// Evaluates the acceptance ratio of vertex `i` at candidate time `t`.
    fn acceptance(&mut self, h: &TransferFunction, i: usize, t: f64) -> Result<f64> {
        let ratio = h.eval(self.state.value(i, t)) / self.h_sup;
        if !(0.0..=1.0 + 1e-12).contains(&ratio) {
            return Err(Error::Contract(format!(
                "acceptance probability {ratio} outside [0, 1] at t = {t}"
            )));
        }
        self.diagnostics.candidates += 1;
        self.diagnostics.max_acceptance = self.diagnostics.max_acceptance.max(ratio);
        Ok(ratio)
    }

    fn accept(&mut self, i: usize, t: f64) {
        self.trains[i].push(t);
        self.state.add_event(i, t);
        self.diagnostics.accepted += 1;
    }

    fn finish(mut self) -> Result<(SpikeTrains, Diagnostics)> {
        self.flush_until(self.grid.horizon());
        Ok((SpikeTrains::new(self.trains)?, self.diagnostics))
    }
}

fn check_inputs(net: &NetworkConfiguration, kernel: &Kernel, h: &TransferFunction, cfg: &SimulationConfig) -> Result<()> {
    cfg.validate(net.n())?;
    kernel.validate()?;
    h.validate()?;
    if !h.sup_norm().is_finite() {
        return Err(Error::UnsupportedTransfer(format!(
            "{} has no finite bound for the thinning envelope",
            h.label()
        )));
    }
    Ok(())
}

/// Global thinning with envelope `Λ = N‖h‖`, reporting grid inputs to `observer`.
pub fn simulate_thinning_observed<O: GridObserver>(
    net: &NetworkConfiguration,
    kernel: &Kernel,
    h: &TransferFunction,
    cfg: &SimulationConfig,
    observer: &mut O,
) -> Result<(SpikeTrains, Diagnostics)> {
    check_inputs(net, kernel, h, cfg)?;
    let n = net.n();
    let envelope = n as f64 * h.sup_norm();
    let horizon = cfg.horizon();
    let mut run = Run::new(net, kernel, h, cfg, observer);
    if envelope > 0.0 && horizon > 0.0 {
        let mut times = rng::stream(cfg.seed, Stream::CandidateTimes);
        let mut vertices = rng::stream(cfg.seed, Stream::VertexAssignment);
        let mut acceptance = rng::stream(cfg.seed, Stream::Acceptance);
        let gaps = Exp::new(envelope).expect("positive envelope");
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut times);
            if t > horizon {
                break;
            }
            t = run.distinct_time(t);
            run.last_time = t;
            run.flush_until(t);
            let i = vertices.random_range(0..n);
            let u: f64 = acceptance.random();
            if u < run.acceptance(h, i, t)? {
                run.accept(i, t);
            }
        }
    }
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    time: f64,
    vertex: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so that BinaryHeap pops the earliest candidate.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-change construction with per-vertex clocks, reporting grid inputs to `observer`.
pub fn simulate_time_change_observed<O: GridObserver>(
    net: &NetworkConfiguration,
    kernel: &Kernel,
    h: &TransferFunction,
    cfg: &SimulationConfig,
    observer: &mut O,
) -> Result<(SpikeTrains, Diagnostics)> {
    check_inputs(net, kernel, h, cfg)?;
    let n = net.n();
    let rate = h.sup_norm();
    let horizon = cfg.horizon();
    let mut run = Run::new(net, kernel, h, cfg, observer);
    if rate > 0.0 && horizon > 0.0 {
        let gaps = Exp::new(rate).expect("positive rate");
        let mut clocks: Vec<_> = (0..n)
            .map(|i| rng::stream(cfg.seed, Stream::VertexClock(i as u32)))
            .collect();
        let mut queue: BinaryHeap<Candidate> = clocks
            .iter_mut()
            .enumerate()
            .map(|(vertex, c)| Candidate {
                time: gaps.sample(c),
                vertex,
            })
            .collect();
        while let Some(Candidate { time, vertex }) = queue.pop() {
            if time > horizon {
                break;
            }
            let t = run.distinct_time(time);
            run.last_time = t;
            run.flush_until(t);
            let clock = &mut clocks[vertex];
            let u: f64 = clock.random();
            let next = t + gaps.sample(clock);
            if u < run.acceptance(h, vertex, t)? {
                run.accept(vertex, t);
            }
            queue.push(Candidate { time: next, vertex });
        }
    }
    run.finish()
}

fn recorded(
    net: &NetworkConfiguration,
    cfg: &SimulationConfig,
    sim: impl FnOnce(&mut Recording) -> Result<(SpikeTrains, Diagnostics)>,
) -> Result<SimulationOutput> {
    cfg.validate(net.n())?;
    let mut recording = Recording::new(cfg.grid, cfg.tracked.clone(), net.n(), cfg.record_full);
    let (trains, diagnostics) = sim(&mut recording)?;
    Ok(SimulationOutput {
        trains,
        recording,
        diagnostics,
    })
}

pub fn simulate_thinning(
    net: &NetworkConfiguration,
    kernel: &Kernel,
    h: &TransferFunction,
    cfg: &SimulationConfig,
) -> Result<SimulationOutput> {
    recorded(net, cfg, |rec| simulate_thinning_observed(net, kernel, h, cfg, rec))
}

pub fn simulate_time_change(
    net: &NetworkConfiguration,
    kernel: &Kernel,
    h: &TransferFunction,
    cfg: &SimulationConfig,
) -> Result<SimulationOutput> {
    recorded(net, cfg, |rec| simulate_time_change_observed(net, kernel, h, cfg, rec))
}

pub fn simulate(
    backend: Backend,
    net: &NetworkConfiguration,
    kernel: &Kernel,
    h: &TransferFunction,
    cfg: &SimulationConfig,
) -> Result<SimulationOutput> {
    match backend {
        Backend::Thinning => simulate_thinning(net, kernel, h, cfg),
        Backend::TimeChange => simulate_time_change(net, kernel, h, cfg),
    }
}

pub fn simulate_observed<O: GridObserver>(
    backend: Backend,
    net: &NetworkConfiguration,
    kernel: &Kernel,
    h: &TransferFunction,
    cfg: &SimulationConfig,
    observer: &mut O,
) -> Result<(SpikeTrains, Diagnostics)> {
    match backend {
        Backend::Thinning => simulate_thinning_observed(net, kernel, h, cfg, observer),
        Backend::TimeChange => simulate_time_change_observed(net, kernel, h, cfg, observer),
    }
}

/// Brute-force `S_i(t)` from the full event history (test oracle).
pub fn input_from_history(
    net: &NetworkConfiguration,
    kernel: &Kernel,
    scaling: Scaling,
    trains: &SpikeTrains,
    i: usize,
    t: f64,
) -> Result<f64> {
    let adj = net.adjacency();
    let mut total = 0.0;
    for j in 0..net.n() {
        if adj.get(j, i) {
            total += net.sign(j) * crate::kernels::convolve_jumps(kernel, t, trains.train(j))?;
        }
    }
    Ok(scaling.theta(net.n()) * total)
}

/// Compensated martingale paths on the record grid.
///
/// With `C^j_t = ∫_0^t h(S_j(s)) ds` (trapezoid on the grid) and
/// `D^j = Z^j_{t−} − C^j_t`:
///
/// - `common = N^{-1/2} Σ_j U_j D^j` (the common part M),
/// - `tilde[k] = N^{-1/2} Σ_j U_j (V_{j,k} − q) D^j`,
/// - `full[k] = N^{-1/2} Σ_j U_j V_{j,k} D^j`, so `full = tilde + q · common`,
/// - `drift[k] = N^{-1/2} Σ_j U_j V_{j,k} C^j`,
/// - `x_zero = Σ_j D^j` and `x_sign = Σ_j U_j D^j` (unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePaths {
    pub grid: TimeGrid,
    pub targets: Vec<usize>,
    /// `(1/N) Σ_j h(S_j(t_m))`.
    pub mean_h: Vec<f64>,
    pub common: Vec<f64>,
    pub tilde: Vec<Vec<f64>>,
    pub full: Vec<Vec<f64>>,
    pub drift: Vec<Vec<f64>>,
    pub x_zero: Vec<f64>,
    pub x_sign: Vec<f64>,
    /// `Σ_j Z^j_{t_m−}`.
    pub total_counts: Vec<f64>,
    /// `Σ_j C^j_{t_m}`.
    pub total_compensator: Vec<f64>,
}

pub fn extract_martingale_paths(
    trains: &SpikeTrains,
    recording: &Recording,
    net: &NetworkConfiguration,
    h: &TransferFunction,
    targets: &[usize],
) -> Result<MartingalePaths> {
    let full = recording.full.as_ref().ok_or_else(|| {
        Error::State(
            "martingale extraction needs every vertex's input path; re-run with record_full = true"
                .into(),
        )
    })?;
    let n = net.n();
    if trains.n_vertices() != n || full.len() != n {
        return Err(Error::Contract("spike trains, recording and network disagree on N".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&k| k >= n) {
        return Err(Error::param("targets", format!("vertex {bad} >= N = {n}")));
    }
    let grid = recording.grid;
    let len = grid.len();
    let step = grid.step();
    let q = net.q();
    let scale = 1.0 / (n as f64).sqrt();
    let adj = net.adjacency();

    let zeros = || vec![0.0; len];
    let mut out = MartingalePaths {
        grid,
        targets: targets.to_vec(),
        mean_h: zeros(),
        common: zeros(),
        tilde: vec![zeros(); targets.len()],
        full: vec![zeros(); targets.len()],
        drift: vec![zeros(); targets.len()],
        x_zero: zeros(),
        x_sign: zeros(),
        total_counts: zeros(),
        total_compensator: zeros(),
    };
    let mut h_path = vec![0.0; len];
    for j in 0..n {
        if full[j].len() != len {
            return Err(Error::Contract(format!("input path of vertex {j} has wrong length")));
        }
        for (hv, &s) in h_path.iter_mut().zip(&full[j]) {
            *hv = h.eval(s);
        }
        let comp = cumulative_trapezoid(step, &h_path);
        let counts = trains.count_path(j, &grid);
        let u = net.sign(j);
        for m in 0..len {
            let d = counts[m] - comp[m];
            out.mean_h[m] += h_path[m];
            out.x_zero[m] += d;
            out.x_sign[m] += u * d;
            out.total_counts[m] += counts[m];
            out.total_compensator[m] += comp[m];
        }
        for (k, &target) in targets.iter().enumerate() {
            let v = adj.indicator(j, target);
            let wt = scale * u * (v - q);
            let wf = scale * u * v;
            for m in 0..len {
                let d = counts[m] - comp[m];
                out.tilde[k][m] += wt * d;
                out.full[k][m] += wf * d;
                out.drift[k][m] += wf * comp[m];
            }
        }
    }
    for m in 0..len {
        out.mean_h[m] /= n as f64;
        out.common[m] = scale * out.x_sign[m];
    }
    Ok(out)
}

/// Pure-jump quadratic covariation `Σ_j a_j b_j Z^j_{t_m−}` on the grid.
pub fn jump_covariation(trains: &SpikeTrains, grid: &TimeGrid, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (j, (&aj, &bj)) in a.iter().zip(b).enumerate() {
        let w = aj * bj;
        if w == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(trains.count_path(j, grid)) {
            *o += w * c;
        }
    }
    out
}

/// Jump weights `U_j (V_{j,k} − q) / √N` of `M̃^k`.
pub fn tilde_weights(net: &NetworkConfiguration, k: usize) -> Vec<f64> {
    let scale = 1.0 / (net.n() as f64).sqrt();
    (0..net.n())
        .map(|j| scale * net.sign(j) * (net.adjacency().indicator(j, k) - net.q()))
        .collect()
}
