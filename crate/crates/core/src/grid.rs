use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default number of grid intervals on `[0, T]`.
pub const DEFAULT_INTERVALS: usize = 2048;

/// Uniform time grid `0 = t_0 < … < t_M = T`.
///
/// The step is adjusted so that the last point is exactly the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    intervals: usize,
}

impl TimeGrid {
    /// Grid with step close to `step` ending exactly at `horizon`.
    pub fn new(horizon: f64, step: f64) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("{horizon} must be finite and >= 0")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param("step", format!("{step} must be finite and > 0")));
        }
        if horizon > 0.0 && step > horizon * (1.0 + 1e-12) {
            return Err(Error::param("step", format!("{step} exceeds horizon {horizon}")));
        }
        let intervals = if horizon == 0.0 {
            0
        } else {
            ((horizon / step).round() as usize).max(1)
        };
        Ok(TimeGrid { horizon, intervals })
    }

    pub fn with_intervals(horizon: f64, intervals: usize) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("{horizon} must be finite and >= 0")));
        }
        if horizon > 0.0 && intervals == 0 {
            return Err(Error::param("intervals", "must be positive"));
        }
        Ok(TimeGrid { horizon, intervals })
    }

    /// `T / 2048`.
    pub fn default_for(horizon: f64) -> Result<Self> {
        Self::with_intervals(horizon, if horizon > 0.0 { DEFAULT_INTERVALS } else { 0 })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        if self.intervals == 0 {
            0.0
        } else {
            self.horizon / self.intervals as f64
        }
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.intervals {
            self.horizon
        } else {
            m as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.time(m)).collect()
    }

    /// Index of the grid point nearest to `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::Contract(format!("time {t} is outside [0, {}]", self.horizon)));
        }
        if self.intervals == 0 {
            return Ok(0);
        }
        Ok(((t / self.step()).round() as usize).min(self.intervals))
    }
}

/// Running trapezoid integral of grid values; `out[0] = 0`.
pub fn cumulative_trapezoid(step: f64, values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    if !values.is_empty() {
        out.push(0.0);
    }
    for w in values.windows(2) {
        acc += 0.5 * step * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

pub fn trapezoid(step: f64, values: &[f64]) -> f64 {
    cumulative_trapezoid(step, values).last().copied().unwrap_or(0.0)
}
