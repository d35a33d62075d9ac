//! Replicate statistics: moments with standard errors, jackknife, and the
//! handful of classical tests the experiments need.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Estimate with its standard error and replicate count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean computed about the first element, so identical inputs return that
/// value exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else {
        return f64::NAN;
    };
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    covariance(xs, ys) / (variance(xs) * variance(ys)).sqrt()
}

pub fn mean_estimate(xs: &[f64]) -> Estimate {
    Estimate {
        value: mean(xs),
        se: (variance(xs) / xs.len() as f64).sqrt(),
        n: xs.len(),
    }
}

/// Sample variance with its jackknife standard error.
pub fn variance_estimate(xs: &[f64]) -> Estimate {
    let columns = [xs.to_vec()];
    let c = CovarianceEstimate::from_columns(&columns);
    Estimate {
        value: c.cov[0][0],
        se: c.se[0][0],
        n: xs.len(),
    }
}

/// Leave-one-out jackknife standard error of an arbitrary statistic.
///
/// `stat(Some(k))` must evaluate the statistic with observation `k`
/// removed, `stat(None)` on the full sample.
pub fn jackknife(n: usize, stat: impl Fn(Option<usize>) -> f64) -> Estimate {
    let full = stat(None);
    if n < 2 {
        return Estimate { value: full, se: f64::NAN, n };
    }
    let loo: Vec<f64> = (0..n).map(|k| stat(Some(k))).collect();
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - m) * (v - m)).sum();
    Estimate {
        value: full,
        se: ((n - 1) as f64 / n as f64 * ss).sqrt(),
        n,
    }
}

/// Sample covariance matrix with entrywise jackknife standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

impl CovarianceEstimate {
    /// `columns[d][s]` is observation `s` of coordinate `d`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let dims = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n), "ragged columns");
        let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
        // Centre first; covariance is shift invariant and this keeps the
        // leave-one-out updates well conditioned.
        let centred: Vec<Vec<f64>> = columns
            .iter()
            .zip(&means)
            .map(|(c, m)| c.iter().map(|x| x - m).collect())
            .collect();
        let mut cov = vec![vec![f64::NAN; dims]; dims];
        let mut se = vec![vec![f64::NAN; dims]; dims];
        if n >= 3 {
            let nf = n as f64;
            for a in 0..dims {
                for b in a..dims {
                    let (x, y) = (&centred[a], &centred[b]);
                    let sx: f64 = x.iter().sum();
                    let sy: f64 = y.iter().sum();
                    let sxy: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
                    let full = (sxy - sx * sy / nf) / (nf - 1.0);
                    let loo: Vec<f64> = x
                        .iter()
                        .zip(y)
                        .map(|(&xi, &yi)| {
                            let m = nf - 1.0;
                            let (sx_, sy_) = (sx - xi, sy - yi);
                            (sxy - xi * yi - sx_ * sy_ / m) / (m - 1.0)
                        })
                        .collect();
                    let lm = mean(&loo);
                    let ss: f64 = loo.iter().map(|v| (v - lm) * (v - lm)).sum();
                    let e = ((nf - 1.0) / nf * ss).sqrt();
                    cov[a][b] = full;
                    cov[b][a] = full;
                    se[a][b] = e;
                    se[b][a] = e;
                }
            }
        }
        CovarianceEstimate {
            n,
            mean: means,
            cov,
            se,
        }
    }

    pub fn entry(&self, a: usize, b: usize) -> Estimate {
        Estimate {
            value: self.cov[a][b],
            se: self.se[a][b],
            n: self.n,
        }
    }
}

/// `sqrt(Σ se²)`.
pub fn pooled_se(ses: &[f64]) -> f64 {
    ses.iter().map(|s| s * s).sum::<f64>().sqrt()
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson chi-square goodness of fit; returns `(statistic, dof, p-value)`.
///
/// `estimated` parameters are subtracted from the degrees of freedom.
pub fn chi_square_gof(observed: &[f64], expected: &[f64], estimated: usize) -> (f64, usize, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = observed.len().saturating_sub(1 + estimated).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat);
    (stat, dof, p)
}

/// Fisher z statistic `atanh(r) · sqrt(n − 3)` for a sample correlation.
pub fn fisher_z(r: f64, n: usize) -> f64 {
    let r = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    r.atanh() * (n as f64 - 3.0).max(1.0).sqrt()
}

/// Lower-tail standard normal probability.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Poisson probabilities `P(X = k)` for `k = 0..kmax` via the recurrence.
pub fn poisson_pmf(mean: f64, kmax: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax + 1);
    let mut log_p = -mean;
    for k in 0..=kmax {
        if k > 0 {
            log_p += mean.ln() - (k as f64).ln();
        }
        out.push(log_p.exp());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!((correlation(&xs, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn closed_form_jackknife_matches_brute_force() {
        let mut rng = crate::rng::stream(3, crate::rng::Stream::CommonDriver);
        let x: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v: &f64| 0.5 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let est = CovarianceEstimate::from_columns(&[x.clone(), y.clone()]);
        let brute = jackknife(x.len(), |skip| {
            let keep = |v: &[f64]| -> Vec<f64> {
                v.iter().enumerate().filter(|(k, _)| Some(*k) != skip).map(|(_, &a)| a).collect()
            };
            covariance(&keep(&x), &keep(&y))
        });
        assert!((est.cov[0][1] - brute.value).abs() < 1e-12);
        assert!((est.se[0][1] - brute.se).abs() < 1e-10);
    }

    #[test]
    fn variance_se_is_calibrated() {
        // For N(0,1) data, SE(var) ≈ sqrt(2/(n−1)).
        let mut rng = crate::rng::stream(11, crate::rng::Stream::CommonDriver);
        let x: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let v = variance_estimate(&x);
        assert!((v.se - (2.0f64 / 3999.0).sqrt()).abs() < 0.005);
        assert!((v.value - 1.0).abs() < 4.0 * v.se);
    }

    #[test]
    fn ks_detects_shift_but_not_identity() {
        let mut rng = crate::rng::stream(5, crate::rng::Stream::CommonDriver);
        let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = b.iter().map(|v| v + 0.1).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.01);
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
    }

    #[test]
    fn chi_square_and_normal_helpers() {
        let (stat, dof, p) = chi_square_gof(&[10.0, 10.0, 10.0], &[10.0, 10.0, 10.0], 0);
        assert_eq!((stat, dof), (0.0, 2));
        assert!((p - 1.0).abs() < 1e-12);
        assert!((normal_cdf(normal_quantile(0.01)) - 0.01).abs() < 1e-9);
        let pmf = poisson_pmf(3.0, 60);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fisher_z(-1.0, 100) < -10.0);
    }
}
