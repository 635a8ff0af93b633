//! Residual statistics: one-step prediction errors, autocorrelation
//! whiteness, empirical CDFs, the two-sample Kolmogorov-Smirnov test and
//! group-level summaries built on them.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::steering::{warm_windows, SteeringCoefficients, SteeringSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    HumanInControl,
    AutonomyInControl,
}

impl ControlMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlMode::HumanInControl => "human-in-control",
            ControlMode::AutonomyInControl => "autonomy-in-control",
        }
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human-in-control" | "human" => Ok(ControlMode::HumanInControl),
            "autonomy-in-control" | "autonomy" => Ok(ControlMode::AutonomyInControl),
            other => Err(Error::InvalidParameter(format!("unknown control mode `{other}`"))),
        }
    }
}

/// Warm-up samples are never part of a residual series.
pub const MIN_RESIDUALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries<T> {
    /// `predicted - actual` for every warm step (rad).
    pub values: Vec<T>,
    /// Trajectory step index of each value.
    pub steps: Vec<usize>,
    pub trajectory_id: String,
    pub mode: ControlMode,
}

impl<T> ResidualSeries<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One-step-ahead residuals: each prediction uses the recorded (not
/// predicted) steering history.
pub fn residuals<T: Scalar>(
    samples: &[SteeringSample<T>],
    coeffs: &SteeringCoefficients<T>,
    trajectory_id: impl Into<String>,
    mode: ControlMode,
) -> Result<ResidualSeries<T>> {
    let c = coeffs.to_array();
    let (steps, values): (Vec<usize>, Vec<T>) = warm_windows(samples)
        .map(|(k, w, delta)| {
            let predicted = c.iter().zip(w.regressors()).fold(T::zero(), |acc, (a, x)| acc + *a * x);
            (k, predicted - delta)
        })
        .unzip();
    if values.len() < MIN_RESIDUALS {
        return Err(Error::InsufficientData { needed: MIN_RESIDUALS, available: values.len() });
    }
    Ok(ResidualSeries { values, steps, trajectory_id: trajectory_id.into(), mode })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfReport<T> {
    /// Lags `1..=L`.
    pub lags: Vec<usize>,
    pub acf_values: Vec<T>,
    /// Pointwise 95% band `1.96 / sqrt(N)`.
    pub bound: T,
    /// Share of lags outside the pointwise band.
    pub fraction_outside: T,
    /// Band that holds for all `L` lags jointly at the tolerance level.
    pub simultaneous_bound: T,
    /// False-alarm tolerance of the verdict.
    pub tolerance: T,
    pub is_white: bool,
    pub n: usize,
}

pub const DEFAULT_MAX_LAG: usize = 50;
pub const WHITENESS_TOLERANCE: f64 = 0.05;
const POINTWISE_Z: f64 = 1.96;

/// `min(50, N / 4)`, at least 1.
pub fn default_max_lag(n: usize) -> usize {
    DEFAULT_MAX_LAG.min(n / 4).max(1)
}

/// Biased normalized sample autocorrelation plus a whiteness verdict.
///
/// A series is judged white when no lag leaves the simultaneous band
/// `z(1 - tol / 2L) / sqrt(N)`, i.e. the whole lag family is tested at
/// level `tol`. The pointwise band and the share of lags outside it are
/// reported alongside for plotting.
pub fn autocorrelation<T: Scalar>(series: &ResidualSeries<T>, max_lag: usize) -> Result<AcfReport<T>> {
    autocorrelation_with_tolerance(&series.values, max_lag, T::lit(WHITENESS_TOLERANCE))
}

pub fn autocorrelation_with_tolerance<T: Scalar>(values: &[T], max_lag: usize, tolerance: T) -> Result<AcfReport<T>> {
    let n = values.len();
    if max_lag < 1 || n <= max_lag {
        return Err(Error::InsufficientData { needed: max_lag + 1, available: n });
    }
    if !(tolerance > T::zero() && tolerance < T::one()) {
        return Err(Error::InvalidParameter("tolerance must lie in (0, 1)".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let nf = T::from_count(n);
    let mean = values.iter().fold(T::zero(), |a, v| a + *v) / nf;
    let centered: Vec<T> = values.iter().map(|v| *v - mean).collect();
    let denom = centered.iter().fold(T::zero(), |a, v| a + *v * *v);
    let scale = values.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    if !(denom > T::default_epsilon() * scale * scale * nf) {
        return Err(Error::ZeroVariance);
    }

    let lags: Vec<usize> = (1..=max_lag).collect();
    let acf_values: Vec<T> = lags
        .iter()
        .map(|&l| {
            let num = centered[..n - l].iter().zip(&centered[l..]).fold(T::zero(), |a, (x, y)| a + *x * *y);
            num / denom
        })
        .collect();

    let sqrt_n = nf.sqrt();
    let bound = T::lit(POINTWISE_Z) / sqrt_n;
    let outside = acf_values.iter().filter(|r| r.abs() > bound).count();
    let fraction_outside = T::from_count(outside) / T::from_count(max_lag);

    let per_lag = tolerance.as_f64() / (2.0 * max_lag as f64);
    let z = Normal::standard().inverse_cdf(1.0 - per_lag);
    let simultaneous_bound = T::lit(z) / sqrt_n;
    let is_white = acf_values.iter().all(|r| r.abs() <= simultaneous_bound);

    Ok(AcfReport { lags, acf_values, bound, fraction_outside, simultaneous_bound, tolerance, is_white, n })
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf<T> {
    sorted: Vec<T>,
}

impl<T: Scalar> Ecdf<T> {
    pub fn new(samples: &[T]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_samples(&self) -> &[T] {
        &self.sorted
    }

    /// `#{samples <= x} / n`.
    pub fn eval(&self, x: T) -> T {
        self.count_le(x) / T::from_count(self.sorted.len())
    }

    fn count_le(&self, x: T) -> T {
        T::from_count(self.sorted.partition_point(|s| *s <= x))
    }
}

pub fn ecdf<T: Scalar>(samples: &[T]) -> Result<Ecdf<T>> {
    Ecdf::new(samples)
}

/// Critical distance `sqrt(-ln(alpha/2) (1 + m/n) / (2m))`.
pub fn ks_threshold<T: Scalar>(n: usize, m: usize, alpha: T) -> Result<T> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("sample sizes must be positive".into()));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (nf, mf) = (T::from_count(n), T::from_count(m));
    let two = T::lit(2.0);
    Ok((-(alpha / two).ln() * (T::one() + mf / nf) / (two * mf)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult<T> {
    /// `sup |C1 - C2|`.
    pub statistic: T,
    pub threshold: T,
    pub alpha: T,
    pub reject: bool,
}

/// Exact sup distance between two ECDFs, walking the merged order statistics.
pub fn ks_statistic<T: Scalar>(e1: &Ecdf<T>, e2: &Ecdf<T>) -> T {
    let (a, b) = (&e1.sorted, &e2.sorted);
    let (n, m) = (T::from_count(a.len()), T::from_count(b.len()));
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = T::zero();
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        // Consume every sample equal to the jump location from both sides.
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        let d = (T::from_count(i) / n - T::from_count(j) / m).abs();
        sup = sup.max(d);
    }
    sup
}

pub fn ks_two_sample<T: Scalar>(e1: &Ecdf<T>, e2: &Ecdf<T>, alpha: T) -> Result<KsResult<T>> {
    let threshold = ks_threshold(e1.len(), e2.len(), alpha)?;
    let statistic = ks_statistic(e1, e2);
    Ok(KsResult { statistic, threshold, alpha, reject: statistic > threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralCdf<T> {
    pub index: usize,
    /// Largest sup distance from each ECDF to any other.
    pub max_distances: Vec<T>,
    /// Symmetric pairwise sup distances.
    pub distances: Vec<Vec<T>>,
}

/// Minimax medoid under the KS sup distance; ties go to the lowest index.
pub fn central_cdf<T: Scalar>(ecdfs: &[Ecdf<T>]) -> Result<CentralCdf<T>> {
    if ecdfs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, available: ecdfs.len() });
    }
    let k = ecdfs.len();
    let mut distances = vec![vec![T::zero(); k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = ks_statistic(&ecdfs[i], &ecdfs[j]);
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    let max_distances: Vec<T> = distances.iter().map(|row| row.iter().fold(T::zero(), |a, b| a.max(*b))).collect();
    let mut index = 0;
    for (i, d) in max_distances.iter().enumerate() {
        if *d < max_distances[index] {
            index = i;
        }
    }
    Ok(CentralCdf { index, max_distances, distances })
}

/// ECDFs rejected against their group's central ECDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralOutliers<T> {
    pub central: usize,
    pub results: Vec<KsResult<T>>,
    pub rejected: Vec<usize>,
    /// Share of individual samples whose ECDF value leaves the KS band
    /// around the central ECDF.
    pub value_exceedance: T,
}

pub fn central_outliers<T: Scalar>(group: &[Ecdf<T>], alpha: T) -> Result<CentralOutliers<T>> {
    let central = central_cdf(group)?.index;
    let reference = &group[central];
    let mut results = Vec::with_capacity(group.len());
    let mut rejected = Vec::new();
    let (mut outside, mut total) = (0usize, 0usize);
    for (i, e) in group.iter().enumerate() {
        let r = ks_two_sample(reference, e, alpha)?;
        if i != central {
            if r.reject {
                rejected.push(i);
            }
            for x in e.sorted_samples() {
                if (e.eval(*x) - reference.eval(*x)).abs() > r.threshold {
                    outside += 1;
                }
            }
            total += e.len();
        }
        results.push(r);
    }
    let value_exceedance = if total == 0 { T::zero() } else { T::from_count(outside) / T::from_count(total) };
    Ok(CentralOutliers { central, results, rejected, value_exceedance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTestSummary<T> {
    pub within_a_rejection_rate: T,
    pub within_b_rejection_rate: T,
    pub across_rejection_rate: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTest<T> {
    /// `across[i][j]` compares `group_a[i]` with `group_b[j]`.
    pub across: Vec<Vec<KsResult<T>>>,
    /// Upper-triangle pairs `(i, j, result)` inside group A.
    pub within_a: Vec<(usize, usize, KsResult<T>)>,
    pub within_b: Vec<(usize, usize, KsResult<T>)>,
    pub summary: CrossTestSummary<T>,
}

pub fn cross_test<T: Scalar>(group_a: &[Ecdf<T>], group_b: &[Ecdf<T>], alpha: T) -> Result<CrossTest<T>> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let across = group_a
        .iter()
        .map(|a| group_b.iter().map(|b| ks_two_sample(a, b, alpha)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let within = |g: &[Ecdf<T>]| -> Result<Vec<(usize, usize, KsResult<T>)>> {
        let mut out = Vec::new();
        for i in 0..g.len() {
            for j in (i + 1)..g.len() {
                out.push((i, j, ks_two_sample(&g[i], &g[j], alpha)?));
            }
        }
        Ok(out)
    };
    let within_a = within(group_a)?;
    let within_b = within(group_b)?;
    let rate = |rejects: usize, total: usize| {
        if total == 0 {
            T::zero()
        } else {
            T::from_count(rejects) / T::from_count(total)
        }
    };
    let across_rejects = across.iter().flatten().filter(|r| r.reject).count();
    let summary = CrossTestSummary {
        within_a_rejection_rate: rate(within_a.iter().filter(|p| p.2.reject).count(), within_a.len()),
        within_b_rejection_rate: rate(within_b.iter().filter(|p| p.2.reject).count(), within_b.len()),
        across_rejection_rate: rate(across_rejects, group_a.len() * group_b.len()),
    };
    Ok(CrossTest { across, within_a, within_b, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBand<T> {
    pub mode: Option<ControlMode>,
    pub mean: Vec<T>,
    /// Sample standard deviation (n - 1 denominator; zero for one series).
    pub std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport<T> {
    pub groups: Vec<GroupBand<T>>,
    /// `separated[g - 1][k]`: group `g`'s mean lies more than 3 sigma of
    /// group 0 away from group 0's mean at step `k`.
    pub separated: Vec<Vec<bool>>,
}

/// Per-step mean and spread of each group of time-aligned residual series.
pub fn residual_band_report<T: Scalar>(groups: &[Vec<ResidualSeries<T>>]) -> Result<BandReport<T>> {
    let len = groups.iter().flatten().map(|s| s.len()).next().ok_or(Error::EmptyInput)?;
    for s in groups.iter().flatten() {
        if s.len() != len {
            return Err(Error::LengthMismatch { expected: len, found: s.len() });
        }
    }
    let mut bands = Vec::with_capacity(groups.len());
    for group in groups {
        if group.is_empty() {
            return Err(Error::EmptyInput);
        }
        let count = T::from_count(group.len());
        let mut mean = vec![T::zero(); len];
        let mut std = vec![T::zero(); len];
        for k in 0..len {
            let m = group.iter().fold(T::zero(), |a, s| a + s.values[k]) / count;
            mean[k] = m;
            if group.len() > 1 {
                let ss = group.iter().fold(T::zero(), |a, s| {
                    let d = s.values[k] - m;
                    a + d * d
                });
                std[k] = (ss / T::from_count(group.len() - 1)).sqrt();
            }
        }
        let mode = group[0].mode;
        let uniform = group.iter().all(|s| s.mode == mode);
        bands.push(GroupBand { mode: uniform.then_some(mode), mean, std });
    }
    let three = T::lit(3.0);
    let separated = bands
        .iter()
        .skip(1)
        .map(|g| (0..len).map(|k| (g.mean[k] - bands[0].mean[k]).abs() > three * bands[0].std[k]).collect())
        .collect();
    Ok(BandReport { groups: bands, separated })
}
