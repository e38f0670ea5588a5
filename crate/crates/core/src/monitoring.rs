//! Online monitoring statistics, KDE control limits and alarm rules.
//!
//! Every statistic is computed on whitened data from the filtered stacked
//! state: `T2 = |mu_k|^2`, `SPE = |x_k - H_k Phi mu_{k-1}|^2` and
//! `DI = d^T D^{-1} d` with `d = mu_k - mu_{k-1}`.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::kalman::{filter_step, AugmentedBelief, SmoothedMoments};
use crate::preprocess::symmetrize;
use crate::statespace::AugmentedParams;

/// Smallest eigenvalue accepted for `D` without regularization.
pub const MIN_D_EIGENVALUE: f64 = 1e-10;
/// Relative ridge added to a near-singular `D`.
pub const D_RIDGE: f64 = 1e-8;
/// Minimum number of values for a KDE control limit.
pub const MIN_KDE_SAMPLES: usize = 100;
/// Absolute tolerance of the control-limit root search.
pub const KDE_ROOT_TOL: f64 = 1e-8;

/// Covariance of the stacked-state first difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsCovariance {
    pub d: DMatrix<f64>,
    /// Lower Cholesky factor of `d`.
    factor: DMatrix<f64>,
}

impl DynamicsCovariance {
    /// Symmetrizes `d` and adds a ridge when its smallest eigenvalue is
    /// below [`MIN_D_EIGENVALUE`].
    pub fn new(mut d: DMatrix<f64>) -> Result<Self> {
        let n = d.nrows();
        if n == 0 || d.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: d.ncols(),
            });
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite dynamics covariance".into()));
        }
        symmetrize(&mut d);
        let min_eig = SymmetricEigen::new(d.clone()).eigenvalues.min();
        if min_eig < MIN_D_EIGENVALUE {
            let ridge = (D_RIDGE * d.trace() / n as f64).max(MIN_D_EIGENVALUE);
            let shift = ridge + (-min_eig).max(0.0);
            for i in 0..n {
                d[(i, i)] += shift;
            }
        }
        let factor = Cholesky::new(d.clone())
            .ok_or(Error::Singular {
                what: "dynamics covariance",
                index: 0,
            })?
            .unpack();
        Ok(DynamicsCovariance { d, factor })
    }

    /// Wraps an already regularized matrix without modifying it.
    pub fn from_stored(d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != d.ncols() {
            return Err(Error::DimensionMismatch {
                expected: d.nrows(),
                found: d.ncols(),
            });
        }
        let factor = Cholesky::new(d.clone())
            .ok_or(Error::Singular {
                what: "dynamics covariance",
                index: 0,
            })?
            .unpack();
        Ok(DynamicsCovariance { d, factor })
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    /// `delta^T D^{-1} delta`
    pub fn mahalanobis(&self, delta: &DVector<f64>) -> f64 {
        let z = self
            .factor
            .solve_lower_triangular(delta)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }
}

/// Time average of `E[(t_k - t_{k-1})(t_k - t_{k-1})^T]` over the smoothed
/// moments of the stacked state.
pub fn estimate_dynamics(moments: &SmoothedMoments) -> Result<DynamicsCovariance> {
    let t = moments.len();
    if t < 2 {
        return Err(Error::config("data", "need at least two smoothed states"));
    }
    let rs = moments.means[0].len();
    let mut d = DMatrix::zeros(rs, rs);
    for k in 1..t {
        let cross = moments.lag_one_moment(k);
        d += moments.second_moment(k) - &cross - cross.transpose() + moments.second_moment(k - 1);
    }
    DynamicsCovariance::new(d / (t - 1) as f64)
}

pub fn t2_statistic(t_s: &DVector<f64>) -> f64 {
    t_s.norm_squared()
}

pub fn spe_statistic(innovation: &DVector<f64>) -> f64 {
    innovation.norm_squared()
}

pub fn di_statistic(now: &DVector<f64>, prev: &DVector<f64>, d: &DynamicsCovariance) -> f64 {
    d.mahalanobis(&(now - prev))
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian-kernel CDF at `x`.
pub fn kde_cdf(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    values
        .iter()
        .map(|v| normal_cdf((x - v) / bandwidth))
        .sum::<f64>()
        / values.len() as f64
}

/// Level-`alpha` quantile of the Gaussian KDE of `values`, with the
/// bandwidth used.
pub fn kde_limit(values: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if values.len() < MIN_KDE_SAMPLES {
        return Err(Error::config(
            "data",
            format!(
                "need at least {MIN_KDE_SAMPLES} values for a control limit, got {}",
                values.len()
            ),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite monitoring statistic".into()));
    }
    let bandwidth = silverman_bandwidth(values);
    if !(bandwidth > 0.0) {
        return Err(Error::Numeric(
            "all statistic values are identical; KDE bandwidth is zero".into(),
        ));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = min - 10.0 * bandwidth;
    let mut hi = max + 10.0 * bandwidth;
    while hi - lo > KDE_ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kde_cdf(values, bandwidth, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), bandwidth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    pub psi_t2: f64,
    pub psi_spe: f64,
    pub psi_di: f64,
    pub alpha: f64,
    /// KDE bandwidths for T2, SPE and DI.
    pub bandwidths: [f64; 3],
}

impl ControlLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        for (name, v) in [("psi_T2", self.psi_t2), ("psi_SPE", self.psi_spe), ("psi_DI", self.psi_di)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Normal,
    DynamicOrShift,
    CorrelationBreak,
    Both,
}

impl Verdict {
    pub fn from_flags(flag_t2: bool, flag_spe: bool, flag_di: bool) -> Self {
        match (flag_t2 || flag_di, flag_spe) {
            (false, false) => Verdict::Normal,
            (true, false) => Verdict::DynamicOrShift,
            (false, true) => Verdict::CorrelationBreak,
            (true, true) => Verdict::Both,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Normal => "normal",
            Verdict::DynamicOrShift => "dynamic-or-shift",
            Verdict::CorrelationBreak => "correlation-break",
            Verdict::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Verdict::Normal,
            Verdict::DynamicOrShift,
            Verdict::CorrelationBreak,
            Verdict::Both,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three statistics for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Statistics {
    pub t2: f64,
    pub spe: f64,
    pub di: f64,
}

/// Filter state carried between samples of one stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamState {
    pub belief: Option<AugmentedBelief>,
    /// Number of samples consumed so far.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub stats: Statistics,
    /// Filtered stacked state `mu_k`.
    pub t_s: DVector<f64>,
    pub innovation: DVector<f64>,
}

/// One online update on a whitened sample; the first sample of a stream
/// starts from the `N(0, I)` prior and reports `DI = 0`.
pub fn monitor_step(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    dynamics: &DynamicsCovariance,
    state: &mut StreamState,
    x_white: &DVector<f64>,
) -> Result<StepResult> {
    if dynamics.dim() != aug.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: aug.state_dim(),
            found: dynamics.dim(),
        });
    }
    let out = filter_step(aug, sigma, state.belief.as_ref(), x_white, state.index)?;
    let mu = out.belief.mu.clone();
    let di = match &state.belief {
        Some(prev) => di_statistic(&mu, &prev.mu, dynamics),
        None => 0.0,
    };
    let stats = Statistics {
        t2: t2_statistic(&mu),
        spe: spe_statistic(&out.innovation),
        di,
    };
    state.belief = Some(out.belief);
    state.index += 1;
    Ok(StepResult {
        stats,
        t_s: mu,
        innovation: out.innovation,
    })
}

/// Statistics for every row of whitened `x`, continuing `state`.
pub fn statistics_stream(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    dynamics: &DynamicsCovariance,
    state: &mut StreamState,
    x_white: &DMatrix<f64>,
) -> Result<Vec<Statistics>> {
    (0..x_white.nrows())
        .map(|i| {
            let row = x_white.row(i).transpose();
            monitor_step(aug, sigma, dynamics, state, &row).map(|r| r.stats)
        })
        .collect()
}

/// Control limits from a fresh stream over whitened training data. The
/// first `s` samples are burn-in and are left out of every limit.
pub fn calibrate(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    dynamics: &DynamicsCovariance,
    x_white: &DMatrix<f64>,
    alpha: f64,
) -> Result<ControlLimits> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (0.5, 1), got {alpha}")));
    }
    let mut state = StreamState::default();
    let stats = statistics_stream(aug, sigma, dynamics, &mut state, x_white)?;
    let kept = &stats[aug.s.min(stats.len())..];
    let (psi_t2, h_t2) = kde_limit(&kept.iter().map(|s| s.t2).collect::<Vec<_>>(), alpha)?;
    let (psi_spe, h_spe) = kde_limit(&kept.iter().map(|s| s.spe).collect::<Vec<_>>(), alpha)?;
    let (psi_di, h_di) = kde_limit(&kept.iter().map(|s| s.di).collect::<Vec<_>>(), alpha)?;
    Ok(ControlLimits {
        psi_t2,
        psi_spe,
        psi_di,
        alpha,
        bandwidths: [h_t2, h_spe, h_di],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub index: usize,
    pub stats: Statistics,
    pub flag_t2: bool,
    pub flag_spe: bool,
    pub flag_di: bool,
    pub verdict: Verdict,
    pub burn_in: bool,
}

impl MonitorRecord {
    pub fn new(index: usize, stats: Statistics, limits: &ControlLimits, burn_in: bool) -> Self {
        let flag_t2 = stats.t2 > limits.psi_t2;
        let flag_spe = stats.spe > limits.psi_spe;
        let flag_di = stats.di > limits.psi_di;
        MonitorRecord {
            index,
            stats,
            flag_t2,
            flag_spe,
            flag_di,
            verdict: Verdict::from_flags(flag_t2, flag_spe, flag_di),
            burn_in,
        }
    }

    pub fn any_alarm(&self) -> bool {
        self.flag_t2 || self.flag_spe || self.flag_di
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    T2,
    Spe,
    Di,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorReport {
    pub records: Vec<MonitorRecord>,
}

pub const REPORT_HEADER: &str = "index,T2,SPE,DI,flag_T2,flag_SPE,flag_DI,verdict,burn_in";

impl MonitorReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: MonitorReport) {
        self.records.extend(other.records);
    }

    pub fn flag(record: &MonitorRecord, stat: Statistic) -> bool {
        match stat {
            Statistic::T2 => record.flag_t2,
            Statistic::Spe => record.flag_spe,
            Statistic::Di => record.flag_di,
        }
    }

    /// Alarm counts for T2, SPE and DI.
    pub fn alarm_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for rec in &self.records {
            counts[0] += rec.flag_t2 as usize;
            counts[1] += rec.flag_spe as usize;
            counts[2] += rec.flag_di as usize;
        }
        counts
    }

    /// Fraction of non-burn-in records in `range` flagged by `stat`.
    pub fn alarm_rate(&self, stat: Statistic, range: std::ops::Range<usize>) -> f64 {
        let picked: Vec<_> = self.records[range].iter().filter(|r| !r.burn_in).collect();
        let hits = picked.iter().filter(|r| Self::flag(r, stat)).count();
        hits as f64 / picked.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{},{},{},{},{}\n",
                r.index,
                r.stats.t2,
                r.stats.spe,
                r.stats.di,
                r.flag_t2 as u8,
                r.flag_spe as u8,
                r.flag_di as u8,
                r.verdict,
                r.burn_in as u8
            ));
        }
        out
    }
}

/// Scores whitened rows, continuing `state`. Samples with stream index
/// below `s` are marked as burn-in.
pub fn score_whitened(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    dynamics: &DynamicsCovariance,
    limits: &ControlLimits,
    state: &mut StreamState,
    x_white: &DMatrix<f64>,
) -> Result<MonitorReport> {
    let mut records = Vec::with_capacity(x_white.nrows());
    for i in 0..x_white.nrows() {
        let index = state.index;
        let row = x_white.row(i).transpose();
        let step = monitor_step(aug, sigma, dynamics, state, &row)?;
        records.push(MonitorRecord::new(index, step.stats, limits, index < aug.s));
    }
    Ok(MonitorReport { records })
}
