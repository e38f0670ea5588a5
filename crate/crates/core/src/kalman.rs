//! Forward filtering and RTS smoothing on the augmented state.
//!
//! Time indexing: the stacked state `t_k^s` first exists at `k = s`, so a
//! series of `N` rows is conditioned on rows `s-1..N` (0-based) and the
//! belief at position `0` describes time `s`. The prior at that first
//! position is `N(0, I_rs)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::preprocess::symmetrize;
use crate::statespace::AugmentedParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Filtered posterior of the stacked state after one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBelief {
    pub mu: DVector<f64>,
    pub v: DMatrix<f64>,
    /// One-step prediction covariance that this update started from.
    pub p: DMatrix<f64>,
}

/// Predicted mean and covariance of the next stacked state.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Prediction {
    /// The `N(0, I_rs)` prior on the first stacked state.
    pub fn prior(aug: &AugmentedParams) -> Self {
        let rs = aug.state_dim();
        Prediction {
            mean: DVector::zeros(rs),
            cov: DMatrix::identity(rs, rs),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub belief: AugmentedBelief,
    /// `x_k - H_k * predicted mean`
    pub innovation: DVector<f64>,
    /// `log N(innovation; 0, H_k P H_k^T + Sigma)`
    pub log_density: f64,
}

pub fn predict(aug: &AugmentedParams, belief: &AugmentedBelief) -> Prediction {
    let mean = &aug.phi * &belief.mu;
    let mut cov = &aug.phi * &belief.v * aug.phi.transpose() + &aug.gamma;
    symmetrize(&mut cov);
    Prediction { mean, cov }
}

/// Measurement update. `index` is only used to label errors.
pub fn update(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    pred: Prediction,
    x: &DVector<f64>,
    index: usize,
) -> Result<StepOutput> {
    if x.len() != aug.m() {
        return Err(Error::DimensionMismatch {
            expected: aug.m(),
            found: x.len(),
        });
    }
    let hp = &aug.h * &pred.cov;
    let mut s = &hp * aug.h.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] += sigma[i];
    }
    symmetrize(&mut s);
    let chol: Cholesky<f64, Dyn> = Cholesky::new(s).ok_or(Error::Singular {
        what: "innovation covariance",
        index,
    })?;
    let innovation = x - &aug.h * &pred.mean;
    // K^T = S^{-1} H_k P
    let gain = chol.solve(&hp).transpose();
    let mu = &pred.mean + &gain * &innovation;
    let mut v = &pred.cov - &gain * &hp;
    symmetrize(&mut v);

    let solved = chol.solve(&innovation);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_density =
        -0.5 * (aug.m() as f64 * LN_2PI + log_det + innovation.dot(&solved));

    Ok(StepOutput {
        belief: AugmentedBelief {
            mu,
            v,
            p: pred.cov,
        },
        innovation,
        log_density,
    })
}

/// One online step: predict from `prev` (or the prior when `None`) and
/// condition on `x`.
pub fn filter_step(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    prev: Option<&AugmentedBelief>,
    x: &DVector<f64>,
    index: usize,
) -> Result<StepOutput> {
    let pred = match prev {
        Some(b) => predict(aug, b),
        None => Prediction::prior(aug),
    };
    update(aug, sigma, pred, x, index)
}

#[derive(Debug, Clone)]
pub struct FilterPass {
    /// Beliefs for times `s..N`.
    pub beliefs: Vec<AugmentedBelief>,
    pub innovations: Vec<DVector<f64>>,
    /// Exact marginal log-likelihood of the conditioned rows.
    pub log_likelihood: f64,
}

/// Runs the filter over the rows of `x` that the stacked state can explain
/// (rows `s-1..N`, 0-based).
pub fn forward_filter(
    aug: &AugmentedParams,
    sigma: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<FilterPass> {
    if x.ncols() != aug.m() {
        return Err(Error::DimensionMismatch {
            expected: aug.m(),
            found: x.ncols(),
        });
    }
    if sigma.len() != aug.m() {
        return Err(Error::DimensionMismatch {
            expected: aug.m(),
            found: sigma.len(),
        });
    }
    let start = aug.s - 1;
    if x.nrows() <= start {
        return Err(Error::config(
            "data",
            format!("need at least s = {} rows, got {}", aug.s, x.nrows()),
        ));
    }
    let steps = x.nrows() - start;
    let mut beliefs: Vec<AugmentedBelief> = Vec::with_capacity(steps);
    let mut innovations = Vec::with_capacity(steps);
    let mut log_likelihood = 0.0;
    for row in start..x.nrows() {
        let obs = x.row(row).transpose();
        let out = filter_step(aug, sigma, beliefs.last(), &obs, row)?;
        log_likelihood += out.log_density;
        innovations.push(out.innovation);
        beliefs.push(out.belief);
    }
    Ok(FilterPass {
        beliefs,
        innovations,
        log_likelihood,
    })
}

/// Posterior moments of the stacked state given the whole series.
#[derive(Debug, Clone)]
pub struct SmoothedMoments {
    pub r: usize,
    pub s: usize,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `lag_one[k] = Cov(t_k^s, t_{k-1}^s)` for `k >= 1`; `lag_one[0]` is zero.
    pub lag_one: Vec<DMatrix<f64>>,
}

impl SmoothedMoments {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// `E[t_k^s t_k^s^T]`
    pub fn second_moment(&self, k: usize) -> DMatrix<f64> {
        &self.covs[k] + &self.means[k] * self.means[k].transpose()
    }

    /// `E[t_k^s t_{k-1}^s^T]`, `k >= 1`.
    pub fn lag_one_moment(&self, k: usize) -> DMatrix<f64> {
        &self.lag_one[k] + &self.means[k] * self.means[k - 1].transpose()
    }

    /// `E[t_k]`, the leading block of the stacked mean.
    pub fn latent_mean(&self, k: usize) -> DVector<f64> {
        self.means[k].rows(0, self.r).clone_owned()
    }

    /// `E[t_k t_k^T]`
    pub fn latent_second_moment(&self, k: usize) -> DMatrix<f64> {
        let mu = self.means[k].rows(0, self.r);
        self.covs[k].view((0, 0), (self.r, self.r)) + mu * mu.transpose()
    }

    /// `E[t_{k-a}^i t_{k-b}^i]` for `0 <= a, b <= s`, `k >= 1`.
    pub fn lagged_product(&self, k: usize, i: usize, a: usize, b: usize) -> f64 {
        let r = self.r;
        let s = self.s;
        if a < s && b < s {
            let (p, q) = (a * r + i, b * r + i);
            self.covs[k][(p, q)] + self.means[k][p] * self.means[k][q]
        } else if a >= 1 && b >= 1 {
            let (p, q) = ((a - 1) * r + i, (b - 1) * r + i);
            self.covs[k - 1][(p, q)] + self.means[k - 1][p] * self.means[k - 1][q]
        } else {
            // one index is 0 and the other s: read the lag-one cross block
            let (lead, lagged) = if a == 0 { (a, b) } else { (b, a) };
            let p = lead * r + i;
            let q = (lagged - 1) * r + i;
            self.lag_one[k][(p, q)] + self.means[k][p] * self.means[k - 1][q]
        }
    }
}

pub fn backward_smooth(
    aug: &AugmentedParams,
    filtered: &[AugmentedBelief],
) -> Result<SmoothedMoments> {
    let t = filtered.len();
    if t == 0 {
        return Err(Error::config("data", "nothing to smooth"));
    }
    let rs = aug.state_dim();
    let mut means = vec![DVector::zeros(rs); t];
    let mut covs = vec![DMatrix::zeros(rs, rs); t];
    let mut lag_one = vec![DMatrix::zeros(rs, rs); t];
    means[t - 1] = filtered[t - 1].mu.clone();
    covs[t - 1] = filtered[t - 1].v.clone();

    for k in (0..t - 1).rev() {
        let cur = &filtered[k];
        let p_next = &filtered[k + 1].p;
        let chol = Cholesky::new(p_next.clone()).ok_or(Error::Singular {
            what: "prediction covariance",
            index: k,
        })?;
        // J = V Phi^T P^{-1} = (P^{-1} Phi V)^T
        let j = chol.solve(&(&aug.phi * &cur.v)).transpose();
        let mean = &cur.mu + &j * (&means[k + 1] - &aug.phi * &cur.mu);
        let mut cov = &cur.v + &j * (&covs[k + 1] - p_next) * j.transpose();
        symmetrize(&mut cov);
        lag_one[k + 1] = &covs[k + 1] * j.transpose();
        means[k] = mean;
        covs[k] = cov;
    }

    Ok(SmoothedMoments {
        r: aug.r,
        s: aug.s,
        means,
        covs,
        lag_one,
    })
}
