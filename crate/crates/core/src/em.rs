//! Expectation-maximization for the latent dynamic model.
//!
//! E-step: augmented Kalman filter and RTS smoother. M-step: closed-form
//! emission and measurement-noise updates, and a GA search for the AR
//! coefficients of each latent. The latent noise variances always follow
//! from the AR coefficients through the unit-variance constraint.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ga::{self, BetaObjective, GaConfig, FEASIBILITY_TOL};
use crate::kalman::{backward_smooth, forward_filter, SmoothedMoments};
use crate::preprocess::symmetrize;
use crate::statespace::{ar_autocovariances, augment, spectral_radius, ModelParams};

/// Lower bound on each measurement noise variance after an update.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Lower bound on each initial measurement noise variance.
pub const INIT_SIGMA_FLOOR: f64 = 1e-4;
/// Bounds applied to the latent noise variances.
pub const TAU2_BOUNDS: (f64, f64) = (1e-8, 1.0);
/// Share of each initial direction's variance attributed to the latent.
const INIT_SIGNAL_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub r: usize,
    pub s: usize,
    pub max_iterations: usize,
    /// Stop once `|ll - ll_prev| / |ll_prev|` falls below this.
    pub loglik_rel_tol: f64,
    pub seed: u64,
    pub ga: GaConfig,
    /// Keep the AR coefficients (and so the latent noise) fixed.
    pub freeze_dynamics: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            r: 2,
            s: 2,
            max_iterations: 100,
            loglik_rel_tol: 1e-6,
            seed: 0,
            ga: GaConfig::default(),
            freeze_dynamics: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::config("em.max_iterations", "must be at least 1"));
        }
        if !(self.loglik_rel_tol > 0.0) || !self.loglik_rel_tol.is_finite() {
            return Err(Error::config("em.loglik_rel_tol", "must be positive"));
        }
        if self.r < 1 {
            return Err(Error::config("em.r", "must be at least 1"));
        }
        if self.s < 1 {
            return Err(Error::config("em.s", "must be at least 1"));
        }
        self.ga.validate()
    }

    /// Checks the configuration against a data set of `rows x m`.
    pub fn validate_for(&self, rows: usize, m: usize) -> Result<()> {
        self.validate()?;
        if self.r > m {
            return Err(Error::config(
                "em.r",
                format!("latent dimension {} exceeds measurement dimension {m}", self.r),
            ));
        }
        if rows <= 10 * self.s {
            return Err(Error::config(
                "data",
                format!("need more than {} rows for s = {}, got {rows}", 10 * self.s, self.s),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Observed-data log-likelihood of the parameters entering this E-step.
    pub log_likelihood: f64,
    /// Unit-variance constraint residual of the parameters leaving the M-step.
    pub lemma_residual: f64,
    /// AR coefficients leaving the M-step.
    pub beta: DMatrix<f64>,
    pub seconds: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Log-likelihood of the returned parameters.
    pub best_log_likelihood: f64,
    /// Log-likelihood of the initial parameters.
    pub initial_log_likelihood: f64,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// Delimited table `iteration,loglik,residual,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loglik,residual,seconds\n");
        for rec in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                rec.iteration, rec.log_likelihood, rec.lemma_residual, rec.seconds
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EStep {
    pub moments: SmoothedMoments,
    pub log_likelihood: f64,
}

/// Initial parameters from whitened data.
///
/// Directions are the leading eigenvectors (by magnitude) of the symmetrized
/// lag-one autocovariance, so the start favours predictable structure; each
/// direction gets half of its variance as signal. Measurement noise is the
/// per-channel residual variance, and the AR coefficients are small random
/// stable values.
pub fn init_params(x: &DMatrix<f64>, cfg: &EmConfig) -> Result<ModelParams> {
    let (rows, m) = x.shape();
    cfg.validate_for(rows, m)?;
    let (r, s) = (cfg.r, cfg.s);

    let mean = DVector::from_iterator(m, x.column_iter().map(|c| c.mean()));
    let centered = DMatrix::from_fn(rows, m, |i, j| x[(i, j)] - mean[j]);
    let c0 = centered.tr_mul(&centered) / (rows as f64 - 1.0);
    let head = centered.rows(1, rows - 1);
    let tail = centered.rows(0, rows - 1);
    let mut c1 = head.tr_mul(&tail) / (rows as f64 - 1.0);
    c1 = 0.5 * (&c1 + c1.transpose());

    let eig = SymmetricEigen::new(c1);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });

    let mut h = DMatrix::zeros(m, r);
    for (col, &src) in order.iter().take(r).enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        // loading that reproduces INIT_SIGNAL_SHARE of the variance along v
        let cv = &c0 * &v;
        let var = v.dot(&cv).max(f64::MIN_POSITIVE);
        h.set_column(col, &(cv * (INIT_SIGNAL_SHARE / var).sqrt()));
    }
    let hht = &h * h.transpose();
    let sigma = DVector::from_fn(m, |i, _| (c0[(i, i)] - hht[(i, i)]).max(INIT_SIGMA_FLOOR));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut beta = DMatrix::zeros(s, r);
    for i in 0..r {
        let mut coeffs: Vec<f64> = (0..s).map(|_| rng.random_range(-0.3..0.3)).collect();
        let total: f64 = coeffs.iter().map(|c| c.abs()).sum();
        if total >= 0.95 {
            coeffs.iter_mut().for_each(|c| *c *= 0.9 / total);
        }
        for j in 0..s {
            beta[(j, i)] = coeffs[j];
        }
    }
    ModelParams::with_unit_variance(beta, h, sigma)
}

pub fn e_step(params: &ModelParams, x: &DMatrix<f64>) -> Result<EStep> {
    let aug = augment(params);
    let pass = forward_filter(&aug, &params.sigma, x)?;
    let moments = backward_smooth(&aug, &pass.beliefs)?;
    Ok(EStep {
        moments,
        log_likelihood: pass.log_likelihood,
    })
}

/// Exact observed-data log-likelihood (prediction-error decomposition).
pub fn log_likelihood(params: &ModelParams, x: &DMatrix<f64>) -> Result<f64> {
    let aug = augment(params);
    Ok(forward_filter(&aug, &params.sigma, x)?.log_likelihood)
}

/// Row of `x` matching smoothed position `pos`.
fn row_of(moments: &SmoothedMoments, pos: usize) -> usize {
    pos + moments.s - 1
}

/// `H = (sum x_k E[t_k]^T) (sum E[t_k t_k^T])^{-1}` over the conditioned rows.
pub fn update_h(moments: &SmoothedMoments, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = moments.r;
    let m = x.ncols();
    let mut sxt = DMatrix::zeros(m, r);
    let mut stt = DMatrix::zeros(r, r);
    for pos in 0..moments.len() {
        let xk = x.row(row_of(moments, pos)).transpose();
        sxt += &xk * moments.latent_mean(pos).transpose();
        stt += moments.latent_second_moment(pos);
    }
    symmetrize(&mut stt);
    let max_diag = stt.diagonal().max();
    let collapsed: Vec<usize> = (0..r)
        .filter(|&i| !(stt[(i, i)] > 1e-12 * max_diag.max(f64::MIN_POSITIVE)))
        .collect();
    if !collapsed.is_empty() {
        return Err(Error::CollapsedLatents { latents: collapsed });
    }
    let chol = Cholesky::new(stt).ok_or(Error::CollapsedLatents {
        latents: (0..r).collect(),
    })?;
    // H^T = Stt^{-1} Sxt^T
    Ok(chol.solve(&sxt.transpose()).transpose())
}

/// Per-channel noise variances for the updated emission matrix.
pub fn update_sigma(
    moments: &SmoothedMoments,
    x: &DMatrix<f64>,
    h_new: &DMatrix<f64>,
) -> DVector<f64> {
    let m = x.ncols();
    let mut acc = DVector::zeros(m);
    for pos in 0..moments.len() {
        let xk = x.row(row_of(moments, pos));
        let mean = moments.latent_mean(pos);
        let second = moments.latent_second_moment(pos);
        for p in 0..m {
            let hp = h_new.row(p).transpose();
            let xp = xk[p];
            acc[p] += xp * xp - 2.0 * hp.dot(&mean) * xp + hp.dot(&(&second * &hp));
        }
    }
    let count = moments.len() as f64;
    acc.map(|v: f64| (v / count).max(SIGMA_FLOOR))
}

/// Lagged second-moment sums for latent `i` over positions `1..T`.
pub fn lagged_statistics(moments: &SmoothedMoments, i: usize) -> DMatrix<f64> {
    let s = moments.s;
    let mut stats = DMatrix::zeros(s + 1, s + 1);
    for pos in 1..moments.len() {
        for a in 0..=s {
            for b in a..=s {
                stats[(a, b)] += moments.lagged_product(pos, i, a, b);
            }
        }
    }
    for a in 0..=s {
        for b in 0..a {
            stats[(a, b)] = stats[(b, a)];
        }
    }
    stats
}

#[derive(Debug, Clone)]
pub struct BetaUpdate {
    pub beta: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub warnings: Vec<String>,
}

/// Seed for the GA run of latent `latent` in EM iteration `iteration`.
fn ga_seed(seed: u64, iteration: usize, latent: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 20) | latent as u64);
    rng.random()
}

pub fn update_beta(
    moments: &SmoothedMoments,
    prev: &ModelParams,
    cfg: &EmConfig,
    iteration: usize,
) -> Result<BetaUpdate> {
    let (r, s) = (moments.r, moments.s);
    let n = moments.len().saturating_sub(1) as f64;
    let mut beta = prev.beta.clone();
    let mut gamma = DVector::zeros(r);
    let mut warnings = Vec::new();

    for i in 0..r {
        let stats = lagged_statistics(moments, i);
        let acov: Vec<f64> = (1..=s).map(|j| (stats[(0, j)] / n).clamp(-1.0, 1.0)).collect();
        let objective = BetaObjective::new(acov, stats, n)?;
        let ga_cfg = GaConfig {
            seed: ga_seed(cfg.seed, iteration, i),
            ..cfg.ga.clone()
        };
        let warm = prev.latent_beta(i);
        let found = ga::minimize(&objective, &ga_cfg, Some(&warm));
        let radius = spectral_radius(&found.beta);
        if !found.feasible || objective.slack(&found.beta) < -FEASIBILITY_TOL {
            warnings.push(format!(
                "latent {i}: GA result violates the noise constraint, keeping previous coefficients"
            ));
        } else if !(radius < 1.0) {
            warnings.push(format!(
                "latent {i}: GA result is not stable (radius {radius:.4}), keeping previous coefficients"
            ));
        } else {
            for j in 0..s {
                beta[(j, i)] = found.beta[j];
            }
        }
        let coeffs: Vec<f64> = beta.column(i).iter().copied().collect();
        let implied = ar_autocovariances(&coeffs)?;
        let tau2 = 1.0 - coeffs.iter().zip(&implied).map(|(b, g)| b * g).sum::<f64>();
        gamma[i] = tau2.clamp(TAU2_BOUNDS.0, TAU2_BOUNDS.1);
    }
    Ok(BetaUpdate {
        beta,
        gamma,
        warnings,
    })
}

/// One M-step from smoothed moments.
pub fn m_step(
    moments: &SmoothedMoments,
    x: &DMatrix<f64>,
    prev: &ModelParams,
    cfg: &EmConfig,
    iteration: usize,
) -> Result<(ModelParams, Vec<String>)> {
    let h = update_h(moments, x)?;
    let sigma = update_sigma(moments, x, &h);
    let (beta, gamma, warnings) = if cfg.freeze_dynamics {
        (prev.beta.clone(), prev.gamma.clone(), Vec::new())
    } else {
        let up = update_beta(moments, prev, cfg, iteration)?;
        (up.beta, up.gamma, up.warnings)
    };
    Ok((ModelParams::new(beta, h, gamma, sigma)?, warnings))
}

/// Runs EM from [`init_params`].
pub fn fit(x: &DMatrix<f64>, cfg: &EmConfig) -> Result<(ModelParams, TrainingTrace)> {
    let init = init_params(x, cfg)?;
    fit_from(x, cfg, init)
}

/// Runs EM from the given starting point and returns the parameters with
/// the highest observed-data log-likelihood seen.
pub fn fit_from(
    x: &DMatrix<f64>,
    cfg: &EmConfig,
    init: ModelParams,
) -> Result<(ModelParams, TrainingTrace)> {
    cfg.validate_for(x.nrows(), x.ncols())?;
    let mut params = init;
    let mut trace = TrainingTrace::default();
    let mut best: Option<(ModelParams, f64)> = None;
    let mut prev_ll: Option<f64> = None;
    let mut pending_eval = true;

    for iteration in 1..=cfg.max_iterations {
        let start = Instant::now();
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };
        let estep = e_step(&params, x).map_err(wrap)?;
        let ll = estep.log_likelihood;
        if iteration == 1 {
            trace.initial_log_likelihood = ll;
        }
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((params.clone(), ll));
        }
        if let Some(p) = prev_ll {
            if ((ll - p) / p.abs()).abs() < cfg.loglik_rel_tol {
                trace.converged = true;
                pending_eval = false;
                break;
            }
        }
        prev_ll = Some(ll);

        let (next, warnings) = m_step(&estep.moments, x, &params, cfg, iteration).map_err(wrap)?;
        let residual = next.lemma_residual().map_err(wrap)?;
        trace.iterations.push(IterationRecord {
            iteration,
            log_likelihood: ll,
            lemma_residual: residual,
            beta: next.beta.clone(),
            seconds: start.elapsed().as_secs_f64(),
            warnings,
        });
        params = next;
    }

    if pending_eval {
        let ll = log_likelihood(&params, x).map_err(|e| Error::Iteration {
            iteration: cfg.max_iterations,
            source: Box::new(e),
        })?;
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((params, ll));
        }
    }
    let (best_params, best_ll) = best.expect("at least one iteration ran");
    trace.best_log_likelihood = best_ll;
    Ok((best_params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::SmoothedMoments;
    use crate::statespace::{simulate, LEMMA_RESIDUAL_TOL};

    /// Moments describing known latent values with zero posterior spread.
    fn point_moments(latents: &DMatrix<f64>, s: usize) -> SmoothedMoments {
        let (n, r) = latents.shape();
        let rs = r * s;
        let mut means = Vec::new();
        for k in (s - 1)..n {
            let mut v = DVector::zeros(rs);
            for lag in 0..s {
                for i in 0..r {
                    v[lag * r + i] = latents[(k - lag, i)];
                }
            }
            means.push(v);
        }
        let t = means.len();
        SmoothedMoments {
            r,
            s,
            means,
            covs: vec![DMatrix::zeros(rs, rs); t],
            lag_one: vec![DMatrix::zeros(rs, rs); t],
        }
    }

    #[test]
    fn scalar_emission_least_squares() {
        let latents = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let x = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let h = update_h(&point_moments(&latents, 1), &x).unwrap();
        assert!((h[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn emission_with_identity_moments_is_cross_covariance() {
        // Two steps with E[t t^T] summing to I.
        let latents = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 3.0, 0.0, 1.0]);
        let moments = point_moments(&latents, 1);
        let h = update_h(&moments, &x).unwrap();
        let mut cross = DMatrix::zeros(3, 2);
        for k in 0..2 {
            cross += x.row(k).transpose() * latents.row(k);
        }
        assert!((h - cross).amax() < 1e-14);
    }

    #[test]
    fn collapsed_latent_is_named() {
        let latents = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]);
        let x = DMatrix::from_element(3, 2, 1.0);
        match update_h(&point_moments(&latents, 1), &x) {
            Err(Error::CollapsedLatents { latents }) => assert_eq!(latents, vec![1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sigma_exact_fit_hits_floor_and_zero_emission_gives_power() {
        let latents = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let h = DMatrix::from_column_slice(2, 1, &[2.0, -1.0]);
        let x = &latents * h.transpose();
        let moments = point_moments(&latents, 1);
        let sigma = update_sigma(&moments, &x, &h);
        assert!(sigma.iter().all(|&v| v == SIGMA_FLOOR));

        let zero = DMatrix::zeros(2, 1);
        let sigma = update_sigma(&moments, &x, &zero);
        for p in 0..2 {
            let power = x.column(p).iter().map(|v| v * v).sum::<f64>() / 3.0;
            assert!((sigma[p] - power).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_m_step_recovers_known_emission_and_noise() {
        let truth = ModelParams::with_unit_variance(
            DMatrix::from_row_slice(1, 2, &[0.7, -0.4]),
            DMatrix::from_row_slice(4, 2, &[1.0, 0.2, -0.5, 1.0, 0.3, 0.8, 1.2, -0.6]),
            DVector::from_element(4, 0.25),
        )
        .unwrap();
        let sim = simulate(&truth, 10_000, 3).unwrap();
        let moments = point_moments(&sim.latents, 1);
        let h = update_h(&moments, &sim.observations).unwrap();
        assert!((&h - &truth.h).amax() < 0.05);
        let sigma = update_sigma(&moments, &sim.observations, &h);
        assert!(sigma.iter().all(|v| (0.2..=0.3).contains(v)), "{sigma}");
    }

    #[test]
    fn beta_update_recovers_ar1_from_population_moments() {
        // Moments of a unit-variance AR(1) with beta = 0.6: every position
        // has E[t_k^2] = 1 and E[t_k t_{k-1}] = 0.6.
        let t = 500;
        let cov = DMatrix::from_row_slice(1, 1, &[1.0]);
        let moments = SmoothedMoments {
            r: 1,
            s: 1,
            means: vec![DVector::zeros(1); t],
            covs: vec![cov; t],
            lag_one: vec![DMatrix::from_element(1, 1, 0.6); t],
        };
        let prev = ModelParams::with_unit_variance(
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let cfg = EmConfig {
            r: 1,
            s: 1,
            ..EmConfig::default()
        };
        let up = update_beta(&moments, &prev, &cfg, 1).unwrap();
        assert!((up.beta[(0, 0)] - 0.6).abs() < 0.02);
        assert!((up.gamma[0] - 0.64).abs() < 0.03);

        let again = update_beta(&moments, &prev, &cfg, 1).unwrap();
        assert_eq!(up.beta, again.beta);
        assert_eq!(up.gamma, again.gamma);
    }

    #[test]
    fn beta_update_on_white_latent() {
        let t = 400;
        let moments = SmoothedMoments {
            r: 1,
            s: 1,
            means: vec![DVector::zeros(1); t],
            covs: vec![DMatrix::identity(1, 1); t],
            lag_one: vec![DMatrix::zeros(1, 1); t],
        };
        let prev = ModelParams::with_unit_variance(
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let cfg = EmConfig {
            r: 1,
            s: 1,
            ..EmConfig::default()
        };
        let up = update_beta(&moments, &prev, &cfg, 3).unwrap();
        assert!(up.beta[(0, 0)].abs() < 0.02);
        assert!((up.gamma[0] - 1.0).abs() < 1e-3);
    }

    fn small_problem() -> (DMatrix<f64>, EmConfig) {
        let truth = ModelParams::random_stable(4, 2, 2, 0.3, 21).unwrap();
        let x = simulate(&truth, 400, 5).unwrap().observations;
        let cfg = EmConfig {
            r: 2,
            s: 2,
            max_iterations: 5,
            seed: 9,
            ..EmConfig::default()
        };
        (x, cfg)
    }

    #[test]
    fn init_satisfies_invariants_and_is_deterministic() {
        let (x, cfg) = small_problem();
        let a = init_params(&x, &cfg).unwrap();
        a.validate().unwrap();
        assert!(a.sigma.iter().all(|&v| v >= INIT_SIGMA_FLOOR));
        assert_eq!(a, init_params(&x, &cfg).unwrap());
        for i in 0..2 {
            assert!(a.beta.column(i).iter().all(|b| b.abs() < 0.3));
        }
    }

    #[test]
    fn init_noise_is_residual_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(2000, 5, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let cfg = EmConfig {
            r: 2,
            s: 1,
            ..EmConfig::default()
        };
        let p = init_params(&x, &cfg).unwrap();
        let mean = DVector::from_iterator(5, x.column_iter().map(|c| c.mean()));
        let centered = DMatrix::from_fn(2000, 5, |i, j| x[(i, j)] - mean[j]);
        let c0 = centered.tr_mul(&centered) / 1999.0;
        let hht = &p.h * p.h.transpose();
        for i in 0..5 {
            let explained = hht[(i, i)] / c0[(i, i)];
            let expected = (c0[(i, i)] * (1.0 - explained)).max(INIT_SIGMA_FLOOR);
            assert!((p.sigma[i] - expected).abs() < 1e-12);
            assert!(p.sigma[i] > 0.4 && p.sigma[i] <= c0[(i, i)] + 1e-12);
        }
    }

    #[test]
    fn latent_dimension_cannot_exceed_measurements() {
        let (x, mut cfg) = small_problem();
        cfg.r = 5;
        assert!(matches!(init_params(&x, &cfg), Err(Error::Config { key, .. }) if key == "em.r"));
    }

    #[test]
    fn single_iteration_records_one_step() {
        let (x, mut cfg) = small_problem();
        cfg.max_iterations = 1;
        let (_, trace) = fit(&x, &cfg).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn fit_is_deterministic_and_never_worse_than_init() {
        let (x, cfg) = small_problem();
        let (pa, ta) = fit(&x, &cfg).unwrap();
        let (pb, tb) = fit(&x, &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ta.len(), tb.len());
        for (a, b) in ta.iterations.iter().zip(&tb.iterations) {
            assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.lemma_residual.to_bits(), b.lemma_residual.to_bits());
        }
        let init_ll = log_likelihood(&init_params(&x, &cfg).unwrap(), &x).unwrap();
        assert!(ta.best_log_likelihood >= init_ll);
        assert!((log_likelihood(&pa, &x).unwrap() - ta.best_log_likelihood).abs() < 1e-9);
        assert!(pa.lemma_residual().unwrap() <= LEMMA_RESIDUAL_TOL);
        pa.validate().unwrap();
    }

    #[test]
    fn frozen_dynamics_em_is_monotone() {
        let (x, mut cfg) = small_problem();
        cfg.freeze_dynamics = true;
        cfg.max_iterations = 15;
        cfg.loglik_rel_tol = 1e-300;
        let (_, trace) = fit(&x, &cfg).unwrap();
        for w in trace.iterations.windows(2) {
            assert!(w[1].log_likelihood >= w[0].log_likelihood - 1e-8);
        }
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let (x, mut cfg) = small_problem();
        cfg.max_iterations = 2;
        let (_, trace) = fit(&x, &cfg).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("iteration,loglik,residual,seconds\n"));
        assert_eq!(csv.lines().count(), trace.len() + 1);
    }
}
