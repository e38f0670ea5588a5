//! The latent dynamic model, its first-order (augmented) form and an exact
//! simulator.
//!
//! Each latent coordinate follows its own AR(s) process,
//! `t_k = sum_j B_j t_{k-j} + e_k`, with diagonal `B_j`, and the
//! measurements are `x_k = H t_k + eps_k`. The latent noise variances are
//! tied to the AR coefficients so that every latent has unit stationary
//! variance: `tau_i^2 = 1 - sum_j beta_j^i gamma_j^i`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance for the latent noise constraint `tau^2 >= 0`.
pub const NOISE_CONSTRAINT_TOL: f64 = 1e-9;
/// Largest admissible `|tau_i^2 - (1 - sum_j beta_j gamma_j)|`.
pub const LEMMA_RESIDUAL_TOL: f64 = 1e-6;

/// Parameters of the latent dynamic model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `s x r`; row `j` holds the diagonal of `B_{j+1}`.
    pub beta: DMatrix<f64>,
    /// Emission matrix, `m x r`.
    pub h: DMatrix<f64>,
    /// Latent noise variances `tau_i^2`, length `r`.
    pub gamma: DVector<f64>,
    /// Measurement noise variances `sigma_i^2`, length `m`.
    pub sigma: DVector<f64>,
}

impl ModelParams {
    pub fn new(
        beta: DMatrix<f64>,
        h: DMatrix<f64>,
        gamma: DVector<f64>,
        sigma: DVector<f64>,
    ) -> Result<Self> {
        let params = ModelParams {
            beta,
            h,
            gamma,
            sigma,
        };
        params.check_shapes()?;
        Ok(params)
    }

    /// Builds parameters whose latent noise variances follow from `beta`
    /// through the unit-variance constraint.
    pub fn with_unit_variance(
        beta: DMatrix<f64>,
        h: DMatrix<f64>,
        sigma: DVector<f64>,
    ) -> Result<Self> {
        let r = beta.ncols();
        let mut params = ModelParams::new(beta, h, DVector::from_element(r, 1.0), sigma)?;
        params.gamma = implied_noise_variances(&params.beta)?;
        Ok(params)
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn r(&self) -> usize {
        self.h.ncols()
    }

    pub fn s(&self) -> usize {
        self.beta.nrows()
    }

    /// AR coefficients `(beta_1^i, ..., beta_s^i)` of latent `i`.
    pub fn latent_beta(&self, i: usize) -> Vec<f64> {
        self.beta.column(i).iter().copied().collect()
    }

    fn check_shapes(&self) -> Result<()> {
        let (s, r) = self.beta.shape();
        if s == 0 || r == 0 {
            return Err(Error::config("beta", "need at least one lag and one latent"));
        }
        if self.h.ncols() != r {
            return Err(Error::config(
                "h",
                format!("emission has {} columns, expected r = {r}", self.h.ncols()),
            ));
        }
        if self.h.nrows() == 0 {
            return Err(Error::config("h", "need at least one measurement"));
        }
        if self.gamma.len() != r {
            return Err(Error::config(
                "gamma",
                format!("expected {r} latent noise variances, got {}", self.gamma.len()),
            ));
        }
        if self.sigma.len() != self.h.nrows() {
            return Err(Error::config(
                "sigma",
                format!(
                    "expected {} measurement noise variances, got {}",
                    self.h.nrows(),
                    self.sigma.len()
                ),
            ));
        }
        let all_finite = self.beta.iter().chain(self.h.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config("beta", "non-finite coefficient"));
        }
        if let Some(i) = self.gamma.iter().position(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::config("gamma", format!("entry {i} must be finite and >= 0")));
        }
        if let Some(i) = self.sigma.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::config("sigma", format!("entry {i} must be finite and > 0")));
        }
        Ok(())
    }

    /// Checks every structural invariant: shapes, noise signs, stability of
    /// each latent AR process and the unit-variance noise constraint.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let residual = self.lemma_residual()?;
        if residual > LEMMA_RESIDUAL_TOL {
            return Err(Error::Numeric(format!(
                "latent noise variances are inconsistent with the AR coefficients (residual {residual:e})"
            )));
        }
        Ok(())
    }

    /// `max_i |tau_i^2 - (1 - sum_j beta_j^i gamma_j^i)|` with model-implied
    /// autocovariances. Fails if any latent is unstable.
    pub fn lemma_residual(&self) -> Result<f64> {
        let acov = autocovariances(self)?;
        let mut worst = 0.0f64;
        for i in 0..self.r() {
            let implied = 1.0
                - (0..self.s())
                    .map(|j| self.beta[(j, i)] * acov[(i, j)])
                    .sum::<f64>();
            worst = worst.max((self.gamma[i] - implied).abs());
        }
        Ok(worst)
    }

    /// Random parameters with stable latent dynamics and unit-variance latents.
    ///
    /// AR polynomials are built from real roots in `[-0.8, 0.9]` and emission
    /// entries are standard normal.
    pub fn random_stable(m: usize, r: usize, s: usize, noise_var: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut beta = DMatrix::zeros(s, r);
        for i in 0..r {
            let roots: Vec<f64> = (0..s).map(|_| rng.random_range(-0.8..0.9)).collect();
            let coeffs = beta_from_roots(&roots);
            for j in 0..s {
                beta[(j, i)] = coeffs[j];
            }
        }
        let h = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        ModelParams::with_unit_variance(beta, h, DVector::from_element(m, noise_var))
    }
}

/// AR coefficients whose characteristic polynomial has the given roots:
/// `prod_i (1 - rho_i z) = 1 - sum_j beta_j z^j`.
pub fn beta_from_roots(roots: &[f64]) -> Vec<f64> {
    // poly[k] is the coefficient of z^k
    let mut poly = vec![1.0];
    for &rho in roots {
        let mut next = vec![0.0; poly.len() + 1];
        for (k, &c) in poly.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= rho * c;
        }
        poly = next;
    }
    poly[1..].iter().map(|c| -c).collect()
}

/// Spectral radius of the companion matrix of one latent's AR polynomial.
pub fn spectral_radius(beta: &[f64]) -> f64 {
    let s = beta.len();
    if s == 1 {
        return beta[0].abs();
    }
    let companion = DMatrix::from_fn(s, s, |i, j| {
        if i == 0 {
            beta[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Stationary autocorrelations `gamma_1..gamma_s` of a unit-variance AR(s)
/// process, from the Yule-Walker equations with `gamma_0 = 1`.
pub fn ar_autocovariances(beta: &[f64]) -> Result<Vec<f64>> {
    let s = beta.len();
    let radius = spectral_radius(beta);
    if !(radius < 1.0) {
        return Err(Error::Unstable { latent: 0, radius });
    }
    // Row h-1: gamma_h - sum_j beta_j gamma_{|h-j|} = 0, gamma_0 moved to rhs.
    let mut a = DMatrix::<f64>::identity(s, s);
    let mut b = DVector::<f64>::zeros(s);
    for h in 1..=s {
        for (jm1, &bj) in beta.iter().enumerate() {
            let lag = h.abs_diff(jm1 + 1);
            if lag == 0 {
                b[h - 1] += bj;
            } else {
                a[(h - 1, lag - 1)] -= bj;
            }
        }
    }
    let solved = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numeric("Yule-Walker system is singular".into()))?;
    Ok(solved.iter().copied().collect())
}

/// Model-implied autocovariances, `r x s`, entry `(i, j)` = `gamma_{j+1}^i`.
pub fn autocovariances(params: &ModelParams) -> Result<DMatrix<f64>> {
    let (s, r) = (params.s(), params.r());
    let mut out = DMatrix::zeros(r, s);
    for i in 0..r {
        let g = ar_autocovariances(&params.latent_beta(i)).map_err(|e| match e {
            Error::Unstable { radius, .. } => Error::Unstable { latent: i, radius },
            other => other,
        })?;
        for j in 0..s {
            out[(i, j)] = g[j];
        }
    }
    Ok(out)
}

/// `tau^2 = 1 - sum_j beta_j gamma_j`. Errors when the result is negative
/// beyond [`NOISE_CONSTRAINT_TOL`].
pub fn noise_variance(beta: &[f64], gamma: &[f64]) -> Result<f64> {
    let tau2 = 1.0 - beta.iter().zip(gamma).map(|(b, g)| b * g).sum::<f64>();
    if tau2 < -NOISE_CONSTRAINT_TOL {
        return Err(Error::NoiseConstraint { value: tau2 });
    }
    Ok(tau2)
}

/// Latent noise variances implied by `beta` (`s x r`) under unit variance.
pub fn implied_noise_variances(beta: &DMatrix<f64>) -> Result<DVector<f64>> {
    let r = beta.ncols();
    let mut out = DVector::zeros(r);
    for i in 0..r {
        let b: Vec<f64> = beta.column(i).iter().copied().collect();
        let g = ar_autocovariances(&b).map_err(|e| match e {
            Error::Unstable { radius, .. } => Error::Unstable { latent: i, radius },
            other => other,
        })?;
        out[i] = noise_variance(&b, &g)?.max(0.0);
    }
    Ok(out)
}

/// First-order form of the model on the stacked state
/// `t_k^s = [t_k; t_{k-1}; ...; t_{k-s+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedParams {
    /// Block companion transition, `rs x rs`.
    pub phi: DMatrix<f64>,
    /// `[H, 0, ..., 0]`, `m x rs`.
    pub h: DMatrix<f64>,
    /// Noise covariance, nonzero only in the leading `r x r` block.
    pub gamma: DMatrix<f64>,
    pub r: usize,
    pub s: usize,
}

impl AugmentedParams {
    pub fn state_dim(&self) -> usize {
        self.r * self.s
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }
}

pub fn augment(params: &ModelParams) -> AugmentedParams {
    let (m, r, s) = (params.m(), params.r(), params.s());
    let rs = r * s;
    let mut phi = DMatrix::zeros(rs, rs);
    for j in 0..s {
        for i in 0..r {
            phi[(i, j * r + i)] = params.beta[(j, i)];
        }
    }
    for i in r..rs {
        phi[(i, i - r)] = 1.0;
    }
    let mut h = DMatrix::zeros(m, rs);
    h.view_mut((0, 0), (m, r)).copy_from(&params.h);
    let mut gamma = DMatrix::zeros(rs, rs);
    for i in 0..r {
        gamma[(i, i)] = params.gamma[i];
    }
    AugmentedParams { phi, h, gamma, r, s }
}

/// Standard-normal draws driving one simulation.
///
/// Latent draws come from stream 0 of the generator and measurement draws
/// from stream 1, so changing `m` never perturbs the latent path.
#[derive(Debug, Clone)]
pub struct SimulationNoise {
    /// `n x r`; the first `s` rows are the initial latents themselves.
    pub latent: DMatrix<f64>,
    /// `n x m`.
    pub measurement: DMatrix<f64>,
}

impl SimulationNoise {
    pub fn draw(n_steps: usize, r: usize, m: usize, seed: u64) -> Self {
        let mut latent_rng = ChaCha8Rng::seed_from_u64(seed);
        latent_rng.set_stream(0);
        let mut meas_rng = ChaCha8Rng::seed_from_u64(seed);
        meas_rng.set_stream(1);
        // Row-major draw order keeps a prefix of a long simulation equal to a
        // shorter one with the same seed.
        let latent = DMatrix::from_row_iterator(
            n_steps,
            r,
            (0..n_steps * r).map(|_| latent_rng.sample::<f64, _>(StandardNormal)),
        );
        let measurement = DMatrix::from_row_iterator(
            n_steps,
            m,
            (0..n_steps * m).map(|_| meas_rng.sample::<f64, _>(StandardNormal)),
        );
        SimulationNoise {
            latent,
            measurement,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// `n x r`
    pub latents: DMatrix<f64>,
    /// `n x m`
    pub observations: DMatrix<f64>,
}

pub fn simulate(params: &ModelParams, n_steps: usize, seed: u64) -> Result<Simulation> {
    if n_steps == 0 {
        return Err(Error::config("n_steps", "must be at least 1"));
    }
    let noise = SimulationNoise::draw(n_steps, params.r(), params.m(), seed);
    Ok(simulate_with_noise(params, &noise))
}

/// Runs the model forward on pre-drawn noise.
pub fn simulate_with_noise(params: &ModelParams, noise: &SimulationNoise) -> Simulation {
    run_regimes(&[params], |_| 0, noise)
}

/// Simulates with `before` up to row `switch_at` (exclusive) and `after`
/// from there on; the latent path is continuous across the switch.
pub fn simulate_with_switch(
    before: &ModelParams,
    after: &ModelParams,
    switch_at: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Simulation> {
    if n_steps == 0 {
        return Err(Error::config("n_steps", "must be at least 1"));
    }
    if (before.m(), before.r(), before.s()) != (after.m(), after.r(), after.s()) {
        return Err(Error::config(
            "switch",
            "both regimes need the same m, r and s",
        ));
    }
    let noise = SimulationNoise::draw(n_steps, before.r(), before.m(), seed);
    Ok(run_regimes(
        &[before, after],
        |k| usize::from(k >= switch_at),
        &noise,
    ))
}

fn run_regimes(
    regimes: &[&ModelParams],
    regime_at: impl Fn(usize) -> usize,
    noise: &SimulationNoise,
) -> Simulation {
    let (m, r, s) = (regimes[0].m(), regimes[0].r(), regimes[0].s());
    let n = noise.latent.nrows();
    let tau: Vec<Vec<f64>> = regimes
        .iter()
        .map(|p| p.gamma.iter().map(|g| g.sqrt()).collect())
        .collect();
    let sd: Vec<Vec<f64>> = regimes
        .iter()
        .map(|p| p.sigma.iter().map(|v| v.sqrt()).collect())
        .collect();

    let mut latents = DMatrix::zeros(n, r);
    for k in 0..n {
        let g = regime_at(k);
        let params = regimes[g];
        for i in 0..r {
            latents[(k, i)] = if k < s {
                noise.latent[(k, i)]
            } else {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += params.beta[(j, i)] * latents[(k - 1 - j, i)];
                }
                acc + tau[g][i] * noise.latent[(k, i)]
            };
        }
    }
    let mut observations = DMatrix::zeros(n, m);
    for k in 0..n {
        let g = regime_at(k);
        let params = regimes[g];
        for p in 0..m {
            let mut acc = 0.0;
            for i in 0..r {
                acc += params.h[(p, i)] * latents[(k, i)];
            }
            observations[(k, p)] = acc + sd[g][p] * noise.measurement[(k, p)];
        }
    }
    Simulation {
        latents,
        observations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(beta: &[f64]) -> ModelParams {
        let s = beta.len();
        ModelParams::with_unit_variance(
            DMatrix::from_column_slice(s, 1, beta),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1e-12),
        )
        .unwrap()
    }

    fn lag_autocov(series: &[f64], lag: usize) -> f64 {
        let n = series.len();
        let mean = series.iter().sum::<f64>() / n as f64;
        (lag..n)
            .map(|k| (series[k] - mean) * (series[k - lag] - mean))
            .sum::<f64>()
            / (n - lag) as f64
    }

    #[test]
    fn white_latent_has_zero_autocovariance() {
        assert_eq!(ar_autocovariances(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn ar1_autocovariance_matches_simulation() {
        assert!((ar_autocovariances(&[0.6]).unwrap()[0] - 0.6).abs() < 1e-12);
        let p = scalar_params(&[0.6]);
        assert!((p.gamma[0] - 0.64).abs() < 1e-12);
        let sim = simulate(&p, 1_000_000, 42).unwrap();
        let t: Vec<f64> = sim.latents.column(0).iter().copied().collect();
        assert!((lag_autocov(&t, 1) - 0.6).abs() < 0.01);
    }

    #[test]
    fn ar2_autocovariances_by_hand_and_simulation() {
        let g = ar_autocovariances(&[0.5, 0.2]).unwrap();
        assert!((g[0] - 0.625).abs() < 1e-12);
        assert!((g[1] - 0.5125).abs() < 1e-12);
        let p = scalar_params(&[0.5, 0.2]);
        let sim = simulate(&p, 400_000, 3).unwrap();
        let t: Vec<f64> = sim.latents.column(0).iter().copied().collect();
        assert!((lag_autocov(&t, 0) - 1.0).abs() < 0.03);
        assert!((lag_autocov(&t, 1) - 0.625).abs() < 0.03);
        assert!((lag_autocov(&t, 2) - 0.5125).abs() < 0.03);
    }

    #[test]
    fn unstable_coefficients_are_rejected() {
        assert!(matches!(ar_autocovariances(&[1.2]), Err(Error::Unstable { .. })));
        assert!(matches!(ar_autocovariances(&[0.7, 0.5]), Err(Error::Unstable { .. })));
    }

    #[test]
    fn noise_variance_cases() {
        assert_eq!(noise_variance(&[0.0], &[0.3]).unwrap(), 1.0);
        assert!((noise_variance(&[0.6], &[0.6]).unwrap() - 0.64).abs() < 1e-15);
        assert!(matches!(
            noise_variance(&[1.2], &[1.0]),
            Err(Error::NoiseConstraint { .. })
        ));
    }

    #[test]
    fn augmented_shapes_and_layout() {
        let p = ModelParams::random_stable(4, 2, 3, 0.1, 1).unwrap();
        let a = augment(&p);
        assert_eq!(a.phi.shape(), (6, 6));
        assert_eq!(a.h.shape(), (4, 6));
        assert_eq!(a.gamma.shape(), (6, 6));
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(a.phi[(i, 2 * j + i)], p.beta[(j, i)]);
                assert_eq!(a.phi[(i, 2 * j + 1 - i)], 0.0);
            }
        }
        for i in 2..6 {
            for c in 0..6 {
                assert_eq!(a.phi[(i, c)], if c == i - 2 { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(a.h.columns(0, 2), p.h.columns(0, 2));
        assert!(a.h.columns(2, 4).iter().all(|&v| v == 0.0));
        assert_eq!(a.gamma.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn augmentation_is_identity_for_first_order() {
        let p = ModelParams::random_stable(3, 2, 1, 0.1, 8).unwrap();
        let a = augment(&p);
        assert_eq!(a.phi, DMatrix::from_diagonal(&p.beta.row(0).transpose()));
        assert_eq!(a.h, p.h);
        assert_eq!(a.gamma, DMatrix::from_diagonal(&p.gamma));
    }

    #[test]
    fn scalar_second_order_companion() {
        let a = augment(&scalar_params(&[0.5, 0.2]));
        assert_eq!(a.phi, DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0]));
    }

    #[test]
    fn noiseless_emission_reproduces_latents() {
        let beta = DMatrix::from_row_slice(1, 2, &[0.5, -0.3]);
        let p = ModelParams::with_unit_variance(
            beta,
            DMatrix::identity(2, 2),
            DVector::from_element(2, 1e-12),
        )
        .unwrap();
        let sim = simulate(&p, 500, 4).unwrap();
        assert!((sim.observations - sim.latents).amax() < 1e-5);
    }

    #[test]
    fn white_process_has_no_lag_one_correlation() {
        let p = ModelParams::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let n = 20_000;
        let sim = simulate(&p, n, 12).unwrap();
        let t: Vec<f64> = sim.latents.column(0).iter().copied().collect();
        let rho = lag_autocov(&t, 1) / lag_autocov(&t, 0);
        assert!(rho.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn stationary_variance_is_one() {
        let beta = DMatrix::from_row_slice(1, 3, &[0.6, -0.4, 0.9]);
        let p = ModelParams::with_unit_variance(
            beta,
            DMatrix::identity(3, 3),
            DVector::from_element(3, 0.1),
        )
        .unwrap();
        let sim = simulate(&p, 100_000, 21).unwrap();
        for i in 0..3 {
            let t: Vec<f64> = sim.latents.column(i).iter().copied().collect();
            assert!((lag_autocov(&t, 0) - 1.0).abs() < 0.02, "latent {i}");
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = ModelParams::random_stable(3, 2, 2, 0.2, 5).unwrap();
        let a = simulate(&p, 300, 77).unwrap();
        let b = simulate(&p, 300, 77).unwrap();
        assert_eq!(a.observations, b.observations);
        let c = simulate(&p, 300, 78).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn augmented_iteration_is_bitwise_equal() {
        let p = ModelParams::random_stable(3, 2, 3, 0.2, 13).unwrap();
        let noise = SimulationNoise::draw(400, 2, 3, 99);
        let sim = simulate_with_noise(&p, &noise);
        let aug = augment(&p);
        let (r, s) = (2, 3);
        let rs = r * s;
        // initial stacked state t_s^s = [t_s; ...; t_1]
        let mut state = vec![0.0; rs];
        for lag in 0..s {
            for i in 0..r {
                state[lag * r + i] = sim.latents[(s - 1 - lag, i)];
            }
        }
        for k in s..400 {
            let mut next = vec![0.0; rs];
            for row in 0..rs {
                let mut acc = 0.0;
                for col in 0..rs {
                    acc += aug.phi[(row, col)] * state[col];
                }
                next[row] = acc;
            }
            for i in 0..r {
                next[i] += aug.gamma[(i, i)].sqrt() * noise.latent[(k, i)];
            }
            state = next;
            for i in 0..r {
                assert_eq!(state[i].to_bits(), sim.latents[(k, i)].to_bits());
            }
        }
    }

    #[test]
    fn roots_expand_to_stable_coefficients() {
        let b = beta_from_roots(&[0.5, -0.4]);
        // (1 - 0.5z)(1 + 0.4z) = 1 - 0.1 z - 0.2 z^2
        assert!((b[0] - 0.1).abs() < 1e-15 && (b[1] - 0.2).abs() < 1e-15);
        assert!((spectral_radius(&b) - 0.5).abs() < 1e-10);
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]

        #[test]
        fn random_stable_models_satisfy_invariants(seed in 0u64..500, r in 1usize..4, s in 1usize..4) {
            let p = ModelParams::random_stable(5, r, s, 0.3, seed).unwrap();
            p.validate().unwrap();
            proptest::prop_assert!(p.lemma_residual().unwrap() <= LEMMA_RESIDUAL_TOL);
            for i in 0..r {
                proptest::prop_assert!(spectral_radius(&p.latent_beta(i)) < 1.0);
            }
        }

        #[test]
        fn simulated_autocovariance_matches_model(seed in 0u64..20, r1 in -0.5f64..0.5, r2 in -0.5f64..0.5) {
            let beta = beta_from_roots(&[r1, r2]);
            let p = scalar_params(&beta);
            let n = 200_000;
            let sim = simulate(&p, n, seed).unwrap();
            let t: Vec<f64> = sim.latents.column(0).iter().copied().collect();
            let g = autocovariances(&p).unwrap();
            let tol = 5.0 / (n as f64).sqrt();
            for j in 0..2 {
                proptest::prop_assert!((lag_autocov(&t, j + 1) - g[(0, j)]).abs() < tol);
            }
        }
    }

    #[test]
    fn switch_with_identical_regimes_matches_plain_simulation() {
        let p = ModelParams::random_stable(3, 2, 2, 0.2, 5).unwrap();
        let plain = simulate(&p, 200, 4).unwrap();
        let switched = simulate_with_switch(&p, &p, 100, 200, 4).unwrap();
        assert_eq!(plain.observations, switched.observations);

        let mut q = p.clone();
        q.beta.neg_mut();
        let changed = simulate_with_switch(&p, &q, 100, 200, 4).unwrap();
        assert_eq!(
            plain.observations.rows(0, 100),
            changed.observations.rows(0, 100)
        );
        assert_ne!(plain.observations.row(150), changed.observations.row(150));
    }
}
