//! Real-valued genetic algorithm for the per-latent AR coefficients.
//!
//! The M-step for `beta^i = (beta_1^i, ..., beta_s^i)` has no closed form.
//! Its stationarity conditions are written as `A_j(beta) = B_j(beta)` for
//! every lag `j`, and the GA minimizes `f = sum_j (A_j - B_j)^2` under the
//! constraint `1 - sum_j beta_j gamma_j >= 0`, handled by a linear penalty.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Slack on the noise constraint before a result is flagged infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_scale: f64,
    /// Penalty weight on constraint violation.
    pub lambda_penalty: f64,
    pub elitism_count: usize,
    pub seed: u64,
    /// Inclusive bounds applied to every gene.
    pub search_box: (f64, f64),
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 60,
            generations: 120,
            crossover_rate: 0.8,
            mutation_rate: 0.15,
            mutation_scale: 0.1,
            lambda_penalty: 1e3,
            elitism_count: 2,
            seed: 0,
            search_box: (-2.0, 2.0),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::config("ga.population_size", "must be at least 2"));
        }
        if self.elitism_count >= self.population_size {
            return Err(Error::config(
                "ga.elitism_count",
                "must be smaller than population_size",
            ));
        }
        for (key, v) in [
            ("ga.crossover_rate", self.crossover_rate),
            ("ga.mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        if !(self.mutation_scale > 0.0) || !self.mutation_scale.is_finite() {
            return Err(Error::config("ga.mutation_scale", "must be positive"));
        }
        if !(self.lambda_penalty > 0.0) || !self.lambda_penalty.is_finite() {
            return Err(Error::config("ga.lambda_penalty", "must be greater than zero"));
        }
        let (lo, hi) = self.search_box;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config("ga.search_min", "search box must satisfy min < max"));
        }
        Ok(())
    }
}

/// Sufficient statistics for one latent coordinate.
#[derive(Debug, Clone)]
pub struct BetaObjective {
    /// Autocovariance estimates `gamma_1..gamma_s`.
    pub gamma: Vec<f64>,
    /// `(s+1) x (s+1)`, entry `(a, b)` = `sum_k E[t_{k-a} t_{k-b}]`.
    pub stats: DMatrix<f64>,
    /// Number of summed time steps.
    pub n: f64,
}

impl BetaObjective {
    pub fn new(gamma: Vec<f64>, stats: DMatrix<f64>, n: f64) -> Result<Self> {
        let s = gamma.len();
        if s == 0 {
            return Err(Error::config("s", "need at least one lag"));
        }
        if stats.shape() != (s + 1, s + 1) {
            return Err(Error::DimensionMismatch {
                expected: s + 1,
                found: stats.nrows(),
            });
        }
        if !(n > 0.0) {
            return Err(Error::config("n", "need at least one time step"));
        }
        let scale = stats.amax().max(1.0);
        if (&stats - stats.transpose()).amax() > 1e-8 * scale {
            return Err(Error::Numeric("lagged moment matrix is not symmetric".into()));
        }
        if stats.clone().symmetric_eigenvalues().min() < -1e-8 * scale {
            return Err(Error::Numeric("lagged moment matrix is not PSD".into()));
        }
        Ok(BetaObjective { gamma, stats, n })
    }

    pub fn lags(&self) -> usize {
        self.gamma.len()
    }

    /// `1 - sum_j beta_j gamma_j`
    pub fn slack(&self, beta: &[f64]) -> f64 {
        1.0 - beta.iter().zip(&self.gamma).map(|(b, g)| b * g).sum::<f64>()
    }
}

/// `f(beta) = sum_j (A_j - B_j)^2`, with every sum divided by `n` so the
/// scale does not depend on series length.
pub fn objective_f(beta: &[f64], obj: &BetaObjective) -> f64 {
    let s = obj.lags();
    let st = |a: usize, b: usize| obj.stats[(a, b)] / obj.n;
    let tau2 = obj.slack(beta);
    // sum_k (t_k - sum_l beta_l t_{k-l})^2
    let mut resid = st(0, 0);
    for l in 1..=s {
        resid -= 2.0 * beta[l - 1] * st(0, l);
        for g in 1..=s {
            resid += beta[l - 1] * beta[g - 1] * st(l, g);
        }
    }
    let mut f = 0.0;
    for j in 1..=s {
        let mut bracket = obj.gamma[j - 1] + 2.0 * st(0, j);
        for l in 1..=s {
            bracket -= 2.0 * beta[l - 1] * st(j, l);
        }
        let a = bracket * tau2;
        let b = obj.gamma[j - 1] * resid;
        f += (a - b) * (a - b);
    }
    f
}

/// Penalized objective: `f` when feasible, `f - lambda (1 - sum beta gamma)`
/// otherwise.
pub fn objective_g(beta: &[f64], obj: &BetaObjective, lambda: f64) -> f64 {
    let f = objective_f(beta, obj);
    let slack = obj.slack(beta);
    if slack >= 0.0 {
        f
    } else {
        f - lambda * slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub beta: Vec<f64>,
    pub value: f64,
    /// `false` when the best individual violates the constraint by more
    /// than [`FEASIBILITY_TOL`].
    pub feasible: bool,
    /// Best fitness seen up to and including each generation.
    pub best_history: Vec<f64>,
}

pub fn minimize(obj: &BetaObjective, cfg: &GaConfig, warm_start: Option<&[f64]>) -> GaResult {
    let lambda = cfg.lambda_penalty;
    let mut result = minimize_by(obj.lags(), cfg, warm_start, |b| objective_g(b, obj, lambda));
    result.feasible = obj.slack(&result.beta) >= -FEASIBILITY_TOL;
    result
}

/// GA core over an arbitrary fitness (lower is better).
///
/// Tournament selection of size two, blend crossover, Gaussian mutation,
/// elitism. Non-finite fitness ranks last.
pub fn minimize_by<F>(
    genes: usize,
    cfg: &GaConfig,
    warm_start: Option<&[f64]>,
    mut fitness: F,
) -> GaResult
where
    F: FnMut(&[f64]) -> f64,
{
    let (lo, hi) = cfg.search_box;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mutation = Normal::new(0.0, cfg.mutation_scale).expect("validated scale");
    let score = |v: f64| if v.is_nan() { f64::INFINITY } else { v };

    let mut population: Vec<Vec<f64>> = Vec::with_capacity(cfg.population_size);
    if let Some(w) = warm_start {
        population.push(w.iter().map(|v| v.clamp(lo, hi)).collect());
    }
    while population.len() < cfg.population_size {
        population.push((0..genes).map(|_| rng.random_range(lo..=hi)).collect());
    }
    let mut fit: Vec<f64> = population.iter().map(|ind| score(fitness(ind))).collect();

    let mut best_idx = argmin(&fit);
    let mut best = population[best_idx].clone();
    let mut best_value = fit[best_idx];
    let mut best_history = Vec::with_capacity(cfg.generations + 1);
    best_history.push(best_value);

    for _ in 0..cfg.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]));

        let mut next: Vec<Vec<f64>> = Vec::with_capacity(cfg.population_size);
        let mut next_fit: Vec<f64> = Vec::with_capacity(cfg.population_size);
        for &e in order.iter().take(cfg.elitism_count) {
            next.push(population[e].clone());
            next_fit.push(fit[e]);
        }
        while next.len() < cfg.population_size {
            let p1 = tournament(&fit, &mut rng);
            let p2 = tournament(&fit, &mut rng);
            let mut child = if rng.random::<f64>() < cfg.crossover_rate {
                population[p1]
                    .iter()
                    .zip(&population[p2])
                    .map(|(a, b)| {
                        let u: f64 = rng.random_range(-0.25..1.25);
                        a + u * (b - a)
                    })
                    .collect::<Vec<_>>()
            } else {
                population[p1].clone()
            };
            for g in child.iter_mut() {
                if rng.random::<f64>() < cfg.mutation_rate {
                    *g += mutation.sample(&mut rng);
                }
                *g = g.clamp(lo, hi);
            }
            next_fit.push(score(fitness(&child)));
            next.push(child);
        }
        population = next;
        fit = next_fit;

        best_idx = argmin(&fit);
        if fit[best_idx] < best_value {
            best_value = fit[best_idx];
            best = population[best_idx].clone();
        }
        best_history.push(best_value);
    }

    GaResult {
        beta: best,
        value: best_value,
        feasible: true,
        best_history,
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut idx = 0;
    for (i, v) in values.iter().enumerate() {
        if v.total_cmp(&values[idx]).is_lt() {
            idx = i;
        }
    }
    idx
}

fn tournament(fit: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let a = rng.random_range(0..fit.len());
    let b = rng.random_range(0..fit.len());
    if fit[b] < fit[a] {
        b
    } else {
        a
    }
}

/// Population statistics of a unit-variance AR(1) process, `n` steps.
#[cfg(test)]
pub(crate) fn ar1_population_objective(beta: f64, n: f64) -> BetaObjective {
    let stats = DMatrix::from_row_slice(2, 2, &[n, beta * n, beta * n, n]);
    BetaObjective::new(vec![beta], stats, n).unwrap()
}
