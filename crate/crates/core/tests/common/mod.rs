#![allow(dead_code)]

//! Test-only reference computations that do not share code paths with the
//! recursive implementations they check.

use nalgebra::{DMatrix, DVector};
use ppfa_core::statespace::ModelParams;

/// Exact joint Gaussian of the unstacked latent path `t_1..t_N` and the
/// observations `x_s..x_N`, built by direct covariance propagation.
pub struct JointGaussian {
    pub r: usize,
    pub s: usize,
    pub m: usize,
    pub n: usize,
    /// `Cov(t)`, `(N r) x (N r)`, latent `i` at time `k` (0-based) is `k r + i`.
    pub latent_cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(params: &ModelParams, n: usize) -> Self {
        let (m, r, s) = (params.m(), params.r(), params.s());
        let dim = n * r;
        // t = L w with w ~ N(0, I); row block k of L expresses t_k.
        let mut l = DMatrix::<f64>::zeros(dim, dim);
        for k in 0..n {
            for i in 0..r {
                let row = k * r + i;
                if k < s {
                    l[(row, row)] = 1.0;
                } else {
                    for j in 1..=s {
                        let src = (k - j) * r + i;
                        let b = params.beta[(j - 1, i)];
                        for c in 0..dim {
                            l[(row, c)] += b * l[(src, c)];
                        }
                    }
                    l[(row, row)] += params.gamma[i].sqrt();
                }
            }
        }
        JointGaussian {
            r,
            s,
            m,
            n,
            latent_cov: &l * l.transpose(),
        }
    }

    /// Observation selector restricted to rows `s-1..=last` (0-based).
    fn emission_map(&self, params: &ModelParams, last: usize) -> DMatrix<f64> {
        let rows = last + 2 - self.s;
        let mut a = DMatrix::zeros(rows * self.m, self.n * self.r);
        for (o, k) in (self.s - 1..=last).enumerate() {
            for p in 0..self.m {
                for i in 0..self.r {
                    a[(o * self.m + p, k * self.r + i)] = params.h[(p, i)];
                }
            }
        }
        a
    }

    fn stacked_obs(&self, x: &DMatrix<f64>, last: usize) -> DVector<f64> {
        let rows = last + 2 - self.s;
        DVector::from_iterator(
            rows * self.m,
            (self.s - 1..=last).flat_map(|k| (0..self.m).map(move |p| x[(k, p)])),
        )
    }

    /// Posterior mean and covariance of the whole latent path given rows
    /// `s-1..=last` of `x`.
    pub fn condition(
        &self,
        params: &ModelParams,
        x: &DMatrix<f64>,
        last: usize,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let a = self.emission_map(params, last);
        let obs = self.stacked_obs(x, last);
        let cov_tx = &self.latent_cov * a.transpose();
        let mut cov_x = &a * &cov_tx;
        let blocks = obs.len() / self.m;
        for o in 0..blocks {
            for p in 0..self.m {
                cov_x[(o * self.m + p, o * self.m + p)] += params.sigma[p];
            }
        }
        let inv = cov_x.try_inverse().expect("observation covariance invertible");
        let mean = &cov_tx * &inv * obs;
        let cov = &self.latent_cov - &cov_tx * inv * cov_tx.transpose();
        (mean, cov)
    }

    /// Log density of rows `s-1..N` of `x`.
    pub fn log_likelihood(&self, params: &ModelParams, x: &DMatrix<f64>) -> f64 {
        let last = self.n - 1;
        let a = self.emission_map(params, last);
        let obs = self.stacked_obs(x, last);
        let mut cov_x = &a * &self.latent_cov * a.transpose();
        let blocks = obs.len() / self.m;
        for o in 0..blocks {
            for p in 0..self.m {
                cov_x[(o * self.m + p, o * self.m + p)] += params.sigma[p];
            }
        }
        let d = obs.len() as f64;
        let det = cov_x.determinant();
        let quad = obs.dot(&(cov_x.try_inverse().unwrap() * &obs));
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
    }

    /// Index list of the stacked state at absolute time `k` (0-based row),
    /// ordered `t_k, t_{k-1}, ..., t_{k-s+1}`.
    pub fn stacked_indices(&self, k: usize) -> Vec<usize> {
        (0..self.s)
            .flat_map(|lag| (0..self.r).map(move |i| (k - lag) * self.r + i))
            .collect()
    }
}

pub fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn select2(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Random parameters with a stable AR polynomial per latent and arbitrary
/// positive noise levels (not tied by the unit-variance constraint).
pub fn random_model(m: usize, r: usize, s: usize, seed: u64) -> ModelParams {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut beta = DMatrix::zeros(s, r);
    for i in 0..r {
        let roots: Vec<f64> = (0..s).map(|_| rng.random_range(-0.9..0.9)).collect();
        let b = ppfa_core::statespace::beta_from_roots(&roots);
        for j in 0..s {
            beta[(j, i)] = b[j];
        }
    }
    let h = DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.5..1.5));
    let gamma = DVector::from_fn(r, |_, _| rng.random_range(0.1..1.0));
    let sigma = DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
    ModelParams::new(beta, h, gamma, sigma).unwrap()
}
