//! Covariance matrix adaptation evolution strategy, (mu/mu_w, lambda) with
//! cumulative step-size adaptation and rank-one plus rank-mu covariance
//! updates. Minimises.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const MIN_EIGENVALUE: f64 = 1e-14;
const SIGMA_RANGE: (f64, f64) = (1e-300, 1e300);

#[derive(Debug, Clone)]
pub struct CmaesState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    chi_n: f64,
    pub generation: usize,
}

/// Default population size `4 + floor(3 ln n)`.
pub fn default_lambda(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

impl CmaesState {
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize) -> Result<Self> {
        let n = mean.len();
        Self::with_covariance(mean, sigma, DMatrix::identity(n, n), lambda)
    }

    pub fn with_covariance(mean: Vec<f64>, sigma: f64, cov: DMatrix<f64>, lambda: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Config("CMA-ES needs at least one dimension".into()));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cov.nrows() });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if lambda < 2 {
            return Err(Error::Config("population size must be at least 2".into()));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

        Ok(CmaesState {
            mean: DVector::from_vec(mean),
            sigma,
            cov,
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            generation: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `B` and `D` (standard deviations) of the covariance, clamping
    /// eigenvalues that are not safely positive.
    fn eigen(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut values = eig.eigenvalues.clone();
        let mut repaired = false;
        for v in values.iter_mut() {
            if !(*v >= MIN_EIGENVALUE) {
                *v = MIN_EIGENVALUE;
                repaired = true;
            }
        }
        if repaired {
            log::warn!("covariance not positive definite; clamped eigenvalues at {MIN_EIGENVALUE:e}");
            let b = &eig.eigenvectors;
            self.cov = b * DMatrix::from_diagonal(&values) * b.transpose();
        }
        (eig.eigenvectors, values.map(f64::sqrt))
    }

    /// Samples `lambda` candidates `mean + sigma * B D z`.
    pub fn ask<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.dim();
        let (b, d) = self.eigen();
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = &b * d.component_mul(&z);
                (&self.mean + self.sigma * y).iter().copied().collect()
            })
            .collect()
    }

    /// Indices of the selected parents, best first. Stable: ties keep
    /// candidate order.
    pub fn ranking(fitnesses: &[f64]) -> Result<Vec<usize>> {
        if let Some(index) = fitnesses.iter().position(|f| f.is_nan()) {
            return Err(Error::NanFitness { index });
        }
        let mut order: Vec<usize> = (0..fitnesses.len()).collect();
        order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]));
        Ok(order)
    }

    pub fn tell(&mut self, candidates: &[Vec<f64>], fitnesses: &[f64]) -> Result<()> {
        if candidates.len() != fitnesses.len() {
            return Err(Error::DimensionMismatch { expected: candidates.len(), got: fitnesses.len() });
        }
        if candidates.len() != self.lambda {
            return Err(Error::DimensionMismatch { expected: self.lambda, got: candidates.len() });
        }
        let n = self.dim();
        if let Some(bad) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        let order = Self::ranking(fitnesses)?;
        self.generation += 1;
        // no ranking information: keep the distribution where it is
        if fitnesses.iter().all(|f| *f == fitnesses[0]) {
            return Ok(());
        }

        let ys: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&k| (DVector::from_column_slice(&candidates[k]) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&ys) {
            y_w.axpy(*w, y, 1.0);
        }
        let (b, d) = self.eigen();
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();

        self.mean += self.sigma * &y_w;

        let cs = self.c_sigma;
        self.p_sigma = (1.0 - cs) * &self.p_sigma + (cs * (2.0 - cs) * self.mu_eff).sqrt() * (&inv_sqrt * &y_w);
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powi(2 * self.generation as i32);
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi_n;

        let cc = self.c_c;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - cc) * &self.p_c + hs * (cc * (2.0 - cc) * self.mu_eff).sqrt() * &y_w;

        let delta = (1.0 - hs) * cc * (2.0 - cc);
        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in self.weights.iter().zip(&ys) {
            rank_mu.ger(*w, y, y, 1.0);
        }
        let keep = 1.0 + self.c_1 * delta - self.c_1 - self.c_mu;
        self.cov = keep * &self.cov + self.c_1 * (&self.p_c * self.p_c.transpose()) + self.c_mu * rank_mu;
        // symmetrise against round-off
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.sigma = self.sigma.clamp(SIGMA_RANGE.0, SIGMA_RANGE.1);
        Ok(())
    }
}
