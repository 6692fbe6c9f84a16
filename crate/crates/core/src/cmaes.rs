//! CMA-ES (Covariance Matrix Adaptation Evolution Strategy).
//!
//! Standard (μ/μ_w, λ) formulation: log-rank recombination weights, rank-one
//! plus rank-μ covariance update and cumulative step-size adaptation, with the
//! usual dimension-dependent learning rates. Fitness is **maximized**.
//!
//! The state is a plain value. [`CmaState::sample`] and [`CmaState::update`]
//! take the randomness and the evaluated candidates explicitly, so any number
//! of independent runs can proceed side by side.
//!
//! The first generation can be supplied from outside with
//! [`CmaState::seed_generation`]. Seeds only enter through selection in the
//! following update; they do not reset the mean or covariance.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// Smallest eigenvalue allowed in the covariance matrix.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaConfig {
    pub dimension: usize,
    pub population_size: usize,
    pub elite_count: usize,
    pub initial_step_size: f64,
    pub max_generations: usize,
}

impl CmaConfig {
    /// Config with the default population `4 + ⌊3 ln D⌋` and `μ = ⌊NP/2⌋`.
    pub fn new(dimension: usize, initial_step_size: f64, max_generations: usize) -> Self {
        let population_size = default_population_size(dimension);
        Self {
            dimension,
            population_size,
            elite_count: default_elite_count(population_size),
            initial_step_size,
            max_generations,
        }
    }

    /// Overrides the population size and resets μ to `⌊NP/2⌋`.
    pub fn with_population(mut self, population_size: usize) -> Self {
        self.population_size = population_size;
        self.elite_count = default_elite_count(population_size);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidConfig("CMA-ES dimension must be positive".into()));
        }
        if self.population_size == 0 {
            return Err(Error::InvalidConfig("CMA-ES population size must be positive".into()));
        }
        if self.elite_count == 0 || self.elite_count > self.population_size {
            return Err(Error::InvalidConfig(format!(
                "elite count {} must lie in 1..={}",
                self.elite_count, self.population_size
            )));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "initial step size must be positive, got {}",
                self.initial_step_size
            )));
        }
        if self.max_generations == 0 {
            return Err(Error::InvalidConfig("max generations must be positive".into()));
        }
        Ok(())
    }
}

/// `4 + ⌊3 ln D⌋`.
pub fn default_population_size(dimension: usize) -> usize {
    let d = dimension.max(1) as f64;
    4 + (3.0 * d.ln()).floor() as usize
}

/// `⌊NP/2⌋`, at least one.
pub fn default_elite_count(population_size: usize) -> usize {
    (population_size / 2).max(1)
}

/// Learning rates and damping derived from the dimension and the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// E‖N(0, I)‖.
    pub chi_n: f64,
}

impl Strategy {
    fn new(n: usize, weights: &[f64]) -> Self {
        let n = n as f64;
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Full state of one CMA-ES run.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    config: CmaConfig,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    step_size: f64,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    weights: Vec<f64>,
    strategy: Strategy,
    generation: usize,
    /// Eigenvectors of the covariance (columns).
    basis: DMatrix<f64>,
    /// Square roots of the (floored) covariance eigenvalues.
    scales: DVector<f64>,
}

impl CmaState {
    /// Starts a run at `mean` with identity covariance and zero paths.
    pub fn new(config: CmaConfig, mean: &[f64]) -> Result<Self> {
        config.validate()?;
        let n = config.dimension;
        if mean.len() != n {
            return Err(Error::ShapeMismatch {
                what: "CMA-ES initial mean",
                expected: n,
                found: mean.len(),
            });
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("CMA-ES initial mean"));
        }
        let mu = config.elite_count;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let strategy = Strategy::new(n, &weights);
        Ok(Self {
            step_size: config.initial_step_size,
            mean: DVector::from_column_slice(mean),
            covariance: DMatrix::identity(n, n),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            weights,
            strategy,
            generation: 0,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            config,
        })
    }

    pub fn config(&self) -> &CmaConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn path_sigma(&self) -> &[f64] {
        self.path_sigma.as_slice()
    }

    pub fn path_c(&self) -> &[f64] {
        self.path_c.as_slice()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Overrides σ. Mostly useful for degenerate-distribution tests.
    pub fn set_step_size(&mut self, step_size: f64) -> Result<()> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        self.step_size = step_size;
        Ok(())
    }

    /// Draws `count` i.i.d. vectors from `N(mean, σ² C)`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.dimension();
        let bd = &self.basis * DMatrix::from_diagonal(&self.scales);
        (0..count)
            .map(|_| {
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let x = &self.mean + (&bd * z) * self.step_size;
                x.as_slice().to_vec()
            })
            .collect()
    }

    /// Supplies the first population from outside (for example from a
    /// policy prior). The vectors are returned unchanged; their fitness is
    /// consumed by the next [`update`](Self::update) as if they were sampled.
    pub fn seed_generation(&self, individuals: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        if self.generation != 0 {
            return Err(Error::SeedAfterStart(self.generation));
        }
        let n = self.dimension();
        if let Some(bad) = individuals.iter().find(|x| x.len() != n) {
            return Err(Error::ShapeMismatch {
                what: "seeded individual",
                expected: n,
                found: bad.len(),
            });
        }
        Ok(individuals)
    }

    /// One generation of selection and adaptation. Fitness is maximized.
    ///
    /// Candidates are ranked by fitness (descending) with a deterministic
    /// tie-break on the vectors, so the result does not depend on input order.
    pub fn update(&mut self, evaluated: &[(Vec<f64>, f64)]) -> Result<()> {
        let n = self.dimension();
        let mu = self.config.elite_count;
        if evaluated.len() < mu {
            return Err(Error::TooFewCandidates {
                needed: mu,
                got: evaluated.len(),
            });
        }
        for (x, f) in evaluated {
            if x.len() != n {
                return Err(Error::ShapeMismatch {
                    what: "evaluated candidate",
                    expected: n,
                    found: x.len(),
                });
            }
            if f.is_nan() {
                return Err(Error::NonFinite("candidate fitness"));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("candidate vector"));
            }
        }

        let mut ranked: Vec<&(Vec<f64>, f64)> = evaluated.iter().collect();
        ranked.sort_by(|a, b| rank_order(a, b));

        let s = self.strategy.clone();
        let sigma = self.step_size;
        let steps: Vec<DVector<f64>> = ranked[..mu]
            .iter()
            .map(|(x, _)| (DVector::from_column_slice(x) - &self.mean) / sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }

        self.mean.axpy(sigma, &y_w, 1.0);

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let mut whitened = self.basis.tr_mul(&y_w);
        whitened.component_div_assign(&self.scales);
        let whitened = &self.basis * whitened;
        let norm_sigma = (s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff).sqrt();
        self.path_sigma = &self.path_sigma * (1.0 - s.c_sigma) + whitened * norm_sigma;

        let ps_norm = self.path_sigma.norm();
        let gen = (self.generation + 1) as f64;
        let correction = (1.0 - (1.0 - s.c_sigma).powf(2.0 * gen)).sqrt();
        let h_sigma = if ps_norm / correction < (1.4 + 2.0 / (n as f64 + 1.0)) * s.chi_n {
            1.0
        } else {
            0.0
        };

        let norm_c = (s.c_c * (2.0 - s.c_c) * s.mu_eff).sqrt();
        self.path_c = &self.path_c * (1.0 - s.c_c) + &y_w * (h_sigma * norm_c);

        let delta = (1.0 - h_sigma) * s.c_c * (2.0 - s.c_c);
        let weight_sum: f64 = self.weights.iter().sum();
        let mut cov = &self.covariance * (1.0 - s.c_1 - s.c_mu * weight_sum + s.c_1 * delta);
        cov.ger(s.c_1, &self.path_c, &self.path_c, 1.0);
        for (w, y) in self.weights.iter().zip(&steps) {
            cov.ger(s.c_mu * w, y, y, 1.0);
        }

        self.step_size = sigma * ((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0)).exp();
        self.set_covariance(cov);
        self.generation += 1;
        Ok(())
    }

    /// Symmetrizes, floors the spectrum and refreshes the cached eigensystem.
    fn set_covariance(&mut self, cov: DMatrix<f64>) {
        let sym = (&cov + cov.transpose()) * 0.5;
        let eigen = SymmetricEigen::new(sym);
        let values = eigen.eigenvalues.map(|v| v.max(EIGENVALUE_FLOOR));
        let basis = eigen.eigenvectors;
        let rebuilt = &basis * DMatrix::from_diagonal(&values) * basis.transpose();
        self.covariance = (&rebuilt + rebuilt.transpose()) * 0.5;
        self.scales = values.map(f64::sqrt);
        self.basis = basis;
    }
}

/// Fitness descending. Equal fitness is ordered by a hash of the vector so
/// that plateaus do not push the mean in a fixed direction; the vectors
/// themselves settle the (practically impossible) hash collisions.
fn rank_order(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| tie_key(&a.0).cmp(&tie_key(&b.0)))
        .then_with(|| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn tie_key(x: &[f64]) -> u64 {
    x.iter().fold(0, |h, v| mix_seed(h, v.to_bits()))
}
