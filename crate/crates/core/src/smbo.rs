//! Sequential model-based tuning of the learning rate and entropy
//! coefficient: a Gaussian-process surrogate with a squared-exponential
//! kernel and the Expected Improvement acquisition.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BUDGET: usize = 20;
pub const INITIAL_RANDOM_TRIALS: usize = 3;
pub const CANDIDATES: usize = 10_000;
/// Exploration jitter, in z-scored objective units.
pub const XI: f64 = 0.01;

const VARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub signal_var: f64,
    /// One length scale per input dimension.
    pub length_scales: Vec<f64>,
}

pub fn se_kernel(x: &[f64], y: &[f64], length_scales: &[f64], signal_var: f64) -> f64 {
    debug_assert!(x.len() == y.len() && x.len() == length_scales.len());
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(length_scales)
        .map(|((a, b), l)| (a - b) * (a - b) / (l * l))
        .sum();
    signal_var * libm::exp(-0.5 * r2)
}

impl SeKernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        se_kernel(x, y, &self.length_scales, self.signal_var)
    }
}

/// Zero-mean GP regression model with its covariance already factorized.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: SeKernel,
    pub noise_var: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GpModel {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: SeKernel, noise_var: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Usage("GP model needs at least one point".into()));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let dim = kernel.length_scales.len();
        if let Some(bad) = x.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if !(kernel.signal_var > 0.0 && noise_var > 0.0 && kernel.length_scales.iter().all(|l| *l > 0.0)) {
            return Err(Error::InvalidConfig(
                "kernel variances and length scales must be positive".into(),
            ));
        }
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel.eval(&x[i], &x[j]) + if i == j { noise_var } else { 0.0 }
        });
        let chol = k.cholesky().ok_or_else(|| {
            Error::Numerical(format!(
                "GP covariance is not positive definite; increase the noise jitter (currently {noise_var:e})"
            ))
        })?;
        let alpha = chol.solve(&DVector::from_column_slice(&y));
        Ok(GpModel {
            x,
            y,
            kernel,
            noise_var,
            chol_l: chol.l(),
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Posterior mean and standard deviation of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        let ks = DVector::from_iterator(self.len(), self.x.iter().map(|p| self.kernel.eval(p, x)));
        let mu = ks.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let var = self.kernel.signal_var - v.dot(&v);
        if var < -VARIANCE_TOLERANCE * self.kernel.signal_var.max(1.0) || !var.is_finite() {
            return Err(Error::Numerical(format!("negative posterior variance {var:e}")));
        }
        Ok((mu, libm::sqrt(var.max(0.0))))
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let y = DVector::from_column_slice(&self.y);
        let log_det: f64 = (0..self.len()).map(|i| libm::log(self.chol_l[(i, i)])).sum();
        -0.5 * y.dot(&self.alpha) - log_det - 0.5 * n * libm::log(2.0 * PI)
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * PI)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Maximization-form Expected Improvement over `best`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mu - best - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

const SIGNAL_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
const LENGTH_GRID: [f64; 6] = [0.1, 0.2, 0.4, 0.8, 1.6, 3.2];
const NOISE_GRID: [f64; 4] = [1e-6, 1e-4, 1e-2, 1e-1];

/// Fits kernel hyperparameters by maximizing the log marginal likelihood
/// over a fixed grid. Intended for z-scored targets.
pub fn fit_gp(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<GpModel> {
    let dim = x.first().map(Vec::len).unwrap_or(0);
    let mut best: Option<(f64, SeKernel, f64)> = None;
    let mut scales = vec![0usize; dim];
    loop {
        let length_scales: Vec<f64> = scales.iter().map(|&i| LENGTH_GRID[i]).collect();
        for &signal_var in &SIGNAL_GRID {
            for &noise in &NOISE_GRID {
                let kernel = SeKernel {
                    signal_var,
                    length_scales: length_scales.clone(),
                };
                if let Ok(m) = GpModel::new(x.clone(), y.clone(), kernel.clone(), noise) {
                    let lml = m.log_marginal_likelihood();
                    if lml.is_finite() && best.as_ref().is_none_or(|(b, _, _)| lml > *b) {
                        best = Some((lml, kernel, noise));
                    }
                }
            }
        }
        // Odometer over the per-dimension length-scale grid.
        let mut d = 0;
        while d < dim {
            scales[d] += 1;
            if scales[d] < LENGTH_GRID.len() {
                break;
            }
            scales[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }
    let (_, kernel, noise) =
        best.ok_or_else(|| Error::Numerical("no kernel hyperparameters gave a valid GP fit".into()))?;
    GpModel::new(x, y, kernel, noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub entropy_coef: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-5, 1e-2),
            entropy_coef: (1e-4, 1e-1),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("learning_rate", self.learning_rate), ("entropy_coef", self.entropy_coef)] {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range must satisfy 0 < lower < upper"
                )));
            }
        }
        Ok(())
    }

    /// Bounds in log10 units, one pair per dimension.
    pub fn log_bounds(&self) -> [(f64, f64); 2] {
        [
            (libm::log10(self.learning_rate.0), libm::log10(self.learning_rate.1)),
            (libm::log10(self.entropy_coef.0), libm::log10(self.entropy_coef.1)),
        ]
    }

    pub fn log_diameter(&self) -> f64 {
        let b = self.log_bounds();
        libm::hypot(b[0].1 - b[0].0, b[1].1 - b[1].0)
    }

    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.log_bounds()
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Maps a log10 point to `(learning_rate, entropy_coef)`.
    pub fn to_params(point: &[f64]) -> (f64, f64) {
        (libm::pow(10.0, point[0]), libm::pow(10.0, point[1]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub point: Vec<f64>,
    pub ei: f64,
    /// True when EI vanished everywhere and a random point was returned.
    pub fallback: bool,
}

pub fn candidate_grid<R: Rng + ?Sized>(space: &SearchSpace, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| space.sample_log(rng)).collect()
}

/// Argmax of EI over a fresh random candidate grid (first maximum wins).
pub fn propose_next<R: Rng + ?Sized>(
    model: Option<&GpModel>,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<Proposal> {
    let Some(model) = model else {
        return Ok(Proposal {
            point: space.sample_log(rng),
            ei: 0.0,
            fallback: false,
        });
    };
    let best = model.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = candidate_grid(space, CANDIDATES, rng);
    let mut arg = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, c) in grid.iter().enumerate() {
        let (mu, sd) = model.posterior(c)?;
        let ei = expected_improvement(mu, sd, best, XI);
        if ei > top {
            top = ei;
            arg = i;
        }
    }
    if top > 0.0 {
        Ok(Proposal {
            point: grid[arg].clone(),
            ei: top,
            fallback: false,
        })
    } else {
        Ok(Proposal {
            point: space.sample_log(rng),
            ei: 0.0,
            fallback: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    /// Validation objective; for failed trials the substituted penalty.
    pub value: f64,
    pub failed: bool,
    /// EI was zero everywhere and the point was drawn at random.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

fn z_score(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = libm::sqrt(y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    let scale = if sd > 0.0 { sd } else { 1.0 };
    y.iter().map(|v| (v - mean) / scale).collect()
}

/// Penalty recorded for a failed trial: worst successful value minus one
/// standard deviation of the successful values.
fn failure_value(trials: &[Trial]) -> f64 {
    let ok: Vec<f64> = trials.iter().filter(|t| !t.failed).map(|t| t.value).collect();
    if ok.is_empty() {
        return -1.0;
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let sd = libm::sqrt(ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    ok.iter().copied().fold(f64::INFINITY, f64::min) - sd
}

/// Runs `budget` trials of `objective(learning_rate, entropy_coef)`; the
/// first few are random, the rest maximize EI on a refitted GP. Returns the
/// best successful trial.
pub fn tune<F>(space: &SearchSpace, budget: usize, seed: u64, mut objective: F) -> Result<TuneResult>
where
    F: FnMut(&Trial) -> Result<f64>,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::InvalidConfig("tuning budget must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for trial_id in 0..budget {
        let proposal = if trial_id < INITIAL_RANDOM_TRIALS {
            propose_next(None, space, &mut rng)?
        } else {
            let y: Vec<f64> = trials.iter().map(|t| t.value).collect();
            let model = fit_gp(points.clone(), z_score(&y))?;
            propose_next(Some(&model), space, &mut rng)?
        };
        let (learning_rate, entropy_coef) = SearchSpace::to_params(&proposal.point);
        let mut trial = Trial {
            trial_id,
            learning_rate,
            entropy_coef,
            value: 0.0,
            failed: false,
            fallback: proposal.fallback,
        };
        match objective(&trial) {
            Ok(v) if v.is_finite() => trial.value = v,
            _ => {
                trial.failed = true;
                trial.value = failure_value(&trials);
            }
        }
        points.push(proposal.point);
        trials.push(trial);
    }
    let best = trials
        .iter()
        .filter(|t| !t.failed)
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.value >= t.value => Some(b),
            _ => Some(t),
        })
        .cloned()
        .ok_or_else(|| Error::Numerical("every tuning trial failed".to_string()))?;
    Ok(TuneResult { best, trials })
}
