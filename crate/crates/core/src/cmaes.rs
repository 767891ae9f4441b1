//! Covariance matrix adaptation evolution strategy with IPOP restarts.
//!
//! The search runs in box-normalized coordinates, so `sigma0` is a fraction of
//! each coordinate's range. Candidates outside the box are resampled; after
//! too many tries they are clipped and charged a quadratic penalty.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 100;
const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaesSettings {
    /// Offspring per generation; `None` uses `4 + floor(3 ln N)`.
    pub population: Option<usize>,
    /// Initial step size as a fraction of each coordinate's box width.
    pub sigma0: f64,
    pub max_evaluations: usize,
    /// Stop as soon as the best objective reaches this value.
    pub target: Option<f64>,
    /// IPOP restarts, each doubling the population.
    pub restarts: usize,
    pub seed: u64,
    /// Weight of the squared clipping distance added to clipped candidates.
    pub clip_penalty: f64,
    pub tol_fun: f64,
    pub tol_x: f64,
    /// Evaluate a generation's candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for CmaesSettings {
    fn default() -> Self {
        Self {
            population: None,
            sigma0: 0.3,
            max_evaluations: 200_000,
            target: None,
            restarts: 3,
            seed: 0,
            clip_penalty: 1e3,
            tol_fun: 1e-12,
            tol_x: 1e-12,
            parallel: true,
        }
    }
}

impl CmaesSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.population {
            if l < 4 {
                return Err(Error::Config(format!("population must be >= 4, got {l}")));
            }
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config(format!("sigma0 must be > 0, got {}", self.sigma0)));
        }
        if self.max_evaluations == 0 {
            return Err(Error::Config("max_evaluations must be positive".into()));
        }
        if !(self.clip_penalty >= 0.0) || !(self.tol_fun >= 0.0) || !(self.tol_x >= 0.0) {
            return Err(Error::Config("penalty and tolerances must be non-negative".into()));
        }
        Ok(())
    }

    pub fn default_population(dim: usize) -> usize {
        4 + (3.0 * (dim as f64).ln()).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmaesStop {
    Target,
    Budget,
    /// All restarts ended on a local stopping rule.
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub restarts: usize,
    pub stop: CmaesStop,
    /// Best objective so far after each generation.
    pub history: Vec<f64>,
}

struct Strategy {
    lambda: usize,
    mu: usize,
    weights: DVector<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(dim: usize, lambda: usize) -> Self {
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights = DVector::from_iterator(mu, raw.iter().map(|w| w / total));
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n);
        let cs = (mueff + 2.0) / (n + mueff + 5.0);
        let c1 = 2.0 / ((n + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self { lambda, mu, weights, mueff, cc, cs, c1, cmu, damps, chi_n }
    }
}

struct Candidate {
    /// Unclipped sample in normalized coordinates.
    y: DVector<f64>,
    /// Point handed to the objective, in normalized coordinates.
    feasible: DVector<f64>,
    penalty: f64,
}

/// Minimizes `objective` over the box `[lower, upper]`, starting at `x0`.
pub fn minimize<F>(objective: F, x0: &[f64], lower: &[f64], upper: &[f64], settings: &CmaesSettings) -> Result<CmaesResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    settings.validate()?;
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::Config("CMA-ES needs at least one variable".into()));
    }
    if lower.len() != dim || upper.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: lower.len().min(upper.len()) });
    }
    for j in 0..dim {
        if !(lower[j].is_finite() && upper[j].is_finite() && lower[j] < upper[j]) {
            return Err(Error::Config(format!("bounds of coordinate {j} must be finite with lower < upper")));
        }
        if !(x0[j] >= lower[j] && x0[j] <= upper[j]) {
            return Err(Error::Config(format!("start coordinate {j} lies outside its bounds")));
        }
    }
    let width: Vec<f64> = (0..dim).map(|j| upper[j] - lower[j]).collect();
    let to_x = |y: &DVector<f64>| -> Vec<f64> { (0..dim).map(|j| lower[j] + y[j] * width[j]).collect() };
    let eval = |c: &Candidate| -> f64 {
        let v = objective(&to_x(&c.feasible));
        if v.is_finite() {
            v + c.penalty
        } else {
            f64::INFINITY
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut evaluations = 0;
    let mut generations = 0;
    let mut history = Vec::new();
    let mut best_f = f64::INFINITY;
    let mut best_y = DVector::from_iterator(dim, (0..dim).map(|j| (x0[j] - lower[j]) / width[j]));
    let mut lambda = settings.population.unwrap_or_else(|| CmaesSettings::default_population(dim));
    let mut stop = CmaesStop::Converged;
    let mut restarts = 0;

    'runs: for run in 0..=settings.restarts {
        restarts = run;
        let st = Strategy::new(dim, lambda);
        let mut mean = if run == 0 {
            best_y.clone()
        } else {
            DVector::from_iterator(dim, (0..dim).map(|_| rng.random::<f64>()))
        };
        let mut sigma = settings.sigma0;
        let mut c = DMatrix::<f64>::identity(dim, dim);
        let mut b = DMatrix::<f64>::identity(dim, dim);
        let mut d = DVector::<f64>::from_element(dim, 1.0);
        let mut pc = DVector::<f64>::zeros(dim);
        let mut ps = DVector::<f64>::zeros(dim);
        let mut recent: Vec<f64> = Vec::new();
        let window = 10 + (30.0 * dim as f64 / lambda as f64).ceil() as usize;
        let mut gen = 0usize;
        loop {
            if evaluations + st.lambda > settings.max_evaluations {
                stop = CmaesStop::Budget;
                break 'runs;
            }
            let candidates: Vec<Candidate> = (0..st.lambda)
                .map(|_| sample(&mut rng, &mean, sigma, &b, &d, settings.clip_penalty))
                .collect();
            let fitness: Vec<f64> = if settings.parallel {
                candidates.par_iter().map(eval).collect()
            } else {
                candidates.iter().map(eval).collect()
            };
            evaluations += st.lambda;
            generations += 1;
            gen += 1;

            let mut order: Vec<usize> = (0..st.lambda).collect();
            order.sort_by(|&i, &j| fitness[i].total_cmp(&fitness[j]));
            if fitness[order[0]] < best_f {
                best_f = fitness[order[0]];
                best_y = candidates[order[0]].feasible.clone();
            }
            history.push(best_f);
            if settings.target.is_some_and(|t| best_f <= t) {
                stop = CmaesStop::Target;
                break 'runs;
            }

            let old_mean = mean.clone();
            mean = DVector::zeros(dim);
            for (w, &i) in st.weights.iter().zip(&order) {
                mean += &candidates[i].y * *w;
            }
            let step = (&mean - &old_mean) / sigma;
            // C^{-1/2} step
            let bt_step = b.transpose() * &step;
            let whitened = &b * DVector::from_iterator(dim, bt_step.iter().zip(d.iter()).map(|(v, di)| v / di));
            ps = &ps * (1.0 - st.cs) + whitened * (st.cs * (2.0 - st.cs) * st.mueff).sqrt();
            let ps_norm = ps.norm();
            let hsig = ps_norm / (1.0 - (1.0 - st.cs).powi(2 * gen as i32)).sqrt() / st.chi_n
                < 1.4 + 2.0 / (dim as f64 + 1.0);
            let hsig = if hsig { 1.0 } else { 0.0 };
            pc = &pc * (1.0 - st.cc) + &step * (hsig * (st.cc * (2.0 - st.cc) * st.mueff).sqrt());

            let mut rank_mu = DMatrix::<f64>::zeros(dim, dim);
            for (w, &i) in st.weights.iter().zip(order.iter().take(st.mu)) {
                let yi = (&candidates[i].y - &old_mean) / sigma;
                rank_mu += &yi * yi.transpose() * *w;
            }
            c = &c * (1.0 - st.c1 - st.cmu)
                + (&pc * pc.transpose() + &c * ((1.0 - hsig) * st.cc * (2.0 - st.cc))) * st.c1
                + rank_mu * st.cmu;
            c = (&c + c.transpose()) * 0.5;
            sigma *= ((st.cs / st.damps) * (ps_norm / st.chi_n - 1.0)).exp();

            let eig = SymmetricEigen::new(c.clone());
            let floor = EIGEN_FLOOR * c.trace();
            let vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(floor)).collect();
            b = eig.eigenvectors;
            d = DVector::from_iterator(dim, vals.iter().map(|v| v.sqrt()));
            c = &b * DMatrix::from_diagonal(&DVector::from_iterator(dim, vals.iter().copied())) * b.transpose();

            recent.push(fitness[order[0]]);
            if recent.len() > window {
                recent.remove(0);
            }
            let spread = recent.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v))
                - recent.iter().fold(f64::INFINITY, |a, v| a.min(*v));
            let flat = recent.len() == window
                && spread <= settings.tol_fun
                && fitness[order[st.lambda - 1]] - fitness[order[0]] <= settings.tol_fun;
            let tiny = sigma * d.max() < settings.tol_x;
            let ill = d.max() / d.min() > 1e7;
            if flat || tiny || ill || !sigma.is_finite() {
                break;
            }
        }
        lambda *= 2;
    }

    Ok(CmaesResult {
        best_x: to_x(&best_y),
        best_f,
        evaluations,
        generations,
        restarts,
        stop,
        history,
    })
}

fn sample(
    rng: &mut ChaCha8Rng,
    mean: &DVector<f64>,
    sigma: f64,
    b: &DMatrix<f64>,
    d: &DVector<f64>,
    clip_penalty: f64,
) -> Candidate {
    let dim = mean.len();
    let mut y = mean.clone();
    for _ in 0..MAX_RESAMPLES {
        let z = DVector::from_iterator(dim, (0..dim).map(|i| d[i] * rng.sample::<f64, _>(StandardNormal)));
        y = mean + b * z * sigma;
        if y.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Candidate { feasible: y.clone(), y, penalty: 0.0 };
        }
    }
    let feasible = y.map(|v| v.clamp(0.0, 1.0));
    let penalty = clip_penalty * (&y - &feasible).norm_squared();
    Candidate { y, feasible, penalty }
}
