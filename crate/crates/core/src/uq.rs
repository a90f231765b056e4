//! Parameter uncertainty from harvested samples and the three ways of turning
//! a trained generator into a single parameter set.
//!
//! * Approach I samples the trained generator with fresh noise.
//! * Approach II averages the per-epoch parameter means after convergence.
//! * Approach III simulates every candidate and keeps the one whose
//!   displacement history is closest to the measurement.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Mlp;
use crate::physics::{ModelSpec, ParamLayout, ParameterSet};
use crate::sim::{displacement_mse, integrate_rk45, ForceInput, IvpConfig, Trajectory};
use crate::signal::TimeSeries;
use crate::train::{decode_batch, sample_noise, EpochRecord, TrainError};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Half-width of the density grid in standard deviations.
pub const PDF_HALF_WIDTH: f64 = 6.0;

/// Jarque–Bera statistic above which a sample is flagged as non-normal
/// (the 95% quantile of χ² with two degrees of freedom).
pub const JARQUE_BERA_95: f64 = 5.991;

#[derive(Debug, Error)]
pub enum UqError {
    #[error("need at least {needed} samples, found {found}")]
    TooFew { needed: usize, found: usize },
    #[error("degenerate fit (zero standard deviation)")]
    Degenerate,
    #[error("non-finite sample")]
    NonFinite,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("trajectories are on different grids")]
    GridMismatch,
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mean: f64,
    pub std: f64,
    pub sample_count: usize,
    pub degenerate: bool,
}

impl NormalFit {
    pub fn ci95(&self) -> [f64; 2] {
        [self.mean - Z_95 * self.std, self.mean + Z_95 * self.std]
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        (-0.5 * z * z).exp() / (self.std * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Maximum-likelihood normal fit (standard deviation divides by `n`).
pub fn fit_normal(samples: &[f64]) -> Result<NormalFit, UqError> {
    fit_normal_with(samples, false)
}

/// As [`fit_normal`]; `unbiased` divides the variance by `n − 1` instead.
pub fn fit_normal_with(samples: &[f64], unbiased: bool) -> Result<NormalFit, UqError> {
    let n = samples.len();
    if n < 2 {
        return Err(UqError::TooFew { needed: 2, found: n });
    }
    if !samples.iter().all(|v| v.is_finite()) {
        return Err(UqError::NonFinite);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = if unbiased { n - 1 } else { n } as f64;
    let std = (ss / denom).sqrt();
    Ok(NormalFit {
        mean,
        std,
        sample_count: n,
        degenerate: std == 0.0,
    })
}

/// Evenly spaced grid on `mean ± 6σ` and the fitted density on it.
pub fn pdf_grid(fit: &NormalFit, points: usize) -> Result<(Vec<f64>, Vec<f64>), UqError> {
    if fit.degenerate || fit.std <= 0.0 {
        return Err(UqError::Degenerate);
    }
    if points < 3 {
        return Err(UqError::Invalid(format!("pdf grid needs at least 3 points, got {points}")));
    }
    let lo = fit.mean - PDF_HALF_WIDTH * fit.std;
    let step = 2.0 * PDF_HALF_WIDTH * fit.std / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let dens = grid.iter().map(|&x| fit.density(x)).collect();
    Ok((grid, dens))
}

/// Shape statistics reported next to each fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostics {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub jarque_bera: f64,
    pub non_normal: bool,
}

pub fn normality_diagnostics(samples: &[f64]) -> Result<NormalityDiagnostics, UqError> {
    let fit = fit_normal(samples)?;
    if fit.degenerate {
        return Ok(NormalityDiagnostics {
            skewness: 0.0,
            excess_kurtosis: 0.0,
            jarque_bera: 0.0,
            non_normal: false,
        });
    }
    let n = samples.len() as f64;
    let m = |k: i32| samples.iter().map(|v| ((v - fit.mean) / fit.std).powi(k)).sum::<f64>() / n;
    let skewness = m(3);
    let excess_kurtosis = m(4) - 3.0;
    let jarque_bera = n / 6.0 * (skewness * skewness + 0.25 * excess_kurtosis * excess_kurtosis);
    Ok(NormalityDiagnostics {
        skewness,
        excess_kurtosis,
        jarque_bera,
        non_normal: jarque_bera > JARQUE_BERA_95,
    })
}

/// Posterior summary of one coefficient. The density grid is empty for a
/// point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPosterior {
    pub name: String,
    pub fit: NormalFit,
    pub ci95: [f64; 2],
    pub pdf_grid: Vec<f64>,
    pub pdf: Vec<f64>,
    pub diagnostics: NormalityDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPosterior {
    pub coefficients: Vec<CoefficientPosterior>,
}

/// Points in each density grid of a [`ParameterPosterior`].
pub const POSTERIOR_GRID_POINTS: usize = 201;

impl ParameterPosterior {
    /// Summarises `samples` (`draws × coefficients`), one column per name.
    pub fn from_samples(names: &[String], samples: &Array2<f64>) -> Result<Self, UqError> {
        if samples.ncols() != names.len() {
            return Err(UqError::Invalid("sample columns do not match coefficient names".into()));
        }
        let coefficients = names
            .iter()
            .zip(samples.columns())
            .map(|(name, col)| {
                let col = col.to_vec();
                let fit = fit_normal(&col)?;
                let (pdf_grid, pdf) = if fit.degenerate {
                    (Vec::new(), Vec::new())
                } else {
                    pdf_grid(&fit, POSTERIOR_GRID_POINTS)?
                };
                Ok(CoefficientPosterior {
                    name: name.clone(),
                    fit,
                    ci95: fit.ci95(),
                    pdf_grid,
                    pdf,
                    diagnostics: normality_diagnostics(&col)?,
                })
            })
            .collect::<Result<_, UqError>>()?;
        Ok(Self { coefficients })
    }

    pub fn means(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.fit.mean).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CoefficientPosterior> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

fn mean_set(names: &[String], samples: &Array2<f64>) -> ParameterSet {
    let n = samples.nrows() as f64;
    ParameterSet {
        names: names.to_vec(),
        values: samples.columns().into_iter().map(|c| c.sum() / n).collect(),
    }
}

/// Samples the generator `n` times. With a single draw the posterior is not
/// defined and `None` is returned in its place.
pub fn approach_one<R: Rng>(
    generator: &Mlp,
    layout: &ParamLayout,
    n: usize,
    rng: &mut R,
) -> Result<(ParameterSet, Option<ParameterPosterior>, Array2<f64>), UqError> {
    if n == 0 {
        return Err(UqError::TooFew { needed: 1, found: 0 });
    }
    let noise = sample_noise(n, generator.input_dim(), rng)?;
    let raw = generator.predict(noise.view()).map_err(TrainError::from)?;
    let samples = decode_batch(raw.view(), layout)?;
    let posterior = if n >= 2 {
        Some(ParameterPosterior::from_samples(&layout.names, &samples)?)
    } else {
        None
    };
    Ok((mean_set(&layout.names, &samples), posterior, samples))
}

/// Per-epoch parameter means from `from_epoch` on, as a `draws × coefficients`
/// matrix.
pub fn harvested_samples(records: &[EpochRecord], from_epoch: usize) -> Result<(Vec<String>, Array2<f64>), UqError> {
    let tail: Vec<&EpochRecord> = records.iter().filter(|r| r.epoch >= from_epoch).collect();
    if tail.is_empty() {
        return Err(UqError::Invalid(format!("no records at or after epoch {from_epoch}")));
    }
    let names = tail[0].param_mean.names.clone();
    let ncoef = names.len();
    let mut m = Array2::zeros((tail.len(), ncoef));
    for (r, rec) in tail.iter().enumerate() {
        if rec.param_mean.values.len() != ncoef {
            return Err(UqError::Invalid("records disagree on the coefficient count".into()));
        }
        for c in 0..ncoef {
            m[[r, c]] = rec.param_mean.values[c];
        }
    }
    Ok((names, m))
}

/// Mean and posterior of the harvested per-epoch parameters from
/// `from_epoch` on. A single harvested epoch has no posterior.
pub fn approach_two(records: &[EpochRecord], from_epoch: usize) -> Result<(ParameterSet, Option<ParameterPosterior>), UqError> {
    let (names, samples) = harvested_samples(records, from_epoch)?;
    let posterior = if samples.nrows() >= 2 {
        Some(ParameterPosterior::from_samples(&names, &samples)?)
    } else {
        None
    };
    Ok((mean_set(&names, &samples), posterior))
}

/// A measured displacement record and what is needed to reproduce it.
#[derive(Debug, Clone)]
pub struct ScoringTarget {
    pub displacement: TimeSeries,
    /// `[q; q̇]` at the first sample.
    pub initial_state: Vec<f64>,
    pub force: Option<ForceInput>,
}

impl ScoringTarget {
    fn grid(&self) -> Vec<f64> {
        self.displacement.times()
    }

    pub fn simulate(&self, model: &ModelSpec, params: &ParameterSet, ivp: &IvpConfig) -> Result<Trajectory, crate::sim::SimError> {
        let grid = self.grid();
        let span = (grid[0], grid[grid.len() - 1]);
        integrate_rk45(model, params, &self.initial_state, span, &grid, self.force.as_ref(), ivp)
    }

    pub fn mse(&self, model: &ModelSpec, params: &ParameterSet, ivp: &IvpConfig) -> Result<f64, crate::sim::SimError> {
        let tr = self.simulate(model, params, ivp)?;
        displacement_mse(&self.displacement, &tr)
    }
}

/// Mean displacement MSE over `targets`; `+∞` if any simulation fails.
pub fn score_candidate(model: &ModelSpec, params: &ParameterSet, targets: &[ScoringTarget], ivp: &IvpConfig) -> f64 {
    let mut total = 0.0;
    for t in targets {
        match t.mse(model, params, ivp) {
            Ok(v) if v.is_finite() => total += v,
            _ => return f64::INFINITY,
        }
    }
    total / targets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: ParameterSet,
    pub best_index: usize,
    pub mse: f64,
    pub candidate_mse: Vec<f64>,
}

/// Simulates every candidate (in parallel) and returns the lowest-MSE one;
/// ties go to the lowest index and failed simulations score `+∞`.
pub fn approach_three(candidates: &[ParameterSet], model: &ModelSpec, targets: &[ScoringTarget], ivp: &IvpConfig) -> Result<Selection, UqError> {
    if candidates.is_empty() {
        return Err(UqError::TooFew { needed: 1, found: 0 });
    }
    if targets.is_empty() {
        return Err(UqError::Invalid("approach III needs at least one measured displacement record".into()));
    }
    let candidate_mse: Vec<f64> = candidates.par_iter().map(|c| score_candidate(model, c, targets, ivp)).collect();
    let mut best_index = 0;
    for (i, &m) in candidate_mse.iter().enumerate() {
        if m < candidate_mse[best_index] {
            best_index = i;
        }
    }
    if !candidate_mse[best_index].is_finite() {
        log::warn!("every candidate failed to simulate");
    }
    Ok(Selection {
        best: candidates[best_index].clone(),
        best_index,
        mse: candidate_mse[best_index],
        candidate_mse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseBand {
    pub times: Vec<f64>,
    /// `samples × channels`
    pub mean: Array2<f64>,
    pub lower: Array2<f64>,
    pub upper: Array2<f64>,
}

/// Pointwise mean and `mean ± 1.96·σ` (maximum-likelihood σ) over the
/// displacement channels of `trajectories`.
pub fn response_band(trajectories: &[Trajectory]) -> Result<ResponseBand, UqError> {
    if trajectories.len() < 2 {
        return Err(UqError::TooFew {
            needed: 2,
            found: trajectories.len(),
        });
    }
    let first = &trajectories[0];
    for t in &trajectories[1..] {
        if t.times != first.times || t.states.dim() != first.states.dim() {
            return Err(UqError::GridMismatch);
        }
    }
    let n = trajectories.len() as f64;
    let dof = first.dof();
    let shape = (first.times.len(), dof);
    let mut mean = Array2::zeros(shape);
    for t in trajectories {
        mean += &t.states.slice(ndarray::s![.., ..dof]);
    }
    mean /= n;
    let mut var = Array2::<f64>::zeros(shape);
    for t in trajectories {
        let d = &t.states.slice(ndarray::s![.., ..dof]) - &mean;
        var += &d.mapv(|v| v * v);
    }
    let std = (var / n).mapv(f64::sqrt);
    Ok(ResponseBand {
        times: first.times.clone(),
        lower: &mean - &(&std * Z_95),
        upper: &mean + &(&std * Z_95),
        mean,
    })
}
