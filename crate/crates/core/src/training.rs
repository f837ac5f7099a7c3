//! Gradient-descent training of QNBM parameters on KL divergence.

use std::f64::consts::FRAC_PI_8;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::error::{QnbmError, Result};
use crate::model::{build_qnbm, NeuronStructure, ParameterSet, SamplingMode};
use crate::neuron::{ANGLE_FACTOR, DEFAULT_MAX_ATTEMPTS};
use crate::seeding::{derive_seed, stream_rng};

/// Floor on model probabilities inside the logarithm.
pub const DEFAULT_EPSILON: f64 = 1e-16;

pub const DEFAULT_ITERATIONS: usize = 500;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_FD_DELTA: f64 = 1e-3;
/// π/2 on the rotation angle, i.e. π/8 on the raw parameter.
pub const DEFAULT_SHIFT: f64 = FRAC_PI_8;

/// Parameters are kept inside `[-CLIP, CLIP]` after every step.
pub const CLIP: f64 = 1.0 - 1e-9;

/// `Σ P_target(x) ln(P_target(x) / max(P_model(x), ε))`, skipping zero-target terms.
pub fn kl_divergence(target: &Distribution, model: &Distribution, eps: f64) -> Result<f64> {
    if target.n_bits() != model.n_bits() {
        return Err(QnbmError::LengthMismatch {
            expected: target.n_bits(),
            actual: model.n_bits(),
        });
    }
    Ok(target
        .probabilities()
        .iter()
        .zip(model.probabilities())
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &m)| t * (t / m.max(eps)).ln())
        .sum())
}

/// Central differences, two loss evaluations per coordinate.
pub fn finite_diff_gradient<F>(loss: &F, params: &[f64], delta: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if delta.is_nan() || delta <= 0.0 {
        return Err(QnbmError::config("fd_delta", "must be positive"));
    }
    shifted_differences(loss, params, delta, 1.0 / (2.0 * delta))
}

/// Shift-rule estimator for parameters entering as `RY(ANGLE_FACTOR · p)`:
/// `Ω (L(p + s) − L(p − s)) / (2 sin(Ω s))` with `Ω = ANGLE_FACTOR`. Exact for
/// a single rotation; under RUS post-selection it is a heuristic.
pub fn parameter_shift_gradient<F>(loss: &F, params: &[f64], shift: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let denom = 2.0 * (ANGLE_FACTOR * shift).sin();
    if shift.is_nan() || shift <= 0.0 || denom.abs() < 1e-12 {
        return Err(QnbmError::config(
            "shift",
            format!("{shift} gives a singular shift rule"),
        ));
    }
    shifted_differences(loss, params, shift, ANGLE_FACTOR / denom)
}

fn shifted_differences<F>(loss: &F, params: &[f64], step: f64, scale: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = params.to_vec();
            probe[i] = params[i] + step;
            let up = loss(&probe)?;
            probe[i] = params[i] - step;
            let down = loss(&probe)?;
            Ok((up - down) * scale)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimator {
    FiniteDifference,
    ParameterShift,
}

impl fmt::Display for GradientEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientEstimator::FiniteDifference => "finite_difference",
            GradientEstimator::ParameterShift => "parameter_shift",
        })
    }
}

impl FromStr for GradientEstimator {
    type Err = QnbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "finite_difference" | "fd" => Ok(GradientEstimator::FiniteDifference),
            "parameter_shift" | "ps" => Ok(GradientEstimator::ParameterShift),
            other => Err(QnbmError::config(
                "estimator",
                format!("unknown estimator {other:?}"),
            )),
        }
    }
}

/// What the loss is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossMode {
    /// Exact post-selected model distribution.
    Exact,
    /// Empirical distribution from `shots` samples; each iteration reuses one
    /// RNG stream across all of its gradient probes.
    Sampled { shots: u64, mode: SamplingMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub fd_delta: f64,
    pub shift: f64,
    pub estimator: GradientEstimator,
    pub seed: u64,
    pub init_range: (f64, f64),
    pub loss: LossMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            fd_delta: DEFAULT_FD_DELTA,
            shift: DEFAULT_SHIFT,
            estimator: GradientEstimator::FiniteDifference,
            seed: 0,
            init_range: (-1.0, 1.0),
            loss: LossMode::Exact,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(QnbmError::config("iterations", "must be at least 1"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(QnbmError::config("learning_rate", "must be positive"));
        }
        if self.fd_delta <= 0.0 || !self.fd_delta.is_finite() {
            return Err(QnbmError::config("fd_delta", "must be positive"));
        }
        if self.shift <= 0.0 || !self.shift.is_finite() {
            return Err(QnbmError::config("shift", "must be positive"));
        }
        let (lo, hi) = self.init_range;
        if !(-1.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
            return Err(QnbmError::config(
                "init_range",
                format!("({lo}, {hi}) not inside (-1, 1)"),
            ));
        }
        if let LossMode::Sampled { shots: 0, .. } = self.loss {
            return Err(QnbmError::config(
                "shots",
                "sampled loss needs at least 1 shot",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub structure: NeuronStructure,
    /// Initial loss followed by the loss after every step.
    pub loss_history: Vec<f64>,
    pub final_params: ParameterSet,
    pub final_distribution: Distribution,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> f64 {
        *self
            .loss_history
            .last()
            .expect("history always holds the initial loss")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `iteration,kl` rows for plotting.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "kl"])?;
        for (i, kl) in self.loss_history.iter().enumerate() {
            w.write_record([i.to_string(), kl.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact post-selected model distribution for flat parameters.
fn model_distribution(structure: &NeuronStructure, flat: &[f64]) -> Result<Distribution> {
    let params = ParameterSet::from_flat(structure, flat)?;
    Ok(build_qnbm(structure, &params)?.postselected()?.0)
}

fn loss_at(
    structure: &NeuronStructure,
    target: &Distribution,
    loss: LossMode,
    stream_seed: u64,
    flat: &[f64],
) -> Result<f64> {
    let model = match loss {
        LossMode::Exact => model_distribution(structure, flat)?,
        LossMode::Sampled { shots, mode } => {
            let params = ParameterSet::from_flat(structure, flat)?;
            let hist = build_qnbm(structure, &params)?.sample(
                mode,
                shots,
                DEFAULT_MAX_ATTEMPTS,
                stream_seed,
            )?;
            match hist.to_distribution() {
                Ok(d) => d,
                // every shot discarded: score as if no target string was ever seen
                Err(_) => return Ok(-DEFAULT_EPSILON.ln()),
            }
        }
    };
    kl_divergence(target, &model, DEFAULT_EPSILON)
}

/// Uniform draw from the open interval `(lo, hi)`.
fn init_params<R: Rng>(rng: &mut R, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if v > lo {
                break v.clamp(-CLIP, CLIP);
            }
        })
        .collect()
}

/// Fixed-rate gradient descent with post-step clipping. Non-convergence is
/// visible in the trace, never an error.
pub fn train(
    structure: &NeuronStructure,
    target: &Distribution,
    config: &TrainingConfig,
) -> Result<TrainingTrace> {
    config.validate()?;
    structure.ensure_executable()?;
    if target.n_bits() != structure.n_out() {
        return Err(QnbmError::LengthMismatch {
            expected: structure.n_out(),
            actual: target.n_bits(),
        });
    }
    let mut rng = stream_rng(config.seed, &[0]);
    let mut params = init_params(&mut rng, structure.n_params(), config.init_range);

    let iteration_seed = |k: usize| derive_seed(config.seed, &[1, k as u64]);
    let mut loss_history = Vec::with_capacity(config.iterations + 1);
    loss_history.push(loss_at(
        structure,
        target,
        config.loss,
        iteration_seed(0),
        &params,
    )?);

    for k in 0..config.iterations {
        let seed = iteration_seed(k);
        let loss = |p: &[f64]| loss_at(structure, target, config.loss, seed, p);
        let grad = match config.estimator {
            GradientEstimator::FiniteDifference => {
                finite_diff_gradient(&loss, &params, config.fd_delta)?
            }
            GradientEstimator::ParameterShift => {
                parameter_shift_gradient(&loss, &params, config.shift)?
            }
        };
        for (p, g) in params.iter_mut().zip(&grad) {
            *p = (*p - config.learning_rate * g).clamp(-CLIP, CLIP);
        }
        loss_history.push(loss_at(
            structure,
            target,
            config.loss,
            iteration_seed(k + 1),
            &params,
        )?);
    }

    let final_params = ParameterSet::from_flat(structure, &params)?;
    let final_distribution = model_distribution(structure, &params)?;
    Ok(TrainingTrace {
        structure: structure.clone(),
        loss_history,
        final_params,
        final_distribution,
    })
}
