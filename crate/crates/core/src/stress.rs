//! Stress-test harness: scale the number of RUS blocks, train each structure on
//! the exact simulator, then sample it repeatedly in each execution mode and
//! score the samples against the trained model's own distribution.
//!
//! The KL trend is fitted against the structure's position in the sweep
//! (0, 1, 2, …), not its neuron count.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{Distribution, Histogram};
use crate::error::{QnbmError, Result};
use crate::model::{build_qnbm, NeuronStructure, SamplingMode, DEFAULT_BRANCH_CAP};
use crate::neuron::DEFAULT_MAX_ATTEMPTS;
use crate::seeding::derive_seed;
use crate::target::{
    cardinality_distribution, derive_p_prime_target, CardinalitySpec, DEFAULT_CARDINALITY,
};
use crate::training::{kl_divergence, train, TrainingConfig, DEFAULT_EPSILON};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: u64 = 100;
pub const DEFAULT_TRIALS: usize = 8;

/// Shots needed to resolve `2^n_out` outcomes `k` times each. Post-selection
/// divides by the planning success rate `2^-n_out`.
pub fn shot_requirements(n_out: usize, k: u64, mode: SamplingMode) -> Result<u64> {
    if n_out == 0 {
        return Err(QnbmError::config("n_out", "must be at least 1"));
    }
    if k == 0 {
        return Err(QnbmError::config("k", "must be at least 1"));
    }
    let exponent = match mode {
        SamplingMode::ClassicalControl => n_out as u32,
        SamplingMode::PostSelection => 2 * n_out as u32,
    };
    2u64.checked_pow(exponent)
        .and_then(|base| base.checked_mul(k))
        .ok_or_else(|| QnbmError::config("n_out", "shot count overflows"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotPlan {
    pub mode: SamplingMode,
    pub k: u64,
    pub n_out: usize,
    pub shots: u64,
}

impl ShotPlan {
    pub fn new(mode: SamplingMode, k: u64, n_out: usize) -> Result<Self> {
        Ok(Self {
            mode,
            k,
            n_out,
            shots: shot_requirements(n_out, k, mode)?,
        })
    }
}

/// Gate, measurement and register counts for one shot of a zero-hidden model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub qubits: usize,
    pub parameterized_2q: usize,
    pub fixed_1q: usize,
    pub fixed_2q: usize,
    pub input_hadamards: usize,
    /// One per RUS block; repeats under classical control are accounted for
    /// separately through expected attempts.
    pub mid_circuit_measurements: usize,
    /// Bits needed to hold every ancilla outcome under the attempt cap.
    pub classical_registers: usize,
    pub final_measurements: usize,
}

pub fn gate_census(structure: &NeuronStructure, max_attempts: usize) -> Result<ResourceEstimate> {
    structure.ensure_executable()?;
    let (n_in, n_out) = (structure.n_in(), structure.n_out());
    Ok(ResourceEstimate {
        qubits: structure.total_qubits(),
        parameterized_2q: 2 * n_in * n_out,
        fixed_1q: n_out,
        fixed_2q: n_out,
        input_hadamards: n_in,
        mid_circuit_measurements: n_out,
        classical_registers: n_out * max_attempts,
        final_measurements: n_out,
    })
}

/// Linear credit model: `base + shots · (w1·n1q + w2·n2q + wm·nmeas) / divisor`.
/// Fields missing from a pricing file take their default values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSpec {
    pub base: f64,
    pub per_1q_weight: f64,
    pub per_2q_weight: f64,
    pub per_measurement_weight: f64,
    pub divisor: f64,
}

impl Default for PricingSpec {
    fn default() -> Self {
        Self {
            base: 5.0,
            per_1q_weight: 1.0,
            per_2q_weight: 10.0,
            per_measurement_weight: 5.0,
            divisor: 5000.0,
        }
    }
}

impl PricingSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("base", self.base),
            ("per_1q_weight", self.per_1q_weight),
            ("per_2q_weight", self.per_2q_weight),
            ("per_measurement_weight", self.per_measurement_weight),
        ];
        for (name, v) in fields {
            if v < 0.0 || !v.is_finite() {
                return Err(QnbmError::config(
                    "pricing",
                    format!("{name} must be non-negative"),
                ));
            }
        }
        if self.divisor <= 0.0 || !self.divisor.is_finite() {
            return Err(QnbmError::config("pricing", "divisor must be positive"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Estimated credits for `shots` executions. Per-block gates and the ancilla
/// measurement are multiplied by that block's expected attempt count (all 1.0
/// for post-selection); input Hadamards and final measurements run once.
pub fn hqc_estimate(
    census: &ResourceEstimate,
    shots: u64,
    expected_attempts_per_block: &[f64],
    pricing: &PricingSpec,
) -> Result<f64> {
    pricing.validate()?;
    let n_blocks = census.fixed_2q;
    if expected_attempts_per_block.len() != n_blocks {
        return Err(QnbmError::LengthMismatch {
            expected: n_blocks,
            actual: expected_attempts_per_block.len(),
        });
    }
    let attempts: f64 = expected_attempts_per_block.iter().sum();
    let per_block = |count: usize| count as f64 / n_blocks as f64 * attempts;
    let n_1q = census.input_hadamards as f64 + per_block(census.fixed_1q);
    let n_2q = per_block(census.parameterized_2q) + per_block(census.fixed_2q);
    let n_meas = per_block(census.mid_circuit_measurements) + census.final_measurements as f64;
    let per_shot = pricing.per_1q_weight * n_1q
        + pricing.per_2q_weight * n_2q
        + pricing.per_measurement_weight * n_meas;
    Ok(pricing.base + shots as f64 * per_shot / pricing.divisor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares line through `points`.
pub fn fit_trend(points: &[(f64, f64)]) -> Result<Trend> {
    if points.len() < 2 {
        return Err(QnbmError::DegenerateTrend);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(QnbmError::DegenerateTrend);
    }
    let slope = sxy / sxx;
    Ok(Trend {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub training: TrainingConfig,
    pub k: u64,
    pub max_attempts: usize,
    pub cardinality: usize,
    pub master_seed: u64,
    pub pricing: PricingSpec,
    /// Replaces the per-mode shot plan when set.
    pub shots_override: Option<u64>,
}

impl Default for StressConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            k: DEFAULT_K,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            cardinality: DEFAULT_CARDINALITY,
            master_seed: 0,
            pricing: PricingSpec::default(),
            shots_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub kl: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub mode: SamplingMode,
    pub shots: u64,
    pub kl_best: Option<f64>,
    pub kl_mean: Option<f64>,
    pub kl_std: Option<f64>,
    pub discard_rate: f64,
    pub expected_attempts_per_block: Vec<f64>,
    pub hqc_estimate: f64,
    pub trials: Vec<TrialRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub index: usize,
    pub structure: NeuronStructure,
    pub resources: Option<ResourceEstimate>,
    pub training_seed: u64,
    pub training_final_kl: Option<f64>,
    pub p_prime_target: Option<Distribution>,
    pub cells: Vec<CellReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub schema_version: u32,
    pub master_seed: u64,
    pub trials: usize,
    pub k: u64,
    pub max_attempts: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub bit_order: String,
    pub trend_x_axis: String,
    pub structures: Vec<StructureReport>,
    /// Mode whose best-of-trials KL values feed the trend.
    pub trend_mode: Option<SamplingMode>,
    pub trend: Option<Trend>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

impl StressReport {
    /// Number of (structure, mode) cells that produced at least one KL value.
    pub fn successful_cells(&self) -> usize {
        self.structures
            .iter()
            .flat_map(|s| &s.cells)
            .filter(|c| c.kl_best.is_some())
            .count()
    }

    pub fn total_cells(&self) -> usize {
        self.structures.iter().map(|s| s.cells.len().max(1)).sum()
    }

    pub fn cell(&self, structure_index: usize, mode: SamplingMode) -> Option<&CellReport> {
        self.structures
            .get(structure_index)?
            .cells
            .iter()
            .find(|c| c.mode == mode)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the full sweep. Failures inside a structure or cell are recorded in the
/// report; only an invalid configuration aborts.
pub fn run_stress_test(
    structures: &[NeuronStructure],
    modes: &[SamplingMode],
    trials: usize,
    config: &StressConfig,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<StressReport> {
    if trials == 0 {
        return Err(QnbmError::config("trials", "must be at least 1"));
    }
    if config.max_attempts == 0 {
        return Err(QnbmError::config("max_attempts", "must be at least 1"));
    }
    if config.k == 0 {
        return Err(QnbmError::config("k", "must be at least 1"));
    }
    if config.shots_override == Some(0) {
        return Err(QnbmError::config("shots", "must be at least 1"));
    }
    config.training.validate()?;
    config.pricing.validate()?;

    let reports: Vec<StructureReport> = structures
        .par_iter()
        .enumerate()
        .map(|(index, structure)| run_structure(index, structure, modes, trials, config, progress))
        .collect();

    let trend_mode = if modes.contains(&SamplingMode::ClassicalControl) {
        Some(SamplingMode::ClassicalControl)
    } else {
        modes.first().copied()
    };
    let trend = trend_mode.and_then(|mode| {
        let points: Vec<(f64, f64)> = reports
            .iter()
            .filter_map(|s| {
                let best = s.cells.iter().find(|c| c.mode == mode)?.kl_best?;
                Some((s.index as f64, best))
            })
            .collect();
        fit_trend(&points).ok()
    });

    Ok(StressReport {
        schema_version: REPORT_SCHEMA_VERSION,
        master_seed: config.master_seed,
        trials,
        k: config.k,
        max_attempts: config.max_attempts,
        iterations: config.training.iterations,
        learning_rate: config.training.learning_rate,
        bit_order: "output neuron 0 is the leftmost bit".into(),
        trend_x_axis: "structure index in sweep order (0, 1, 2, ...)".into(),
        structures: reports,
        trend_mode,
        trend,
        generated_at_unix: None,
    })
}

fn run_structure(
    index: usize,
    structure: &NeuronStructure,
    modes: &[SamplingMode],
    trials: usize,
    config: &StressConfig,
    progress: &(dyn Fn(&str) + Sync),
) -> StructureReport {
    let training_seed = derive_seed(config.master_seed, &[1, index as u64]);
    let mut report = StructureReport {
        index,
        structure: structure.clone(),
        resources: None,
        training_seed,
        training_final_kl: None,
        p_prime_target: None,
        cells: Vec::new(),
        error: None,
    };

    let prepared = (|| -> Result<_> {
        let resources = gate_census(structure, config.max_attempts)?;
        let target =
            cardinality_distribution(CardinalitySpec::new(structure.n_out(), config.cardinality)?)?;
        let training = TrainingConfig {
            seed: training_seed,
            ..config.training.clone()
        };
        let trace = train(structure, &target, &training)?;
        let p_prime = derive_p_prime_target(&trace.final_params, structure)?;
        let model = build_qnbm(structure, &trace.final_params)?;
        Ok((resources, trace.final_loss(), p_prime, model))
    })();
    let (resources, final_kl, p_prime, model) = match prepared {
        Ok(v) => v,
        Err(e) => {
            progress(&format!("structure {structure}: failed: {e}"));
            report.error = Some(e.to_string());
            return report;
        }
    };
    progress(&format!(
        "structure {structure}: trained, final KL {final_kl:.6}"
    ));
    report.resources = Some(resources);
    report.training_final_kl = Some(final_kl);

    report.cells = modes
        .iter()
        .enumerate()
        .map(|(mode_index, &mode)| {
            let cell = run_cell(
                index, mode_index, mode, &model, &p_prime, &resources, trials, config,
            );
            match (&cell.error, cell.kl_best) {
                (Some(e), _) => progress(&format!("structure {structure} / {mode}: failed: {e}")),
                (None, Some(best)) => progress(&format!(
                    "structure {structure} / {mode}: {} shots x {trials} trials, best KL {best:.6}",
                    cell.shots
                )),
                (None, None) => {}
            }
            cell
        })
        .collect();
    report.p_prime_target = Some(p_prime);
    report
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    structure_index: usize,
    mode_index: usize,
    mode: SamplingMode,
    model: &crate::model::Qnbm,
    p_prime: &Distribution,
    resources: &ResourceEstimate,
    trials: usize,
    config: &StressConfig,
) -> CellReport {
    let n_out = model.structure().n_out();
    let mut cell = CellReport {
        mode,
        shots: 0,
        kl_best: None,
        kl_mean: None,
        kl_std: None,
        discard_rate: 0.0,
        expected_attempts_per_block: vec![1.0; n_out],
        hqc_estimate: 0.0,
        trials: Vec::new(),
        error: None,
    };
    let result = (|| -> Result<()> {
        cell.shots = match config.shots_override {
            Some(s) => s,
            None => ShotPlan::new(mode, config.k, n_out)?.shots,
        };
        if mode == SamplingMode::ClassicalControl {
            cell.expected_attempts_per_block = model
                .classical_control(config.max_attempts, DEFAULT_BRANCH_CAP)?
                .expected_attempts;
        }
        cell.hqc_estimate = hqc_estimate(
            resources,
            cell.shots,
            &cell.expected_attempts_per_block,
            &config.pricing,
        )?;

        cell.trials = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(
                    config.master_seed,
                    &[2, structure_index as u64, mode_index as u64, trial as u64],
                );
                let histogram = model.sample(mode, cell.shots, config.max_attempts, seed)?;
                let kl = match histogram.to_distribution() {
                    Ok(empirical) => Some(kl_divergence(p_prime, &empirical, DEFAULT_EPSILON)?),
                    Err(_) => None,
                };
                Ok(TrialRecord {
                    trial,
                    seed,
                    kl,
                    histogram,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    })();
    if let Err(e) = result {
        cell.error = Some(e.to_string());
        return cell;
    }

    let kls: Vec<f64> = cell.trials.iter().filter_map(|t| t.kl).collect();
    if !kls.is_empty() {
        let (mean, std) = mean_std(&kls);
        cell.kl_best = kls.iter().copied().reduce(f64::min);
        cell.kl_mean = Some(mean);
        cell.kl_std = Some(std);
    } else {
        cell.error = Some("every shot of every trial was discarded".into());
    }
    let total: u64 = cell.trials.iter().map(|t| t.histogram.total_shots()).sum();
    let discarded: u64 = cell
        .trials
        .iter()
        .map(|t| t.histogram.discarded_shots())
        .sum();
    cell.discard_rate = if total == 0 {
        0.0
    } else {
        discarded as f64 / total as f64
    };
    cell
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = QnbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(QnbmError::config(
                "format",
                format!("unknown format {other:?}"),
            )),
        }
    }
}

impl StressReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One `trial` row per (structure, mode, trial), one `summary` row per
    /// (structure, mode), and a final `trend` row when a trend was fitted.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "kind",
            "structure",
            "mode",
            "trial",
            "seed",
            "shots",
            "kept",
            "discarded",
            "kl",
            "kl_best",
            "kl_mean",
            "kl_std",
            "discard_rate",
            "hqc_estimate",
            "slope",
            "intercept",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.structures {
            let name = s.structure.to_string();
            for c in &s.cells {
                for t in &c.trials {
                    w.write_record([
                        "trial".to_string(),
                        name.clone(),
                        c.mode.to_string(),
                        t.trial.to_string(),
                        t.seed.to_string(),
                        t.histogram.total_shots().to_string(),
                        t.histogram.kept_shots().to_string(),
                        t.histogram.discarded_shots().to_string(),
                        opt(t.kl),
                        String::new(),
                        String::new(),
                        String::new(),
                        t.histogram.discard_rate().to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ])?;
                }
                w.write_record([
                    "summary".to_string(),
                    name.clone(),
                    c.mode.to_string(),
                    String::new(),
                    String::new(),
                    c.shots.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    opt(c.kl_best),
                    opt(c.kl_mean),
                    opt(c.kl_std),
                    c.discard_rate.to_string(),
                    c.hqc_estimate.to_string(),
                    String::new(),
                    String::new(),
                    c.error.clone().unwrap_or_default(),
                ])?;
            }
            if let (true, Some(e)) = (s.cells.is_empty(), &s.error) {
                let mut row = vec![String::new(); 17];
                row[0] = "summary".into();
                row[1] = name.clone();
                row[16] = e.clone();
                w.write_record(&row)?;
            }
        }
        if let Some(t) = self.trend {
            let mut row = vec![String::new(); 17];
            row[0] = "trend".into();
            row[2] = self.trend_mode.map(|m| m.to_string()).unwrap_or_default();
            row[14] = t.slope.to_string();
            row[15] = t.intercept.to_string();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `report` to `path` in the requested format.
pub fn emit_report(report: &StressReport, format: ReportFormat, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => {
            out.write_all(report.to_json()?.as_bytes())?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => report.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}
