//! Full QNBM: input superposition followed by one RUS block per output neuron.
//!
//! Qubit layout for a `(N_in, 0, N_out)` model: inputs `0..N_in`, outputs
//! `N_in..N_in+N_out`, then the shared ancilla. Output neuron 0 is the
//! leftmost character of every reported bitstring.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{Distribution, Histogram};
use crate::error::{QnbmError, Result};
use crate::neuron::{
    execute_rus_trajectory, rus_attempt_split, rus_success_projection, rus_unitaries, RusBlock,
};
use crate::seeding::stream_rng;
use crate::statevector::{ClassicalRegisters, GateOp, StateVector};

/// Default guard on the number of branches explored by classical-control enumeration.
pub const DEFAULT_BRANCH_CAP: usize = 1_000_000;

/// Shots simulated per RNG stream when sampling.
const SHOT_CHUNK: usize = 1024;

/// Layer sizes `(N_in, N_hid…, N_out)`. A hidden entry of 0 means "no layer",
/// so `1,0,2` is the two-layer network with one input and two outputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct NeuronStructure {
    layer_sizes: Vec<usize>,
}

impl NeuronStructure {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(QnbmError::InvalidStructure(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_sizes[0] == 0 || *layer_sizes.last().unwrap() == 0 {
            return Err(QnbmError::InvalidStructure(
                "input and output layers must be non-empty".into(),
            ));
        }
        Ok(Self { layer_sizes })
    }

    /// Shorthand for the zero-hidden structure `(n_in, 0, n_out)`.
    pub fn shallow(n_in: usize, n_out: usize) -> Result<Self> {
        Self::new(vec![n_in, 0, n_out])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        let inner = &self.layer_sizes[1..self.layer_sizes.len() - 1];
        inner.iter().copied().filter(|&n| n > 0).collect()
    }

    pub fn has_hidden_layers(&self) -> bool {
        !self.hidden_layers().is_empty()
    }

    /// Every neuron plus the single shared ancilla.
    pub fn total_qubits(&self) -> usize {
        self.layer_sizes.iter().sum::<usize>() + 1
    }

    pub fn ensure_executable(&self) -> Result<()> {
        if self.has_hidden_layers() {
            Err(QnbmError::HiddenLayersUnsupported)
        } else {
            Ok(())
        }
    }

    pub fn input_qubits(&self) -> Vec<usize> {
        (0..self.n_in()).collect()
    }

    pub fn output_qubits(&self) -> Vec<usize> {
        (self.n_in()..self.n_in() + self.n_out()).collect()
    }

    pub fn ancilla(&self) -> usize {
        self.n_in() + self.n_out()
    }

    /// Number of trainable values: one weight per input per output, one bias per output.
    pub fn n_params(&self) -> usize {
        self.n_out() * (self.n_in() + 1)
    }
}

impl fmt::Display for NeuronStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for NeuronStructure {
    type Err = QnbmError;

    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .trim()
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| {
                    QnbmError::InvalidStructure(format!(
                        "{s:?} is not a comma-separated list of counts"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }
}

impl TryFrom<Vec<usize>> for NeuronStructure {
    type Error = QnbmError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NeuronStructure> for Vec<usize> {
    fn from(s: NeuronStructure) -> Self {
        s.layer_sizes
    }
}

/// Weights (one row per output neuron, one column per input neuron) and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl ParameterSet {
    /// Checked constructor: dimensions must match and every value must lie in `(-1, 1)`.
    pub fn new(
        structure: &NeuronStructure,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let p = Self { weights, biases };
        p.check_dimensions(structure)?;
        p.check_range()?;
        Ok(p)
    }

    pub fn zeros(structure: &NeuronStructure) -> Self {
        Self {
            weights: vec![vec![0.0; structure.n_in()]; structure.n_out()],
            biases: vec![0.0; structure.n_out()],
        }
    }

    /// Rebuilds from the flat layout of [`ParameterSet::to_flat`]. Values only
    /// need to be finite, so gradient probes may step outside `(-1, 1)`.
    pub fn from_flat(structure: &NeuronStructure, flat: &[f64]) -> Result<Self> {
        if flat.len() != structure.n_params() {
            return Err(QnbmError::LengthMismatch {
                expected: structure.n_params(),
                actual: flat.len(),
            });
        }
        if let Some(&bad) = flat.iter().find(|v| !v.is_finite()) {
            return Err(QnbmError::NonFinite(bad));
        }
        let (n_in, n_out) = (structure.n_in(), structure.n_out());
        let weights = flat[..n_in * n_out]
            .chunks(n_in)
            .map(<[f64]>::to_vec)
            .collect();
        let biases = flat[n_in * n_out..].to_vec();
        Ok(Self { weights, biases })
    }

    /// Weights row by row, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flatten()
            .chain(&self.biases)
            .copied()
            .collect()
    }

    pub fn check_dimensions(&self, structure: &NeuronStructure) -> Result<()> {
        let mismatch = |expected, actual| Err(QnbmError::LengthMismatch { expected, actual });
        if self.weights.len() != structure.n_out() {
            return mismatch(structure.n_out(), self.weights.len());
        }
        if let Some(row) = self.weights.iter().find(|r| r.len() != structure.n_in()) {
            return mismatch(structure.n_in(), row.len());
        }
        if self.biases.len() != structure.n_out() {
            return mismatch(structure.n_out(), self.biases.len());
        }
        Ok(())
    }

    pub fn check_range(&self) -> Result<()> {
        match self
            .to_flat()
            .into_iter()
            .find(|v| v.is_nan() || v.abs() >= 1.0)
        {
            Some(value) => Err(QnbmError::ParameterOutOfRange { value }),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a parameter file and validates it against `structure`.
    pub fn from_json(structure: &NeuronStructure, s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        Self::new(structure, p.weights, p.biases)
    }
}

/// A built model: the preparation gates and the ordered RUS blocks.
#[derive(Debug, Clone)]
pub struct Qnbm {
    structure: NeuronStructure,
    input_prep: Vec<GateOp>,
    blocks: Vec<RusBlock>,
}

/// Builds the circuit: `H` on every input, then one block per output neuron
/// in output order, all sharing the ancilla.
pub fn build_qnbm(structure: &NeuronStructure, params: &ParameterSet) -> Result<Qnbm> {
    structure.ensure_executable()?;
    params.check_dimensions(structure)?;
    let inputs = structure.input_qubits();
    let input_prep = inputs.iter().map(|&target| GateOp::H { target }).collect();
    let blocks = structure
        .output_qubits()
        .into_iter()
        .zip(params.weights.iter().zip(&params.biases))
        .map(|(out, (row, &b))| {
            RusBlock::new(inputs.clone(), structure.ancilla(), out, row.clone(), b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Qnbm {
        structure: structure.clone(),
        input_prep,
        blocks,
    })
}

impl Qnbm {
    pub fn structure(&self) -> &NeuronStructure {
        &self.structure
    }

    pub fn input_prep(&self) -> &[GateOp] {
        &self.input_prep
    }

    pub fn blocks(&self) -> &[RusBlock] {
        &self.blocks
    }

    pub fn n_qubits(&self) -> usize {
        self.structure.total_qubits()
    }

    /// State after the input Hadamards.
    pub fn prepared_state(&self) -> Result<StateVector> {
        let mut s = StateVector::new(self.n_qubits())?;
        for g in &self.input_prep {
            s.apply(g)?;
        }
        Ok(s)
    }

    /// Output distribution when every block succeeds on its first attempt, and
    /// the probability of that happening.
    pub fn postselected(&self) -> Result<(Distribution, f64)> {
        let mut state = self.prepared_state()?;
        let mut p_all = 1.0;
        for block in &self.blocks {
            let (p, next) = rus_success_projection(&state, block)?;
            p_all *= p;
            state = next;
        }
        Ok((
            state.marginal_distribution(&self.structure.output_qubits())?,
            p_all,
        ))
    }

    /// Classical-control output distribution under an attempt cap, by
    /// enumerating every attempt-count sequence.
    pub fn classical_control(
        &self,
        max_attempts: usize,
        branch_cap: usize,
    ) -> Result<ClassicalControlOutcome> {
        if max_attempts == 0 {
            return Err(QnbmError::config("max_attempts", "must be at least 1"));
        }
        let mut acc = Enumeration {
            model: self,
            outputs: self.structure.output_qubits(),
            max_attempts,
            branch_cap,
            weights: vec![0.0; 1 << self.structure.n_out()],
            discarded: 0.0,
            branches: 0,
            expected_attempts: vec![0.0; self.blocks.len()],
        };
        acc.descend(self.prepared_state()?, 1.0, 0)?;
        let distribution = Distribution::from_weights(self.structure.n_out(), acc.weights)?;
        Ok(ClassicalControlOutcome {
            distribution,
            discarded_weight: acc.discarded,
            branches: acc.branches,
            expected_attempts: acc.expected_attempts,
        })
    }

    /// Samples `shots` executions. Shots are split into fixed chunks with
    /// their own RNG streams, so results do not depend on the worker count.
    pub fn sample(
        &self,
        mode: SamplingMode,
        shots: u64,
        max_attempts: usize,
        seed: u64,
    ) -> Result<Histogram> {
        if shots == 0 {
            return Err(QnbmError::config("shots", "must be at least 1"));
        }
        if max_attempts == 0 {
            return Err(QnbmError::config("max_attempts", "must be at least 1"));
        }
        let prepared = self.prepared_state()?;
        let n_chunks = shots.div_ceil(SHOT_CHUNK as u64);
        let partials = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * SHOT_CHUNK as u64;
                let hi = (lo + SHOT_CHUNK as u64).min(shots);
                let mut rng = stream_rng(seed, &[chunk]);
                let mut hist = Histogram::empty(self.structure.n_out());
                for _ in lo..hi {
                    match self.run_shot(&prepared, mode, max_attempts, &mut rng)? {
                        Some(index) => hist.record(index),
                        None => hist.record_discard(),
                    }
                }
                Ok(hist)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = Histogram::empty(self.structure.n_out());
        for h in &partials {
            total.merge(h);
        }
        Ok(total)
    }

    fn run_shot<R: rand::Rng + ?Sized>(
        &self,
        prepared: &StateVector,
        mode: SamplingMode,
        max_attempts: usize,
        rng: &mut R,
    ) -> Result<Option<usize>> {
        let mut state = prepared.clone();
        let n_out = self.structure.n_out();
        match mode {
            SamplingMode::ClassicalControl => {
                let mut registers = ClassicalRegisters::new(n_out * max_attempts);
                for block in &self.blocks {
                    let r =
                        execute_rus_trajectory(state, block, &mut registers, rng, max_attempts)?;
                    if !r.succeeded {
                        return Ok(None);
                    }
                    state = r.state;
                }
            }
            SamplingMode::PostSelection => {
                let ancilla = self.structure.ancilla();
                let mut registers = ClassicalRegisters::new(n_out);
                for block in &self.blocks {
                    for op in rus_unitaries(block) {
                        state.apply(&op)?;
                    }
                    state.execute(
                        &GateOp::MeasureToRegister { qubit: ancilla },
                        &mut registers,
                        rng,
                    )?;
                    // Fixed circuit, no feedback: the ancilla is simply reset for the next block.
                    if registers.last()? == 1 {
                        state.apply(&GateOp::X { target: ancilla })?;
                    }
                }
                if registers.bits().contains(&1) {
                    return Ok(None);
                }
            }
        }
        let mut index = 0usize;
        for q in self.structure.output_qubits() {
            index = (index << 1) | usize::from(state.measure(q, rng)?);
        }
        Ok(Some(index))
    }
}

struct Enumeration<'a> {
    model: &'a Qnbm,
    outputs: Vec<usize>,
    max_attempts: usize,
    branch_cap: usize,
    weights: Vec<f64>,
    discarded: f64,
    branches: usize,
    expected_attempts: Vec<f64>,
}

impl Enumeration<'_> {
    fn descend(&mut self, state: StateVector, weight: f64, block_index: usize) -> Result<()> {
        let Some(block) = self.model.blocks.get(block_index) else {
            let marginal = state.marginal_distribution(&self.outputs)?;
            for (w, p) in self.weights.iter_mut().zip(marginal.probabilities()) {
                *w += weight * p;
            }
            return Ok(());
        };
        let mut current = state;
        let mut remaining = weight;
        for _ in 0..self.max_attempts {
            self.branches += 1;
            if self.branches > self.branch_cap {
                return Err(QnbmError::BranchCapExceeded(self.branch_cap));
            }
            self.expected_attempts[block_index] += remaining;
            let split = rus_attempt_split(&current, block)?;
            if let Some((p, next)) = split.success {
                self.descend(next, remaining * p, block_index + 1)?;
            }
            match split.failure {
                Some((p, recovered)) => {
                    remaining *= p;
                    current = recovered;
                }
                None => return Ok(()),
            }
        }
        self.discarded += remaining;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassicalControlOutcome {
    /// Output distribution over shots that did not exhaust their attempts.
    pub distribution: Distribution,
    /// Probability mass of attempt-exhausted shots.
    pub discarded_weight: f64,
    pub branches: usize,
    /// Mean number of attempts each block runs per shot, counting shots that
    /// never reach the block as zero.
    pub expected_attempts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    ClassicalControl,
    PostSelection,
}

impl SamplingMode {
    pub const ALL: [SamplingMode; 2] =
        [SamplingMode::ClassicalControl, SamplingMode::PostSelection];

    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::ClassicalControl => "classical_control",
            SamplingMode::PostSelection => "post_selection",
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingMode {
    type Err = QnbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "classical_control" | "cc" => Ok(SamplingMode::ClassicalControl),
            "post_selection" | "ps" => Ok(SamplingMode::PostSelection),
            other => Err(QnbmError::config("mode", format!("unknown mode {other:?}"))),
        }
    }
}

/// Output distribution with all ancillas post-selected on success.
pub fn exact_distribution_postselected(
    structure: &NeuronStructure,
    params: &ParameterSet,
) -> Result<Distribution> {
    Ok(build_qnbm(structure, params)?.postselected()?.0)
}

/// Output distribution under classical control with at most `max_attempts`
/// attempts per block, using the default branch guard.
pub fn exact_distribution_classical_control(
    structure: &NeuronStructure,
    params: &ParameterSet,
    max_attempts: usize,
) -> Result<ClassicalControlOutcome> {
    build_qnbm(structure, params)?.classical_control(max_attempts, DEFAULT_BRANCH_CAP)
}

pub fn sample(
    structure: &NeuronStructure,
    params: &ParameterSet,
    mode: SamplingMode,
    shots: u64,
    max_attempts: usize,
    seed: u64,
) -> Result<Histogram> {
    build_qnbm(structure, params)?.sample(mode, shots, max_attempts, seed)
}
