//! One repeat-until-success (RUS) neuron activation.
//!
//! A block rotates the ancilla by `4θ` for pre-activation `θ`, applies a
//! controlled `-iY` onto the output and uncomputes the ancilla rotation. The
//! ancilla-0 branch then carries `RY(2·q(θ))` on the output with
//! `q(θ) = arctan(tan²(2θ))`; the ancilla-1 branch carries `RY(-π/2)`, which
//! the recovery step undoes before the next attempt.

use rand::Rng;

use crate::error::{QnbmError, Result};
use crate::statevector::{ClassicalRegisters, GateOp, StateVector, RECOVERY_ANGLE};

/// Attempt cap matching the classical-register budget of the reference hardware.
pub const DEFAULT_MAX_ATTEMPTS: usize = 6;

/// Controlled rotations act with angle `ANGLE_FACTOR · parameter`.
pub const ANGLE_FACTOR: f64 = 4.0;

fn check_finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(QnbmError::NonFinite(x))
    }
}

/// The activation `q(θ) = arctan(tan²(2θ))`, with the pole limit `π/2`.
pub fn activation(theta: f64) -> Result<f64> {
    let (s, c) = (2.0 * check_finite(theta)?).sin_cos();
    Ok((s * s).atan2(c * c))
}

/// Probability that a single attempt heralds success on a basis input.
pub fn success_probability(theta: f64) -> Result<f64> {
    let s = (4.0 * check_finite(theta)?).sin();
    Ok(1.0 - s * s / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RusBlock {
    input_qubits: Vec<usize>,
    ancilla: usize,
    output_qubit: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl RusBlock {
    /// Parameters only need to be finite here: gradient probes legitimately
    /// step past the `(-1, 1)` box that [`crate::model::ParameterSet`] enforces.
    pub fn new(
        input_qubits: Vec<usize>,
        ancilla: usize,
        output_qubit: usize,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self> {
        if weights.len() != input_qubits.len() {
            return Err(QnbmError::LengthMismatch {
                expected: input_qubits.len(),
                actual: weights.len(),
            });
        }
        for &w in weights.iter().chain(std::iter::once(&bias)) {
            check_finite(w)?;
        }
        let mut all: Vec<usize> = input_qubits.clone();
        all.extend([ancilla, output_qubit]);
        for (k, q) in all.iter().enumerate() {
            if all[..k].contains(q) {
                return Err(QnbmError::DuplicateQubit(*q));
            }
        }
        Ok(Self {
            input_qubits,
            ancilla,
            output_qubit,
            weights,
            bias,
        })
    }

    pub fn input_qubits(&self) -> &[usize] {
        &self.input_qubits
    }

    pub fn ancilla(&self) -> usize {
        self.ancilla
    }

    pub fn output_qubit(&self) -> usize {
        self.output_qubit
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}

/// `θ = Σ wᵢxᵢ + b` for one input bitstring, given as 0/1 values.
pub fn preactivation(block: &RusBlock, input_bits: &[u8]) -> Result<f64> {
    if input_bits.len() != block.weights.len() {
        return Err(QnbmError::LengthMismatch {
            expected: block.weights.len(),
            actual: input_bits.len(),
        });
    }
    Ok(block
        .weights
        .iter()
        .zip(input_bits)
        .map(|(w, &x)| w * f64::from(x))
        .sum::<f64>()
        + block.bias)
}

/// The coherent part of one attempt: rotate, kick the output, uncompute.
pub fn rus_unitaries(block: &RusBlock) -> Vec<GateOp> {
    let ancilla = block.ancilla;
    let mut ops = Vec::with_capacity(2 * block.weights.len() + 3);
    for (&control, &w) in block.input_qubits.iter().zip(&block.weights) {
        ops.push(GateOp::ControlledRy {
            control,
            target: ancilla,
            angle: ANGLE_FACTOR * w,
        });
    }
    ops.push(GateOp::Ry {
        target: ancilla,
        angle: ANGLE_FACTOR * block.bias,
    });
    ops.push(GateOp::ControlledY {
        control: ancilla,
        target: block.output_qubit,
    });
    ops.push(GateOp::Ry {
        target: ancilla,
        angle: -ANGLE_FACTOR * block.bias,
    });
    for (&control, &w) in block.input_qubits.iter().zip(&block.weights).rev() {
        ops.push(GateOp::ControlledRy {
            control,
            target: ancilla,
            angle: -ANGLE_FACTOR * w,
        });
    }
    ops
}

/// One full attempt: the unitaries, the ancilla measurement into a classical
/// register, and the recovery conditioned on that register.
pub fn build_rus_block(block: &RusBlock) -> Vec<GateOp> {
    let mut ops = rus_unitaries(block);
    ops.push(GateOp::MeasureToRegister {
        qubit: block.ancilla,
    });
    ops.push(GateOp::ConditionalRecovery {
        ancilla: block.ancilla,
        output: block.output_qubit,
    });
    ops
}

#[derive(Debug, Clone, PartialEq)]
pub struct RusResult {
    pub state: StateVector,
    pub attempts: usize,
    pub succeeded: bool,
}

/// Runs attempts until the ancilla reads 0 or `max_attempts` is used up.
/// Exhaustion is reported through `succeeded`, with the post-recovery state.
pub fn execute_rus_trajectory<R: Rng + ?Sized>(
    mut state: StateVector,
    block: &RusBlock,
    registers: &mut ClassicalRegisters,
    rng: &mut R,
    max_attempts: usize,
) -> Result<RusResult> {
    if max_attempts == 0 {
        return Err(QnbmError::config("max_attempts", "must be at least 1"));
    }
    let ops = build_rus_block(block);
    for attempt in 1..=max_attempts {
        for op in &ops {
            state.execute(op, registers, rng)?;
        }
        if registers.last()? == 0 {
            return Ok(RusResult {
                state,
                attempts: attempt,
                succeeded: true,
            });
        }
    }
    Ok(RusResult {
        state,
        attempts: max_attempts,
        succeeded: false,
    })
}

fn check_ancilla_reset(state: &StateVector, block: &RusBlock) -> Result<()> {
    if state.probability_of(block.ancilla, 1)? > 1e-12 {
        return Err(QnbmError::AncillaNotReset(block.ancilla));
    }
    Ok(())
}

/// Exact success branch of one attempt: probability and renormalised state.
pub fn rus_success_projection(state: &StateVector, block: &RusBlock) -> Result<(f64, StateVector)> {
    check_ancilla_reset(state, block)?;
    let mut s = state.clone();
    for op in rus_unitaries(block) {
        s.apply(&op)?;
    }
    let p = s.project(block.ancilla, 0)?;
    Ok((p, s))
}

/// Both outcomes of one attempt, each with its probability.
#[derive(Debug, Clone)]
pub struct AttemptSplit {
    pub success: Option<(f64, StateVector)>,
    /// Failure branch after recovery, ready for the next attempt.
    pub failure: Option<(f64, StateVector)>,
}

/// Splits one attempt into its success branch and its recovered failure branch.
pub fn rus_attempt_split(state: &StateVector, block: &RusBlock) -> Result<AttemptSplit> {
    check_ancilla_reset(state, block)?;
    let mut evolved = state.clone();
    for op in rus_unitaries(block) {
        evolved.apply(&op)?;
    }
    let mut success = evolved.clone();
    let success = match success.project(block.ancilla, 0) {
        Ok(p) => Some((p, success)),
        Err(QnbmError::ZeroProbabilityBranch { .. }) => None,
        Err(e) => return Err(e),
    };
    let failure = match evolved.project(block.ancilla, 1) {
        Ok(p) => {
            evolved.apply(&GateOp::X {
                target: block.ancilla,
            })?;
            evolved.apply(&GateOp::Ry {
                target: block.output_qubit,
                angle: RECOVERY_ANGLE,
            })?;
            Some((p, evolved))
        }
        Err(QnbmError::ZeroProbabilityBranch { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(AttemptSplit { success, failure })
}
