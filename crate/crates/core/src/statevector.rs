//! Dense statevector engine with mid-circuit measurement and classical registers.
//!
//! Amplitudes are stored flat, indexed by the computational basis bitstring with
//! qubit 0 as the most significant bit. Rotations use `RY(φ) = exp(-iφY/2)`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use num_complex::Complex64;
use rand::Rng;

use crate::distribution::Distribution;
use crate::error::{QnbmError, Result};

/// Largest register the engine will allocate unless a caller raises the cap.
pub const DEFAULT_MAX_QUBITS: usize = 24;

/// Branches with probability at or below this are treated as impossible.
pub const ZERO_PROBABILITY: f64 = 1e-24;

/// Output-qubit rotation applied after a failed ancilla measurement. It is the
/// inverse of the `RY(-π/2)` that the failure branch leaves on the output.
pub const RECOVERY_ANGLE: f64 = FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateOp {
    H {
        target: usize,
    },
    X {
        target: usize,
    },
    Ry {
        target: usize,
        angle: f64,
    },
    ControlledRy {
        control: usize,
        target: usize,
        angle: f64,
    },
    /// Controlled `-iY`, i.e. a controlled `RY(π)`. Real-valued, so the success
    /// branch of an RUS block is a pure Y rotation of the output.
    ControlledY {
        control: usize,
        target: usize,
    },
    /// Measures `qubit` and appends the outcome to the classical registers.
    MeasureToRegister {
        qubit: usize,
    },
    /// If the most recently written register holds 1: `X` on `ancilla` and
    /// `RY(RECOVERY_ANGLE)` on `output`.
    ConditionalRecovery {
        ancilla: usize,
        output: usize,
    },
}

impl GateOp {
    pub fn name(&self) -> &'static str {
        match self {
            GateOp::H { .. } => "H",
            GateOp::X { .. } => "X",
            GateOp::Ry { .. } => "RY",
            GateOp::ControlledRy { .. } => "ControlledRY",
            GateOp::ControlledY { .. } => "ControlledY",
            GateOp::MeasureToRegister { .. } => "MeasureToRegister",
            GateOp::ConditionalRecovery { .. } => "ConditionalRecovery",
        }
    }

    pub fn is_unitary(&self) -> bool {
        !matches!(
            self,
            GateOp::MeasureToRegister { .. } | GateOp::ConditionalRecovery { .. }
        )
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            GateOp::H { target } | GateOp::X { target } | GateOp::Ry { target, .. } => {
                vec![target]
            }
            GateOp::ControlledRy {
                control, target, ..
            }
            | GateOp::ControlledY { control, target } => vec![control, target],
            GateOp::MeasureToRegister { qubit } => vec![qubit],
            GateOp::ConditionalRecovery { ancilla, output } => vec![ancilla, output],
        }
    }
}

/// Finite bank of classical bits written by mid-circuit measurements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassicalRegisters {
    bits: Vec<u8>,
    capacity: usize,
}

impl ClassicalRegisters {
    pub fn new(capacity: usize) -> Self {
        Self {
            bits: Vec::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends a bit, returning its register index.
    pub fn write(&mut self, bit: u8) -> Result<usize> {
        if self.bits.len() >= self.capacity {
            return Err(QnbmError::RegisterOverflow {
                capacity: self.capacity,
            });
        }
        self.bits.push(bit);
        Ok(self.bits.len() - 1)
    }

    pub fn get(&self, index: usize) -> Result<u8> {
        self.bits
            .get(index)
            .copied()
            .ok_or(QnbmError::RegisterUnset { index })
    }

    pub fn last(&self) -> Result<u8> {
        self.bits
            .last()
            .copied()
            .ok_or(QnbmError::RegisterUnset { index: 0 })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

type Matrix2 = [[Complex64; 2]; 2];

fn real_matrix(m: [[f64; 2]; 2]) -> Matrix2 {
    [
        [Complex64::new(m[0][0], 0.0), Complex64::new(m[0][1], 0.0)],
        [Complex64::new(m[1][0], 0.0), Complex64::new(m[1][1], 0.0)],
    ]
}

fn ry_matrix(angle: f64) -> Matrix2 {
    let (s, c) = (angle / 2.0).sin_cos();
    real_matrix([[c, -s], [s, c]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits, capped at [`DEFAULT_MAX_QUBITS`].
    pub fn new(n_qubits: usize) -> Result<Self> {
        Self::with_max_qubits(n_qubits, DEFAULT_MAX_QUBITS)
    }

    pub fn with_max_qubits(n_qubits: usize, max_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > max_qubits || n_qubits >= usize::BITS as usize {
            return Err(QnbmError::QubitCountOutOfRange {
                requested: n_qubits,
                max: max_qubits,
            });
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    /// Wraps an explicit amplitude vector. The length must be a power of two and
    /// the vector must be normalised within 1e-10.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QnbmError::config(
                "amplitudes",
                format!("length {len} is not a power of two"),
            ));
        }
        let state = Self {
            n_qubits: len.trailing_zeros() as usize,
            amplitudes,
        };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(QnbmError::config(
                "amplitudes",
                format!("norm {norm} is not 1"),
            ));
        }
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_qubits(&self, qubits: &[usize]) -> Result<()> {
        for (k, &q) in qubits.iter().enumerate() {
            if q >= self.n_qubits {
                return Err(QnbmError::QubitIndexOutOfRange {
                    index: q,
                    n_qubits: self.n_qubits,
                });
            }
            if qubits[..k].contains(&q) {
                return Err(QnbmError::DuplicateQubit(q));
            }
        }
        Ok(())
    }

    fn apply_1q(&mut self, target: usize, m: &Matrix2) {
        self.apply_controlled_1q(None, target, m);
    }

    fn apply_controlled_1q(&mut self, control: Option<usize>, target: usize, m: &Matrix2) {
        let tmask = self.mask(target);
        let cmask = control.map_or(0, |c| self.mask(c));
        for i in 0..self.amplitudes.len() {
            if i & tmask != 0 || i & cmask != cmask {
                continue;
            }
            let j = i | tmask;
            let a0 = self.amplitudes[i];
            let a1 = self.amplitudes[j];
            self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
            self.amplitudes[j] = m[1][0] * a0 + m[1][1] * a1;
        }
    }

    /// Applies a unitary gate in place.
    pub fn apply(&mut self, gate: &GateOp) -> Result<()> {
        if !gate.is_unitary() {
            return Err(QnbmError::NonUnitaryGate(gate.name()));
        }
        self.check_qubits(&gate.qubits())?;
        match *gate {
            GateOp::H { target } => self.apply_1q(
                target,
                &real_matrix([
                    [FRAC_1_SQRT_2, FRAC_1_SQRT_2],
                    [FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
                ]),
            ),
            GateOp::X { target } => self.apply_1q(target, &real_matrix([[0.0, 1.0], [1.0, 0.0]])),
            GateOp::Ry { target, angle } => self.apply_1q(target, &ry_matrix(angle)),
            GateOp::ControlledRy {
                control,
                target,
                angle,
            } => self.apply_controlled_1q(Some(control), target, &ry_matrix(angle)),
            GateOp::ControlledY { control, target } => self.apply_controlled_1q(
                Some(control),
                target,
                &real_matrix([[0.0, -1.0], [1.0, 0.0]]),
            ),
            GateOp::MeasureToRegister { .. } | GateOp::ConditionalRecovery { .. } => {
                unreachable!("non-unitary kinds rejected above")
            }
        }
        Ok(())
    }

    /// Born probability that `qubit` reads `value`.
    pub fn probability_of(&self, qubit: usize, value: u8) -> Result<f64> {
        self.check_qubits(&[qubit])?;
        let mask = self.mask(qubit);
        let want = if value == 0 { 0 } else { mask };
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == want)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projects `qubit` onto `value` and renormalises, returning the branch
    /// probability. A zero-probability branch is an error and leaves the state
    /// untouched.
    pub fn project(&mut self, qubit: usize, value: u8) -> Result<f64> {
        let p = self.probability_of(qubit, value)?;
        if p <= ZERO_PROBABILITY {
            return Err(QnbmError::ZeroProbabilityBranch { qubit, value });
        }
        let mask = self.mask(qubit);
        let want = if value == 0 { 0 } else { mask };
        let scale = 1.0 / p.sqrt();
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & mask == want {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        Ok(p)
    }

    /// Samples a measurement of `qubit` and collapses the state onto the outcome.
    pub fn measure<R: Rng + ?Sized>(&mut self, qubit: usize, rng: &mut R) -> Result<u8> {
        let p1 = self.probability_of(qubit, 1)?;
        let r: f64 = rng.gen();
        let outcome = u8::from(r < p1);
        // A branch below ZERO_PROBABILITY can only be drawn through rounding; take the other one.
        let outcome = if outcome == 1 && p1 <= ZERO_PROBABILITY {
            0
        } else if outcome == 0 && 1.0 - p1 <= ZERO_PROBABILITY {
            1
        } else {
            outcome
        };
        self.project(qubit, outcome)?;
        Ok(outcome)
    }

    /// Runs any gate, including measurement and classically-controlled recovery.
    pub fn execute<R: Rng + ?Sized>(
        &mut self,
        op: &GateOp,
        registers: &mut ClassicalRegisters,
        rng: &mut R,
    ) -> Result<()> {
        match *op {
            GateOp::MeasureToRegister { qubit } => {
                let bit = self.measure(qubit, rng)?;
                registers.write(bit)?;
            }
            GateOp::ConditionalRecovery { ancilla, output } => {
                self.check_qubits(&[ancilla, output])?;
                if registers.last()? == 1 {
                    self.apply(&GateOp::X { target: ancilla })?;
                    self.apply(&GateOp::Ry {
                        target: output,
                        angle: RECOVERY_ANGLE,
                    })?;
                }
            }
            _ => self.apply(op)?,
        }
        Ok(())
    }

    /// Born-rule marginal over `qubits`. The first listed qubit is the leftmost
    /// character of each bitstring.
    pub fn marginal_distribution(&self, qubits: &[usize]) -> Result<Distribution> {
        if qubits.is_empty() {
            return Err(QnbmError::EmptySubset);
        }
        self.check_qubits(qubits)?;
        let masks: Vec<usize> = qubits.iter().map(|&q| self.mask(q)).collect();
        let mut probs = vec![0.0; 1 << qubits.len()];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let key = masks
                .iter()
                .fold(0usize, |acc, &m| (acc << 1) | usize::from(i & m != 0));
            probs[key] += p;
        }
        Distribution::new(qubits.len(), probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn bell() -> StateVector {
        StateVector::from_amplitudes(vec![c(FRAC_1_SQRT_2), c(0.0), c(0.0), c(FRAC_1_SQRT_2)])
            .unwrap()
    }

    fn close(a: &[Complex64], b: &[Complex64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    #[test]
    fn new_state_is_all_zeros() {
        let s = StateVector::new(1).unwrap();
        assert_eq!(s.amplitudes(), &[c(1.0), c(0.0)]);
        let s = StateVector::new(3).unwrap();
        assert_eq!(s.amplitudes().len(), 8);
        assert_eq!(s.amplitudes()[0], c(1.0));
        assert!(s.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn new_state_rejects_bad_counts() {
        assert!(matches!(
            StateVector::new(0),
            Err(QnbmError::QubitCountOutOfRange { .. })
        ));
        assert!(StateVector::new(DEFAULT_MAX_QUBITS + 1).is_err());
        assert!(StateVector::with_max_qubits(4, 3).is_err());
    }

    #[test]
    fn hadamard_and_ry_on_zero() {
        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::H { target: 0 }).unwrap();
        assert!(close(s.amplitudes(), &[c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)]));

        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::Ry {
            target: 0,
            angle: PI,
        })
        .unwrap();
        assert!(close(s.amplitudes(), &[c(0.0), c(1.0)]));
    }

    #[test]
    fn controlled_ry_inactive_control() {
        let mut s = StateVector::new(2).unwrap();
        let before = s.clone();
        s.apply(&GateOp::ControlledRy {
            control: 0,
            target: 1,
            angle: PI,
        })
        .unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn controlled_y_acts_on_control_one_subspace() {
        let mut s = StateVector::new(2).unwrap();
        s.apply(&GateOp::X { target: 0 }).unwrap();
        s.apply(&GateOp::ControlledY {
            control: 0,
            target: 1,
        })
        .unwrap();
        assert!(close(s.amplitudes(), &[c(0.0), c(0.0), c(0.0), c(1.0)]));
    }

    #[test]
    fn apply_rejects_bad_gates() {
        let mut s = StateVector::new(2).unwrap();
        assert!(matches!(
            s.apply(&GateOp::H { target: 2 }),
            Err(QnbmError::QubitIndexOutOfRange { .. })
        ));
        assert!(matches!(
            s.apply(&GateOp::ControlledY {
                control: 1,
                target: 1
            }),
            Err(QnbmError::DuplicateQubit(1))
        ));
        assert!(matches!(
            s.apply(&GateOp::MeasureToRegister { qubit: 0 }),
            Err(QnbmError::NonUnitaryGate(_))
        ));
    }

    #[test]
    fn measure_plus_state_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 10_000;
        let zeros = (0..trials)
            .filter(|_| {
                let mut s = StateVector::new(1).unwrap();
                s.apply(&GateOp::H { target: 0 }).unwrap();
                s.measure(0, &mut rng).unwrap() == 0
            })
            .count();
        let freq = zeros as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn measure_deterministic_and_entangled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut one = StateVector::new(1).unwrap();
        one.apply(&GateOp::X { target: 0 }).unwrap();
        for _ in 0..20 {
            let mut s = one.clone();
            assert_eq!(s.measure(0, &mut rng).unwrap(), 1);
            assert_eq!(s, one);
        }

        let mut found_one = false;
        for _ in 0..50 {
            let mut s = bell();
            if s.measure(0, &mut rng).unwrap() == 1 {
                assert!(close(s.amplitudes(), &[c(0.0), c(0.0), c(0.0), c(1.0)]));
                found_one = true;
            }
        }
        assert!(found_one);
    }

    #[test]
    fn measure_is_seed_deterministic() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| {
                    let mut s = bell();
                    s.measure(1, &mut rng).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn projection_examples() {
        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::H { target: 0 }).unwrap();
        let p = s.project(0, 0).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(close(s.amplitudes(), &[c(1.0), c(0.0)]));

        let mut one = StateVector::new(1).unwrap();
        one.apply(&GateOp::X { target: 0 }).unwrap();
        let before = one.clone();
        assert!(matches!(
            one.project(0, 0),
            Err(QnbmError::ZeroProbabilityBranch { qubit: 0, value: 0 })
        ));
        assert_eq!(one, before);

        let mut s = bell();
        let p = s.project(0, 1).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(close(s.amplitudes(), &[c(0.0), c(0.0), c(0.0), c(1.0)]));
    }

    #[test]
    fn marginal_examples() {
        let mut s = StateVector::new(1).unwrap();
        s.apply(&GateOp::H { target: 0 }).unwrap();
        let d = s.marginal_distribution(&[0]).unwrap();
        assert!((d.get("0").unwrap() - 0.5).abs() < 1e-15);
        assert!((d.get("1").unwrap() - 0.5).abs() < 1e-15);

        // |10⟩: qubit 0 is 1, qubit 1 is 0.
        let mut s = StateVector::new(2).unwrap();
        s.apply(&GateOp::X { target: 0 }).unwrap();
        let d = s.marginal_distribution(&[1]).unwrap();
        assert_eq!(d.get("0"), Some(1.0));
        let d = s.marginal_distribution(&[1, 0]).unwrap();
        assert_eq!(d.get("01"), Some(1.0));

        let mut s = StateVector::new(3).unwrap();
        for q in 0..3 {
            s.apply(&GateOp::H { target: q }).unwrap();
        }
        for pair in [[0, 1], [0, 2], [2, 1]] {
            let d = s.marginal_distribution(&pair).unwrap();
            assert!(d.probabilities().iter().all(|p| (p - 0.25).abs() < 1e-12));
        }

        assert!(matches!(
            s.marginal_distribution(&[]),
            Err(QnbmError::EmptySubset)
        ));
    }

    #[test]
    fn registers_overflow() {
        let mut regs = ClassicalRegisters::new(1);
        regs.write(1).unwrap();
        assert!(matches!(
            regs.write(0),
            Err(QnbmError::RegisterOverflow { capacity: 1 })
        ));
        assert_eq!(regs.get(0).unwrap(), 1);
        assert!(regs.get(1).is_err());
    }

    #[test]
    fn conditional_recovery_uses_last_register() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut regs = ClassicalRegisters::new(2);
        let mut s = StateVector::new(2).unwrap();
        s.apply(&GateOp::X { target: 0 }).unwrap();
        s.execute(&GateOp::MeasureToRegister { qubit: 0 }, &mut regs, &mut rng)
            .unwrap();
        s.execute(
            &GateOp::ConditionalRecovery {
                ancilla: 0,
                output: 1,
            },
            &mut regs,
            &mut rng,
        )
        .unwrap();
        // ancilla flipped back to 0, output rotated by RY(π/2) from |0⟩
        assert!(close(
            s.amplitudes(),
            &[c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2), c(0.0), c(0.0)]
        ));
    }

    fn unitary_gate(n: usize) -> impl Strategy<Value = GateOp> {
        let pair = (0..n, 0..n).prop_filter("distinct", |(a, b)| a != b);
        prop_oneof![
            (0..n).prop_map(|target| GateOp::H { target }),
            (0..n).prop_map(|target| GateOp::X { target }),
            (0..n, -7.0f64..7.0).prop_map(|(target, angle)| GateOp::Ry { target, angle }),
            (pair.clone(), -7.0f64..7.0).prop_map(|((control, target), angle)| {
                GateOp::ControlledRy {
                    control,
                    target,
                    angle,
                }
            }),
            pair.prop_map(|(control, target)| GateOp::ControlledY { control, target }),
        ]
    }

    proptest! {
        #[test]
        fn unitary_sequences_preserve_norm(gates in proptest::collection::vec(unitary_gate(4), 1..60)) {
            let mut s = StateVector::new(4).unwrap();
            for g in &gates {
                s.apply(g).unwrap();
            }
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn projection_matches_marginal(
            gates in proptest::collection::vec(unitary_gate(3), 1..30),
            qubit in 0usize..3,
            value in 0u8..2,
        ) {
            let mut s = StateVector::new(3).unwrap();
            for g in &gates {
                s.apply(g).unwrap();
            }
            let marginal = s.marginal_distribution(&[qubit]).unwrap().prob(value as usize);
            match s.clone().project(qubit, value) {
                Ok(p) => prop_assert!((p - marginal).abs() < 1e-12),
                Err(_) => prop_assert!(marginal < 1e-20),
            }
        }
    }
}
