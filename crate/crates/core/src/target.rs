//! Cardinality-constrained targets and the trained-model reference distribution.

use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::error::{QnbmError, Result};
use crate::model::{exact_distribution_postselected, NeuronStructure, ParameterSet};

pub const DEFAULT_CARDINALITY: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardinalitySpec {
    n_bits: usize,
    cardinality: usize,
}

impl CardinalitySpec {
    pub fn new(n_bits: usize, cardinality: usize) -> Result<Self> {
        if n_bits == 0 || n_bits > 30 {
            return Err(QnbmError::config("n_bits", format!("{n_bits} unsupported")));
        }
        if cardinality > n_bits {
            return Err(QnbmError::CardinalityOutOfRange {
                cardinality,
                n_bits,
            });
        }
        Ok(Self {
            n_bits,
            cardinality,
        })
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }
}

/// Uniform over every `n_bits` string with exactly `cardinality` ones.
pub fn cardinality_distribution(spec: CardinalitySpec) -> Result<Distribution> {
    let weights = (0..1usize << spec.n_bits)
        .map(|i| f64::from(u8::from(i.count_ones() as usize == spec.cardinality)))
        .collect();
    Distribution::from_weights(spec.n_bits, weights)
}

/// The reference distribution for sampled runs: the exact post-selected output
/// of the trained parameters.
pub fn derive_p_prime_target(
    trained: &ParameterSet,
    structure: &NeuronStructure,
) -> Result<Distribution> {
    exact_distribution_postselected(structure, trained)
}
