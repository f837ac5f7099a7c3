//! Probability distributions and shot histograms over fixed-length bitstrings.
//!
//! Both are stored densely, indexed by the integer value of the bitstring with
//! the leftmost character as the most significant bit. On disk they share one
//! JSON shape:
//!
//! ```json
//! {"n_bits": 2, "entries": [{"bitstring": "00", "value": 0.0}, ...], "discarded": 0}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{QnbmError, Result};

/// Normalisation tolerance applied to every constructed distribution.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Renders `index` as an `n_bits`-character bitstring, most significant bit first.
pub fn bitstring(index: usize, n_bits: usize) -> String {
    (0..n_bits)
        .map(|k| {
            if (index >> (n_bits - 1 - k)) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

/// Parses a bitstring into its index. Leftmost character is the most significant bit.
pub fn parse_bitstring(s: &str) -> Result<usize> {
    if s.is_empty() || s.len() > 63 {
        return Err(QnbmError::config(
            "bitstring",
            format!("bad length in {s:?}"),
        ));
    }
    s.chars().try_fold(0usize, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(QnbmError::config(
            "bitstring",
            format!("invalid character in {s:?}"),
        )),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Wire", try_from = "Wire")]
pub struct Distribution {
    n_bits: usize,
    probabilities: Vec<f64>,
}

impl Distribution {
    /// Builds a distribution from a dense probability vector, checking every invariant.
    pub fn new(n_bits: usize, probabilities: Vec<f64>) -> Result<Self> {
        let expected = 1usize << n_bits;
        if probabilities.len() != expected {
            return Err(QnbmError::LengthMismatch {
                expected,
                actual: probabilities.len(),
            });
        }
        if let Some(&bad) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(QnbmError::config(
                "probabilities",
                format!("invalid entry {bad}"),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(QnbmError::config(
                "probabilities",
                format!("sum {total} is not 1"),
            ));
        }
        Ok(Self {
            n_bits,
            probabilities,
        })
    }

    /// Normalises non-negative weights into a distribution.
    pub fn from_weights(n_bits: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(QnbmError::config(
                "weights",
                "total weight must be positive",
            ));
        }
        Self::new(n_bits, weights.into_iter().map(|w| w / total).collect())
    }

    /// All mass on a single bitstring.
    pub fn point_mass(n_bits: usize, index: usize) -> Self {
        let mut probabilities = vec![0.0; 1 << n_bits];
        probabilities[index] = 1.0;
        Self {
            n_bits,
            probabilities,
        }
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probabilities[index]
    }

    /// Probability of a bitstring such as `"01"`.
    pub fn get(&self, bits: &str) -> Option<f64> {
        if bits.len() != self.n_bits {
            return None;
        }
        parse_bitstring(bits).ok().map(|i| self.probabilities[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (String, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, &p)| (bitstring(i, self.n_bits), p))
    }

    pub fn support_size(&self) -> usize {
        self.probabilities.iter().filter(|&&p| p > 0.0).count()
    }

    /// Half the L1 distance between two distributions over the same bit width.
    pub fn total_variation(&self, other: &Distribution) -> Result<f64> {
        if self.n_bits != other.n_bits {
            return Err(QnbmError::LengthMismatch {
                expected: self.n_bits,
                actual: other.n_bits,
            });
        }
        Ok(0.5
            * self
                .probabilities
                .iter()
                .zip(&other.probabilities)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Shot counts per output bitstring plus shots that were thrown away.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Wire", try_from = "Wire")]
pub struct Histogram {
    n_bits: usize,
    counts: Vec<u64>,
    total_shots: u64,
    discarded_shots: u64,
}

impl Histogram {
    pub fn empty(n_bits: usize) -> Self {
        Self {
            n_bits,
            counts: vec![0; 1 << n_bits],
            total_shots: 0,
            discarded_shots: 0,
        }
    }

    pub fn record(&mut self, index: usize) {
        self.counts[index] += 1;
        self.total_shots += 1;
    }

    pub fn record_discard(&mut self) {
        self.discarded_shots += 1;
        self.total_shots += 1;
    }

    /// Adds another histogram's counts into this one.
    pub fn merge(&mut self, other: &Histogram) {
        debug_assert_eq!(self.n_bits, other.n_bits);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_shots += other.total_shots;
        self.discarded_shots += other.discarded_shots;
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, bits: &str) -> Option<u64> {
        if bits.len() != self.n_bits {
            return None;
        }
        parse_bitstring(bits).ok().map(|i| self.counts[i])
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    pub fn discarded_shots(&self) -> u64 {
        self.discarded_shots
    }

    pub fn kept_shots(&self) -> u64 {
        self.total_shots - self.discarded_shots
    }

    pub fn discard_rate(&self) -> f64 {
        if self.total_shots == 0 {
            0.0
        } else {
            self.discarded_shots as f64 / self.total_shots as f64
        }
    }

    /// Empirical distribution over kept shots. Fails when every shot was discarded.
    pub fn to_distribution(&self) -> Result<Distribution> {
        Distribution::from_weights(self.n_bits, self.counts.iter().map(|&c| c as f64).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl From<Distribution> for Wire {
    fn from(d: Distribution) -> Self {
        Wire::from_dense(
            d.n_bits,
            d.probabilities.into_iter().map(WireValue::Real),
            0,
        )
    }
}

impl TryFrom<Wire> for Distribution {
    type Error = QnbmError;

    fn try_from(wire: Wire) -> Result<Self> {
        let dense = wire.to_dense()?;
        Distribution::new(wire.n_bits, dense)
    }
}

impl From<Histogram> for Wire {
    fn from(h: Histogram) -> Self {
        Wire::from_dense(
            h.n_bits,
            h.counts.into_iter().map(WireValue::Count),
            h.discarded_shots,
        )
    }
}

impl TryFrom<Wire> for Histogram {
    type Error = QnbmError;

    fn try_from(wire: Wire) -> Result<Self> {
        let dense = wire.to_dense()?;
        let mut counts = Vec::with_capacity(dense.len());
        for v in dense {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(QnbmError::config("entries", format!("{v} is not a count")));
            }
            counts.push(v as u64);
        }
        let kept: u64 = counts.iter().sum();
        Ok(Histogram {
            n_bits: wire.n_bits,
            counts,
            total_shots: kept + wire.discarded,
            discarded_shots: wire.discarded,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum WireValue {
    Count(u64),
    Real(f64),
}

impl WireValue {
    fn as_f64(self) -> f64 {
        match self {
            WireValue::Count(c) => c as f64,
            WireValue::Real(r) => r,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireEntry {
    bitstring: String,
    value: WireValue,
}

#[derive(Debug, Serialize, Deserialize)]
struct Wire {
    n_bits: usize,
    entries: Vec<WireEntry>,
    discarded: u64,
}

impl Wire {
    fn from_dense(n_bits: usize, values: impl Iterator<Item = WireValue>, discarded: u64) -> Self {
        Self {
            n_bits,
            entries: values
                .enumerate()
                .map(|(i, value)| WireEntry {
                    bitstring: bitstring(i, n_bits),
                    value,
                })
                .collect(),
            discarded,
        }
    }

    fn to_dense(&self) -> Result<Vec<f64>> {
        if self.n_bits == 0 || self.n_bits > 30 {
            return Err(QnbmError::config(
                "n_bits",
                format!("{} unsupported", self.n_bits),
            ));
        }
        let mut dense = vec![0.0; 1 << self.n_bits];
        let mut seen = vec![false; dense.len()];
        for entry in &self.entries {
            if entry.bitstring.len() != self.n_bits {
                return Err(QnbmError::config(
                    "entries",
                    format!("bitstring {:?} has wrong width", entry.bitstring),
                ));
            }
            let i = parse_bitstring(&entry.bitstring)?;
            if seen[i] {
                return Err(QnbmError::config(
                    "entries",
                    format!("duplicate bitstring {:?}", entry.bitstring),
                ));
            }
            seen[i] = true;
            dense[i] = entry.value.as_f64();
        }
        Ok(dense)
    }
}
