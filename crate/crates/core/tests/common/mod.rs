#![allow(dead_code)]

use qnbm::model::{NeuronStructure, ParameterSet};
use qnbm::Distribution;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn structure(s: &str) -> NeuronStructure {
    s.parse().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params<R: Rng>(st: &NeuronStructure, rng: &mut R) -> ParameterSet {
    let weights = (0..st.n_out())
        .map(|_| (0..st.n_in()).map(|_| rng.gen_range(-0.99..0.99)).collect())
        .collect();
    let biases = (0..st.n_out())
        .map(|_| rng.gen_range(-0.99..0.99))
        .collect();
    ParameterSet::new(st, weights, biases).unwrap()
}

/// Post-selected output distribution computed bitstring by bitstring, with no
/// state vector. For input x the rotation half-angle of neuron j is
/// φ = 2(w_j·x + b_j); a successful attempt leaves weight cos⁴φ on output 0 and
/// sin⁴φ on output 1, and inputs are uniform and never interfere.
pub fn scalar_postselected(st: &NeuronStructure, p: &ParameterSet) -> Distribution {
    let (n_in, n_out) = (st.n_in(), st.n_out());
    let mut weights = vec![0.0; 1 << n_out];
    for x in 0..1usize << n_in {
        let bit = |i: usize| ((x >> (n_in - 1 - i)) & 1) as f64;
        for (y, w) in weights.iter_mut().enumerate() {
            let mut term = 1.0;
            for j in 0..n_out {
                let theta: f64 =
                    p.biases[j] + (0..n_in).map(|i| p.weights[j][i] * bit(i)).sum::<f64>();
                let phi = 2.0 * theta;
                term *= if (y >> (n_out - 1 - j)) & 1 == 1 {
                    phi.sin().powi(4)
                } else {
                    phi.cos().powi(4)
                };
            }
            *w += term;
        }
    }
    let total: f64 = weights.iter().sum();
    Distribution::new(n_out, weights.into_iter().map(|w| w / total).collect()).unwrap()
}

/// Probability that every block succeeds on its first attempt.
pub fn scalar_all_succeed(st: &NeuronStructure, p: &ParameterSet) -> f64 {
    let (n_in, n_out) = (st.n_in(), st.n_out());
    let mut total = 0.0;
    for x in 0..1usize << n_in {
        let mut prod = 1.0;
        for j in 0..n_out {
            let theta: f64 = p.biases[j]
                + (0..n_in)
                    .map(|i| p.weights[j][i] * ((x >> (n_in - 1 - i)) & 1) as f64)
                    .sum::<f64>();
            let (s, c) = (2.0 * theta).sin_cos();
            prod *= c.powi(4) + s.powi(4);
        }
        total += prod;
    }
    total / (1u64 << n_in) as f64
}
