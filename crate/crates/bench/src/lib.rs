//! Shared fixtures for the criterion benchmarks.

use rgauss::contamination::{corrupt, AdversaryStrategy, ContaminatedSet};
use rgauss::gaussian::{sample_gaussian, GaussianParams};

/// A standard-normal sample set with a dense-cluster corruption, fixed seed.
pub fn corrupted_fixture(d: usize, n: usize, epsilon: f64, seed: u64) -> ContaminatedSet {
    let clean_n = ((n as f64) * (1.0 - epsilon)).round() as usize;
    let clean = sample_gaussian(&GaussianParams::standard(d), clean_n.max(2), seed)
        .expect("valid parameters");
    let strategy = AdversaryStrategy::DenseCluster {
        distance: 8.0,
        direction: None,
    };
    corrupt(&clean, epsilon, &strategy, seed ^ 0xbeef).expect("valid corruption")
}
