use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{col, FeatureFrame};

/// Adds independent zero-mean Gaussian noise with per-axis standard
/// deviation `sigma` (mm/s) to the velocity and acceleration columns.
/// `sigma` must be non-negative; every other column is left untouched.
pub fn add_noise(frame: &FeatureFrame, sigma: [f64; 3], seed: u64) -> FeatureFrame {
    let mut out = frame.clone();
    if sigma == [0.0; 3] {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..out.num_nodes() {
        let row = out.data.row_mut(i);
        for base in [col::VELOCITY, col::ACCELERATION] {
            for (c, s) in sigma.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                row[base + c] += s * z;
            }
        }
    }
    out
}
