use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_store::ShotSet;

pub const DEFAULT_SAMPLING_RATIO: f64 = 0.05;

/// The sample subset a recommendation runs on: every current shot plus a seeded uniform draw
/// of unlabeled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub ratio: f64,
    /// Ascending sample indices.
    pub indices: Vec<usize>,
}

impl SamplePlan {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `ceil(ratio * (N - M))` unlabeled samples without replacement and adds all shots.
pub fn sample_subset(n: usize, shots: &ShotSet, ratio: f64, seed: u64) -> Result<SamplePlan> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling ratio must be in (0, 1], got {ratio}"
        )));
    }
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !shots.contains(i)).collect();
    // Guard against 0.3 * 1000 = 300.00000000000006 rounding up.
    let want = ((ratio * unlabeled.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let want = want.min(unlabeled.len());
    let mut indices: Vec<usize> = if want == unlabeled.len() {
        unlabeled
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, unlabeled.len(), want)
            .into_iter()
            .map(|p| unlabeled[p])
            .collect()
    };
    indices.extend(shots.iter().map(|(s, _)| s));
    indices.sort_unstable();
    Ok(SamplePlan {
        seed,
        ratio,
        indices,
    })
}

/// Short stable hash of a serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_ratio_takes_everything() {
        let shots = ShotSet::from_entries([(3, 0)]).unwrap();
        let p = sample_subset(10, &shots, 1.0, 1).unwrap();
        assert_eq!(p.indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn size_and_determinism() {
        let shots = ShotSet::from_entries((0..30).map(|i| (i * 7, i % 5))).unwrap();
        let a = sample_subset(1000, &shots, 0.05, 42).unwrap();
        let b = sample_subset(1000, &shots, 0.05, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30 + 49);
        assert!(shots.iter().all(|(s, _)| a.indices.binary_search(&s).is_ok()));
        let c = sample_subset(1000, &shots, 0.05, 43).unwrap();
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn exact_products_do_not_round_up() {
        let p = sample_subset(1000, &ShotSet::new(), 0.3, 0).unwrap();
        assert_eq!(p.len(), 300);
    }

    #[test]
    fn bad_ratio() {
        assert!(sample_subset(10, &ShotSet::new(), 0.0, 0).is_err());
        assert!(sample_subset(10, &ShotSet::new(), 1.5, 0).is_err());
    }
}
