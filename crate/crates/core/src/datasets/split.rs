//! Artwork-level train/val/test assignment.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl DatasetSplit {
    pub fn assign(&self, artwork_id: &str) -> Option<SplitName> {
        let has = |v: &[String]| v.iter().any(|x| x == artwork_id);
        if has(&self.train) {
            Some(SplitName::Train)
        } else if has(&self.val) {
            Some(SplitName::Val)
        } else if has(&self.test) {
            Some(SplitName::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes") + "\n"
    }
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Shuffles the distinct ids with a seeded permutation and cuts it at the
/// rounded ratio boundaries.
pub fn split_artworks<S: AsRef<str>>(ids: &[S], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    validate_ratios(ratios)?;
    let mut order: Vec<String> = ids
        .iter()
        .map(|s| s.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = order.len();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(DatasetSplit {
        train: order,
        val,
        test,
        seed,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_artworks_eight_one_one() {
        let ids: Vec<String> = (0..10).map(|i| format!("a{i}")).collect();
        let s = split_artworks(&ids, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_artworks(&ids, [0.8, 0.1, 0.1], 3).unwrap());
    }

    #[test]
    fn bad_ratios() {
        assert!(matches!(split_artworks(&["a"], [0.5, 0.5, 0.5], 0), Err(Error::Config(_))));
        assert!(matches!(split_artworks(&["a"], [1.0, 0.0, 0.0], 0), Err(Error::Config(_))));
    }
}
