use rand::seq::SliceRandom;

use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Target image fractions for train, val and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// The image split of the EgoFoodPlaces release, rounded.
    fn default() -> Self {
        SplitRatios {
            train: 0.72,
            val: 0.09,
            test: 0.19,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::config(format!("split ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Assigns events, visited in the given order, to split indices 0..3.
/// Each event goes to the split furthest below its image target (ties to
/// the lower index); with fewer than three events the first one goes to
/// train unconditionally.
pub fn greedy_assign(sizes: &[usize], ratios: &SplitRatios) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let targets = ratios.as_array().map(|r| r * total as f64);
    let mut filled = [0usize; 3];
    let mut out = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        let split = if i == 0 && sizes.len() < 3 {
            0
        } else {
            let mut best = 0;
            for s in 1..3 {
                if targets[s] - filled[s] as f64 > targets[best] - filled[best] as f64 {
                    best = s;
                }
            }
            best
        };
        filled[split] += size;
        out.push(split);
    }
    out
}

/// Assigns whole events to train/val/test class by class. Within a class,
/// events are visited largest first (equal sizes in a seeded random order)
/// and placed by [`greedy_assign`].
pub fn event_split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let mut out = manifest.clone();
    for (class, name) in manifest.class_names.iter().enumerate() {
        let mut members: Vec<usize> = (0..manifest.events.len())
            .filter(|&i| manifest.events[i].class_index == class)
            .collect();
        if members.is_empty() {
            return Err(Error::Manifest(format!("class `{name}` has no events")));
        }
        members.shuffle(&mut stream(&[seed, class as u64]));
        members.sort_by_key(|&i| std::cmp::Reverse(manifest.events[i].len()));
        let sizes: Vec<usize> = members.iter().map(|&i| manifest.events[i].len()).collect();
        for (&event, split) in members.iter().zip(greedy_assign(&sizes, &ratios)) {
            out.events[event].split = Split::ASSIGNED[split];
        }
    }
    Ok(out)
}
