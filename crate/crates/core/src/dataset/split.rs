use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Train / validation / test fractions.
    pub fractions: [f64; 3],
    /// Keep every `(μ, t)` slice of a geometry inside one split.
    pub unseen_geometries: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.8, 0.1, 0.1],
            unseen_geometries: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
    pub unseen_geometries: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl Splits {
    pub fn ids(&self, name: SplitName) -> &[u64] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of units per split: every nonzero fraction receives at least one
/// unit and training keeps the remainder.
fn allocate(units: usize, fractions: &[f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let share = |f: f64| {
        if f > 0.0 {
            ((f * units as f64).round() as usize).max(1)
        } else {
            0
        }
    };
    let (val, test) = (share(fractions[1]), share(fractions[2]));
    let needed = val + test + usize::from(fractions[0] > 0.0);
    if units < needed {
        return Err(Error::Precondition(format!(
            "{units} units are too few for split fractions {fractions:?}"
        )));
    }
    Ok([units - val - test, val, test])
}

/// Geometry key: exact bit pattern of `ξ`.
pub fn geometry_key(xi: &[f64]) -> Vec<u64> {
    xi.iter().map(|v| v.to_bits()).collect()
}

/// Seeded train / validation / test partition of the dataset's sample ids.
pub fn split(ds: &Dataset, cfg: &SplitConfig, seed: u64) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units: Vec<Vec<u64>> = if cfg.unseen_geometries {
        let mut groups: BTreeMap<Vec<u64>, Vec<u64>> = BTreeMap::new();
        for s in ds.samples() {
            groups.entry(geometry_key(&s.xi)).or_default().push(s.id);
        }
        // first-appearance order keeps the partition independent of map ordering
        let mut ordered: Vec<Vec<u64>> = groups.into_values().collect();
        ordered.sort_by_key(|g| g[0]);
        ordered
    } else {
        ds.samples().iter().map(|s| vec![s.id]).collect()
    };
    if units.is_empty() {
        return Ok(Splits {
            unseen_geometries: cfg.unseen_geometries,
            ..Default::default()
        });
    }
    units.shuffle(&mut rng);
    let [n_train, n_val, _] = allocate(units.len(), &cfg.fractions)?;
    let collect = |part: &[Vec<u64>]| {
        let mut ids: Vec<u64> = part.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids
    };
    Ok(Splits {
        train: collect(&units[..n_train]),
        val: collect(&units[n_train..n_train + n_val]),
        test: collect(&units[n_train + n_val..]),
        unseen_geometries: cfg.unseen_geometries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenerateConfig, Problem, ResolutionPolicy};
    use std::collections::HashSet;

    fn dataset(n_geom: usize) -> Dataset {
        let mut cfg = GenerateConfig::new(
            Problem::Stenosis2d,
            n_geom,
            3,
            ResolutionPolicy::Fixed { n_h: 16 },
            1,
        );
        cfg.split.fractions = [1.0, 0.0, 0.0];
        generate(&cfg).unwrap()
    }

    #[test]
    fn ten_geometries_partition_eight_one_one() {
        let ds = dataset(10);
        let s = split(&ds, &SplitConfig::default(), 5).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (24, 3, 3));
        let xi_of = |ids: &[u64]| -> HashSet<Vec<u64>> {
            ids.iter()
                .map(|&id| geometry_key(&ds.sample(id).unwrap().xi))
                .collect()
        };
        let (tr, va, te) = (xi_of(&s.train), xi_of(&s.val), xi_of(&s.test));
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
        assert!(tr.is_disjoint(&te) && va.is_disjoint(&te) && tr.is_disjoint(&va));
    }

    #[test]
    fn per_sample_split_matches_fractions() {
        let ds = dataset(10);
        let cfg = SplitConfig {
            fractions: [0.8, 0.1, 0.1],
            unseen_geometries: false,
        };
        let s = split(&ds, &cfg, 2).unwrap();
        assert!((s.train.len() as i64 - 24).abs() <= 1);
        assert!((s.val.len() as i64 - 3).abs() <= 1);
        let mut all: Vec<u64> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<u64>>());
    }

    #[test]
    fn too_few_geometries_or_bad_fractions() {
        let ds = dataset(2);
        assert!(matches!(
            split(&ds, &SplitConfig::default(), 0),
            Err(Error::Precondition(_))
        ));
        let bad = SplitConfig {
            fractions: [0.5, 0.1, 0.1],
            unseen_geometries: true,
        };
        assert!(matches!(
            split(&ds, &bad, 0),
            Err(Error::InvalidArgument(_))
        ));
        let all_train = SplitConfig {
            fractions: [1.0, 0.0, 0.0],
            unseen_geometries: true,
        };
        assert_eq!(split(&ds, &all_train, 0).unwrap().train.len(), 6);
    }
}
