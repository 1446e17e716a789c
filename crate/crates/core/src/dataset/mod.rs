//! Multi-resolution snapshot datasets: records, on-disk format, manufactured
//! generators, splits, normalization and resolution subsampling.
//!
//! A dataset directory holds `manifest.json` and `samples.bin`. The binary
//! file is a sequence of little-endian records:
//!
//! ```text
//! "CGAS" | u32 version | u64 id | u32 flags (bit0 t, bit1 ζ) | f64 t
//! u32 p | p × f64 μ | u32 g | g × f64 ξ | u32 N_h | u32 C
//! N_h·d × f64 points | N_h × f64 weights | [N_h × f64 ζ] | N_h·C × f64 values
//! u32 CRC32 of all preceding bytes of the record
//! ```

mod generate;
mod normalize;
mod record;
mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use generate::{derive_seed, generate, GenerateConfig, Problem, ResolutionPolicy};
pub use normalize::{Affine, Normalization, ValueScaling};
pub use record::{SampleRecord, FORMAT_VERSION, RECORD_MAGIC};
pub use split::{geometry_key, split, SplitConfig, SplitName, Splits};

use crate::error::{Error, Result};
use crate::geometry::Family;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub problem: Option<Problem>,
    pub family: Family,
    pub d: usize,
    pub p: usize,
    pub g: usize,
    pub c: usize,
    pub n_samples: usize,
    pub n_geom: usize,
    pub n_t: usize,
    pub resolution: Option<ResolutionPolicy>,
    pub seed: u64,
    pub splits: Splits,
    pub normalization: Option<Normalization>,
}

impl DatasetManifest {
    pub fn empty(family: Family, d: usize, p: usize, g: usize, c: usize) -> Self {
        DatasetManifest {
            version: FORMAT_VERSION,
            problem: None,
            family,
            d,
            p,
            g,
            c,
            n_samples: 0,
            n_geom: 0,
            n_t: 1,
            resolution: None,
            seed: 0,
            splits: Splits::default(),
            normalization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    samples: Vec<SampleRecord>,
    by_id: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, samples: Vec<SampleRecord>) -> Result<Self> {
        if manifest.n_samples != samples.len() {
            return Err(Error::Format(format!(
                "manifest declares {} samples, found {}",
                manifest.n_samples,
                samples.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(samples.len());
        for (k, s) in samples.iter().enumerate() {
            if s.cloud.dim() != manifest.d
                || s.mu.len() != manifest.p
                || s.xi.len() != manifest.g
                || s.channels() != manifest.c
            {
                return Err(Error::Dimension(format!(
                    "sample {} disagrees with manifest dimensions",
                    s.id
                )));
            }
            if by_id.insert(s.id, k).is_some() {
                return Err(Error::Format(format!("duplicate sample id {}", s.id)));
            }
        }
        let ds = Dataset {
            manifest,
            samples,
            by_id,
        };
        ds.check_splits(&ds.manifest.splits)?;
        Ok(ds)
    }

    fn check_splits(&self, splits: &Splits) -> Result<()> {
        if splits.is_empty() {
            return Ok(());
        }
        let mut seen = HashSet::new();
        for &id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if !self.by_id.contains_key(&id) {
                return Err(Error::Format(format!(
                    "split references unknown sample id {id}"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::Format(format!(
                    "sample id {id} appears in more than one split"
                )));
            }
        }
        if seen.len() != self.samples.len() {
            return Err(Error::Format("splits do not cover every sample".into()));
        }
        if splits.unseen_geometries {
            let keys = |ids: &[u64]| -> HashSet<Vec<u64>> {
                ids.iter()
                    .map(|id| geometry_key(&self.samples[self.by_id[id]].xi))
                    .collect()
            };
            let test = keys(&splits.test);
            if !test.is_disjoint(&keys(&splits.train)) || !test.is_disjoint(&keys(&splits.val)) {
                return Err(Error::Format(
                    "test geometries overlap train/validation".into(),
                ));
            }
        }
        Ok(())
    }

    /// Installs `splits` and refits the manifest's value statistics on the
    /// training part.
    pub fn set_splits(&mut self, splits: Splits) -> Result<()> {
        self.check_splits(&splits)?;
        self.manifest.splits = splits;
        let train: Vec<&SampleRecord> = self.split_samples(SplitName::Train)?;
        self.manifest.normalization = if train.is_empty() {
            None
        } else {
            Some(Normalization::fit(train, ValueScaling::AbsMax)?)
        };
        Ok(())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: u64) -> Result<&SampleRecord> {
        self.by_id
            .get(&id)
            .map(|&k| &self.samples[k])
            .ok_or_else(|| Error::InvalidArgument(format!("no sample with id {id}")))
    }

    pub fn split_samples(&self, name: SplitName) -> Result<Vec<&SampleRecord>> {
        self.manifest
            .splits
            .ids(name)
            .iter()
            .map(|&id| self.sample(id))
            .collect()
    }

    /// True when every sample has the same number of points.
    pub fn is_fixed_resolution(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].n_h() == w[1].n_h())
    }

    /// Sample ids grouped by geometry, groups in order of first appearance.
    pub fn geometry_groups(&self, ids: &[u64]) -> Result<Vec<Vec<u64>>> {
        let mut order: Vec<Vec<u64>> = Vec::new();
        let mut slot: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        for &id in ids {
            let key = geometry_key(&self.sample(id)?.xi);
            let k = *slot.entry(key).or_insert_with(|| {
                order.push(Vec::new());
                order.len() - 1
            });
            order[k].push(id);
        }
        Ok(order)
    }

    /// Copy with the training split replaced by `train` (a subset of it).
    pub fn with_train_subset(&self, train: &[u64]) -> Result<Dataset> {
        let current: HashSet<u64> = self.manifest.splits.train.iter().copied().collect();
        if let Some(bad) = train.iter().find(|id| !current.contains(id)) {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} is not in the training split"
            )));
        }
        let keep: HashSet<u64> = train
            .iter()
            .chain(&self.manifest.splits.val)
            .chain(&self.manifest.splits.test)
            .copied()
            .collect();
        let samples: Vec<SampleRecord> = self
            .samples
            .iter()
            .filter(|s| keep.contains(&s.id))
            .cloned()
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.n_samples = samples.len();
        manifest.splits.train = train.to_vec();
        manifest.splits.train.sort_unstable();
        manifest.n_geom = {
            let keys: HashSet<Vec<u64>> = samples.iter().map(|s| geometry_key(&s.xi)).collect();
            keys.len()
        };
        let mut ds = Dataset::new(manifest, samples)?;
        let splits = ds.manifest.splits.clone();
        ds.set_splits(splits)?;
        Ok(ds)
    }

    pub fn manifest_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        Ok(s)
    }

    pub fn samples_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.samples {
            s.encode(&mut out);
        }
        out
    }

    /// Writes `manifest.json` and `samples.bin` into `dir` (created if absent).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, self.manifest_json()?)
            .map_err(|e| Error::io(&manifest_path, e))?;
        let samples_path = dir.join(SAMPLES_FILE);
        fs::write(&samples_path, self.samples_bytes()).map_err(|e| Error::io(&samples_path, e))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.version,
                expected: FORMAT_VERSION,
            });
        }
        let samples_path = dir.join(SAMPLES_FILE);
        let bytes = fs::read(&samples_path).map_err(|e| Error::io(&samples_path, e))?;
        Self::from_parts(manifest, &bytes)
    }

    pub fn from_parts(manifest: DatasetManifest, bytes: &[u8]) -> Result<Dataset> {
        let mut pos = 0;
        let mut samples = Vec::with_capacity(manifest.n_samples);
        while pos < bytes.len() {
            if samples.len() == manifest.n_samples {
                return Err(Error::Format(format!(
                    "trailing bytes after {} records",
                    manifest.n_samples
                )));
            }
            samples.push(SampleRecord::decode(
                bytes,
                &mut pos,
                samples.len(),
                manifest.d,
            )?);
        }
        Dataset::new(manifest, samples)
    }
}

/// Uniform subsample without replacement of `⌈r·N_h⌉` points (kept in their
/// original order), weights scaled by `N_h / ⌈r·N_h⌉`.
pub fn subsample(sample: &SampleRecord, r: f64, seed: u64) -> Result<SampleRecord> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsampling ratio {r} outside (0, 1]"
        )));
    }
    let n = sample.n_h();
    let m = ((r * n as f64).ceil() as usize).min(n);
    if m < 4 {
        return Err(Error::InvalidArgument(format!(
            "ratio {r} keeps {m} of {n} points, fewer than 4"
        )));
    }
    if m == n {
        return Ok(sample.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    sample.restrict(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::weighted_inner_product;

    fn small() -> Dataset {
        generate(&GenerateConfig::new(
            Problem::Stenosis2d,
            4,
            3,
            ResolutionPolicy::Fixed { n_h: 32 },
            11,
        ))
        .unwrap()
    }

    #[test]
    fn write_read_write_is_byte_exact() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);
        let dir2 = tempfile::tempdir().unwrap();
        back.write(dir2.path()).unwrap();
        for f in [MANIFEST_FILE, SAMPLES_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn flipped_byte_names_the_sample() {
        let ds = small();
        let mut bytes = ds.samples_bytes();
        let rec_len = bytes.len() / ds.len();
        bytes[2 * rec_len + 100] ^= 0x40;
        let err = Dataset::from_parts(ds.manifest().clone(), &bytes).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Checksum {
                    index: 2,
                    sample_id: 2
                }
            ),
            "{err}"
        );
        let err = Dataset::from_parts(
            ds.manifest().clone(),
            &ds.samples_bytes()[..rec_len * 3 + 10],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::new(
            DatasetManifest::empty(Family::HoleRadius, 2, 2, 1, 1),
            Vec::new(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(Dataset::read(dir.path()).unwrap(), ds);
    }

    #[test]
    fn manifest_version_is_checked() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 2");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            Dataset::read(dir.path()),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn subsample_identity_and_determinism() {
        let ds = small();
        let s = &ds.samples()[0];
        assert_eq!(&subsample(s, 1.0, 3).unwrap(), s);
        let a = subsample(s, 0.5, 3).unwrap();
        assert_eq!(a.n_h(), 16);
        assert_eq!(a, subsample(s, 0.5, 3).unwrap());
        assert_ne!(a, subsample(s, 0.5, 4).unwrap());
        assert!(subsample(s, 0.0, 1).is_err());
        assert!(subsample(s, 1.5, 1).is_err());
        assert!(subsample(s, 0.05, 1).is_err());
    }

    #[test]
    fn subsampled_weight_sum_is_unbiased() {
        let ds = generate(&GenerateConfig::new(
            Problem::Hole2d,
            3,
            1,
            ResolutionPolicy::Multi {
                n_h_min: 100,
                n_h_max: 100,
            },
            5,
        ))
        .unwrap();
        let s = &ds.samples()[0];
        let full = s.cloud.total_weight();
        let u = s.values.data().to_vec();
        let full_ip = weighted_inner_product(&u, &u, &s.cloud, false).unwrap();
        let (mut mean_w, mut mean_ip) = (0.0, 0.0);
        for seed in 0..100 {
            let sub = subsample(s, 0.5, seed).unwrap();
            assert_eq!(sub.n_h(), 50);
            let w = sub.cloud.total_weight();
            assert!((w - full).abs() <= 0.2 * full);
            mean_w += w / 100.0;
            let v = sub.values.data().to_vec();
            mean_ip += weighted_inner_product(&v, &v, &sub.cloud, false).unwrap() / 100.0;
        }
        assert!((mean_w - full).abs() <= 1e-12 * full);
        assert!((mean_ip - full_ip).abs() <= 0.05 * full_ip);
    }

    #[test]
    fn geometry_groups_and_train_subset() {
        let ds = generate(&GenerateConfig::new(
            Problem::Stenosis2d,
            10,
            2,
            ResolutionPolicy::Fixed { n_h: 16 },
            2,
        ))
        .unwrap();
        let train = ds.manifest().splits.train.clone();
        let groups = ds.geometry_groups(&train).unwrap();
        assert_eq!(groups.len(), 8);
        assert!(groups.iter().all(|g| g.len() == 2));
        let sub = ds.with_train_subset(&groups[0]).unwrap();
        assert_eq!(sub.manifest().splits.train.len(), 2);
        assert_eq!(sub.manifest().splits.test, ds.manifest().splits.test);
        assert_eq!(sub.len(), 6);
    }
}
