//! Proper orthogonal decomposition on fixed-resolution snapshots.
//!
//! Snapshots are compared index-wise: point `i` of every cloud is treated as
//! the same degree of freedom, with the common quadrature weights `w̄` (mean
//! of the per-sample weights). The POD modes are the left singular vectors of
//! `diag(√w̄)·U`, mapped back to unweighted coordinates, so that
//! `Vᵀ diag(w̄) V = I`. This is the method-of-snapshots minimizer written as an
//! SVD, with `σ_n²` the eigenvalues of the correlation operator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::{geometry_key, Normalization, SampleRecord};
use crate::error::{Error, Result};
use crate::model::{CgaRom, FixedBasis, RomConfig};
use crate::numerics::Tensor;

/// Weighted-orthonormal POD modes and the full singular spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    modes: Tensor,
    singular_values: Vec<f64>,
    weights: Vec<f64>,
}

impl PodBasis {
    /// `N_h × n` modes.
    pub fn modes(&self) -> &Tensor {
        &self.modes
    }

    /// All singular values, non-increasing (not truncated to the modes kept).
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_modes(&self) -> usize {
        self.modes.cols()
    }

    /// `Σ_{n>N} σ_n²`.
    pub fn tail_energy(&self, n: usize) -> f64 {
        tail(&self.singular_values, n)
    }

    /// `max |Vᵀ diag(w) V − I|`.
    pub fn gram_residual(&self) -> f64 {
        let (n_h, n) = (self.modes.rows(), self.modes.cols());
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in a..n {
                let g: f64 = (0..n_h).map(|i| self.weights[i] * self.modes.get(i, a) * self.modes.get(i, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// The first `n` modes.
    pub fn truncate(&self, n: usize) -> Result<PodBasis> {
        if n > self.n_modes() {
            return Err(Error::InvalidArgument(format!("{n} modes requested, {} available", self.n_modes())));
        }
        let n_h = self.modes.rows();
        let data = (0..n_h).flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| self.modes.get(i, k)).collect();
        Ok(PodBasis {
            modes: Tensor::matrix(n_h, n, data)?,
            singular_values: self.singular_values.clone(),
            weights: self.weights.clone(),
        })
    }

    /// `n, sigma, tail` rows for every singular value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,sigma,tail\n");
        for (k, s) in self.singular_values.iter().enumerate() {
            let _ = writeln!(out, "{},{:e},{:e}", k + 1, s, self.tail_energy(k + 1));
        }
        out
    }
}

fn tail(sigma: &[f64], n: usize) -> f64 {
    sigma.iter().skip(n).rev().fold(0.0, |acc, s| acc + s * s)
}

fn check_weights(n_h: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n_h {
        return Err(Error::Dimension(format!("{} weights for {n_h} rows", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("quadrature weights must be positive and finite".into()));
    }
    Ok(())
}

fn weighted(snapshots: &Tensor, weights: &[f64]) -> DMatrix<f64> {
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(snapshots.rows(), snapshots.cols(), |i, j| sw[i] * snapshots.get(i, j))
}

fn sorted_desc(mut s: Vec<f64>) -> Vec<f64> {
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// POD of an `N_h × N_s` snapshot matrix (columns are snapshots), keeping at
/// most `n_max` modes.
pub fn pod_from_matrix(snapshots: &Tensor, weights: &[f64], n_max: usize) -> Result<PodBasis> {
    if snapshots.shape().len() != 2 {
        return Err(Error::Dimension(format!("snapshot matrix of shape {:?}", snapshots.shape())));
    }
    check_weights(snapshots.rows(), weights)?;
    snapshots.check_finite("snapshots")?;
    let (n_h, n_s) = (snapshots.rows(), snapshots.cols());
    if n_h == 0 || n_s == 0 {
        return Err(Error::Precondition("POD needs at least one snapshot and one point".into()));
    }
    let svd = weighted(snapshots, weights).svd(true, false);
    let u = svd.u.as_ref().expect("left vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let n = n_max.min(sigma.len());
    let mut modes = Tensor::zeros(&[n_h, n]);
    for (col, &k) in order.iter().take(n).enumerate() {
        // Sign fixed so the largest-magnitude entry is positive.
        let pivot = (0..n_h).max_by(|&a, &b| u[(a, k)].abs().total_cmp(&u[(b, k)].abs())).unwrap_or(0);
        let sign = if u[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n_h {
            modes.set(i, col, sign * u[(i, k)] / weights[i].sqrt());
        }
    }
    Ok(PodBasis { modes, singular_values: sigma, weights: weights.to_vec() })
}

/// Singular values of `diag(√w)·U` only, non-increasing.
pub fn weighted_singular_values(snapshots: &Tensor, weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(snapshots.rows(), weights)?;
    if snapshots.rows() == 0 || snapshots.cols() == 0 {
        return Ok(Vec::new());
    }
    Ok(sorted_desc(weighted(snapshots, weights).singular_values().as_slice().to_vec()))
}

/// `Σ_j ‖u_j − Π_N u_j‖²_w` with the first `n` modes, from explicit residuals.
pub fn pod_projection_error(basis: &PodBasis, snapshots: &Tensor, n: usize) -> Result<f64> {
    if n > basis.n_modes() {
        return Err(Error::InvalidArgument(format!("{n} modes requested, {} available", basis.n_modes())));
    }
    let n_h = basis.modes.rows();
    if snapshots.shape().len() != 2 || snapshots.rows() != n_h {
        return Err(Error::Dimension(format!("snapshots {:?} for {n_h}-point modes", snapshots.shape())));
    }
    let w = &basis.weights;
    let v = DMatrix::from_fn(n_h, n, |i, k| basis.modes.get(i, k));
    let u = DMatrix::from_fn(n_h, snapshots.cols(), |i, j| snapshots.get(i, j));
    let wu = DMatrix::from_fn(n_h, snapshots.cols(), |i, j| w[i] * u[(i, j)]);
    let coeffs = v.transpose() * wu;
    let residual = u - v * coeffs;
    Ok((0..n_h).map(|i| w[i] * residual.row(i).iter().map(|r| r * r).sum::<f64>()).sum())
}

fn fixed_resolution(samples: &[&SampleRecord]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Precondition("POD needs at least one snapshot".into()))?;
    let (n_h, c) = (first.n_h(), first.channels());
    if let Some(s) = samples.iter().find(|s| s.n_h() != n_h || s.channels() != c) {
        return Err(Error::Precondition(format!(
            "sample {} has {} points and {} channels, sample {} has {n_h} and {c}; POD needs one shared \
             resolution (generate with resolution = fixed)",
            s.id,
            s.n_h(),
            s.channels(),
            first.id
        )));
    }
    Ok((n_h, c))
}

/// Mean quadrature weights over the snapshots, the common POD inner product.
pub fn common_weights(samples: &[&SampleRecord]) -> Result<Vec<f64>> {
    let (n_h, _) = fixed_resolution(samples)?;
    let mut w = vec![0.0; n_h];
    for s in samples {
        w.iter_mut().zip(s.cloud.weights()).for_each(|(a, b)| *a += b);
    }
    let k = samples.len() as f64;
    Ok(w.into_iter().map(|a| a / k).collect())
}

fn channel_matrix(samples: &[&SampleRecord], channel: usize, map: impl Fn(&SampleRecord) -> Result<Tensor>) -> Result<Tensor> {
    let n_h = samples[0].n_h();
    let mut m = Tensor::zeros(&[n_h, samples.len()]);
    for (j, s) in samples.iter().enumerate() {
        let v = map(s)?;
        for i in 0..n_h {
            m.set(i, j, v.get(i, channel));
        }
    }
    Ok(m)
}

/// POD of one channel of a fixed-resolution snapshot set.
pub fn compute_pod(samples: &[&SampleRecord], channel: usize, n_max: usize) -> Result<PodBasis> {
    let (_, c) = fixed_resolution(samples)?;
    if channel >= c {
        return Err(Error::InvalidArgument(format!("channel {channel} of {c}")));
    }
    let w = common_weights(samples)?;
    let u = channel_matrix(samples, channel, |s| Ok(s.values.clone()))?;
    pod_from_matrix(&u, &w, n_max)
}

/// Best-approximation errors per snapshot: the per-geometry optimum against
/// one global linear space.
#[derive(Debug, Clone, PartialEq)]
pub struct BaeTable {
    pub n: Vec<usize>,
    pub cga: Vec<f64>,
    pub pod: Vec<f64>,
    /// CRC32 of sample ids and values.
    pub fingerprint: u32,
    pub geometries: usize,
    /// Geometries with a single snapshot (their CGA error is 0 for N ≥ 1).
    pub single_snapshot_geometries: usize,
}

impl BaeTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,bae_cga,bae_pod\n");
        for k in 0..self.n.len() {
            let _ = writeln!(out, "{},{:e},{:e}", self.n[k], self.cga[k], self.pod[k]);
        }
        out
    }

    /// Row for a given `N`.
    pub fn get(&self, n: usize) -> Option<(f64, f64)> {
        self.n.iter().position(|&m| m == n).map(|k| (self.cga[k], self.pod[k]))
    }
}

/// Discrete best-approximation errors on a fixed-resolution snapshot set.
///
/// `BAE_POD(N)` is the global tail energy; `BAE_CGA(N)` sums the tail
/// energies of per-geometry SVDs (the minimizer of the CGA functional at each
/// frozen ξ). Both are divided by the snapshot count and use the same common
/// weights, so `BAE_CGA ≤ BAE_POD` holds exactly in exact arithmetic.
pub fn bae_oracle(samples: &[&SampleRecord], n_list: &[usize]) -> Result<BaeTable> {
    if n_list.is_empty() {
        return Err(Error::InvalidArgument("empty N list".into()));
    }
    let (_, channels) = fixed_resolution(samples)?;
    let w = common_weights(samples)?;
    let mut groups: BTreeMap<Vec<u64>, Vec<&SampleRecord>> = BTreeMap::new();
    for s in samples {
        groups.entry(geometry_key(&s.xi)).or_default().push(s);
    }
    let singles = groups.values().filter(|g| g.len() == 1).count();
    if singles > 0 {
        log::warn!("{singles} geometries have a single snapshot; their per-geometry error is zero for N >= 1");
    }
    let n_s = samples.len() as f64;
    let mut cga = vec![0.0; n_list.len()];
    let mut pod = vec![0.0; n_list.len()];
    for c in 0..channels {
        let all = channel_matrix(samples, c, |s| Ok(s.values.clone()))?;
        let sigma = weighted_singular_values(&all, &w)?;
        for (k, &n) in n_list.iter().enumerate() {
            pod[k] += tail(&sigma, n) / n_s;
        }
        for group in groups.values() {
            let u = channel_matrix(group, c, |s| Ok(s.values.clone()))?;
            let sigma = weighted_singular_values(&u, &w)?;
            for (k, &n) in n_list.iter().enumerate() {
                cga[k] += tail(&sigma, n) / n_s;
            }
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    for s in samples {
        hasher.update(&s.id.to_le_bytes());
        for v in s.values.data() {
            hasher.update(&v.to_le_bytes());
        }
    }
    Ok(BaeTable {
        n: n_list.to_vec(),
        cga,
        pod,
        fingerprint: hasher.finalize(),
        geometries: groups.len(),
        single_snapshot_geometries: singles,
    })
}

/// A POD-DL-ROM: the CGA pipeline with the basis frozen to the first
/// `config.n_basis` POD modes of each channel of the normalized training
/// snapshots. Only the autoencoder and reduced network carry parameters.
pub fn pod_model(train: &[&SampleRecord], normalization: Normalization, config: RomConfig, seed: u64) -> Result<CgaRom> {
    let (n_h, channels) = fixed_resolution(train)?;
    if channels != config.channels {
        return Err(Error::Dimension(format!("{channels} channels in data, {} in config", config.channels)));
    }
    let w = common_weights(train)?;
    let n = config.n_basis;
    let mut modes = Tensor::zeros(&[n_h, n * channels]);
    for c in 0..channels {
        let u = channel_matrix(train, c, |s| normalization.normalize_values(&s.values))?;
        let basis = pod_from_matrix(&u, &w, n)?;
        if basis.n_modes() < n {
            return Err(Error::Precondition(format!(
                "{n} POD modes requested but the training snapshots span at most {}",
                basis.n_modes()
            )));
        }
        for i in 0..n_h {
            for k in 0..n {
                modes.set(i, c * n + k, basis.modes.get(i, k));
            }
        }
    }
    CgaRom::with_fixed_basis(config, normalization, FixedBasis { modes, weights: w }, seed)
}

/// Writes `text` to `path`, mapping errors.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
