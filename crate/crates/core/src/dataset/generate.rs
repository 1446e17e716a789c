use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split, Dataset, DatasetManifest, SampleRecord, SplitConfig, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{sample_cloud, DiffeomorphismSpec, PointCloud, SamplingMode};
use crate::numerics::Tensor;

/// Manufactured-solution problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// `u = A · 4ŷ(1 − ŷ) · exp(−(x − c(t))² / σ²)` on the stenosis channel,
    /// `ŷ` the wall-normalized height, `c(t) = ξ₃ + t/2`; `μ = (A, σ)`.
    Stenosis2d,
    /// `u = g₁ · exp(−(ρ − r)² / (D (1 + t)))` around the hole of radius
    /// `r = ξ`; `μ = (g₁, D)`.
    Hole2d,
}

impl Problem {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stenosis2d" => Ok(Problem::Stenosis2d),
            "hole2d" => Ok(Problem::Hole2d),
            other => Err(Error::Usage(format!(
                "unknown problem {other:?} (expected stenosis2d or hole2d)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Stenosis2d => "stenosis2d",
            Problem::Hole2d => "hole2d",
        }
    }

    pub fn geometry(self) -> DiffeomorphismSpec {
        match self {
            Problem::Stenosis2d => DiffeomorphismSpec::stenosis(),
            Problem::Hole2d => DiffeomorphismSpec::hole_radius(),
        }
    }

    pub fn mu_ranges(self) -> Vec<(f64, f64)> {
        match self {
            Problem::Stenosis2d => vec![(2.0, 4.0), (0.3, 0.8)],
            Problem::Hole2d => vec![(1.0, 2.0), (0.02, 0.1)],
        }
    }

    pub fn channels(self) -> usize {
        1
    }

    /// Closed-form field value at a physical point.
    pub fn field(
        self,
        spec: &DiffeomorphismSpec,
        x: &[f64],
        t: Option<f64>,
        mu: &[f64],
        xi: &[f64],
    ) -> Result<f64> {
        let t = t.unwrap_or(0.0);
        match self {
            Problem::Stenosis2d => {
                let y_hat = spec.map_forward(x, xi)?[1];
                let centre = xi[2] + 0.5 * t;
                Ok(mu[0]
                    * 4.0
                    * y_hat
                    * (1.0 - y_hat)
                    * (-(x[0] - centre).powi(2) / (mu[1] * mu[1])).exp())
            }
            Problem::Hole2d => {
                let rho = (x[0] - spec.hole_center[0]).hypot(x[1] - spec.hole_center[1]);
                Ok(mu[0] * (-(rho - xi[0]).powi(2) / (mu[1] * (1.0 + t))).exp())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum ResolutionPolicy {
    /// One reference tensor grid pushed through `Z⁻¹` for every geometry.
    Fixed { n_h: usize },
    /// `N_h(ξ)` drawn uniformly per geometry; quasi-random clouds.
    Multi { n_h_min: usize, n_h_max: usize },
}

impl ResolutionPolicy {
    pub fn is_fixed(&self) -> bool {
        matches!(self, ResolutionPolicy::Fixed { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub problem: Problem,
    pub n_geom: usize,
    pub n_mu: usize,
    pub n_t: usize,
    pub resolution: ResolutionPolicy,
    pub seed: u64,
    /// Store `ζ` with each cloud (off treats the map as unknown).
    pub store_zeta: bool,
    pub split: SplitConfig,
}

impl GenerateConfig {
    pub fn new(
        problem: Problem,
        n_geom: usize,
        n_mu: usize,
        resolution: ResolutionPolicy,
        seed: u64,
    ) -> Self {
        GenerateConfig {
            problem,
            n_geom,
            n_mu,
            n_t: 1,
            resolution,
            seed,
            store_zeta: true,
            split: SplitConfig::default(),
        }
    }
}

/// Seed for the `index`-th member of stream `tag`, via a splitmix64 finalizer.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z =
        seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, ranges: &[(f64, f64)]) -> Vec<f64> {
    ranges
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
        .collect()
}

/// Builds the manufactured dataset in memory, split per `cfg.split`.
pub fn generate(cfg: &GenerateConfig) -> Result<Dataset> {
    if cfg.n_geom == 0 || cfg.n_mu == 0 || cfg.n_t == 0 {
        return Err(Error::InvalidArgument(
            "n_geom, n_mu and n_t must be positive".into(),
        ));
    }
    match cfg.resolution {
        ResolutionPolicy::Fixed { n_h } if n_h < 4 => {
            return Err(Error::InvalidArgument(format!(
                "N_h = {n_h} is below the minimum of 4"
            )));
        }
        ResolutionPolicy::Multi { n_h_min, n_h_max } if n_h_min < 4 || n_h_min > n_h_max => {
            return Err(Error::InvalidArgument(format!(
                "invalid N_h range [{n_h_min}, {n_h_max}]"
            )));
        }
        _ => {}
    }
    let spec = cfg.problem.geometry();
    let mu_ranges = cfg.problem.mu_ranges();
    let mut geo_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, 0));
    let mut mu_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, 0));
    let times: Vec<Option<f64>> = if cfg.n_t == 1 {
        vec![None]
    } else {
        (0..cfg.n_t)
            .map(|k| Some(k as f64 / (cfg.n_t - 1) as f64))
            .collect()
    };

    let mut samples = Vec::with_capacity(cfg.n_geom * cfg.n_mu * cfg.n_t);
    for gi in 0..cfg.n_geom {
        let xi = uniform(&mut geo_rng, &spec.geo_ranges);
        let cloud = match cfg.resolution {
            ResolutionPolicy::Fixed { n_h } => {
                sample_cloud(&spec, &xi, n_h, SamplingMode::TensorGrid, 0)?
            }
            ResolutionPolicy::Multi { n_h_min, n_h_max } => {
                let n_h = geo_rng.gen_range(n_h_min..=n_h_max);
                sample_cloud(
                    &spec,
                    &xi,
                    n_h,
                    SamplingMode::QuasiRandom,
                    derive_seed(cfg.seed, 3, gi as u64),
                )?
            }
        };
        let cloud: PointCloud = if cfg.store_zeta {
            cloud
        } else {
            cloud.drop_zeta()
        };
        for _ in 0..cfg.n_mu {
            let mu = uniform(&mut mu_rng, &mu_ranges);
            for &t in &times {
                let values = (0..cloud.len())
                    .map(|i| cfg.problem.field(&spec, cloud.point(i), t, &mu, &xi))
                    .collect::<Result<Vec<f64>>>()?;
                let values = Tensor::matrix(cloud.len(), cfg.problem.channels(), values)?;
                let id = samples.len() as u64;
                samples.push(SampleRecord::new(
                    id,
                    t,
                    mu.clone(),
                    xi.clone(),
                    cloud.clone(),
                    values,
                )?);
            }
        }
    }

    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        problem: Some(cfg.problem),
        family: spec.family,
        d: spec.dim,
        p: mu_ranges.len(),
        g: spec.geo_dim(),
        c: cfg.problem.channels(),
        n_samples: samples.len(),
        n_geom: cfg.n_geom,
        n_t: cfg.n_t,
        resolution: Some(cfg.resolution),
        seed: cfg.seed,
        splits: Default::default(),
        normalization: None,
    };
    let mut ds = Dataset::new(manifest, samples)?;
    let splits = split(&ds, &cfg.split, derive_seed(cfg.seed, 4, 0))?;
    ds.set_splits(splits)?;
    Ok(ds)
}
