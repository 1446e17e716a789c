use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::family::{DiffeomorphismSpec, Family};
use crate::numerics::Tensor;

/// Quadrature cloud on one physical domain: `N_h` points, positive weights
/// summing to the domain measure, and optionally `ζ` at every point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    zeta: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        weights: Vec<f64>,
        zeta: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::Dimension(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(z) = &zeta {
            if z.len() != weights.len() {
                return Err(Error::Dimension(format!(
                    "{} ζ values for {} points",
                    z.len(),
                    weights.len()
                )));
            }
            if z.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Geometry(
                    "Jacobian determinants must be positive and finite".into(),
                ));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "quadrature weights must be positive and finite".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(PointCloud {
            dim,
            points,
            weights,
            zeta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn zeta(&self) -> Option<&[f64]> {
        self.zeta.as_deref()
    }

    pub fn drop_zeta(mut self) -> Self {
        self.zeta = None;
        self
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Points as an `N_h × d` matrix.
    pub fn points_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.dim, self.points.clone()).expect("validated cloud")
    }

    /// `w_i ζ_i` (or `w_i` when `ζ` is absent or not requested).
    pub fn measure(&self, use_zeta: bool) -> Vec<f64> {
        match (&self.zeta, use_zeta) {
            (Some(z), true) => self.weights.iter().zip(z).map(|(w, z)| w * z).collect(),
            _ => self.weights.clone(),
        }
    }

    /// Restriction to the listed point indices, with weights scaled by
    /// `N_h / m` so the total measure is preserved in expectation under
    /// uniform subsampling.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty point subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "point index {bad} out of range {}",
                self.len()
            )));
        }
        let scale = self.len() as f64 / indices.len() as f64;
        let points = indices
            .iter()
            .flat_map(|&i| self.point(i).iter().copied())
            .collect();
        let weights = indices.iter().map(|&i| self.weights[i] * scale).collect();
        let zeta = self
            .zeta
            .as_ref()
            .map(|z| indices.iter().map(|&i| z[i]).collect());
        PointCloud::new(self.dim, points, weights, zeta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Structured grid in reference coordinates pushed through `Z⁻¹`, with
    /// exact cell measures as weights.
    TensorGrid,
    /// Scrambled Halton points by rejection in the bounding box, equal weights.
    QuasiRandom,
}

impl SamplingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tensor_grid" | "grid" => Ok(SamplingMode::TensorGrid),
            "quasi_random" | "halton" => Ok(SamplingMode::QuasiRandom),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling mode {other:?}"
            ))),
        }
    }
}

/// Splits `n` into `extents.len()` factors whose ratios best follow `extents`.
pub fn grid_factorization(
    n: usize,
    extents: &[f64],
    multiple_of_last: usize,
) -> Result<Vec<usize>> {
    fn rec(n: usize, dims: usize, out: &mut Vec<usize>, all: &mut Vec<Vec<usize>>) {
        if dims == 1 {
            out.push(n);
            all.push(out.clone());
            out.pop();
            return;
        }
        for f in 1..=n {
            if n % f == 0 {
                out.push(f);
                rec(n / f, dims - 1, out, all);
                out.pop();
            }
        }
    }
    if n == 0 || extents.is_empty() {
        return Err(Error::InvalidArgument(
            "grid needs at least one point and one axis".into(),
        ));
    }
    let mut all = Vec::new();
    rec(n, extents.len(), &mut Vec::new(), &mut all);
    let h = (extents.iter().product::<f64>() / n as f64).powf(1.0 / extents.len() as f64);
    all.into_iter()
        .filter(|c| c.last().is_some_and(|&l| l % multiple_of_last.max(1) == 0))
        .map(|c| {
            let cost: f64 = c
                .iter()
                .zip(extents)
                .map(|(&k, &e)| (k as f64 * h / e).ln().powi(2))
                .sum();
            (cost, c)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{n} points admit no grid with the last axis a multiple of {multiple_of_last}"
            ))
        })
}

fn cell_edges(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect()
}

fn tensor_grid(
    spec: &DiffeomorphismSpec,
    xi: &[f64],
    n_h: usize,
    reference: bool,
) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(n_h * spec.dim);
    let mut weights = Vec::with_capacity(n_h);
    let mut zeta = Vec::with_capacity(n_h);
    match spec.family {
        Family::Identity | Family::IntervalScale => {
            let len = if reference {
                1.0
            } else {
                spec.bounding_box(xi)[0].1
            };
            let counts = grid_factorization(n_h, &vec![1.0; spec.dim], 1)?;
            let cell: f64 = counts.iter().map(|&c| len / c as f64).product();
            let det = if reference || spec.family == Family::Identity {
                1.0
            } else {
                1.0 / xi[0]
            };
            let mut idx = vec![0usize; spec.dim];
            for _ in 0..n_h {
                for (d, &k) in idx.iter().enumerate() {
                    points.push(len * (k as f64 + 0.5) / counts[d] as f64);
                }
                weights.push(cell);
                zeta.push(det);
                for d in (0..spec.dim).rev() {
                    idx[d] += 1;
                    if idx[d] < counts[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        Family::StenosisChannel => {
            let (length, height) = (spec.channel_length, spec.channel_height);
            let counts = grid_factorization(n_h, &[length, 1.0], 1)?;
            let xe = cell_edges(counts[0], 0.0, length);
            let ye = cell_edges(counts[1], 0.0, 1.0);
            for i in 0..counts[0] {
                let (xa, xb) = (xe[i], xe[i + 1]);
                let xc = 0.5 * (xa + xb);
                let column = if reference {
                    xb - xa
                } else {
                    height * (xb - xa) - spec.wall_integral(xa, xb, xi)
                };
                for j in 0..counts[1] {
                    let yt = 0.5 * (ye[j] + ye[j + 1]);
                    let dy = ye[j + 1] - ye[j];
                    if reference {
                        points.extend_from_slice(&[xc, yt]);
                        zeta.push(1.0);
                    } else {
                        let w = spec.wall(xc, xi);
                        points.extend_from_slice(&[xc, w + yt * (height - w)]);
                        zeta.push(1.0 / (height - w));
                    }
                    weights.push(column * dy);
                }
            }
        }
        Family::HoleRadius => {
            let r = if reference {
                spec.reference_radius
            } else {
                xi[0]
            };
            let counts = grid_factorization(
                n_h,
                &[0.5 * spec.square_side - r, 2.0 * std::f64::consts::PI * 0.4],
                4,
            )?;
            let se = cell_edges(counts[0], 0.0, 1.0);
            let start = -DiffeomorphismSpec::corner_angle();
            let te = cell_edges(counts[1], start, start + 2.0 * std::f64::consts::PI);
            for k in 0..counts[1] {
                let (ta, tb) = (te[k], te[k + 1]);
                let tc = 0.5 * (ta + tb);
                let dt = tb - ta;
                let big_r = spec.boundary_radius_at(tc);
                let (m1, m2) = spec.boundary_radius_moments(ta, tb);
                for i in 0..counts[0] {
                    let (sa, sb) = (se[i], se[i + 1]);
                    let sc = 0.5 * (sa + sb);
                    let rho = r + sc * (big_r - r);
                    let area = r * (sb - sa) * (m1 - r * dt)
                        + 0.5 * (sb * sb - sa * sa) * (m2 - 2.0 * r * m1 + r * r * dt);
                    let p = [
                        spec.hole_center[0] + rho * tc.cos(),
                        spec.hole_center[1] + rho * tc.sin(),
                    ];
                    points.extend_from_slice(&p);
                    weights.push(area);
                    zeta.push(if reference {
                        1.0
                    } else {
                        spec.jacobian_det(&p, xi)?
                    });
                }
            }
        }
    }
    PointCloud::new(spec.dim, points, weights, Some(zeta))
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

const HALTON_BASES: [u64; 4] = [2, 3, 5, 7];

fn quasi_random(
    spec: &DiffeomorphismSpec,
    xi: &[f64],
    n_h: usize,
    seed: u64,
) -> Result<PointCloud> {
    if spec.dim > HALTON_BASES.len() {
        return Err(Error::InvalidArgument(format!(
            "quasi-random sampling supports d ≤ {}",
            HALTON_BASES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..spec.dim).map(|_| rng.gen::<f64>()).collect();
    let bbox = spec.bounding_box(xi);
    let mut points = Vec::with_capacity(n_h * spec.dim);
    let mut zeta = Vec::with_capacity(n_h);
    let mut index = 1u64;
    let max_tries = 1000 * n_h as u64 + 1000;
    while zeta.len() < n_h {
        if index > max_tries {
            return Err(Error::Geometry(
                "rejection sampling accepted too few points".into(),
            ));
        }
        let p: Vec<f64> = (0..spec.dim)
            .map(|d| {
                let u = (radical_inverse(index, HALTON_BASES[d]) + shift[d]).fract();
                bbox[d].0 + u * (bbox[d].1 - bbox[d].0)
            })
            .collect();
        index += 1;
        if spec.contains(&p, xi)? {
            zeta.push(spec.jacobian_det(&p, xi)?);
            points.extend(p);
        }
    }
    let w = spec.volume(xi) / n_h as f64;
    PointCloud::new(spec.dim, points, vec![w; n_h], Some(zeta))
}

/// Quadrature cloud on `Ω(ξ)` with `n_h` points.
pub fn sample_cloud(
    spec: &DiffeomorphismSpec,
    xi: &[f64],
    n_h: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<PointCloud> {
    if n_h < 4 {
        return Err(Error::InvalidArgument(format!(
            "N_h must be at least 4, got {n_h}"
        )));
    }
    if xi.len() != spec.geo_dim() {
        return Err(Error::Dimension(format!(
            "{} geometric parameters, expected {}",
            xi.len(),
            spec.geo_dim()
        )));
    }
    match mode {
        SamplingMode::TensorGrid => tensor_grid(spec, xi, n_h, false),
        SamplingMode::QuasiRandom => quasi_random(spec, xi, n_h, seed),
    }
}

/// Structured quadrature cloud on `Ω̃`, `ζ ≡ 1`.
pub fn reference_cloud(spec: &DiffeomorphismSpec, n_h: usize) -> Result<PointCloud> {
    if n_h == 0 {
        return Err(Error::InvalidArgument("N_h must be positive".into()));
    }
    tensor_grid(spec, &spec.reference_params(), n_h, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorization_follows_aspect_ratio() {
        assert_eq!(
            grid_factorization(1024, &[5.0, 1.0], 1).unwrap(),
            vec![64, 16]
        );
        assert_eq!(
            grid_factorization(10_000, &[5.0, 1.0], 1).unwrap(),
            vec![200, 50]
        );
        assert_eq!(grid_factorization(64, &[1.0, 1.0], 1).unwrap(), vec![8, 8]);
        let hole = grid_factorization(1024, &[0.2, 2.5], 4).unwrap();
        assert_eq!(hole[0] * hole[1], 1024);
        assert_eq!(hole[1] % 4, 0);
        assert!(grid_factorization(1022, &[1.0, 1.0], 4).is_err());
    }

    #[test]
    fn unit_square_ten_by_ten() {
        let c = sample_cloud(
            &DiffeomorphismSpec::identity(2),
            &[],
            100,
            SamplingMode::TensorGrid,
            0,
        )
        .unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.weights().iter().all(|&w| (w - 0.01).abs() < 1e-15));
        assert!(sample_cloud(
            &DiffeomorphismSpec::identity(2),
            &[],
            3,
            SamplingMode::TensorGrid,
            0
        )
        .is_err());
    }

    #[test]
    fn hole_draws_avoid_the_hole() {
        let spec = DiffeomorphismSpec::hole_radius();
        let xi = [0.4];
        let c = sample_cloud(&spec, &xi, 100_000, SamplingMode::QuasiRandom, 11).unwrap();
        let min = (0..c.len())
            .map(|i| {
                let p = c.point(i);
                (p[0] - 0.5).hypot(p[1] - 0.5)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(min >= 0.4, "{min}");
        assert!((c.total_weight() - spec.volume(&xi)).abs() < 1e-10);
    }

    #[test]
    fn grid_weights_sum_to_volume() {
        let cases = [
            (DiffeomorphismSpec::identity(2), vec![], 100),
            (DiffeomorphismSpec::interval_scale(), vec![1.7], 50),
            (DiffeomorphismSpec::stenosis(), vec![0.35, 0.6, 2.4], 1024),
            (DiffeomorphismSpec::hole_radius(), vec![0.27], 1024),
        ];
        for (spec, xi, n) in cases {
            let c = sample_cloud(&spec, &xi, n, SamplingMode::TensorGrid, 0).unwrap();
            assert_eq!(c.len(), n);
            let v = spec.volume(&xi);
            assert!(
                (c.total_weight() - v).abs() <= 1e-12 * v,
                "{:?}: {} vs {v}",
                spec.family,
                c.total_weight()
            );
            for i in 0..c.len() {
                assert!(spec.contains(c.point(i), &xi).unwrap());
            }
        }
    }

    #[test]
    fn grid_points_are_pushed_reference_points() {
        let spec = DiffeomorphismSpec::hole_radius();
        let xi = [0.35];
        let phys = sample_cloud(&spec, &xi, 256, SamplingMode::TensorGrid, 0).unwrap();
        let refc = reference_cloud(&spec, 256).unwrap();
        for i in 0..256 {
            let back = spec.map_forward(phys.point(i), &xi).unwrap();
            for (a, b) in back.iter().zip(refc.point(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quasi_random_is_seeded_and_inside() {
        let spec = DiffeomorphismSpec::stenosis();
        let xi = [0.4, 0.75, 2.0];
        let a = sample_cloud(&spec, &xi, 300, SamplingMode::QuasiRandom, 3).unwrap();
        let b = sample_cloud(&spec, &xi, 300, SamplingMode::QuasiRandom, 3).unwrap();
        let c = sample_cloud(&spec, &xi, 300, SamplingMode::QuasiRandom, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.points(), c.points());
        assert!((a.total_weight() - spec.volume(&xi)).abs() < 1e-12);
        for i in 0..a.len() {
            assert!(spec.contains(a.point(i), &xi).unwrap());
        }
    }

    #[test]
    fn subset_preserves_measure() {
        let spec = DiffeomorphismSpec::stenosis();
        let c = sample_cloud(&spec, &[0.3, 0.6, 2.5], 1024, SamplingMode::TensorGrid, 0).unwrap();
        let s = c.subset(&[0, 5, 77, 1000]).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.weights()[1], c.weights()[5] * 256.0);
        let all: Vec<usize> = (0..1024).collect();
        assert_eq!(c.subset(&all).unwrap(), c);
        assert!(c.subset(&[]).is_err());
        assert!(c.subset(&[1024]).is_err());
    }

    #[test]
    fn invalid_clouds_are_rejected() {
        assert!(PointCloud::new(2, vec![0.0; 3], vec![1.0], None).is_err());
        assert!(PointCloud::new(1, vec![0.0], vec![-1.0], None).is_err());
        assert!(PointCloud::new(1, vec![0.0], vec![1.0], Some(vec![0.0])).is_err());
    }
}
