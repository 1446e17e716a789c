use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used by domain membership tests.
const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `Z(x) = x` on the unit hypercube.
    Identity,
    /// `Ω(ξ) = [0, ξ]` mapped onto `[0, 1]` by `x / ξ`.
    IntervalScale,
    /// Channel `[0, L] × [w(x; ξ), H]` with a cosine bump on the lower wall,
    /// mapped onto `[0, L] × [0, 1]` by a vertical shear.
    StenosisChannel,
    /// Unit square with a centred circular hole of radius `ξ`, mapped onto the
    /// square with the reference hole by a radial blend.
    HoleRadius,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::IntervalScale => "interval_scale",
            Family::StenosisChannel => "stenosis_channel",
            Family::HoleRadius => "hole_radius",
        }
    }
}

/// An analytic family of diffeomorphisms `Z(·; ξ): Ω(ξ) → Ω̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffeomorphismSpec {
    pub family: Family,
    pub dim: usize,
    /// Box `[lo, hi]` for each geometric parameter.
    pub geo_ranges: Vec<(f64, f64)>,
    pub channel_length: f64,
    pub channel_height: f64,
    pub square_side: f64,
    pub hole_center: [f64; 2],
    pub reference_radius: f64,
}

impl DiffeomorphismSpec {
    fn base(family: Family, dim: usize, geo_ranges: Vec<(f64, f64)>) -> Self {
        DiffeomorphismSpec {
            family,
            dim,
            geo_ranges,
            channel_length: 5.0,
            channel_height: 1.0,
            square_side: 1.0,
            hole_center: [0.5, 0.5],
            reference_radius: 0.3,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::base(Family::Identity, dim, Vec::new())
    }

    pub fn interval_scale() -> Self {
        Self::base(Family::IntervalScale, 1, vec![(0.5, 2.0)])
    }

    /// `L = 5`, `H = 1`, `ξ ∈ [0.25, 0.4] × [0.5, 0.75] × [2, 3]`.
    pub fn stenosis() -> Self {
        Self::base(
            Family::StenosisChannel,
            2,
            vec![(0.25, 0.4), (0.5, 0.75), (2.0, 3.0)],
        )
    }

    /// Hole centred at `(0.5, 0.5)`, reference radius 0.3, `ξ ∈ [0.2, 0.4]`.
    pub fn hole_radius() -> Self {
        Self::base(Family::HoleRadius, 2, vec![(0.2, 0.4)])
    }

    pub fn from_family(family: Family) -> Self {
        match family {
            Family::Identity => Self::identity(2),
            Family::IntervalScale => Self::interval_scale(),
            Family::StenosisChannel => Self::stenosis(),
            Family::HoleRadius => Self::hole_radius(),
        }
    }

    pub fn geo_dim(&self) -> usize {
        self.geo_ranges.len()
    }

    pub fn in_box(&self, xi: &[f64]) -> bool {
        xi.len() == self.geo_dim()
            && xi
                .iter()
                .zip(&self.geo_ranges)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Geometric parameters describing `Ω̃` itself (the map is the identity).
    pub fn reference_params(&self) -> Vec<f64> {
        match self.family {
            Family::Identity => Vec::new(),
            Family::IntervalScale => vec![1.0],
            Family::StenosisChannel => vec![0.0, 0.5, 0.5 * self.channel_length],
            Family::HoleRadius => vec![self.reference_radius],
        }
    }

    fn check(&self, x: &[f64], xi: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "point of dim {} for a {}-d family",
                x.len(),
                self.dim
            )));
        }
        if xi.len() != self.geo_dim() {
            return Err(Error::Dimension(format!(
                "{} geometric parameters for family {} (expects {})",
                xi.len(),
                self.family.name(),
                self.geo_dim()
            )));
        }
        match self.family {
            Family::IntervalScale if xi[0] <= 0.0 => Err(Error::Geometry(format!(
                "interval length must be positive, got {}",
                xi[0]
            ))),
            Family::StenosisChannel if xi[1] <= 0.0 || xi[0] >= self.channel_height => {
                Err(Error::Geometry(format!(
                    "stenosis parameters {xi:?} close the channel or have no support"
                )))
            }
            Family::HoleRadius if xi[0] <= 0.0 || xi[0] >= 0.5 * self.square_side => Err(
                Error::Geometry(format!("hole radius {} outside (0, side/2)", xi[0])),
            ),
            _ => Ok(()),
        }
    }

    /// Lower wall height `w(x; ξ)` of the stenosis channel.
    pub fn wall(&self, x: f64, xi: &[f64]) -> f64 {
        let (amp, half, centre) = (xi[0], xi[1], xi[2]);
        if (x - centre).abs() < half {
            amp * (FRAC_PI_2 / half * (x - centre)).cos()
        } else {
            0.0
        }
    }

    /// `∫_a^b w(x; ξ) dx` in closed form.
    pub fn wall_integral(&self, a: f64, b: f64, xi: &[f64]) -> f64 {
        let (amp, half, centre) = (xi[0], xi[1], xi[2]);
        let lo = a.max(centre - half);
        let hi = b.min(centre + half);
        if hi <= lo {
            return 0.0;
        }
        let k = FRAC_PI_2 / half;
        amp / k * ((k * (hi - centre)).sin() - (k * (lo - centre)).sin())
    }

    /// Distance from the hole centre to the square boundary along `theta`.
    fn boundary_radius(&self, theta: f64) -> f64 {
        0.5 * self.square_side / theta.cos().abs().max(theta.sin().abs())
    }

    fn polar(&self, x: &[f64]) -> (f64, f64) {
        let dx = x[0] - self.hole_center[0];
        let dy = x[1] - self.hole_center[1];
        (dx.hypot(dy), dy.atan2(dx))
    }

    fn from_polar(&self, rho: f64, theta: f64) -> Vec<f64> {
        vec![
            self.hole_center[0] + rho * theta.cos(),
            self.hole_center[1] + rho * theta.sin(),
        ]
    }

    fn in_square(&self, x: &[f64]) -> bool {
        let tol = DOMAIN_TOL * self.square_side;
        x.iter().all(|&v| v >= -tol && v <= self.square_side + tol)
    }

    /// Membership test for `Ω(ξ)`.
    pub fn contains(&self, x: &[f64], xi: &[f64]) -> Result<bool> {
        self.check(x, xi)?;
        Ok(match self.family {
            Family::Identity => x
                .iter()
                .all(|&v| (-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&v)),
            Family::IntervalScale => {
                x[0] >= -DOMAIN_TOL * xi[0] && x[0] <= xi[0] * (1.0 + DOMAIN_TOL)
            }
            Family::StenosisChannel => {
                let tol = DOMAIN_TOL * self.channel_length;
                x[0] >= -tol
                    && x[0] <= self.channel_length + tol
                    && x[1] >= self.wall(x[0], xi) - tol
                    && x[1] <= self.channel_height + tol
            }
            Family::HoleRadius => {
                self.in_square(x) && self.polar(x).0 >= xi[0] * (1.0 - DOMAIN_TOL)
            }
        })
    }

    /// Membership test for `Ω̃`.
    pub fn contains_reference(&self, xt: &[f64]) -> bool {
        let xi = self.reference_params();
        match self.family {
            Family::StenosisChannel => {
                let tol = DOMAIN_TOL * self.channel_length;
                xt.len() == 2
                    && xt[0] >= -tol
                    && xt[0] <= self.channel_length + tol
                    && xt[1] >= -DOMAIN_TOL
                    && xt[1] <= 1.0 + DOMAIN_TOL
            }
            _ => self.contains(xt, &xi).unwrap_or(false),
        }
    }

    /// `x̃ = Z(x; ξ)`.
    pub fn map_forward(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        if !self.contains(x, xi)? {
            return Err(Error::Domain(format!(
                "{x:?} not in Ω({xi:?}) for {}",
                self.family.name()
            )));
        }
        Ok(match self.family {
            Family::Identity => x.to_vec(),
            Family::IntervalScale => vec![x[0] / xi[0]],
            Family::StenosisChannel => {
                let w = self.wall(x[0], xi);
                vec![x[0], (x[1] - w) / (self.channel_height - w)]
            }
            Family::HoleRadius => {
                let (rho, theta) = self.polar(x);
                let r_ref = self.reference_radius;
                let big_r = self.boundary_radius(theta);
                let rho_t = r_ref + (rho - xi[0]) * (big_r - r_ref) / (big_r - xi[0]);
                self.from_polar(rho_t, theta)
            }
        })
    }

    /// `x = Z⁻¹(x̃; ξ)`.
    pub fn map_inverse(&self, xt: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        self.check(xt, xi)?;
        if !self.contains_reference(xt) {
            return Err(Error::Domain(format!(
                "{xt:?} not in the reference domain of {}",
                self.family.name()
            )));
        }
        Ok(match self.family {
            Family::Identity => xt.to_vec(),
            Family::IntervalScale => vec![xi[0] * xt[0]],
            Family::StenosisChannel => {
                let w = self.wall(xt[0], xi);
                vec![xt[0], w + xt[1] * (self.channel_height - w)]
            }
            Family::HoleRadius => {
                let (rho_t, theta) = self.polar(xt);
                let r_ref = self.reference_radius;
                let big_r = self.boundary_radius(theta);
                let rho = xi[0] + (rho_t - r_ref) * (big_r - xi[0]) / (big_r - r_ref);
                self.from_polar(rho, theta)
            }
        })
    }

    /// Jacobian determinant `ζ(x; ξ) = |∇ₓZ|`, required to be positive.
    pub fn jacobian_det(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        if !self.contains(x, xi)? {
            return Err(Error::Domain(format!(
                "{x:?} not in Ω({xi:?}) for {}",
                self.family.name()
            )));
        }
        let det = match self.family {
            Family::Identity => 1.0,
            Family::IntervalScale => 1.0 / xi[0],
            Family::StenosisChannel => 1.0 / (self.channel_height - self.wall(x[0], xi)),
            Family::HoleRadius => {
                let (rho, theta) = self.polar(x);
                let r_ref = self.reference_radius;
                let big_r = self.boundary_radius(theta);
                let slope = (big_r - r_ref) / (big_r - xi[0]);
                let rho_t = r_ref + (rho - xi[0]) * slope;
                rho_t / rho * slope
            }
        };
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::Geometry(format!(
                "Jacobian determinant {det} at {x:?} is not positive (map not orientation-preserving)"
            )));
        }
        Ok(det)
    }

    /// Measure of `Ω(ξ)`.
    pub fn volume(&self, xi: &[f64]) -> f64 {
        match self.family {
            Family::Identity => 1.0,
            Family::IntervalScale => xi[0],
            Family::StenosisChannel => {
                self.channel_length * self.channel_height
                    - self.wall_integral(0.0, self.channel_length, xi)
            }
            Family::HoleRadius => self.square_side * self.square_side - PI * xi[0] * xi[0],
        }
    }

    /// Measure of `Ω̃`.
    pub fn reference_volume(&self) -> f64 {
        match self.family {
            Family::StenosisChannel => self.channel_length,
            _ => self.volume(&self.reference_params()),
        }
    }

    /// Bounding box of every `Ω(ξ)` in the family.
    pub fn bounding_box(&self, xi: &[f64]) -> Vec<(f64, f64)> {
        match self.family {
            Family::Identity => vec![(0.0, 1.0); self.dim],
            Family::IntervalScale => vec![(0.0, xi[0])],
            Family::StenosisChannel => vec![(0.0, self.channel_length), (0.0, self.channel_height)],
            Family::HoleRadius => vec![(0.0, self.square_side); 2],
        }
    }

    /// Angular offset aligning hole-grid cells with the square's corners.
    pub(crate) fn corner_angle() -> f64 {
        FRAC_PI_4
    }

    /// `(∫R dθ, ∫R² dθ)` over `[a, b]`, an interval inside one side sector.
    pub(crate) fn boundary_radius_moments(&self, a: f64, b: f64) -> (f64, f64) {
        let mid = 0.5 * (a + b);
        let side = (mid / FRAC_PI_2).round() * FRAC_PI_2;
        let (pa, pb) = (a - side, b - side);
        let half = 0.5 * self.square_side;
        let m1 = half * (pb.tan().asinh() - pa.tan().asinh());
        let m2 = half * half * (pb.tan() - pa.tan());
        (m1, m2)
    }

    pub(crate) fn boundary_radius_at(&self, theta: f64) -> f64 {
        self.boundary_radius(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_xi(spec: &DiffeomorphismSpec, rng: &mut impl Rng) -> Vec<f64> {
        spec.geo_ranges
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect()
    }

    fn random_point(spec: &DiffeomorphismSpec, xi: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        loop {
            let p: Vec<f64> = spec
                .bounding_box(xi)
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..hi))
                .collect();
            if spec.contains(&p, xi).unwrap() {
                return p;
            }
        }
    }

    fn all_families() -> Vec<DiffeomorphismSpec> {
        vec![
            DiffeomorphismSpec::identity(2),
            DiffeomorphismSpec::interval_scale(),
            DiffeomorphismSpec::stenosis(),
            DiffeomorphismSpec::hole_radius(),
        ]
    }

    #[test]
    fn identity_and_interval_examples() {
        let id = DiffeomorphismSpec::identity(2);
        assert_eq!(id.map_forward(&[0.3, 0.7], &[]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(id.jacobian_det(&[0.3, 0.7], &[]).unwrap(), 1.0);
        let iv = DiffeomorphismSpec::interval_scale();
        assert_eq!(iv.map_forward(&[0.5], &[2.0]).unwrap(), vec![0.25]);
        assert_eq!(iv.map_inverse(&[0.25], &[2.0]).unwrap(), vec![0.5]);
        assert_eq!(iv.jacobian_det(&[0.5], &[2.0]).unwrap(), 0.5);
    }

    #[test]
    fn stenosis_shear_by_hand() {
        let s = DiffeomorphismSpec::stenosis();
        let xi = [0.3, 0.6, 2.5];
        // away from the bump w = 0 and the map is y / H
        assert_eq!(s.map_forward(&[1.0, 0.4], &xi).unwrap(), vec![1.0, 0.4]);
        // at the bump centre w = ξ₁
        let y = 0.65;
        let got = s.map_forward(&[2.5, y], &xi).unwrap();
        assert!((got[1] - (y - 0.3) / 0.7).abs() < 1e-15);
        assert!((s.jacobian_det(&[2.5, y], &xi).unwrap() - 1.0 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn round_trip_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for spec in all_families() {
            for _ in 0..1000 {
                let xi = random_xi(&spec, &mut rng);
                let x = random_point(&spec, &xi, &mut rng);
                let xt = spec.map_forward(&x, &xi).unwrap();
                let back = spec.map_inverse(&xt, &xi).unwrap();
                let err = x
                    .iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-12, "{:?}: {x:?} -> {back:?}", spec.family);
            }
        }
    }

    fn fd_det(spec: &DiffeomorphismSpec, x: &[f64], xi: &[f64]) -> f64 {
        let h = 1e-6;
        let d = spec.dim;
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fp = spec.map_forward(&xp, xi).unwrap();
            let fm = spec.map_forward(&xm, xi).unwrap();
            for i in 0..d {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        match d {
            1 => jac[0][0],
            2 => jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0],
            _ => unreachable!(),
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [
            DiffeomorphismSpec::stenosis(),
            DiffeomorphismSpec::hole_radius(),
            DiffeomorphismSpec::interval_scale(),
        ] {
            let mut checked = 0;
            while checked < 1000 {
                let xi = random_xi(&spec, &mut rng);
                let x = random_point(&spec, &xi, &mut rng);
                // keep the FD stencil inside the domain and off the
                // non-smooth lines (bump ends, square diagonals)
                let margin = 1e-4;
                let pts = [
                    x.iter().map(|v| v + margin).collect::<Vec<_>>(),
                    x.iter().map(|v| v - margin).collect::<Vec<_>>(),
                ];
                if !pts.iter().all(|p| spec.contains(p, &xi).unwrap()) {
                    continue;
                }
                match spec.family {
                    Family::StenosisChannel if ((x[0] - xi[2]).abs() - xi[1]).abs() < margin => {
                        continue
                    }
                    Family::HoleRadius => {
                        let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
                        if (dx.abs() - dy.abs()).abs() < margin {
                            continue;
                        }
                    }
                    _ => {}
                }
                let a = spec.jacobian_det(&x, &xi).unwrap();
                let n = fd_det(&spec, &x, &xi);
                assert!(
                    (a - n).abs() <= 1e-6 * a.max(1.0),
                    "{:?} at {x:?}: {a} vs {n}",
                    spec.family
                );
                assert!(a > 0.0);
                checked += 1;
            }
        }
    }

    #[test]
    fn outside_points_are_domain_errors() {
        let s = DiffeomorphismSpec::stenosis();
        let xi = [0.4, 0.7, 2.5];
        assert!(matches!(
            s.map_forward(&[2.5, 0.1], &xi),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            s.map_inverse(&[2.5, 1.5], &xi),
            Err(Error::Domain(_))
        ));
        let h = DiffeomorphismSpec::hole_radius();
        assert!(matches!(
            h.map_forward(&[0.5, 0.55], &[0.3]),
            Err(Error::Domain(_))
        ));
        let iv = DiffeomorphismSpec::interval_scale();
        assert!(matches!(
            iv.jacobian_det(&[3.0], &[2.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let iv = DiffeomorphismSpec::interval_scale();
        assert!(matches!(
            iv.map_forward(&[0.0], &[0.0]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn volumes_in_closed_form() {
        let s = DiffeomorphismSpec::stenosis();
        let xi = [0.3, 0.6, 2.5];
        let expect = 5.0 - 0.3 * 4.0 * 0.6 / PI;
        assert!((s.volume(&xi) - expect).abs() < 1e-14);
        let h = DiffeomorphismSpec::hole_radius();
        assert!((h.volume(&[0.25]) - (1.0 - PI * 0.0625)).abs() < 1e-15);
    }
}
