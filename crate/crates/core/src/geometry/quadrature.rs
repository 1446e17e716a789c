use crate::error::{Error, Result};
use crate::geometry::cloud::PointCloud;
use crate::geometry::family::DiffeomorphismSpec;

/// `Σ_i w_i ζ_i f_i g_i` (ζ omitted when `use_zeta` is false or unavailable).
pub fn weighted_inner_product(
    f: &[f64],
    g: &[f64],
    cloud: &PointCloud,
    use_zeta: bool,
) -> Result<f64> {
    if f.len() != cloud.len() || g.len() != cloud.len() {
        return Err(Error::Dimension(format!(
            "field lengths {} and {} on a cloud of {} points",
            f.len(),
            g.len(),
            cloud.len()
        )));
    }
    if use_zeta && cloud.zeta().is_none() {
        return Err(Error::Precondition(
            "cloud carries no Jacobian determinants".into(),
        ));
    }
    Ok(cloud
        .measure(use_zeta)
        .iter()
        .zip(f)
        .zip(g)
        .map(|((m, a), b)| m * a * b)
        .sum())
}

/// Values of `f ∘ Z⁻¹(·; ξ)` at the points of a reference cloud.
pub fn morph_pullback<F>(
    spec: &DiffeomorphismSpec,
    xi: &[f64],
    f: F,
    reference: &PointCloud,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    (0..reference.len())
        .map(|i| {
            let x = spec.map_inverse(reference.point(i), xi)?;
            Ok(f(&x))
        })
        .collect()
}
