use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `v ↦ (v − shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        shift: 0.0,
        scale: 1.0,
    };

    /// Maps `[lo, hi]` onto `[−1, 1]`; a degenerate range keeps unit scale.
    pub fn from_range(lo: f64, hi: f64, what: &str) -> Affine {
        let shift = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        if half > 0.0 {
            Affine { shift, scale: half }
        } else {
            log::warn!("{what}: degenerate range [{lo}, {hi}], using unit scale");
            Affine { shift, scale: 1.0 }
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.shift
    }
}

/// How field values are scaled per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScaling {
    /// `u / max|u|`; zero stays zero.
    AbsMax,
    /// `[min, max] → [−1, 1]`.
    MinMax,
}

impl ValueScaling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "abs_max" => Ok(ValueScaling::AbsMax),
            "min_max" => Ok(ValueScaling::MinMax),
            other => Err(Error::InvalidArgument(format!(
                "unknown value scaling {other:?}"
            ))),
        }
    }
}

/// Affine statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub values: Vec<Affine>,
    pub coords: Vec<Affine>,
    pub t: Option<Affine>,
    pub mu: Vec<Affine>,
    pub xi: Vec<Affine>,
}

fn ranges(n: usize, rows: impl Iterator<Item = Vec<f64>>) -> Vec<(f64, f64)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for row in rows {
        for (r, v) in out.iter_mut().zip(row) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    out
}

impl Normalization {
    pub fn identity(dim: usize, channels: usize, has_t: bool, p: usize, g: usize) -> Self {
        Normalization {
            values: vec![Affine::IDENTITY; channels],
            coords: vec![Affine::IDENTITY; dim],
            t: has_t.then_some(Affine::IDENTITY),
            mu: vec![Affine::IDENTITY; p],
            xi: vec![Affine::IDENTITY; g],
        }
    }

    /// Fits on `samples` (the training split).
    pub fn fit<'a>(
        samples: impl IntoIterator<Item = &'a SampleRecord>,
        scaling: ValueScaling,
    ) -> Result<Self> {
        let samples: Vec<&SampleRecord> = samples.into_iter().collect();
        let first = samples.first().ok_or_else(|| {
            Error::Precondition("cannot fit normalization on an empty split".into())
        })?;
        let (c, d, p, g) = (
            first.channels(),
            first.cloud.dim(),
            first.mu.len(),
            first.xi.len(),
        );
        let has_t = first.t.is_some();
        if samples.iter().any(|s| {
            s.channels() != c
                || s.cloud.dim() != d
                || s.mu.len() != p
                || s.xi.len() != g
                || s.t.is_some() != has_t
        }) {
            return Err(Error::Dimension(
                "samples disagree on channel or parameter dimensions".into(),
            ));
        }

        let value_ranges = ranges(
            c,
            samples
                .iter()
                .flat_map(|s| (0..s.n_h()).map(|i| s.values.row(i).to_vec())),
        );
        let values = value_ranges
            .iter()
            .enumerate()
            .map(|(k, &(lo, hi))| match scaling {
                ValueScaling::MinMax => Affine::from_range(lo, hi, &format!("value channel {k}")),
                ValueScaling::AbsMax => {
                    let m = lo.abs().max(hi.abs());
                    if m > 0.0 {
                        Affine {
                            shift: 0.0,
                            scale: m,
                        }
                    } else {
                        log::warn!("value channel {k} is identically zero, using unit scale");
                        Affine::IDENTITY
                    }
                }
            })
            .collect();
        let coords = ranges(
            d,
            samples
                .iter()
                .flat_map(|s| (0..s.n_h()).map(|i| s.cloud.point(i).to_vec())),
        )
        .iter()
        .enumerate()
        .map(|(k, &(lo, hi))| Affine::from_range(lo, hi, &format!("coordinate {k}")))
        .collect();
        let fit = |n: usize, what: &str, get: &dyn Fn(&SampleRecord) -> Vec<f64>| -> Vec<Affine> {
            ranges(n, samples.iter().map(|s| get(s)))
                .iter()
                .enumerate()
                .map(|(k, &(lo, hi))| Affine::from_range(lo, hi, &format!("{what} {k}")))
                .collect()
        };
        let t = has_t.then(|| fit(1, "t", &|s| vec![s.t.unwrap_or(0.0)])[0]);
        let mu = fit(p, "μ", &|s| s.mu.clone());
        let xi = fit(g, "ξ", &|s| s.xi.clone());
        Ok(Normalization {
            values,
            coords,
            t,
            mu,
            xi,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn map_cols(&self, m: &Tensor, stats: &[Affine], forward: bool) -> Result<Tensor> {
        if m.shape().len() != 2 || m.cols() != stats.len() {
            return Err(Error::Dimension(format!(
                "matrix {:?} for {} columns of statistics",
                m.shape(),
                stats.len()
            )));
        }
        let mut out = m.clone();
        let cols = stats.len();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let a = &stats[k % cols];
            *v = if forward { a.apply(*v) } else { a.invert(*v) };
        }
        Ok(out)
    }

    pub fn normalize_values(&self, values: &Tensor) -> Result<Tensor> {
        self.map_cols(values, &self.values, true)
    }

    pub fn denormalize_values(&self, values: &Tensor) -> Result<Tensor> {
        self.map_cols(values, &self.values, false)
    }

    pub fn normalize_coords(&self, points: &Tensor) -> Result<Tensor> {
        self.map_cols(points, &self.coords, true)
    }

    pub fn denormalize_coords(&self, points: &Tensor) -> Result<Tensor> {
        self.map_cols(points, &self.coords, false)
    }

    pub fn normalize_xi(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.xi.len() {
            return Err(Error::Dimension(format!(
                "{} geometric parameters, expected {}",
                xi.len(),
                self.xi.len()
            )));
        }
        Ok(xi.iter().zip(&self.xi).map(|(v, a)| a.apply(*v)).collect())
    }

    /// Reduced-network input `[t?, μ, ξ]`, normalized.
    pub fn reduced_input(&self, t: Option<f64>, mu: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.mu.len() {
            return Err(Error::Dimension(format!(
                "{} physical parameters, expected {}",
                mu.len(),
                self.mu.len()
            )));
        }
        let mut out = Vec::with_capacity(1 + mu.len() + xi.len());
        match (self.t, t) {
            (Some(a), Some(t)) => out.push(a.apply(t)),
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "time-dependent model needs t".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "stationary model got a time value".into(),
                ))
            }
        }
        out.extend(mu.iter().zip(&self.mu).map(|(v, a)| a.apply(*v)));
        out.extend(self.normalize_xi(xi)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;

    fn sample(id: u64, vals: &[f64], mu: f64) -> SampleRecord {
        let n = vals.len();
        let pts: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let cloud = PointCloud::new(1, pts, vec![1.0; n], None).unwrap();
        SampleRecord::new(
            id,
            None,
            vec![mu],
            vec![0.5],
            cloud,
            Tensor::matrix(n, 1, vals.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn min_max_inputs_map_symmetric_range() {
        let a = Affine::from_range(-2.0, 2.0, "x");
        assert_eq!(a.apply(0.0), 0.0);
        assert_eq!(a.apply(2.0), 1.0);
        assert_eq!(a.apply(-2.0), -1.0);
    }

    #[test]
    fn constant_channel_is_identity_up_to_shift() {
        let a = Affine::from_range(3.0, 3.0, "c");
        assert_eq!(a.scale, 1.0);
        assert_eq!(a.apply(3.0), 0.0);
        assert_eq!(a.apply(4.5), 1.5);
    }

    #[test]
    fn fit_and_round_trip() {
        let s = [
            sample(0, &[1.0, -3.0, 2.0], -2.0),
            sample(1, &[0.5, 0.0, 1.0], 2.0),
        ];
        for scaling in [ValueScaling::AbsMax, ValueScaling::MinMax] {
            let n = Normalization::fit(&s, scaling).unwrap();
            let v = n.normalize_values(&s[0].values).unwrap();
            assert!(v.data().iter().all(|x| x.abs() <= 1.0 + 1e-15));
            let back = n.denormalize_values(&v).unwrap();
            for (a, b) in back.data().iter().zip(s[0].values.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert_eq!(
                n.reduced_input(None, &[0.0], &[0.5]).unwrap(),
                vec![0.0, 0.0]
            );
        }
        let abs = Normalization::fit(&s, ValueScaling::AbsMax).unwrap();
        assert_eq!(
            abs.values[0],
            Affine {
                shift: 0.0,
                scale: 3.0
            }
        );
        assert!(Normalization::fit(&[], ValueScaling::AbsMax).is_err());
    }

    #[test]
    fn time_presence_is_checked() {
        let n = Normalization::identity(1, 1, false, 1, 1);
        assert!(n.reduced_input(Some(0.1), &[1.0], &[1.0]).is_err());
        let n = Normalization::identity(1, 1, true, 1, 1);
        assert!(n.reduced_input(None, &[1.0], &[1.0]).is_err());
        assert_eq!(
            n.reduced_input(Some(0.1), &[1.0], &[2.0]).unwrap(),
            vec![0.1, 1.0, 2.0]
        );
    }
}
