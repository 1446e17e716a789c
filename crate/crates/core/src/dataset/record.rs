use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::numerics::Tensor;

pub const RECORD_MAGIC: &[u8; 4] = b"CGAS";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_HAS_T: u32 = 1;
const FLAG_HAS_ZETA: u32 = 1 << 1;

/// One snapshot `u_h(t, μ, ξ)` on its own point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub t: Option<f64>,
    pub mu: Vec<f64>,
    pub xi: Vec<f64>,
    pub cloud: PointCloud,
    /// `N_h × C` field values.
    pub values: Tensor,
}

impl SampleRecord {
    pub fn new(
        id: u64,
        t: Option<f64>,
        mu: Vec<f64>,
        xi: Vec<f64>,
        cloud: PointCloud,
        values: Tensor,
    ) -> Result<Self> {
        if values.shape().len() != 2 || values.rows() != cloud.len() {
            return Err(Error::Dimension(format!(
                "sample {id}: values shape {:?} for {} points",
                values.shape(),
                cloud.len()
            )));
        }
        values.check_finite(&format!("values of sample {id}"))?;
        let scalars_finite =
            t.is_none_or(f64::is_finite) && mu.iter().chain(&xi).all(|v| v.is_finite());
        if !scalars_finite {
            return Err(Error::NonFinite(format!("parameters of sample {id}")));
        }
        Ok(SampleRecord {
            id,
            t,
            mu,
            xi,
            cloud,
            values,
        })
    }

    pub fn n_h(&self) -> usize {
        self.cloud.len()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    /// Restriction to a subset of points; weights scaled per [`PointCloud::subset`].
    pub fn restrict(&self, indices: &[usize]) -> Result<SampleRecord> {
        let cloud = self.cloud.subset(indices)?;
        let values = self.values.select_rows(indices);
        Ok(SampleRecord {
            id: self.id,
            t: self.t,
            mu: self.mu.clone(),
            xi: self.xi.clone(),
            cloud,
            values,
        })
    }

    /// Appends the little-endian record (including trailing CRC32) to `out`.
    pub fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.id.to_le_bytes());
        let mut flags = 0;
        if self.t.is_some() {
            flags |= FLAG_HAS_T;
        }
        if self.cloud.zeta().is_some() {
            flags |= FLAG_HAS_ZETA;
        }
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.t.unwrap_or(0.0).to_le_bytes());
        put_vec(out, &self.mu);
        put_vec(out, &self.xi);
        out.extend_from_slice(&(self.n_h() as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels() as u32).to_le_bytes());
        put_f64s(out, self.cloud.points());
        put_f64s(out, self.cloud.weights());
        if let Some(z) = self.cloud.zeta() {
            put_f64s(out, z);
        }
        put_f64s(out, self.values.data());
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    /// Decodes the record at `bytes[*pos..]`, advancing `pos`. `index` and
    /// `dim` come from the surrounding file.
    pub fn decode(bytes: &[u8], pos: &mut usize, index: usize, dim: usize) -> Result<SampleRecord> {
        let start = *pos;
        let mut r = Reader {
            bytes,
            pos: start,
            index,
        };
        if r.take(4)? != RECORD_MAGIC {
            return Err(Error::Format(format!("record {index}: bad magic")));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let id = r.u64()?;
        let flags = r.u32()?;
        let t = r.f64()?;
        let p = r.u32()? as usize;
        let mu = r.f64s(p)?;
        let g = r.u32()? as usize;
        let xi = r.f64s(g)?;
        let n_h = r.u32()? as usize;
        let c = r.u32()? as usize;
        let points = r.f64s(n_h * dim)?;
        let weights = r.f64s(n_h)?;
        let zeta = if flags & FLAG_HAS_ZETA != 0 {
            Some(r.f64s(n_h)?)
        } else {
            None
        };
        let values = r.f64s(n_h * c)?;
        let body_end = r.pos;
        let stored = r.u32()?;
        if crc32fast::hash(&bytes[start..body_end]) != stored {
            return Err(Error::Checksum {
                index,
                sample_id: id,
            });
        }
        *pos = r.pos;
        let cloud = PointCloud::new(dim, points, weights, zeta)?;
        let values = Tensor::matrix(n_h, c, values)?;
        let t = (flags & FLAG_HAS_T != 0).then_some(t);
        SampleRecord::new(id, t, mu, xi, cloud, values)
    }
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    put_f64s(out, v);
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.reserve(8 * v.len());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    index: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "record {}: truncated file",
                self.index
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
