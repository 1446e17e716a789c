use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::model::{CgaRom, FixedBasis, LayerShape, RomConfig};
use crate::numerics::{Activation, AdamState, ParameterSet, Tensor};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
const MAGIC_LINE: &str = "cgarom-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const END_HEADER: &str = "end_header";

/// A model plus optional optimizer state and free-form metadata.
///
/// Layout: `key = value` header lines ending with `end_header`, then the
/// little-endian f64 blob (parameters in registration order, fixed basis
/// modes and weights if any, Adam `m` then `v` if present), then a CRC32 of
/// every preceding byte.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub rom: CgaRom,
    pub optimizer: Option<AdamState>,
    pub meta: BTreeMap<String, String>,
}

fn shape_str(s: &LayerShape) -> String {
    format!("{} {} {}", s.width, s.depth, s.activation.name())
}

fn parse_shape(v: &str) -> Result<LayerShape> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Format(format!(
            "network shape {v:?} is not `width depth activation`"
        )));
    }
    let activation = Activation::parse(parts[2])
        .ok_or_else(|| Error::Format(format!("unknown activation {:?}", parts[2])))?;
    Ok(LayerShape {
        width: parse_num(parts[0])?,
        depth: parse_num(parts[1])?,
        activation,
    })
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad number {v:?} in checkpoint header")))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Format(format!(
            "bad boolean {v:?} in checkpoint header"
        ))),
    }
}

fn put(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(rom: CgaRom) -> Self {
        Checkpoint {
            rom,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = self.rom.config();
        let mut h = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(h, "{k} = {v}");
        };
        kv(MAGIC_LINE, CHECKPOINT_VERSION.to_string());
        kv("n_basis", c.n_basis.to_string());
        kv("latent", c.latent.to_string());
        kv("channels", c.channels.to_string());
        kv("dim", c.dim.to_string());
        kv("mu_dim", c.mu_dim.to_string());
        kv("geo_dim", c.geo_dim.to_string());
        kv("has_time", c.has_time.to_string());
        kv("use_zeta", c.use_zeta.to_string());
        kv("basis_net", shape_str(&c.basis));
        kv("encoder_net", shape_str(&c.encoder));
        kv("decoder_net", shape_str(&c.decoder));
        kv("reduced_net", shape_str(&c.reduced));
        kv(
            "normalization",
            serde_json::to_string(self.rom.normalization())?,
        );
        let fixed = self.rom.fixed_basis();
        kv(
            "fixed_basis_rows",
            fixed.map_or(0, |f| f.modes.rows()).to_string(),
        );
        kv("param_count", self.rom.params().numel().to_string());
        match &self.optimizer {
            Some(a) => {
                kv(
                    "adam",
                    format!("{} {} {} {} {}", a.step, a.lr, a.beta1, a.beta2, a.eps),
                );
            }
            None => kv("adam", "none".into()),
        }
        for (k, v) in &self.meta {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(Error::InvalidArgument(format!(
                    "metadata entry {k:?} cannot be stored in a header line"
                )));
            }
            kv(&format!("meta.{k}"), v.clone());
        }
        h.push_str(END_HEADER);
        h.push('\n');

        let mut out = h.into_bytes();
        put(&mut out, &self.rom.params().flatten());
        if let Some(f) = fixed {
            put(&mut out, f.modes.data());
            put(&mut out, &f.weights);
        }
        if let Some(a) = &self.optimizer {
            for t in a.m.iter().chain(&a.v) {
                put(&mut out, t.data());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 4 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::CheckpointChecksum);
        }
        let marker = format!("\n{END_HEADER}\n");
        let end = body
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| Error::Format("checkpoint header has no end marker".into()))?;
        let header = std::str::from_utf8(&body[..end])
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let mut blob = &body[end + marker.len()..];

        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks {k}")))
        };
        let version: u32 = parse_num(get(MAGIC_LINE)?)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = RomConfig {
            n_basis: parse_num(get("n_basis")?)?,
            latent: parse_num(get("latent")?)?,
            channels: parse_num(get("channels")?)?,
            dim: parse_num(get("dim")?)?,
            mu_dim: parse_num(get("mu_dim")?)?,
            geo_dim: parse_num(get("geo_dim")?)?,
            has_time: parse_bool(get("has_time")?)?,
            use_zeta: parse_bool(get("use_zeta")?)?,
            basis: parse_shape(get("basis_net")?)?,
            encoder: parse_shape(get("encoder_net")?)?,
            decoder: parse_shape(get("decoder_net")?)?,
            reduced: parse_shape(get("reduced_net")?)?,
        };
        config.validate()?;
        let normalization: Normalization = serde_json::from_str(get("normalization")?)?;
        let fixed_rows: usize = parse_num(get("fixed_basis_rows")?)?;
        let param_count: usize = parse_num(get("param_count")?)?;

        let mut take = |n: usize| -> Result<Vec<f64>> {
            let len = n
                .checked_mul(8)
                .filter(|&l| l <= blob.len())
                .ok_or_else(|| Error::Format("checkpoint blob truncated".into()))?;
            let (head, rest) = blob.split_at(len);
            blob = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };

        // Parameter shapes follow from the configuration.
        let mut params = ParameterSet::new();
        let mut specs = Vec::new();
        if fixed_rows == 0 {
            specs.push(("basis", config.basis_spec()));
        }
        specs.extend([
            ("encoder", config.encoder_spec()),
            ("decoder", config.decoder_spec()),
            ("reduced", config.reduced_spec()),
        ]);
        let implied: usize = specs.iter().map(|(_, s)| s.num_params()).sum();
        if implied != param_count {
            return Err(Error::Hyperparameter(format!(
                "header declares {param_count} parameters, configuration implies {implied}"
            )));
        }
        for (prefix, spec) in &specs {
            for (k, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
                params.insert(
                    format!("{prefix}.{k}.weight"),
                    Tensor::matrix(fan_in, fan_out, take(fan_in * fan_out)?)?,
                )?;
                params.insert(
                    format!("{prefix}.{k}.bias"),
                    Tensor::new(vec![fan_out], take(fan_out)?)?,
                )?;
            }
        }
        let fixed = if fixed_rows > 0 {
            let modes = Tensor::matrix(
                fixed_rows,
                config.coeff_dim(),
                take(fixed_rows * config.coeff_dim())?,
            )?;
            Some(FixedBasis {
                modes,
                weights: take(fixed_rows)?,
            })
        } else {
            None
        };
        let adam_field = get("adam")?;
        let optimizer = if adam_field == "none" {
            None
        } else {
            let parts: Vec<&str> = adam_field.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Format(format!("bad optimizer line {adam_field:?}")));
            }
            let mut state = AdamState::with_betas(
                &params,
                parse_num(parts[1])?,
                parse_num(parts[2])?,
                parse_num(parts[3])?,
                parse_num(parts[4])?,
            );
            state.step = parse_num(parts[0])?;
            for t in state.m.iter_mut().chain(state.v.iter_mut()) {
                let n = t.len();
                t.data_mut().copy_from_slice(&take(n)?);
            }
            Some(state)
        };
        if !blob.is_empty() {
            return Err(Error::Format(format!(
                "{} unexpected trailing bytes in checkpoint",
                blob.len()
            )));
        }
        let meta = fields
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix("meta.")
                    .map(|k| (k.to_string(), v.to_string()))
            })
            .collect();
        let rom = CgaRom::from_parts(config, normalization, params, fixed)?;
        Ok(Checkpoint {
            rom,
            optimizer,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and requires the stored hyperparameters to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &RomConfig) -> Result<Checkpoint> {
        let ck = Self::load(path)?;
        let got = ck.rom.config();
        if got != expected {
            let mut diffs = Vec::new();
            let mut cmp = |name: &str, a: String, b: String| {
                if a != b {
                    diffs.push(format!("{name}: checkpoint {a}, expected {b}"));
                }
            };
            cmp(
                "n_basis",
                got.n_basis.to_string(),
                expected.n_basis.to_string(),
            );
            cmp(
                "latent",
                got.latent.to_string(),
                expected.latent.to_string(),
            );
            cmp(
                "channels",
                got.channels.to_string(),
                expected.channels.to_string(),
            );
            cmp(
                "basis_net",
                shape_str(&got.basis),
                shape_str(&expected.basis),
            );
            cmp(
                "encoder_net",
                shape_str(&got.encoder),
                shape_str(&expected.encoder),
            );
            cmp(
                "decoder_net",
                shape_str(&got.decoder),
                shape_str(&expected.decoder),
            );
            cmp(
                "reduced_net",
                shape_str(&got.reduced),
                shape_str(&expected.reduced),
            );
            if diffs.is_empty() {
                diffs.push("input dimensions or flags differ".into());
            }
            return Err(Error::Hyperparameter(diffs.join("; ")));
        }
        Ok(ck)
    }
}
