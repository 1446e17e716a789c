//! `key = value` run configuration with `[data]`, `[model]` and `[train]`
//! sections. `#` starts a comment. Every key has a default, so an empty file
//! is a complete configuration; [`RunConfig::to_text`] echoes all of them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{DatasetManifest, GenerateConfig, Problem, ResolutionPolicy, SplitConfig};
use crate::error::{Error, Result};
use crate::model::{LayerShape, RomConfig};
use crate::numerics::Activation;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "CGAROM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Data,
    Model,
    Train,
}

impl Section {
    fn parse(s: &str) -> Option<Section> {
        match s {
            "data" => Some(Section::Data),
            "model" => Some(Section::Model),
            "train" => Some(Section::Train),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Section::Data => "data",
            Section::Model => "model",
            Section::Train => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    /// Existing dataset directory (train and study commands).
    pub path: Option<PathBuf>,
    pub problem: Problem,
    pub n_geom: usize,
    pub n_mu: usize,
    pub n_t: usize,
    /// `fixed` or `multi`.
    pub multi_resolution: bool,
    pub nh: usize,
    pub nh_min: usize,
    pub nh_max: usize,
    pub seed: u64,
    pub store_zeta: bool,
    pub split: SplitConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            problem: Problem::Stenosis2d,
            n_geom: 64,
            n_mu: 16,
            n_t: 1,
            multi_resolution: false,
            nh: 1024,
            nh_min: 800,
            nh_max: 1600,
            seed: 0,
            store_zeta: true,
            split: SplitConfig::default(),
        }
    }
}

impl DataSection {
    pub fn resolution(&self) -> ResolutionPolicy {
        if self.multi_resolution {
            ResolutionPolicy::Multi { n_h_min: self.nh_min, n_h_max: self.nh_max }
        } else {
            ResolutionPolicy::Fixed { n_h: self.nh }
        }
    }

    /// Takes the generation settings recorded in a dataset manifest.
    pub fn record_manifest(&mut self, m: &DatasetManifest) {
        if let Some(p) = m.problem {
            self.problem = p;
        }
        self.n_geom = m.n_geom;
        self.n_t = m.n_t.max(1);
        self.n_mu = m.n_samples / (m.n_geom * self.n_t).max(1);
        self.seed = m.seed;
        self.split.unseen_geometries = m.splits.unseen_geometries;
        match m.resolution {
            Some(ResolutionPolicy::Fixed { n_h }) => {
                self.multi_resolution = false;
                self.nh = n_h;
            }
            Some(ResolutionPolicy::Multi { n_h_min, n_h_max }) => {
                self.multi_resolution = true;
                self.nh_min = n_h_min;
                self.nh_max = n_h_max;
            }
            None => {}
        }
    }

    pub fn generate_config(&self) -> GenerateConfig {
        let mut g = GenerateConfig::new(self.problem, self.n_geom, self.n_mu, self.resolution(), self.seed);
        g.n_t = self.n_t;
        g.store_zeta = self.store_zeta;
        g.split = self.split.clone();
        g
    }
}

/// Network sizes; input and output widths come from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub n_basis: usize,
    pub latent: usize,
    pub basis: LayerShape,
    pub encoder: LayerShape,
    pub decoder: LayerShape,
    pub reduced: LayerShape,
    pub use_zeta: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = RomConfig::stenosis_defaults(2, 2, 3, false, 1);
        ModelSection {
            n_basis: d.n_basis,
            latent: d.latent,
            basis: d.basis,
            encoder: d.encoder,
            decoder: d.decoder,
            reduced: d.reduced,
            use_zeta: d.use_zeta,
        }
    }
}

impl ModelSection {
    pub fn rom_config(&self, m: &DatasetManifest) -> Result<RomConfig> {
        let mut c = RomConfig::for_manifest(m);
        c.n_basis = self.n_basis;
        c.latent = self.latent;
        c.basis = self.basis;
        c.encoder = self.encoder;
        c.decoder = self.decoder;
        c.reduced = self.reduced;
        c.use_zeta = self.use_zeta;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    /// `section.key` names assigned by a file or an override.
    explicit: BTreeSet<String>,
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn activation(v: &str) -> std::result::Result<Activation, String> {
    Activation::parse(v).ok_or_else(|| format!("unknown activation {v:?}"))
}

/// Sets `width`, `depth` or `activation` of a network named by `prefix`.
fn shape_field(shape: &mut LayerShape, field: &str, v: &str) -> std::result::Result<bool, String> {
    match field {
        "width" => shape.width = num(v)?,
        "depth" => shape.depth = num(v)?,
        "activation" => shape.activation = activation(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn merge(&mut self, text: &str) -> Result<()> {
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Config { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(
                    Section::parse(name.trim())
                        .ok_or_else(|| err(format!("unknown section [{}]", name.trim())))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let section = section.ok_or_else(|| err("assignment before any section header".into()))?;
            self.set(section, key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let usage = |m: String| Error::Usage(format!("--set {assignment}: {m}"));
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| usage("expected section.key=value".into()))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| usage("expected section.key=value".into()))?;
        let section = Section::parse(section).ok_or_else(|| usage(format!("unknown section {section:?}")))?;
        self.set(section, key, value.trim()).map_err(usage)
    }

    pub fn is_explicit(&self, section: Section, key: &str) -> bool {
        self.explicit.contains(&format!("{}.{key}", section.name()))
    }

    pub fn set(&mut self, section: Section, key: &str, v: &str) -> std::result::Result<(), String> {
        match section {
            Section::Data => self.set_data(key, v)?,
            Section::Model => self.set_model(key, v)?,
            Section::Train => self.set_train(key, v)?,
        }
        self.explicit.insert(format!("{}.{key}", section.name()));
        Ok(())
    }

    fn set_data(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let d = &mut self.data;
        match key {
            "path" => d.path = Some(PathBuf::from(v)),
            "problem" => d.problem = Problem::parse(v).map_err(|e| e.to_string())?,
            "n_geom" => d.n_geom = num(v)?,
            "n_mu" => d.n_mu = num(v)?,
            "n_t" => d.n_t = num(v)?,
            "resolution" => {
                d.multi_resolution = match v {
                    "fixed" => false,
                    "multi" => true,
                    _ => return Err(format!("resolution must be fixed or multi, got {v:?}")),
                }
            }
            "nh" => d.nh = num(v)?,
            "nh_min" => d.nh_min = num(v)?,
            "nh_max" => d.nh_max = num(v)?,
            "seed" => d.seed = num(v)?,
            "store_zeta" => d.store_zeta = flag(v)?,
            "train_fraction" => d.split.fractions[0] = num(v)?,
            "val_fraction" => d.split.fractions[1] = num(v)?,
            "test_fraction" => d.split.fractions[2] = num(v)?,
            "unseen_geometries" => d.split.unseen_geometries = flag(v)?,
            _ => return Err(format!("unknown key {key:?} in [data]")),
        }
        Ok(())
    }

    fn set_model(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        match key {
            "n_basis" => m.n_basis = num(v)?,
            "latent" => m.latent = num(v)?,
            "use_zeta" => m.use_zeta = flag(v)?,
            _ => {
                let handled = match key.split_once('_') {
                    Some(("basis", f)) => shape_field(&mut m.basis, f, v)?,
                    Some(("encoder", f)) => shape_field(&mut m.encoder, f, v)?,
                    Some(("decoder", f)) => shape_field(&mut m.decoder, f, v)?,
                    Some(("reduced", f)) => shape_field(&mut m.reduced, f, v)?,
                    _ => false,
                };
                if !handled {
                    return Err(format!("unknown key {key:?} in [model]"));
                }
            }
        }
        Ok(())
    }

    fn set_train(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "epochs" => t.epochs = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "learning_rate" => t.learning_rate = num(v)?,
            "r_train" => t.r_train = num(v)?,
            "alpha" => t.alpha = num(v)?,
            "lambda_orth" => t.lambda_orth = num(v)?,
            "seed" => t.seed = num(v)?,
            "checkpoint_every" => t.checkpoint_every = num(v)?,
            "patience" => t.patience = num(v)?,
            "val_every" => t.val_every = num(v)?,
            _ => return Err(format!("unknown key {key:?} in [train]")),
        }
        Ok(())
    }

    /// Fills seeds not set explicitly from `CGAROM_SEED`, if present.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.apply_seed_fallback(Some(&v)),
            Err(_) => Ok(()),
        }
    }

    pub fn apply_seed_fallback(&mut self, value: Option<&str>) -> Result<()> {
        let Some(v) = value else { return Ok(()) };
        let seed: u64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        if !self.is_explicit(Section::Data, "seed") {
            self.data.seed = seed;
        }
        if !self.is_explicit(Section::Train, "seed") {
            self.train.seed = seed;
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        s.push_str("[data]\n");
        if let Some(p) = &d.path {
            let _ = writeln!(s, "path = {}", p.display());
        }
        let _ = writeln!(s, "problem = {}", d.problem.name());
        let _ = writeln!(s, "n_geom = {}", d.n_geom);
        let _ = writeln!(s, "n_mu = {}", d.n_mu);
        let _ = writeln!(s, "n_t = {}", d.n_t);
        let _ = writeln!(s, "resolution = {}", if d.multi_resolution { "multi" } else { "fixed" });
        let _ = writeln!(s, "nh = {}", d.nh);
        let _ = writeln!(s, "nh_min = {}", d.nh_min);
        let _ = writeln!(s, "nh_max = {}", d.nh_max);
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "store_zeta = {}", d.store_zeta);
        let _ = writeln!(s, "train_fraction = {}", d.split.fractions[0]);
        let _ = writeln!(s, "val_fraction = {}", d.split.fractions[1]);
        let _ = writeln!(s, "test_fraction = {}", d.split.fractions[2]);
        let _ = writeln!(s, "unseen_geometries = {}", d.split.unseen_geometries);

        let m = &self.model;
        s.push_str("\n[model]\n");
        let _ = writeln!(s, "n_basis = {}", m.n_basis);
        let _ = writeln!(s, "latent = {}", m.latent);
        for (name, shape) in [("basis", m.basis), ("encoder", m.encoder), ("decoder", m.decoder), ("reduced", m.reduced)] {
            let _ = writeln!(s, "{name}_width = {}", shape.width);
            let _ = writeln!(s, "{name}_depth = {}", shape.depth);
            let _ = writeln!(s, "{name}_activation = {}", shape.activation.name());
        }
        let _ = writeln!(s, "use_zeta = {}", m.use_zeta);

        let t = &self.train;
        s.push_str("\n[train]\n");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "learning_rate = {:?}", t.learning_rate);
        let _ = writeln!(s, "r_train = {:?}", t.r_train);
        let _ = writeln!(s, "alpha = {:?}", t.alpha);
        let _ = writeln!(s, "lambda_orth = {:?}", t.lambda_orth);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "patience = {}", t.patience);
        let _ = writeln!(s, "val_every = {}", t.val_every);
        s
    }
}
