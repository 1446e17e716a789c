//! Compression sweep, geometry ablation and super-resolution grid.

use std::fmt::Write as _;

use crate::dataset::{derive_seed, Dataset, SampleRecord, SplitName};
use crate::error::{Error, Result};
use crate::model::{CgaRom, RomConfig};
use crate::pod::pod_model;
use crate::training::{evaluate, evaluate_at, train_with, TrainConfig, TrainOptions};

const TAG_SUPERRES: u64 = 0x53_52_45_53;

fn normalization(ds: &Dataset) -> Result<crate::dataset::Normalization> {
    ds.manifest()
        .normalization
        .clone()
        .ok_or_else(|| Error::Precondition("dataset has no training normalization (empty training split?)".into()))
}

/// Study runs keep the lowest-validation-loss parameters; with validation
/// only at the last epoch that is the final model.
fn quiet() -> TrainOptions {
    TrainOptions { final_metrics: false, restore_best: true, ..TrainOptions::default() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cga,
    Pod,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cga => "cga",
            ModelKind::Pod => "pod",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub latent: usize,
    pub model: ModelKind,
    pub e: f64,
    pub e_r: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, n: usize, model: ModelKind) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n && r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,l,model,E,E_R\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:e},{:e}", r.n, r.latent, r.model.name(), r.e, r.e_r);
        }
        out
    }
}

/// Trains a CGA-DL-ROM and a POD-DL-ROM per `N` (latent `l = min(N, 10)`)
/// and records their test errors.
pub fn compression_sweep(ds: &Dataset, n_list: &[usize], base: &RomConfig, cfg: &TrainConfig) -> Result<SweepTable> {
    if !ds.is_fixed_resolution() {
        return Err(Error::Precondition(
            "the POD baseline needs a fixed-resolution dataset (generate with resolution = fixed)".into(),
        ));
    }
    let norm = normalization(ds)?;
    let train: Vec<&SampleRecord> = ds.split_samples(SplitName::Train)?;
    let mut table = SweepTable::default();
    for &n in n_list {
        let mut config = base.clone();
        config.n_basis = n;
        config.latent = n.min(10).min(n * config.channels);
        for model in [ModelKind::Cga, ModelKind::Pod] {
            let mut rom = match model {
                ModelKind::Cga => CgaRom::new(config.clone(), norm.clone(), cfg.seed)?,
                ModelKind::Pod => pod_model(&train, norm.clone(), config.clone(), cfg.seed)?,
            };
            train_with(&mut rom, ds, cfg, &quiet())?;
            let m = evaluate(&rom, ds, SplitName::Test)?;
            log::info!("N={n} {}: E={:.4e} E_R={:.4e}", model.name(), m.e, m.e_r);
            table.rows.push(SweepRow { n, latent: config.latent, model, e: m.e, e_r: m.e_r });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub geometries: usize,
    pub epochs: usize,
    pub train_e_r: f64,
    pub test_e_r: f64,
}

impl AblationRow {
    pub fn gap(&self) -> f64 {
        self.test_e_r - self.train_e_r
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Least-squares slope of `log test E_R` against `log geometries`.
    pub fn slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| ((r.geometries as f64).ln(), r.test_e_r.ln())).collect();
        log_log_slope(&pts)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("geometries,epochs,train_E_R,test_E_R\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:e},{:e}", r.geometries, r.epochs, r.train_e_r, r.test_e_r);
        }
        out
    }
}

/// Ordinary least-squares slope through `(x, y)` points.
pub fn log_log_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Retrains on the first `count` training geometries for each count, keeping
/// validation and test splits fixed. `cfg.epochs` applies to the largest
/// count; smaller counts get proportionally more epochs so every run takes
/// the same number of optimizer steps.
pub fn ablate_geometries(ds: &Dataset, counts: &[usize], base: &RomConfig, cfg: &TrainConfig) -> Result<AblationTable> {
    let groups = ds.geometry_groups(&ds.manifest().splits.train)?;
    let max = *counts.iter().max().ok_or_else(|| Error::InvalidArgument("empty geometry count list".into()))?;
    if counts.contains(&0) || max > groups.len() {
        return Err(Error::InvalidArgument(format!(
            "geometry counts must lie in 1..={} (training geometries available)",
            groups.len()
        )));
    }
    let mut table = AblationTable::default();
    for &count in counts {
        let ids: Vec<u64> = groups[..count].iter().flatten().copied().collect();
        let sub = ds.with_train_subset(&ids)?;
        let mut run = cfg.clone();
        run.epochs = (cfg.epochs * max).div_ceil(count);
        let mut rom = CgaRom::new(base.clone(), normalization(&sub)?, cfg.seed)?;
        train_with(&mut rom, &sub, &run, &quiet())?;
        let train_e_r = evaluate(&rom, &sub, SplitName::Train)?.e_r;
        let test_e_r = evaluate(&rom, &sub, SplitName::Test)?.e_r;
        log::info!("{count} geometries ({} epochs): train E_R {train_e_r:.4e}, test E_R {test_e_r:.4e}", run.epochs);
        table.rows.push(AblationRow { geometries: count, epochs: run.epochs, train_e_r, test_e_r });
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperResTable {
    pub r_train: Vec<f64>,
    pub r_test: Vec<f64>,
    /// `e_r[i][j]`: trained at `r_train[i]`, evaluated at `r_test[j]`.
    pub e_r: Vec<Vec<f64>>,
}

impl SuperResTable {
    /// `max / min` of a row.
    pub fn spread(&self, row: usize) -> f64 {
        let r = &self.e_r[row];
        let max = r.iter().cloned().fold(f64::MIN, f64::max);
        let min = r.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// One row per training resolution, one `E_R` column per test resolution.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r_train");
        for rs in &self.r_test {
            let _ = write!(out, ",r_test={rs}");
        }
        out.push('\n');
        for (rt, row) in self.r_train.iter().zip(&self.e_r) {
            out.push_str(&rt.to_string());
            for e in row {
                let _ = write!(out, ",{e:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Test `E_R` of `rom` at each evaluation resolution.
pub fn superres_row(rom: &CgaRom, ds: &Dataset, r_test: &[f64], seed: u64) -> Result<Vec<f64>> {
    r_test
        .iter()
        .enumerate()
        .map(|(j, &r)| Ok(evaluate_at(rom, ds, SplitName::Test, r, derive_seed(seed, TAG_SUPERRES, j as u64))?.e_r))
        .collect()
}

/// Trains one model per training resolution and evaluates each at every test
/// resolution.
pub fn superres_grid(
    ds: &Dataset,
    r_train: &[f64],
    r_test: &[f64],
    base: &RomConfig,
    cfg: &TrainConfig,
) -> Result<SuperResTable> {
    if r_train.is_empty() || r_test.is_empty() {
        return Err(Error::InvalidArgument("empty resolution list".into()));
    }
    let norm = normalization(ds)?;
    let mut e_r = Vec::new();
    for &r in r_train {
        let mut run = cfg.clone();
        run.r_train = r;
        let mut rom = CgaRom::new(base.clone(), norm.clone(), cfg.seed)?;
        train_with(&mut rom, ds, &run, &quiet())?;
        let row = superres_row(&rom, ds, r_test, cfg.seed)?;
        log::info!("r_train {r}: test E_R {row:?}");
        e_r.push(row);
    }
    Ok(SuperResTable { r_train: r_train.to_vec(), r_test: r_test.to_vec(), e_r })
}
