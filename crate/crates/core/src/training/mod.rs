//! Seeded training loop, error metrics and the study harnesses.
//!
//! Batches never mix geometries: each epoch shuffles the training
//! geometries, shuffles the samples inside each geometry, and cuts them into
//! batches of at most `batch_size`. The basis network then runs once per
//! batch on the shared cloud. When `r_train < 1` a fresh subsample of the
//! cloud is drawn per geometry and epoch and shared by its samples.

mod harness;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, subsample, Dataset, SampleRecord, SplitName};
use crate::error::{Error, Result};
use crate::model::{CgaRom, Checkpoint, LossWeights, CHECKPOINT_FILE};
use crate::numerics::{AdamState, ParameterSet, Tape};

pub use harness::{
    ablate_geometries, compression_sweep, log_log_slope, superres_grid, superres_row, AblationRow, AblationTable,
    ModelKind,
    SuperResTable, SweepRow, SweepTable,
};

const TAG_EPOCH: u64 = 0x45_50_4F_43;
const TAG_EVAL: u64 = 0x45_56_41_4C;
pub const BEST_CHECKPOINT_FILE: &str = "best.ckpt";
/// Samples per forward pass when evaluating (bounds memory on large groups).
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of each cloud used per training step, in (0, 1].
    pub r_train: f64,
    pub alpha: f64,
    pub lambda_orth: f64,
    pub seed: u64,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Validation evaluations without improvement before stopping; 0 disables.
    pub patience: usize,
    /// Epochs between validation-loss evaluations.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            r_train: 1.0,
            alpha: 1.0,
            lambda_orth: 0.0,
            seed: 0,
            checkpoint_every: 0,
            patience: 0,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.r_train > 0.0 && self.r_train <= 1.0) {
            return bad(format!("r_train {} outside (0, 1]", self.r_train));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.lambda_orth.is_finite() && self.lambda_orth >= 0.0) {
            return bad("loss weights must be finite and nonnegative".into());
        }
        if self.val_every == 0 {
            return bad("val_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, lambda_orth: self.lambda_orth }
    }
}

/// Mean per-sample losses of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub reconstruction: f64,
    pub latent: f64,
    pub orthogonality: f64,
    pub val_loss: Option<f64>,
}

/// `E_R` (mean per-sample relative error) and `E` (global relative error),
/// nodal Euclidean norms in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub e_r: f64,
    pub e: f64,
    pub samples: usize,
    /// Samples with an all-zero ground truth, left out of both metrics.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub start_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub metrics: BTreeMap<String, Metrics>,
    pub wall_clock_s: f64,
    pub stopped_early: bool,
    /// Epoch (0-based) whose parameters the model ends with, when
    /// `restore_best` selected an earlier one.
    pub restored_epoch: Option<usize>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,reconstruction,latent,orthogonality,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map_or(String::new(), |v| format!("{v:e}"));
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{}",
                e.epoch, e.train_loss, e.reconstruction, e.latent, e.orthogonality, val
            );
        }
        out
    }
}

/// Trailing moving average; entry `k` averages `values[k + 1 - window ..= k]`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// Optimizer state and epoch counter to continue an interrupted run.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub optimizer: AdamState,
    pub next_epoch: usize,
}

/// Splits a checkpoint written by [`train_with`] into model and resume state.
pub fn resume_from(ck: Checkpoint) -> Result<(CgaRom, ResumeState)> {
    let optimizer = ck
        .optimizer
        .ok_or_else(|| Error::Precondition("checkpoint carries no optimizer state".into()))?;
    let next_epoch = ck
        .meta
        .get("epoch")
        .ok_or_else(|| Error::Format("checkpoint lacks the epoch counter".into()))?
        .parse()
        .map_err(|_| Error::Format("bad epoch counter in checkpoint".into()))?;
    Ok((ck.rom, ResumeState { optimizer, next_epoch }))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<ResumeState>,
    /// Evaluate E_R and E on every non-empty split after training.
    pub final_metrics: bool,
    /// End with the parameters of the lowest validation loss seen in this
    /// call instead of the last epoch's.
    pub restore_best: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { checkpoint_dir: None, resume: None, final_metrics: true, restore_best: false }
    }
}

pub fn train(rom: &mut CgaRom, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(rom, ds, cfg, &TrainOptions::default())
}

fn save_atomic(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    ck.save(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn checkpoint(rom: &CgaRom, adam: &AdamState, epoch: usize, cfg: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(rom.clone());
    ck.optimizer = Some(adam.clone());
    ck.meta.insert("epoch".into(), epoch.to_string());
    ck.meta.insert("seed".into(), cfg.seed.to_string());
    ck
}

/// Mean per-sample loss over a split at full resolution.
fn split_loss(rom: &CgaRom, ds: &Dataset, groups: &[Vec<u64>], weights: LossWeights) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for g in groups {
        let samples: Vec<&SampleRecord> = g.iter().map(|&id| ds.sample(id)).collect::<Result<_>>()?;
        for chunk in samples.chunks(EVAL_CHUNK) {
            let batch = rom.prepare_group(chunk)?;
            let mut tape = Tape::new();
            let gl = rom.group_loss(&mut tape, &batch, weights)?;
            sum += tape.scalar(gl.total);
            count += chunk.len();
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Trains all parameters of `rom` (those of a fixed basis are not parameters).
///
/// Each epoch draws its randomness from a stream keyed by `(seed, epoch)`,
/// so a run resumed from a checkpoint reproduces the uninterrupted one. A
/// non-finite loss restores the state at the start of the failing epoch,
/// writes it as the checkpoint when a directory is configured, and returns
/// [`Error::Diverged`].
pub fn train_with(rom: &mut CgaRom, ds: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let splits = ds.manifest().splits.clone();
    let train_groups = ds.geometry_groups(&splits.train)?;
    if train_groups.is_empty() {
        return Err(Error::Precondition("the training split is empty".into()));
    }
    let val_groups = ds.geometry_groups(&splits.val)?;
    let n_train = splits.train.len() as f64;
    let weights = cfg.loss_weights();
    if rom.fixed_basis().is_some() && cfg.r_train < 1.0 {
        return Err(Error::Precondition("a fixed basis lives on the full cloud; use r_train = 1".into()));
    }

    let (mut adam, start) = match &opts.resume {
        Some(r) => {
            if r.optimizer.m.len() != rom.params().len() {
                return Err(Error::Hyperparameter("optimizer state does not match the model".into()));
            }
            (r.optimizer.clone(), r.next_epoch)
        }
        None => (AdamState::new(rom.params(), cfg.learning_rate), 0),
    };
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut records = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut best: Option<(usize, ParameterSet)> = None;
    let mut stopped_early = false;
    let report_every = (cfg.epochs / 20).max(1);

    for epoch in start..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_EPOCH, epoch as u64));
        let mut order: Vec<usize> = (0..train_groups.len()).collect();
        order.shuffle(&mut rng);
        let last_good = (rom.params().clone(), adam.clone());
        let (mut total, mut recon, mut latent, mut orth) = (0.0, 0.0, 0.0, 0.0);

        for &g in &order {
            let mut ids = train_groups[g].clone();
            ids.shuffle(&mut rng);
            let sub_seed: u64 = rng.gen();
            let owned: Vec<SampleRecord>;
            let samples: Vec<&SampleRecord> = if cfg.r_train < 1.0 {
                owned = ids.iter().map(|&id| subsample(ds.sample(id)?, cfg.r_train, sub_seed)).collect::<Result<_>>()?;
                owned.iter().collect()
            } else {
                ids.iter().map(|&id| ds.sample(id)).collect::<Result<_>>()?
            };
            for chunk in samples.chunks(cfg.batch_size) {
                let batch = rom.prepare_group(chunk)?;
                let mut tape = Tape::new();
                let gl = rom.group_loss(&mut tape, &batch, weights)?;
                let value = tape.scalar(gl.total);
                if !value.is_finite() {
                    let (params, opt) = last_good;
                    *rom.params_mut() = params;
                    if let Some(dir) = &opts.checkpoint_dir {
                        save_atomic(&checkpoint(rom, &opt, epoch, cfg), &dir.join(CHECKPOINT_FILE))?;
                    }
                    log::error!("non-finite loss in epoch {epoch}; restored the state before it");
                    return Err(Error::Diverged { epoch, loss: value });
                }
                total += value;
                recon += gl.reconstruction;
                latent += gl.latent;
                orth += gl.orthogonality * chunk.len() as f64;
                let mean = tape.scale(gl.total, 1.0 / chunk.len() as f64);
                tape.backward(mean)?.accumulate_into(rom.params_mut());
                adam.step(rom.params_mut())?;
            }
        }

        let last = epoch + 1 == cfg.epochs;
        let val_loss = if !val_groups.is_empty() && ((epoch + 1) % cfg.val_every == 0 || last) {
            Some(split_loss(rom, ds, &val_groups, weights)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / n_train,
            reconstruction: recon / n_train,
            latent: latent / n_train,
            orthogonality: orth / n_train,
            val_loss,
        };
        if epoch % report_every == 0 || last {
            log::info!("epoch {epoch}: train {:.4e} val {:?}", rec.train_loss, rec.val_loss);
        }
        records.push(rec);

        let mut improved = false;
        if let Some(v) = val_loss {
            if v < best_val {
                best_val = v;
                since_best = 0;
                improved = true;
                if opts.restore_best {
                    best = Some((epoch, rom.params().clone()));
                }
            } else {
                since_best += 1;
            }
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && ((epoch + 1) % cfg.checkpoint_every == 0 || last) {
                let ck = checkpoint(rom, &adam, epoch + 1, cfg);
                save_atomic(&ck, &dir.join(CHECKPOINT_FILE))?;
                if improved {
                    save_atomic(&ck, &dir.join(BEST_CHECKPOINT_FILE))?;
                }
            }
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            log::info!("early stop after epoch {epoch}: no validation improvement in {} evaluations", cfg.patience);
            stopped_early = true;
            break;
        }
    }

    let last_epoch = records.last().map(|r| r.epoch);
    let restored_epoch = match best {
        Some((epoch, params)) if Some(epoch) != last_epoch => {
            *rom.params_mut() = params;
            log::info!("restored the parameters of epoch {epoch} (best validation loss {best_val:.4e})");
            Some(epoch)
        }
        _ => None,
    };

    let mut metrics = BTreeMap::new();
    if opts.final_metrics {
        for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
            if !splits.ids(name).is_empty() {
                metrics.insert(name.name().to_string(), evaluate(rom, ds, name)?);
            }
        }
    }
    Ok(TrainReport {
        config: cfg.clone(),
        start_epoch: start,
        epochs: records,
        metrics,
        wall_clock_s: started.elapsed().as_secs_f64(),
        stopped_early,
        restored_epoch,
    })
}

/// Accumulates `E_R` and `E` over (truth, prediction) pairs.
#[derive(Debug, Default, Clone)]
pub struct MetricsAccumulator {
    rel_sum: f64,
    err_sq: f64,
    ref_sq: f64,
    samples: usize,
    excluded: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, truth: &[f64], prediction: &[f64]) -> Result<()> {
        if truth.len() != prediction.len() {
            return Err(Error::Dimension(format!("{} truth values, {} predicted", truth.len(), prediction.len())));
        }
        let r: f64 = truth.iter().map(|u| u * u).sum();
        let d: f64 = truth.iter().zip(prediction).map(|(u, p)| (u - p) * (u - p)).sum();
        if r == 0.0 {
            log::warn!("sample with an all-zero ground truth left out of the error metrics");
            self.excluded += 1;
            return Ok(());
        }
        self.rel_sum += (d / r).sqrt();
        self.err_sq += d;
        self.ref_sq += r;
        self.samples += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.samples == 0 {
            return Err(Error::Precondition("no sample with a nonzero ground truth to evaluate".into()));
        }
        Ok(Metrics {
            e_r: self.rel_sum / self.samples as f64,
            e: (self.err_sq / self.ref_sq).sqrt(),
            samples: self.samples,
            excluded: self.excluded,
        })
    }
}

/// Metrics on a split at full resolution.
pub fn evaluate(rom: &CgaRom, ds: &Dataset, split: SplitName) -> Result<Metrics> {
    evaluate_at(rom, ds, split, 1.0, 0)
}

/// Metrics on a split with every cloud subsampled to ratio `r_test`
/// (one subsample per geometry, seeded by `seed`).
pub fn evaluate_at(rom: &CgaRom, ds: &Dataset, split: SplitName, r_test: f64, seed: u64) -> Result<Metrics> {
    let ids = ds.manifest().splits.ids(split);
    if ids.is_empty() {
        return Err(Error::Precondition(format!("the {} split is empty", split.name())));
    }
    let mut acc = MetricsAccumulator::default();
    for (k, group) in ds.geometry_groups(ids)?.iter().enumerate() {
        let sub_seed = derive_seed(seed, TAG_EVAL, k as u64);
        let owned: Vec<SampleRecord> =
            group.iter().map(|&id| subsample(ds.sample(id)?, r_test, sub_seed)).collect::<Result<_>>()?;
        let refs: Vec<&SampleRecord> = owned.iter().collect();
        for chunk in refs.chunks(EVAL_CHUNK) {
            let batch = rom.prepare_group(chunk)?;
            let preds = rom.reconstruct_group(&batch)?;
            for (s, p) in chunk.iter().zip(preds) {
                let p = rom.normalization().denormalize_values(&p)?;
                p.check_finite("prediction")?;
                acc.add(s.values.data(), p.data())?;
            }
        }
    }
    acc.finish()
}
