//! Acceptance suite: one check per criterion, run in sequence so that each
//! runtime is measured on an otherwise idle process. Prints one
//! `PASS`/`FAIL` line per criterion and exits nonzero if any fails.
//!
//! Run a subset with `cargo test --release --test acceptance -- 1 3 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cgarom::dataset::{generate, Dataset, GenerateConfig, Normalization, Problem, ResolutionPolicy, SplitName, ValueScaling};
use cgarom::error::Error;
use cgarom::geometry::{morph_pullback, reference_cloud, sample_cloud, DiffeomorphismSpec, SamplingMode};
use cgarom::model::{CgaRom, Checkpoint, LayerShape, LossWeights, RomConfig};
use cgarom::numerics::{finite_difference_check, Activation, Tape, Tensor};
use cgarom::pod::{bae_oracle, pod_from_matrix, pod_projection_error};
use cgarom::training::{
    ablate_geometries, compression_sweep, evaluate, moving_average, superres_row, train, train_with, ModelKind,
    TrainConfig, TrainOptions, BEST_CHECKPOINT_FILE,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check = fn() -> Result<Outcome, Error>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    check: Check,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-5;

fn micro_config() -> RomConfig {
    RomConfig {
        n_basis: 2,
        latent: 2,
        channels: 1,
        dim: 2,
        mu_dim: 2,
        geo_dim: 3,
        has_time: false,
        basis: LayerShape::new(8, 2, Activation::Tanh),
        encoder: LayerShape::new(8, 2, Activation::Elu),
        decoder: LayerShape::new(8, 2, Activation::Elu),
        reduced: LayerShape::new(8, 2, Activation::Elu),
        use_zeta: false,
    }
}

fn gradient_check() -> Result<Outcome, Error> {
    let mut cfg = GenerateConfig::new(Problem::Stenosis2d, 3, 2, ResolutionPolicy::Fixed { n_h: 16 }, 21);
    cfg.split.fractions = [1.0, 0.0, 0.0];
    let ds = generate(&cfg)?;
    let norm = Normalization::fit(ds.samples(), ValueScaling::AbsMax)?;
    let weights = LossWeights { alpha: 1.0, lambda_orth: 0.1 };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (seed, k) in [(1u64, 0usize), (2, 3), (3, 5)] {
        let rom = CgaRom::new(micro_config(), norm.clone(), seed)?;
        let batch = rom.prepare_group(&[&ds.samples()[k]])?;
        let mut work = rom.clone();
        work.params_mut().zero_grad();
        let mut tape = Tape::new();
        let loss = work.group_loss(&mut tape, &batch, weights)?;
        tape.backward(loss.total)?.accumulate_into(work.params_mut());
        let analytic = work.params().flatten_grad();
        let mut params = work.params().clone();
        let report = finite_difference_check(&mut params, &analytic, GRAD_STEP, |ps| {
            let mut probe = work.clone();
            probe.params_mut().assign_flat(&ps.flatten())?;
            let mut t = Tape::new();
            let l = probe.group_loss(&mut t, &batch, weights)?;
            Ok((t.scalar(l.total), t.kink_pattern()))
        })?;
        if report.checked != rom.params().numel() {
            return Ok(Outcome::new(false, format!("only {} of {} entries checked", report.checked, rom.params().numel())));
        }
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    Ok(Outcome::new(
        worst <= GRAD_TOL,
        format!("max relative error {worst:.2e} over {checked} parameters (tol {GRAD_TOL:.0e})"),
    ))
}

// ---------------------------------------------------------------------------
// 2. POD tail-sum identity

const TAIL_TOL: f64 = 1e-10;

fn tail_sum_identity() -> Result<Outcome, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for m in 0..20 {
        let (rows, cols) = if m == 0 { (500, 200) } else { (rng.gen_range(20..=500), rng.gen_range(5..=200)) };
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = Tensor::matrix(rows, cols, data)?;
        let w: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.1..2.0)).collect();
        let rank = rows.min(cols);
        let pod = pod_from_matrix(&u, &w, rank)?;
        let sigma = pod.singular_values();
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        for n in 0..=rank {
            let tail: f64 = sigma[n..].iter().map(|s| s * s).sum();
            let err = pod_projection_error(&pod, &u, n)?;
            // At full rank the tail is zero; compare against the total energy.
            let rel = if n == rank { err.abs() / total } else { (err - tail).abs() / tail };
            worst = worst.max(rel);
            checks += 1;
        }
    }
    Ok(Outcome::new(
        worst <= TAIL_TOL,
        format!("max relative deviation {worst:.2e} over {checks} (matrix, N) pairs (tol {TAIL_TOL:.0e})"),
    ))
}

// ---------------------------------------------------------------------------
// 3. BAE inequality

const BAE_SLACK: f64 = 1e-10;
const BAE_GAP: f64 = 1.5;

fn bae_inequality() -> Result<Outcome, Error> {
    let ds = generate(&GenerateConfig::new(Problem::Stenosis2d, 64, 16, ResolutionPolicy::Fixed { n_h: 1024 }, 7))?;
    let all: Vec<_> = ds.samples().iter().collect();
    let n_list = [1, 2, 4, 8, 16, 32];
    let table = bae_oracle(&all, &n_list)?;
    let mut ok = table.geometries == 64 && all.len() == 1024;
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 0..n_list.len() {
        let excess = table.cga[k] - table.pod[k];
        worst_excess = worst_excess.max(excess);
        ok &= excess <= BAE_SLACK;
    }
    let (cga4, pod4) = table.get(4).expect("N = 4 row");
    let ratio = pod4 / cga4;
    ok &= ratio >= BAE_GAP;
    Ok(Outcome::new(
        ok,
        format!(
            "max BAE_CGA - BAE_POD {worst_excess:.2e} (slack {BAE_SLACK:.0e}); BAE_POD(4)/BAE_CGA(4) = {ratio:.2} (need >= {BAE_GAP})"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 4. Morphing isometry

const ISOMETRY_TOL: f64 = 1e-4;
const CONSTANT_TOL: f64 = 1e-12;
const ISOMETRY_NH: usize = 10_000;

type Field = fn(&[f64]) -> f64;

fn planar_fields() -> [Field; 5] {
    [
        |x| 1.0 + 0.3 * x[0] - 0.7 * x[1],
        |x| (1.3 * x[0]).sin() + x[1] * x[1],
        |x| (-((x[0] - 0.5).powi(2) + (x[1] - 0.4).powi(2))).exp(),
        |x| (2.0 * x[0]).cos() * (1.0 + x[1]).ln(),
        |x| x[0] * x[1] * x[1] - 0.2 * x[0].powi(3),
    ]
}

fn line_fields() -> [Field; 5] {
    [|x| 1.0 + x[0], |x| (x[0] - 0.4).powi(3), |x| (2.0 * x[0]).sin(), |x| (-x[0]).exp(), |x| (1.0 + x[0] * x[0]).sqrt()]
}

fn sq_norm(values: &[f64], measure: &[f64]) -> f64 {
    values.iter().zip(measure).map(|(v, m)| m * v * v).sum()
}

fn morph_defect(spec: &DiffeomorphismSpec, xi: &[f64], f: Field) -> Result<f64, Error> {
    let phys = sample_cloud(spec, xi, ISOMETRY_NH, SamplingMode::TensorGrid, 0)?;
    let refc = reference_cloud(spec, ISOMETRY_NH)?;
    let fv: Vec<f64> = (0..phys.len()).map(|i| f(phys.point(i))).collect();
    let lhs = sq_norm(&fv, &phys.measure(true));
    let pulled = morph_pullback(spec, xi, f, &refc)?;
    let rhs = sq_norm(&pulled, &refc.measure(false));
    Ok((lhs - rhs).abs() / lhs)
}

fn morphing_isometry() -> Result<Outcome, Error> {
    let cases: [(DiffeomorphismSpec, Vec<f64>, [Field; 5]); 4] = [
        (DiffeomorphismSpec::identity(2), vec![], planar_fields()),
        (DiffeomorphismSpec::interval_scale(), vec![1.7], line_fields()),
        (DiffeomorphismSpec::stenosis(), vec![0.37, 0.6, 2.4], planar_fields()),
        (DiffeomorphismSpec::hole_radius(), vec![0.26], planar_fields()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (spec, xi, fields) in &cases {
        let mut worst = 0.0f64;
        for f in fields {
            worst = worst.max(morph_defect(spec, xi, *f)?);
        }
        ok &= worst <= ISOMETRY_TOL;
        parts.push(format!("{} {worst:.1e}", spec.family.name()));
    }
    let spec = DiffeomorphismSpec::interval_scale();
    let mut const_worst = 0.0f64;
    for xi in [0.5, 0.8, 1.3, 2.0] {
        for c in [1.0, -2.5, 7.0] {
            let phys = sample_cloud(&spec, &[xi], ISOMETRY_NH, SamplingMode::TensorGrid, 0)?;
            let refc = reference_cloud(&spec, ISOMETRY_NH)?;
            let lhs = sq_norm(&vec![c; phys.len()], &phys.measure(true));
            let rhs = sq_norm(&vec![c; refc.len()], &refc.measure(false));
            const_worst = const_worst.max((lhs - rhs).abs() / lhs);
        }
    }
    ok &= const_worst <= CONSTANT_TOL;
    Ok(Outcome::new(
        ok,
        format!(
            "worst relative defect per family: {} (tol {ISOMETRY_TOL:.0e}); constants on interval_scale {const_worst:.1e} (tol {CONSTANT_TOL:.0e})",
            parts.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------------------
// Training-based criteria share a fixed-resolution stenosis dataset.

fn stenosis(n_geom: usize, n_mu: usize, resolution: ResolutionPolicy, seed: u64) -> Result<Dataset, Error> {
    generate(&GenerateConfig::new(Problem::Stenosis2d, n_geom, n_mu, resolution, seed))
}

fn table_defaults(ds: &Dataset) -> RomConfig {
    RomConfig::for_manifest(ds.manifest())
}

fn base_train(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, learning_rate: 3e-4, seed: 11, val_every: 1_000_000, ..TrainConfig::default() }
}

// ---------------------------------------------------------------------------
// 5. Compression trend

const SWEEP_EPOCHS: usize = 800;
const SWEEP_FACTOR: f64 = 0.7;
/// Both models end on their lowest validation loss at this cadence.
const SWEEP_VAL_EVERY: usize = 25;

fn compression_trend() -> Result<Outcome, Error> {
    let ds = stenosis(40, 8, ResolutionPolicy::Fixed { n_h: 128 }, 5)?;
    let cfg = TrainConfig { val_every: SWEEP_VAL_EVERY, ..base_train(SWEEP_EPOCHS) };
    let table = compression_sweep(&ds, &[2, 4], &table_defaults(&ds), &cfg)?;
    let e = |n, m| table.get(n, m).expect("sweep row").e;
    let (c2, p2, c4, p4) = (e(2, ModelKind::Cga), e(2, ModelKind::Pod), e(4, ModelKind::Cga), e(4, ModelKind::Pod));
    let ok = c2 <= p2 && c4 <= p4 && c4 <= SWEEP_FACTOR * p4;
    Ok(Outcome::new(
        ok,
        format!("test E: N=2 cga {c2:.3e} pod {p2:.3e}; N=4 cga {c4:.3e} pod {p4:.3e} (ratio {:.2}, need <= {SWEEP_FACTOR})", c4 / p4),
    ))
}

// ---------------------------------------------------------------------------
// 6. End-to-end accuracy

const E2E_EPOCHS: usize = 2000;
const E2E_TOL: f64 = 5e-2;
const E2E_WINDOW: usize = 50;
/// Validation loss is tracked (and the best model kept) at this cadence.
const E2E_VAL_EVERY: usize = 25;

fn end_to_end() -> Result<Outcome, Error> {
    let ds = stenosis(20, 8, ResolutionPolicy::Fixed { n_h: 256 }, 3)?;
    let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let mut rom = CgaRom::new(table_defaults(&ds), ds.manifest().normalization.clone().expect("normalized"), 11)?;
    let cfg = TrainConfig { val_every: E2E_VAL_EVERY, checkpoint_every: E2E_VAL_EVERY, ..base_train(E2E_EPOCHS) };
    let opts = TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), final_metrics: false, ..TrainOptions::default() };
    let report = train_with(&mut rom, &ds, &cfg, &opts)?;
    let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT_FILE))?.rom;
    let e_r = evaluate(&best, &ds, SplitName::Test)?.e_r;
    let last_e_r = evaluate(&rom, &ds, SplitName::Test)?.e_r;

    let losses = report.train_losses();
    let ma = moving_average(&losses, E2E_WINDOW);
    // ma[k] averages epochs k ..= k + window - 1; the final 80% starts at epoch `from`.
    let from = losses.len() / 5;
    let tail = &ma[from.saturating_sub(E2E_WINDOW - 1)..];
    let rises = tail.windows(2).filter(|w| w[1] > w[0]).count();
    let ok = e_r <= E2E_TOL && rises == 0 && losses.len() == E2E_EPOCHS;
    Ok(Outcome::new(
        ok,
        format!(
            "test E_R {e_r:.3e} (val-selected; last epoch {last_e_r:.3e}; tol {E2E_TOL:.0e}); {rises} rises of the {E2E_WINDOW}-epoch moving average over the final 80%"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 7. Super-resolution independence

const SUPERRES_EPOCHS: usize = 600;
const SUPERRES_SPREAD: f64 = 1.10;

fn superres_independence() -> Result<Outcome, Error> {
    let ds = stenosis(16, 8, ResolutionPolicy::Multi { n_h_min: 800, n_h_max: 1600 }, 9)?;
    let mut rom = CgaRom::new(table_defaults(&ds), ds.manifest().normalization.clone().expect("normalized"), 11)?;
    let cfg = TrainConfig { r_train: 0.25, ..base_train(SUPERRES_EPOCHS) };
    train_with(&mut rom, &ds, &cfg, &TrainOptions { final_metrics: false, ..TrainOptions::default() })?;
    let row = superres_row(&rom, &ds, &[0.25, 0.5, 1.0], 17)?;
    let max = row.iter().cloned().fold(f64::MIN, f64::max);
    let min = row.iter().cloned().fold(f64::MAX, f64::min);
    Ok(Outcome::new(
        max / min <= SUPERRES_SPREAD,
        format!(
            "test E_R at r_test 0.25/0.5/1: {:.3e} {:.3e} {:.3e}; max/min {:.3} (need <= {SUPERRES_SPREAD})",
            row[0],
            row[1],
            row[2],
            max / min
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. Geometry ablation

const ABLATION_EPOCHS: usize = 150;

fn geometry_ablation() -> Result<Outcome, Error> {
    let ds = stenosis(50, 4, ResolutionPolicy::Fixed { n_h: 256 }, 13)?;
    let table = ablate_geometries(&ds, &[5, 10, 20, 40], &table_defaults(&ds), &base_train(ABLATION_EPOCHS))?;
    let slope = table.slope();
    let gaps: Vec<f64> = table.rows.iter().map(|r| r.gap()).collect();
    let widest = gaps.iter().cloned().fold(f64::MIN, f64::max);
    let ok = slope < 0.0 && gaps[0] == widest;
    let rows: Vec<String> =
        table.rows.iter().map(|r| format!("{}: {:.3e}/{:.3e}", r.geometries, r.train_e_r, r.test_e_r)).collect();
    let gaps_text: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    Ok(Outcome::new(
        ok,
        format!("train/test E_R {}; log-log slope {slope:.3}; gaps {}", rows.join(", "), gaps_text.join(" ")),
    ))
}

// ---------------------------------------------------------------------------
// 9. Serialization

fn corrupt_record(ds: &Dataset, k: usize) -> Result<bool, Error> {
    let mut offsets = Vec::new();
    let mut bytes = Vec::new();
    for s in ds.samples() {
        offsets.push(bytes.len());
        s.encode(&mut bytes);
    }
    offsets.push(bytes.len());
    // Last value byte before the trailing CRC of record k.
    bytes[offsets[k + 1] - 5] ^= 0x10;
    match Dataset::from_parts(ds.manifest().clone(), &bytes) {
        Err(e @ Error::Checksum { index, sample_id }) => {
            Ok(index == k && sample_id == ds.samples()[k].id && e.to_string().contains(&format!("record {k}")))
        }
        _ => Ok(false),
    }
}

fn serialization() -> Result<Outcome, Error> {
    let ds = stenosis(6, 3, ResolutionPolicy::Multi { n_h_min: 60, n_h_max: 140 }, 19)?;
    let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ds.write(&a)?;
    let back = Dataset::read(&a)?;
    back.write(&b)?;
    let read = |p: std::path::PathBuf| std::fs::read(&p).map_err(|e| Error::io(p, e));
    let mut ok = back == ds;
    for f in ["manifest.json", "samples.bin"] {
        ok &= read(a.join(f))? == read(b.join(f))?;
    }

    let mut rom = CgaRom::new(micro_config(), ds.manifest().normalization.clone().expect("normalized"), 4)?;
    train(&mut rom, &ds, &TrainConfig { epochs: 2, ..TrainConfig::default() })?;
    let bytes = Checkpoint::new(rom.clone()).to_bytes()?;
    let loaded = Checkpoint::from_bytes(&bytes)?;
    ok &= loaded.to_bytes()? == bytes;
    ok &= loaded.rom.params().flatten().iter().map(|v| v.to_bits()).eq(rom.params().flatten().iter().map(|v| v.to_bits()));

    let mut located = 0;
    for k in [0, ds.len() / 2, ds.len() - 1] {
        located += usize::from(corrupt_record(&ds, k)?);
    }
    ok &= located == 3;
    let mut flipped = bytes.clone();
    let mid = flipped.len() - 40;
    flipped[mid] ^= 0x01;
    let ck_detected = matches!(Checkpoint::from_bytes(&flipped), Err(Error::CheckpointChecksum));
    ok &= ck_detected;
    Ok(Outcome::new(
        ok,
        format!(
            "dataset and checkpoint round trips byte-exact; flipped bytes located in {located}/3 records; checkpoint flip detected: {ck_detected}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 10. Determinism

const DETERMINISM_EPOCHS: usize = 40;

fn determinism() -> Result<Outcome, Error> {
    let ds = stenosis(8, 4, ResolutionPolicy::Multi { n_h_min: 200, n_h_max: 400 }, 23)?;
    let cfg = TrainConfig { r_train: 0.5, val_every: 5, ..base_train(DETERMINISM_EPOCHS) };
    let run = || -> Result<(Vec<u64>, Vec<u64>), Error> {
        let mut rom = CgaRom::new(table_defaults(&ds), ds.manifest().normalization.clone().expect("normalized"), 31)?;
        let report = train_with(&mut rom, &ds, &cfg, &TrainOptions { final_metrics: false, ..TrainOptions::default() })?;
        let curve = report
            .epochs
            .iter()
            .flat_map(|e| [e.train_loss, e.reconstruction, e.latent, e.val_loss.unwrap_or(-1.0)])
            .map(f64::to_bits)
            .collect();
        Ok((curve, rom.params().flatten().iter().map(|v| v.to_bits()).collect()))
    };
    let (c1, p1) = run()?;
    let (c2, p2) = run()?;
    let ok = c1 == c2 && p1 == p2 && c1.len() == 4 * DETERMINISM_EPOCHS;
    Ok(Outcome::new(
        ok,
        format!("{} loss entries and {} parameters compared bit for bit: identical = {}", c1.len(), p1.len(), c1 == c2 && p1 == p2),
    ))
}

// ---------------------------------------------------------------------------

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "gradient correctness", limit: secs(10), check: gradient_check },
        Criterion { id: 2, name: "POD tail-sum identity", limit: secs(30), check: tail_sum_identity },
        Criterion { id: 3, name: "BAE inequality", limit: secs(120), check: bae_inequality },
        Criterion { id: 4, name: "morphing isometry", limit: secs(30), check: morphing_isometry },
        Criterion { id: 5, name: "compression trend", limit: secs(30 * 60), check: compression_trend },
        Criterion { id: 6, name: "end-to-end accuracy", limit: secs(20 * 60), check: end_to_end },
        Criterion { id: 7, name: "super-resolution independence", limit: secs(20 * 60), check: superres_independence },
        Criterion { id: 8, name: "geometry ablation trend", limit: secs(45 * 60), check: geometry_ablation },
        Criterion { id: 9, name: "serialization", limit: secs(5), check: serialization },
        Criterion { id: 10, name: "determinism", limit: secs(10 * 60), check: determinism },
    ]
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in criteria() {
        if !selected.is_empty() && !selected.contains(&c.id) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = started.elapsed();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        let in_time = elapsed <= c.limit;
        let pass = pass && in_time;
        println!(
            "criterion {:>2} {} [{}]: {} ({:.1} s, limit {} s{})",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            if in_time { "" } else { ", over the limit" }
        );
        if !pass {
            failed.push(c.id);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
