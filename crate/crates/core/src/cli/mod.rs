//! Command-line front end. `main` parses flags, runs one command and maps
//! errors to exit codes: 2 usage, 3 I/O or file format, 4 numerical abort.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::{DataSection, ModelSection, RunConfig, Section, SEED_ENV};

use crate::dataset::{generate, Dataset, SplitName};
use crate::error::{Error, Result};
use crate::model::{CgaRom, Checkpoint, CHECKPOINT_FILE};
use crate::pod::{bae_oracle, compute_pod, write_text};
use crate::training::{
    ablate_geometries, compression_sweep, evaluate_at, resume_from, superres_grid, train_with, Metrics,
    TrainOptions,
};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Parser)]
#[command(name = "cgarom", version, about = "Geometry-aware reduced order models on point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train a CGA-DL-ROM into a run directory.
    Train(TrainArgs),
    /// Evaluate a trained run on one split.
    Eval(EvalArgs),
    /// Weighted POD spectrum of the training snapshots.
    Pod(PodArgs),
    /// Best-approximation errors of per-geometry and global linear spaces.
    Bae(BaeArgs),
    /// CGA-DL-ROM vs POD-DL-ROM over the number of basis functions.
    Sweep(SweepArgs),
    /// Retrain on growing numbers of training geometries.
    Ablate(AblateArgs),
    /// Train at coarse resolutions, test at several resolutions.
    Superres(SuperresArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file with [data], [model] and [train] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.epochs=100`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for data generation and training (fallback: CGAROM_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub n_geom: Option<usize>,
    #[arg(long)]
    pub n_mu: Option<usize>,
    #[arg(long)]
    pub n_t: Option<usize>,
    /// `fixed` or `multi`.
    #[arg(long)]
    pub resolution: Option<String>,
    #[arg(long)]
    pub nh: Option<usize>,
    #[arg(long)]
    pub nh_min: Option<usize>,
    #[arg(long)]
    pub nh_max: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub r_train: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Dataset directory (overrides `data.path`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory (default: the one recorded in the run summary).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint file (default: the run's `model.ckpt`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Fraction of every cloud to evaluate on.
    #[arg(long, default_value_t = 1.0)]
    pub r_test: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PodArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// Modes to keep (all when omitted).
    #[arg(long)]
    pub n_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 32])]
    pub modes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 32])]
    pub modes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 20, 40])]
    pub counts: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SuperresArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25f64, 1.0])]
    pub rtrain: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25f64, 0.5, 1.0])]
    pub rtest: Vec<f64>,
}

/// Exclusive hold on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                std::io::Error::new(
                    e.kind(),
                    "run directory is in use by another process (delete the lock file if it is stale)",
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are printed as one line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pod(a) => cmd_pod(a),
        Command::Bae(a) => cmd_bae(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Superres(a) => cmd_superres(a),
    }
}

/// File, then `--set` overrides, then `--seed`, then `CGAROM_SEED` for any
/// seed still unset.
fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.set_override(o)?;
    }
    if let Some(seed) = args.seed {
        cfg.set(Section::Data, "seed", &seed.to_string()).map_err(Error::Usage)?;
        cfg.set(Section::Train, "seed", &seed.to_string()).map_err(Error::Usage)?;
    }
    cfg.apply_seed_env()?;
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) {
    let t = &mut cfg.train;
    t.epochs = f.epochs.unwrap_or(t.epochs);
    t.learning_rate = f.lr.unwrap_or(t.learning_rate);
    t.batch_size = f.batch_size.unwrap_or(t.batch_size);
    t.r_train = f.r_train.unwrap_or(t.r_train);
}

fn dataset_path(cfg: &mut RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = flag {
        cfg.data.path = Some(p.clone());
    }
    cfg.data
        .path
        .clone()
        .ok_or_else(|| Error::Usage("no dataset given (use --data or data.path in the config)".into()))
}

fn summary_text(command: &str, results: &[(String, String)], cfg: &RunConfig, wall_clock_s: f64) -> String {
    let mut s = format!("# cgarom {command}\n");
    for (k, v) in results {
        let _ = writeln!(s, "# {k} = {v}");
    }
    let _ = writeln!(s, "# wall_clock_s = {wall_clock_s:.3}");
    let _ = writeln!(s, "# seed = {}\n", cfg.train.seed);
    s.push_str(&cfg.to_text());
    s
}

fn metric_lines(prefix: &str, m: &Metrics) -> Vec<(String, String)> {
    vec![
        (format!("{prefix} E_R"), format!("{:e}", m.e_r)),
        (format!("{prefix} E"), format!("{:e}", m.e)),
        (format!("{prefix} samples"), m.samples.to_string()),
        (format!("{prefix} excluded"), m.excluded.to_string()),
    ]
}

pub fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    let d = &mut cfg.data;
    if let Some(p) = &a.problem {
        d.problem = crate::dataset::Problem::parse(p)?;
    }
    if let Some(r) = &a.resolution {
        d.multi_resolution = match r.as_str() {
            "fixed" => false,
            "multi" => true,
            other => return Err(Error::Usage(format!("--resolution must be fixed or multi, got {other:?}"))),
        };
    }
    d.n_geom = a.n_geom.unwrap_or(d.n_geom);
    d.n_mu = a.n_mu.unwrap_or(d.n_mu);
    d.n_t = a.n_t.unwrap_or(d.n_t);
    d.nh = a.nh.unwrap_or(d.nh);
    d.nh_min = a.nh_min.unwrap_or(d.nh_min);
    d.nh_max = a.nh_max.unwrap_or(d.nh_max);

    let ds = generate(&cfg.data.generate_config())?;
    ds.write(&a.out)?;
    let counts: Vec<usize> = ds.samples().iter().map(|s| s.n_h()).collect();
    let min = counts.iter().min().copied().unwrap_or(0);
    let max = counts.iter().max().copied().unwrap_or(0);
    let mean = counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64;
    println!("{} samples, {} geometries written to {}", ds.len(), ds.manifest().n_geom, a.out.display());
    println!("N_h: min {min}, mean {mean:.1}, max {max}");
    Ok(())
}

fn append_csv_rows(path: &Path, fresh: &str, first_epoch: usize) -> Result<String> {
    let old = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for (i, line) in old.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e < first_epoch);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    for line in fresh.lines().skip(1) {
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = load_config(&a.cfg)?;
    apply_train_flags(&mut cfg, &a.train);
    let data = dataset_path(&mut cfg, &a.data)?;
    let _lock = RunLock::acquire(&a.out)?;
    let ds = Dataset::read(&data)?;
    cfg.data.record_manifest(ds.manifest());
    let rom_config = cfg.model.rom_config(ds.manifest())?;
    if cfg.train.checkpoint_every == 0 {
        cfg.train.checkpoint_every = cfg.train.epochs;
    }
    cfg.train.validate()?;

    let mut opts = TrainOptions { checkpoint_dir: Some(a.out.clone()), ..TrainOptions::default() };
    let mut rom = if a.resume {
        let ck = Checkpoint::load_expecting(&a.out.join(CHECKPOINT_FILE), &rom_config)?;
        let (rom, state) = resume_from(ck)?;
        log::info!("resuming at epoch {}", state.next_epoch);
        opts.resume = Some(state);
        rom
    } else {
        let norm = ds
            .manifest()
            .normalization
            .clone()
            .ok_or_else(|| Error::Precondition("dataset has no training normalization".into()))?;
        CgaRom::new(rom_config, norm, cfg.train.seed)?
    };
    let report = train_with(&mut rom, &ds, &cfg.train, &opts)?;

    let loss_path = a.out.join("loss.csv");
    let loss_csv = if a.resume && loss_path.exists() {
        append_csv_rows(&loss_path, &report.to_csv(), report.start_epoch)?
    } else {
        report.to_csv()
    };
    write_text(&loss_path, &loss_csv)?;
    let mut metrics_csv = String::from("split,E_R,E,samples,excluded\n");
    let mut results = vec![("epochs_run".to_string(), report.epochs.len().to_string())];
    if let Some(last) = report.epochs.last() {
        results.push(("final train_loss".into(), format!("{:e}", last.train_loss)));
    }
    results.push(("stopped_early".into(), report.stopped_early.to_string()));
    for (split, m) in &report.metrics {
        let _ = writeln!(metrics_csv, "{split},{:e},{:e},{},{}", m.e_r, m.e, m.samples, m.excluded);
        results.extend(metric_lines(split, m));
        println!("{split}: E_R = {:.4e}, E = {:.4e}", m.e_r, m.e);
    }
    write_text(&a.out.join("metrics.csv"), &metrics_csv)?;
    write_text(
        &a.out.join(SUMMARY_FILE),
        &summary_text("train", &results, &cfg, started.elapsed().as_secs_f64()),
    )?;
    Ok(())
}

pub fn cmd_eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let split = SplitName::parse(&a.split)?;
    if !(a.r_test > 0.0 && a.r_test <= 1.0) {
        return Err(Error::Usage(format!("--r-test {} outside (0, 1]", a.r_test)));
    }
    let _lock = RunLock::acquire(&a.run)?;
    let summary_path = a.run.join(SUMMARY_FILE);
    let mut cfg = if summary_path.exists() {
        RunConfig::load(&summary_path)?
    } else {
        RunConfig::default()
    };
    let data = dataset_path(&mut cfg, &a.data)?;
    let ds = Dataset::read(&data)?;
    let ck_path = a.checkpoint.clone().unwrap_or_else(|| a.run.join(CHECKPOINT_FILE));
    let rom = Checkpoint::load(&ck_path)?.rom;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let m = evaluate_at(&rom, &ds, split, a.r_test, seed)?;
    println!("{}: E_R = {:.4e}, E = {:.4e} ({} samples)", split.name(), m.e_r, m.e, m.samples);

    let csv = format!(
        "split,r_test,E_R,E,samples,excluded\n{},{},{:e},{:e},{},{}\n",
        split.name(),
        a.r_test,
        m.e_r,
        m.e,
        m.samples,
        m.excluded
    );
    write_text(&a.run.join(format!("eval_{}.csv", split.name())), &csv)?;
    let mut block = format!(
        "\n# eval split={} r_test={} checkpoint={} seed={seed}\n",
        split.name(),
        a.r_test,
        ck_path.display()
    );
    for (k, v) in metric_lines(split.name(), &m) {
        let _ = writeln!(block, "# {k} = {v}");
    }
    let _ = writeln!(block, "# eval wall_clock_s = {:.3}", started.elapsed().as_secs_f64());
    if summary_path.exists() {
        let mut f = OpenOptions::new().append(true).open(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        f.write_all(block.as_bytes()).map_err(|e| Error::io(&summary_path, e))?;
    } else {
        write_text(&summary_path, &format!("{block}\n{}", cfg.to_text()))?;
    }
    Ok(())
}

pub fn cmd_pod(a: PodArgs) -> Result<()> {
    let started = Instant::now();
    let _lock = RunLock::acquire(&a.out)?;
    let ds = Dataset::read(&a.data)?;
    let train = ds.split_samples(SplitName::Train)?;
    let basis = compute_pod(&train, a.channel, a.n_max.unwrap_or(usize::MAX))?;
    write_text(&a.out.join("pod.csv"), &basis.to_csv())?;
    let mut cfg = RunConfig::default();
    cfg.data.path = Some(a.data.clone());
    let sigma = basis.singular_values();
    let results = vec![
        ("snapshots".to_string(), train.len().to_string()),
        ("channel".to_string(), a.channel.to_string()),
        ("modes".to_string(), basis.n_modes().to_string()),
        ("sigma_1".to_string(), format!("{:e}", sigma.first().copied().unwrap_or(0.0))),
    ];
    println!("{} modes from {} snapshots", basis.n_modes(), train.len());
    write_text(&a.out.join(SUMMARY_FILE), &summary_text("pod", &results, &cfg, started.elapsed().as_secs_f64()))
}

pub fn cmd_bae(a: BaeArgs) -> Result<()> {
    let started = Instant::now();
    let _lock = RunLock::acquire(&a.out)?;
    let ds = Dataset::read(&a.data)?;
    let all: Vec<_> = ds.samples().iter().collect();
    let table = bae_oracle(&all, &a.modes)?;
    write_text(&a.out.join("bae.csv"), &table.to_csv())?;
    print!("{}", table.to_csv());
    let mut cfg = RunConfig::default();
    cfg.data.path = Some(a.data.clone());
    let results = vec![
        ("fingerprint".to_string(), format!("{:08x}", table.fingerprint)),
        ("geometries".to_string(), table.geometries.to_string()),
        ("single_snapshot_geometries".to_string(), table.single_snapshot_geometries.to_string()),
    ];
    write_text(&a.out.join(SUMMARY_FILE), &summary_text("bae", &results, &cfg, started.elapsed().as_secs_f64()))
}

/// Shared setup of the study commands: config, dataset and model template.
fn study_setup(
    cfg_args: &ConfigArgs,
    flags: &TrainFlags,
    data: &Option<PathBuf>,
) -> Result<(RunConfig, Dataset, crate::model::RomConfig)> {
    let mut cfg = load_config(cfg_args)?;
    apply_train_flags(&mut cfg, flags);
    let path = dataset_path(&mut cfg, data)?;
    let ds = Dataset::read(&path)?;
    cfg.data.record_manifest(ds.manifest());
    let base = cfg.model.rom_config(ds.manifest())?;
    cfg.train.validate()?;
    Ok((cfg, ds, base))
}

pub fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let started = Instant::now();
    let (cfg, ds, base) = study_setup(&a.cfg, &a.train, &a.data)?;
    let _lock = RunLock::acquire(&a.out)?;
    let table = compression_sweep(&ds, &a.modes, &base, &cfg.train)?;
    write_text(&a.out.join("sweep.csv"), &table.to_csv())?;
    print!("{}", table.to_csv());
    let modes = a.modes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
    let results = vec![("modes".to_string(), modes)];
    write_text(&a.out.join(SUMMARY_FILE), &summary_text("sweep", &results, &cfg, started.elapsed().as_secs_f64()))
}

pub fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let started = Instant::now();
    let (cfg, ds, base) = study_setup(&a.cfg, &a.train, &a.data)?;
    let _lock = RunLock::acquire(&a.out)?;
    let table = ablate_geometries(&ds, &a.counts, &base, &cfg.train)?;
    write_text(&a.out.join("ablation.csv"), &table.to_csv())?;
    print!("{}", table.to_csv());
    let counts = a.counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
    let results = vec![("counts".to_string(), counts), ("log_log_slope".to_string(), format!("{:.4}", table.slope()))];
    println!("log-log slope {:.4}", table.slope());
    write_text(&a.out.join(SUMMARY_FILE), &summary_text("ablate", &results, &cfg, started.elapsed().as_secs_f64()))
}

pub fn cmd_superres(a: SuperresArgs) -> Result<()> {
    let started = Instant::now();
    let (cfg, ds, base) = study_setup(&a.cfg, &a.train, &a.data)?;
    let _lock = RunLock::acquire(&a.out)?;
    let table = superres_grid(&ds, &a.rtrain, &a.rtest, &base, &cfg.train)?;
    write_text(&a.out.join("superres.csv"), &table.to_csv())?;
    print!("{}", table.to_csv());
    let mut results = Vec::new();
    for (i, r) in a.rtrain.iter().enumerate() {
        results.push((format!("spread r_train={r}"), format!("{:.4}", table.spread(i))));
    }
    write_text(
        &a.out.join(SUMMARY_FILE),
        &summary_text("superres", &results, &cfg, started.elapsed().as_secs_f64()),
    )
}
