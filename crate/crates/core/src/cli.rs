//! Command-line front end: dataset generation, prior fitting, optimization,
//! evaluation and ablation tables. Every command writes plain files so runs can
//! be inspected and replayed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{run_method, BaselineConfig, Method};
use crate::error::{CoinError, Result};
use crate::metrics::{evaluate_motion, MetricsReport};
use crate::motion::{BodyModel, MotionWindow};
use crate::optimizer::{write_trace_csv, Ablation, PipelineConfig, RunResult};
use crate::prior::{fit_motion_prior, load_prior, save_prior, FitConfig, FitReport, GmmPrior};
use crate::scenario::{benchmark_scenarios, generate_dataset, load_dataset, load_scenario, obs_noise_for, save_dataset, save_scenario, train_prior, Dataset, TrainingConfig};
use crate::world::{build_world, ScenarioConfig};

/// Default root for run directories when `--out` is not given.
pub const OUTPUT_ROOT_VAR: &str = "COIN_OUTPUT_ROOT";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "coin", version, about = "Joint human motion and camera estimation with a controlled diffusion prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: ground truth, observations, config snapshot.
    Gen(GenArgs),
    /// Fit the mixture motion prior.
    FitPrior(FitPriorArgs),
    /// Run one estimation method on a dataset.
    Optimize(OptimizeArgs),
    /// Score a run directory against ground truth.
    Evaluate(EvaluateArgs),
    /// Run every method and ablation over a scenario set.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario file (TOML); defaults are used when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitPriorArgs {
    /// Datasets whose ground-truth motion is cut into training windows. Without
    /// any, random walks from the gait generator are used.
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub components: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of generated training windows.
    #[arg(long, default_value_t = 300)]
    pub windows: usize,
    #[arg(long, default_value_t = 128)]
    pub frames: usize,
    /// Output prior file (`.json` for text, anything else for binary).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// A run configuration, e.g. the snapshot of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub no_control: bool,
    #[arg(long)]
    pub no_dynamic_control: bool,
    #[arg(long)]
    pub no_soft_inpaint: bool,
    #[arg(long)]
    pub no_hsr: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Steps per optimization stage.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Run directory; defaults to a named directory under `$COIN_OUTPUT_ROOT`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `optimize`.
    pub run: PathBuf,
    /// Ground truth; defaults to the dataset named in the run config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, default_value_t = 10)]
    pub scenarios: usize,
    /// Seed of the scenario set.
    #[arg(long, default_value_t = 11)]
    pub scenario_seed: u64,
    /// Optimizer seeds; every scenario runs once per seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Prior file; the default synthetic prior is fitted when absent.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Steps per optimization stage.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Frames per scenario.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Output table (CSV).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Optional per-run table (CSV).
    #[arg(long)]
    pub runs: Option<PathBuf>,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub prior: PathBuf,
    pub method: Method,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub baseline: BaselineConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pipeline.ablation != Ablation::default() && self.method != Method::Coin {
            return Err(CoinError::Config("ablation flags only apply to --method coin".into()));
        }
        self.pipeline.validate()?;
        self.baseline.validate()
    }

    /// Short content hash naming the run directory.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(hex::encode(&Sha256::digest(text.as_bytes())[..6]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoinError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CoinError::Config(format!("{}: {e}", path.display())))
    }
}

/// Stitched estimate as written to a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub version: u32,
    pub motion: MotionWindow,
    pub beta: [f64; 2],
    pub camera: crate::geometry::CameraTrajectory,
    pub scale: f64,
}

impl Trajectory {
    pub fn of(r: &RunResult) -> Self {
        Self { version: TRAJECTORY_VERSION, motion: r.motion.clone(), beta: r.beta, camera: r.camera.clone(), scale: r.scale }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Trajectory = serde_json::from_slice(&fs::read(path)?)?;
        if t.version != TRAJECTORY_VERSION {
            return Err(CoinError::Format(format!("trajectory version {} (expected {TRAJECTORY_VERSION})", t.version)));
        }
        Ok(t)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| ()),
        Command::FitPrior(a) => {
            let report = cmd_fit_prior(&a)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Optimize(a) => {
            let dir = cmd_optimize(&a)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Ablate(a) => {
            let table = cmd_ablate(&a)?;
            print!("{}", table.summary_csv());
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoinError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// Writes `dataset.json` and `scenario.toml` into `args.out`; returns the dataset path.
pub fn cmd_gen(args: &GenArgs) -> Result<PathBuf> {
    let mut cfg = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let ds = generate_dataset(&cfg, &BodyModel::default())?;
    create_dir(&args.out)?;
    let path = args.out.join("dataset.json");
    save_dataset(&ds, &path)?;
    save_scenario(&cfg, &args.out.join("scenario.toml"))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

/// Fits the prior, writes it to `args.out` and its report next to it.
pub fn cmd_fit_prior(args: &FitPriorArgs) -> Result<FitReport> {
    let body = BodyModel::default();
    let fit = FitConfig { components: args.components, seed: args.seed, ..FitConfig::default() };
    let (prior, report) = if args.dataset.is_empty() {
        train_prior(&TrainingConfig { windows: args.windows, frames: args.frames, seed: args.seed, fit }, &body)?
    } else {
        let mut windows = Vec::new();
        for p in &args.dataset {
            let ds = load_dataset(p)?;
            let m = &ds.world.motion;
            let mut s = 0;
            while s + args.frames <= m.frames() {
                windows.push(m.slice(s, args.frames));
                s += args.frames;
            }
        }
        if windows.is_empty() {
            return Err(CoinError::Domain(format!("no dataset has {} frames", args.frames)));
        }
        fit_motion_prior(&windows, &fit)?
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_prior(&prior, &args.out)?;
    fs::write(args.out.with_extension("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(fs::canonicalize(p).map_err(|e| CoinError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?)
}

/// Merges a config file (if any) with command-line overrides.
pub fn run_config(args: &OptimizeArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let dataset = args.dataset.clone().ok_or_else(|| CoinError::Config("--dataset is required without --config".into()))?;
            let prior = args.prior.clone().ok_or_else(|| CoinError::Config("--prior is required without --config".into()))?;
            let noise = load_dataset(&dataset)?.world.config.noise;
            let pipeline = PipelineConfig { obs_noise: obs_noise_for(&noise), ..PipelineConfig::default() };
            RunConfig { dataset, prior, method: Method::Coin, seed: 0, pipeline, baseline: BaselineConfig::default() }
        }
    };
    if let Some(d) = &args.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(p) = &args.prior {
        cfg.prior = p.clone();
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.steps {
        for st in &mut cfg.pipeline.stages {
            st.steps = n;
        }
    }
    let a = &mut cfg.pipeline.ablation;
    a.no_control |= args.no_control;
    a.no_dynamic_control |= args.no_dynamic_control;
    a.no_soft_inpaint |= args.no_soft_inpaint;
    a.no_hsr |= args.no_hsr;
    cfg.pipeline.seed = cfg.seed;
    cfg.pipeline.sds.rng_seed = cfg.seed;
    cfg.dataset = absolute(&cfg.dataset)?;
    cfg.prior = absolute(&cfg.prior)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the configured method; returns the result without touching the disk.
pub fn execute(cfg: &RunConfig) -> Result<(Dataset, RunResult)> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset)?;
    let prior = load_prior(&cfg.prior)?;
    let r = run_method(cfg.method, &ds.world.obs, &ds.world.body, &prior, &cfg.pipeline, &cfg.baseline)?;
    Ok((ds, r))
}

/// Writes `config.toml`, `trace.csv`, `windows.json` and `trajectory.json`.
pub fn write_run(dir: &Path, cfg: &RunConfig, r: &RunResult) -> Result<()> {
    create_dir(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut trace = Vec::new();
    write_trace_csv(&r.trace, &mut trace)?;
    fs::write(dir.join("trace.csv"), trace)?;
    fs::write(dir.join("windows.json"), serde_json::to_vec(&r.windows)?)?;
    fs::write(dir.join("trajectory.json"), serde_json::to_vec(&Trajectory::of(r))?)?;
    Ok(())
}

pub fn run_dir_name(cfg: &RunConfig) -> Result<String> {
    let method = serde_json::to_value(cfg.method)?;
    Ok(format!("{}-{}-seed{}", method.as_str().unwrap_or("run"), cfg.hash()?, cfg.seed))
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<PathBuf> {
    let cfg = run_config(args)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(run_dir_name(&cfg)?)
        }
    };
    let (_, r) = execute(&cfg)?;
    write_run(&dir, &cfg, &r)?;
    Ok(dir)
}

fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("name");
    for c in MetricsReport::COLUMNS {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for (name, m) in rows {
        s.push_str(name);
        for v in m.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Scores a trajectory against the ground truth of a dataset.
pub fn evaluate_trajectory(t: &Trajectory, ds: &Dataset) -> Result<MetricsReport> {
    let w = &ds.world;
    if t.motion.frames() != w.motion.frames() {
        return Err(CoinError::Shape { expected: w.motion.frames(), got: t.motion.frames() });
    }
    evaluate_motion(&w.body, &t.motion, &t.beta, &w.motion, &w.beta, &t.camera, &w.camera, w.config.gait.dt, t.scale)
}

/// Writes `metrics.csv` and `metrics.json` into the run directory.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport> {
    let dataset = match &args.dataset {
        Some(d) => d.clone(),
        None => RunConfig::load(&args.run.join("config.toml"))?.dataset,
    };
    let ds = load_dataset(&dataset)?;
    let t = Trajectory::load(&args.run.join("trajectory.json"))?;
    let m = evaluate_trajectory(&t, &ds)?;
    fs::write(args.run.join("metrics.csv"), metrics_csv(&[("run".into(), m)]))?;
    fs::write(args.run.join("metrics.json"), serde_json::to_vec_pretty(&m)?)?;
    Ok(m)
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub method: Method,
    pub ablation: Ablation,
}

pub fn variants() -> Vec<Variant> {
    let a = Ablation::default();
    let coin = |name, ablation| Variant { name, method: Method::Coin, ablation };
    vec![
        coin("coin", a),
        coin("no_soft_inpaint", Ablation { no_soft_inpaint: true, ..a }),
        coin("no_control", Ablation { no_control: true, ..a }),
        coin("no_dynamic_control", Ablation { no_dynamic_control: true, ..a }),
        coin("no_hsr", Ablation { no_hsr: true, ..a }),
        Variant { name: "vanilla_sds", method: Method::VanillaSds, ablation: a },
        Variant { name: "noise_opt", method: Method::NoiseOpt, ablation: a },
        Variant { name: "guided", method: Method::Guided, ablation: a },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub scenario: String,
    pub seed: u64,
    pub s_true: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationTable {
    pub fn variant_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.runs {
            if !names.contains(&r.variant) {
                names.push(r.variant.clone());
            }
        }
        names
    }

    /// Median over the runs of `variant` of the value picked by `f`.
    pub fn median_of(&self, variant: &str, f: impl Fn(&AblationRun) -> f64) -> f64 {
        let mut v: Vec<f64> = self.runs.iter().filter(|r| r.variant == variant).map(f).collect();
        median(&mut v)
    }

    /// One row per variant with the median of every metric, plus the median relative scale error.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("variant,runs");
        for c in MetricsReport::COLUMNS {
            let _ = write!(s, ",{c}");
        }
        s.push_str(",scale_error\n");
        for name in self.variant_names() {
            let n = self.runs.iter().filter(|r| r.variant == name).count();
            let _ = write!(s, "{name},{n}");
            for k in 0..MetricsReport::COLUMNS.len() {
                let _ = write!(s, ",{}", self.median_of(&name, |r| r.metrics.values()[k]));
            }
            let _ = writeln!(s, ",{}", self.median_of(&name, scale_error));
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("variant,scenario,seed,s_true");
        for c in MetricsReport::COLUMNS {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for r in &self.runs {
            let _ = write!(s, "{},{},{},{}", r.variant, r.scenario, r.seed, r.s_true);
            for v in r.metrics.values() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Relative error of the recovered scale.
pub fn scale_error(r: &AblationRun) -> f64 {
    (r.metrics.scale / r.s_true - 1.0).abs()
}

/// Runs `variants` on every scenario and seed.
pub fn ablation_table(scenarios: &[ScenarioConfig], seeds: &[u64], variants: &[Variant], prior: &GmmPrior, base: &PipelineConfig, bcfg: &BaselineConfig) -> Result<AblationTable> {
    let body = BodyModel::default();
    let mut table = AblationTable::default();
    for sc in scenarios {
        let world = build_world(sc, &body)?;
        let ds = Dataset { version: crate::scenario::DATASET_VERSION, world };
        for &seed in seeds {
            for v in variants {
                let mut cfg = PipelineConfig { ablation: v.ablation, obs_noise: obs_noise_for(&sc.noise), seed, ..base.clone() };
                cfg.sds.rng_seed = seed;
                let r = run_method(v.method, &ds.world.obs, &body, prior, &cfg, bcfg)?;
                let metrics = evaluate_trajectory(&Trajectory::of(&r), &ds)?;
                log::info!("{} {} seed {seed}: w_mpjpe {:.4} scale {:.3}/{}", v.name, sc.name, metrics.w_mpjpe, metrics.scale, sc.s_true);
                table.runs.push(AblationRun { variant: v.name.into(), scenario: sc.name.clone(), seed, s_true: sc.s_true, metrics });
            }
        }
    }
    Ok(table)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<AblationTable> {
    let prior = match &args.prior {
        Some(p) => load_prior(p)?,
        None => train_prior(&TrainingConfig::default(), &BodyModel::default())?.0,
    };
    let mut scenarios = benchmark_scenarios(args.scenarios, args.scenario_seed);
    if let Some(f) = args.frames {
        for sc in &mut scenarios {
            sc.frames = f;
        }
    }
    let mut base = PipelineConfig::default();
    if let Some(n) = args.steps {
        for st in &mut base.stages {
            st.steps = n;
        }
    }
    let table = ablation_table(&scenarios, &args.seeds, &variants(), &prior, &base, &BaselineConfig::default())?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&args.out, table.summary_csv())?;
    if let Some(p) = &args.runs {
        fs::write(p, table.runs_csv())?;
    }
    Ok(table)
}
