//! Command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::fidelity::{compare, write_reports_csv, SsimParams};
use crate::flowopt::{default_candidates, expected_layers, export_schedule, optimize_schedule};
use crate::neuralfield::{read_checkpoint, SirenConfig, SirenNet};
use crate::plot::{heatmap_svg, line_chart_svg, write_svg};
use crate::recon::{
    default_weight_phis, reconstruct, weight_curve, write_weight_curve_csv, ReconRequest,
    ScalarField,
};
use crate::regalign::{
    cpd_rigid_z, extract_depth_map, fit_plane, level_volume, surface_points, CpdConfig, CpdResult,
    PlaneFit,
};
use crate::sampler::{flatten, named_seed, DomainBounds, DEFAULT_PHI_RANGE};
use crate::sdfconv::{normalize_sdf, occupancy_to_sdf, DistanceMode};
use crate::synthgen::{
    generate_dataset, load_manifest_volumes, MorphologyModel, ShapeSpec, DEFAULT_FLOW_RATES,
    MANIFEST_FILE,
};
use crate::trainer::{train_with_output, TrainConfig, TrainMode, TrainOutput};
use crate::voxvol::{read_vgrid, write_vgrid, GridKind, GridMeta, VoxelGrid, WeightParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const THREADS_ENV: &str = "FIELDFORGE_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dims: [32; 3],
            voxel_size_mm: [1.0; 3],
            origin_mm: [0.0; 3],
        }
    }
}

impl GridConfig {
    pub fn meta(&self) -> crate::Result<GridMeta> {
        Ok(
            GridMeta::new(self.dims, self.voxel_size_mm, GridKind::Occupancy)?
                .with_origin(self.origin_mm),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterConfig {
    pub cpd: CpdConfig,
    pub max_points: usize,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            cpd: CpdConfig::default(),
            max_points: 2000,
        }
    }
}

/// Everything a pipeline run needs. Every field has a default, so `{}` is a
/// valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; per-module seeds are derived from it by name.
    pub seed: u64,
    pub shape: ShapeSpec,
    pub morphology: MorphologyModel,
    pub grid: GridConfig,
    pub flow_rates: Vec<f64>,
    pub phi_range: [f64; 2],
    pub train: TrainConfig,
    pub net: SirenConfig,
    pub ssim: SsimParams,
    pub weight: WeightParams,
    pub weight_phis: Vec<f64>,
    pub candidates: Vec<f64>,
    pub register: RegisterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: ShapeSpec::default(),
            morphology: MorphologyModel::default(),
            grid: GridConfig::default(),
            flow_rates: DEFAULT_FLOW_RATES.to_vec(),
            phi_range: DEFAULT_PHI_RANGE,
            train: TrainConfig::default(),
            net: SirenConfig::default(),
            ssim: SsimParams::default(),
            weight: WeightParams::default(),
            weight_phis: default_weight_phis(),
            candidates: default_candidates(),
            register: RegisterConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Written next to every trained checkpoint; reconstruction commands read it to
/// recover the normalization box and field kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub checkpoint: PathBuf,
    pub bounds: DomainBounds,
    pub dims: [usize; 3],
    pub mode: TrainMode,
}

pub const MODEL_CARD_FILE: &str = "model.json";
pub const CHECKPOINT_FILE: &str = "model.srnc";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// Prefixes the message with the file it concerns.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{p}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{p}: {m}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = match &e {
            Error::Io(io) => io.to_string(),
            other => other.to_string(),
        };
        match e {
            Error::Io(_)
            | Error::CorruptHeader(_)
            | Error::PayloadMismatch { .. }
            | Error::UnknownDtype(_)
            | Error::Csv(_) => CliError::Io(msg),
            Error::Json(_)
            | Error::InvalidInput(_)
            | Error::ShapeMismatch(_)
            | Error::OutOfBounds(_)
            | Error::Invariant(_) => CliError::Config(msg),
            Error::Degenerate(_) | Error::NonFiniteGradient { .. } | Error::Diverged { .. } => {
                CliError::Numeric(msg)
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fieldforge",
    version,
    about = "Flow-rate-conditioned neural fields for printed geometry"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Occupancy,
    Sdf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelize the configured shape at every flow rate.
    Generate,
    /// Fit a neural field to a generated dataset.
    Train {
        /// Dataset manifest (defaults to `<out>/manifest.json`).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Dense reconstruction at one flow rate.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        phi: f64,
        #[arg(long, num_args = 3)]
        dims: Option<Vec<usize>>,
    },
    /// SSIM and L1 between two volumes.
    Evaluate { a: PathBuf, b: PathBuf },
    /// Digital weight of the reconstruction across flow rates.
    WeightCurve {
        #[arg(long)]
        model: PathBuf,
        /// Evaluate at half the training resolution.
        #[arg(long)]
        half: bool,
    },
    /// Per-layer flow-rate schedule against the configured shape.
    Optimize {
        #[arg(long)]
        model: PathBuf,
    },
    /// Level two scans and align them with rigid CPD.
    Register { source: PathBuf, target: PathBuf },
}

/// Parses `args` (including the program name), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns its primary output path.
pub fn execute(cli: &Cli) -> Result<PathBuf, CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a pool configured earlier in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg, out),
        Command::Train {
            manifest,
            lambda,
            mode,
            epochs,
        } => {
            if let Some(l) = lambda {
                cfg.train.lambda = *l;
            }
            if let Some(m) = mode {
                cfg.train.mode = match m {
                    ModeArg::Occupancy => TrainMode::Occupancy,
                    ModeArg::Sdf => TrainMode::Sdf,
                };
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            let manifest = manifest.clone().unwrap_or_else(|| out.join(MANIFEST_FILE));
            cmd_train(&cfg, &manifest, out)
        }
        Command::Reconstruct { model, phi, dims } => {
            let dims = match dims.as_deref() {
                Some(&[x, y, z]) => Some([x, y, z]),
                Some(_) => return Err(CliError::Config("--dims takes three values".into())),
                None => None,
            };
            cmd_reconstruct(model, *phi, dims, out)
        }
        Command::Evaluate { a, b } => cmd_evaluate(&cfg, a, b, out),
        Command::WeightCurve { model, half } => cmd_weight_curve(&cfg, model, *half, out),
        Command::Optimize { model } => cmd_optimize(&cfg, model, out),
        Command::Register { source, target } => cmd_register(&cfg, source, target, out),
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    generate_dataset(
        &cfg.shape,
        &cfg.morphology,
        &cfg.grid.meta()?,
        &cfg.flow_rates,
        out,
    )?;
    Ok(out.join(MANIFEST_FILE))
}

pub fn cmd_train(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let (_, mut volumes) =
        load_manifest_volumes(manifest).map_err(|e| CliError::from(e).at(manifest))?;
    let first = volumes
        .first()
        .ok_or_else(|| CliError::Config(format!("{} lists no volumes", manifest.display())))?;
    let dims = first.dims();
    let bounds = DomainBounds::from_meta(first.meta(), cfg.phi_range)?;
    if cfg.train.mode == TrainMode::Sdf {
        volumes = volumes
            .iter()
            .map(|v| {
                let phi = v.meta().flow_rate_percent;
                Ok(
                    normalize_sdf(&occupancy_to_sdf(v, DistanceMode::Auto)?, false)?
                        .with_flow_rate(phi),
                )
            })
            .collect::<crate::Result<Vec<_>>>()?;
    }
    let dataset = flatten(&volumes, &bounds)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = named_seed(cfg.seed, "train");
    let mut net_cfg = cfg.net.clone();
    net_cfg.final_activation = train_cfg.mode.final_activation();
    let output = TrainOutput {
        checkpoint_path: Some(out.join(CHECKPOINT_FILE)),
        divergence_path: Some(out.join("model.diverged.srnc")),
    };
    let (_, report) = train_with_output(&dataset, &train_cfg, &net_cfg, &output)?;
    report.write_json(out.join("train_report.json"))?;
    report.write_loss_csv(out.join("loss.csv"))?;
    let card = ModelCard {
        checkpoint: PathBuf::from(CHECKPOINT_FILE),
        bounds,
        dims,
        mode: train_cfg.mode,
    };
    let card_path = out.join(MODEL_CARD_FILE);
    write_json(&card, &card_path)?;
    Ok(card_path)
}

fn read_grid(path: &Path) -> Result<VoxelGrid, CliError> {
    read_vgrid(path).map_err(|e| CliError::from(e).at(path))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(card_path: &Path) -> Result<(ModelCard, SirenNet<f32>), CliError> {
    let text = fs::read_to_string(card_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", card_path.display())))?;
    let card: ModelCard = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", card_path.display())))?;
    let ckpt = card_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&card.checkpoint);
    let net = read_checkpoint::<f32>(&ckpt).map_err(|e| CliError::from(e).at(&ckpt))?;
    Ok((card, net))
}

pub fn cmd_reconstruct(
    model: &Path,
    phi: f64,
    dims: Option<[usize; 3]>,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let (card, net) = load_model(model)?;
    let req = ReconRequest::new(phi, dims.unwrap_or(card.dims), card.bounds);
    let r = reconstruct(&net, &req)?;
    write_vgrid(&r.field, out.join(format!("field_phi{phi}.vgrid")))?;
    let path = out.join(format!("recon_phi{phi}.vgrid"));
    write_vgrid(&r.occupancy, &path)?;
    Ok(path)
}

pub fn cmd_evaluate(cfg: &RunConfig, a: &Path, b: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let (ga, gb) = (read_grid(a)?, read_grid(b)?);
    let report = compare(
        &ga,
        &gb,
        (&a.display().to_string(), &b.display().to_string()),
        &cfg.ssim,
    )?;
    write_reports_csv(std::slice::from_ref(&report), out.join("metrics.csv"))?;
    let path = out.join("metrics.json");
    report.write_json(&path)?;
    Ok(path)
}

pub fn cmd_weight_curve(
    cfg: &RunConfig,
    model: &Path,
    half: bool,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let (card, net) = load_model(model)?;
    let dims = if half {
        card.dims.map(|d| (d / 2).max(2))
    } else {
        card.dims
    };
    let curve = weight_curve(&net, &card.bounds, dims, &cfg.weight_phis, cfg.weight)?;
    let svg = line_chart_svg(
        &curve,
        "Digital weight vs flow rate",
        "flow rate (%)",
        "weight (g)",
    )?;
    write_svg(&svg, out.join("weight_curve.svg"))?;
    let path = out.join("weight_curve.csv");
    write_weight_curve_csv(&curve, &path)?;
    Ok(path)
}

pub fn cmd_optimize(cfg: &RunConfig, model: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let (card, net) = load_model(model)?;
    let meta = cfg.grid.meta()?;
    if meta.dims != card.dims {
        return Err(CliError::Config(format!(
            "grid dims {:?} differ from the model's training dims {:?}",
            meta.dims, card.dims
        )));
    }
    let expected = expected_layers(&cfg.shape, &cfg.morphology, &meta)?;
    let field: &dyn ScalarField = &net;
    let (schedule, grid) =
        optimize_schedule(field, &expected, &cfg.candidates, &card.bounds, card.dims)?;
    let csv_path = out.join("schedule.csv");
    export_schedule(&schedule, &csv_path, out.join("schedule.gcode"))?;
    grid.write_csv(out.join("landscape.csv"))?;
    let svg = heatmap_svg(
        &grid.values,
        schedule.candidate_range,
        [0.0, (card.dims[2] - 1) as f64],
        "Fitness landscape",
        "flow rate (%)",
        "layer",
    )?;
    write_svg(&svg, out.join("landscape.svg"))?;
    Ok(csv_path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub source_plane: PlaneFit,
    pub target_plane: PlaneFit,
    pub cpd: CpdResult,
}

pub fn cmd_register(
    cfg: &RunConfig,
    source: &Path,
    target: &Path,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let (src, dst) = (read_grid(source)?, read_grid(target)?);
    let sp = fit_plane(&extract_depth_map(&src), src.meta())?;
    let tp = fit_plane(&extract_depth_map(&dst), dst.meta())?;
    let (src_l, dst_l) = (level_volume(&src, &sp), level_volume(&dst, &tp));
    let seed = named_seed(cfg.seed, "register");
    let a = surface_points(&src_l, cfg.register.max_points, seed);
    let b = surface_points(&dst_l, cfg.register.max_points, seed ^ 1);
    let cpd = cpd_rigid_z(&a, &b, &cfg.register.cpd)?;
    write_vgrid(&src_l, out.join("source_leveled.vgrid"))?;
    write_vgrid(&dst_l, out.join("target_leveled.vgrid"))?;
    let path = out.join("registration.json");
    write_json(
        &RegistrationReport {
            source_plane: sp,
            target_plane: tp,
            cpd,
        },
        &path,
    )?;
    Ok(path)
}
