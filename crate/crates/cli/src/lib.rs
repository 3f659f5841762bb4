//! Command-line front end: argument parsing and command dispatch.
//!
//! Every command writes machine-readable output (JSON, OBJ or `x y z` text)
//! to `--output` or stdout and human-readable summaries to stderr. Failures
//! map to exit code 2 (input), 3 (algorithm) or 4 (contract).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sqkit_core::fit::{fit, FitConfig};
use sqkit_core::mesh::{
    is_watertight, make_mesh, read_mesh, read_points, resample_mesh, sample_surface, voxelize_mesh,
    voxelize_superquadric, write_obj, write_xyz, MeshFile, PointCloud, TriangleMesh, VoxelGrid,
};
use sqkit_core::metrics::{self, JointSet, MetricReport, Solid};
use sqkit_core::splits::{self, FoldsFile, PairSource};
use sqkit_core::{Error, ErrorClass, Superquadric};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ALGORITHM: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;

/// Points drawn from a mesh before fitting.
pub const DEFAULT_FIT_SAMPLES: usize = 4096;

#[derive(Debug, Parser)]
#[command(name = "sqkit", version, about = "Superquadric fitting, meshing, metrics and dataset splits")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the primary output here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Suppress summaries and warnings on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one superquadric to a point cloud or mesh.
    Fit(FitArgs),
    /// Sample surface points from a superquadric.
    Sample(SampleArgs),
    /// Triangulate a superquadric into an OBJ mesh.
    Mesh(MeshArgs),
    /// Write a grid of meshes over shape exponents.
    Sweep(SweepArgs),
    /// Inspect a mesh file.
    Ingest(IngestArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Compositional train/test splits.
    #[command(subcommand)]
    Splits(SplitsCommand),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Point cloud (`x y z` lines) or mesh (OBJ/PLY).
    pub input: PathBuf,
    /// Points drawn uniformly from a mesh input.
    #[arg(long, default_value_t = DEFAULT_FIT_SAMPLES)]
    pub samples: usize,
    /// Fit mesh vertices directly instead of resampling.
    #[arg(long)]
    pub vertices: bool,
    #[arg(long)]
    pub w0: Option<f64>,
    #[arg(long)]
    pub estimate_w0: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub sigma_init: Option<f64>,
    #[arg(long)]
    pub lsq_iters: Option<usize>,
    #[arg(long)]
    pub switch_every: Option<usize>,
    /// Fit on a random subset of at most this many points.
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Omit per-point responsibilities from the report.
    #[arg(long)]
    pub no_responsibilities: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Superquadric JSON.
    pub theta: PathBuf,
    #[arg(long, short, default_value_t = DEFAULT_FIT_SAMPLES)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Superquadric JSON.
    pub theta: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated ε1 values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 1.0, 1.5, 2.0])]
    pub eps1: Vec<f64>,
    /// Comma-separated ε2 values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 1.0, 1.5, 2.0])]
    pub eps2: Vec<f64>,
    /// Scales `ax,ay,az` in mm.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 10.0, 10.0])]
    pub scale: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Directory for the OBJ files; created if missing.
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub input: PathBuf,
    /// Print only whether the mesh is watertight.
    #[arg(long, conflicts_with = "resample")]
    pub check_watertight: bool,
    /// Emit this many area-uniform surface points.
    #[arg(long)]
    pub resample: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Symmetric mean squared nearest-neighbor distance, mm².
    Chamfer {
        a: PathBuf,
        b: PathBuf,
        /// Use unsquared distances (mm).
        #[arg(long)]
        root: bool,
    },
    /// Deepest hand vertex inside the object, mm.
    Penetration {
        /// Hand vertices (points or mesh).
        hand: PathBuf,
        /// Superquadric JSON or watertight mesh.
        object: PathBuf,
    },
    /// Voxelized intersection volume, cm³.
    Volume {
        /// Superquadric JSON or watertight mesh.
        a: PathBuf,
        /// Superquadric JSON or watertight mesh.
        b: PathBuf,
        /// Voxel edge in mm.
        #[arg(long, default_value_t = 5.0)]
        voxel_size: f64,
        /// Voxel edge for `b` if it differs.
        #[arg(long)]
        voxel_size_b: Option<f64>,
    },
    /// Mean end-point error over 21 joints, mm.
    Mepe { pred: PathBuf, gt: PathBuf },
    /// L1 distance between canonical parameter vectors.
    ThetaL1 { a: PathBuf, b: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitMode {
    S0,
    S1,
    S2,
}

#[derive(Debug, Subcommand)]
pub enum SplitsCommand {
    /// Build folds from a JSON-lines manifest.
    Make {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: SplitMode,
        /// Restrict S1 to these nouns.
        #[arg(long, value_delimiter = ',')]
        nouns: Option<Vec<String>>,
        /// S2 pairs as `a+b,c+d`.
        #[arg(long, value_delimiter = ',', conflicts_with = "h2o")]
        pairs: Option<Vec<String>>,
        /// Use the eight published H2O pairs for S2.
        #[arg(long)]
        h2o: bool,
        /// S0 test ids, one per line.
        #[arg(long)]
        test_ids: Option<PathBuf>,
    },
    /// Top-1 accuracy per fold with mean and std.
    Score {
        folds: PathBuf,
        predictions: PathBuf,
        /// JSON-lines `{id, label}` ground truth.
        #[arg(long, conflicts_with = "manifest")]
        labels: Option<PathBuf>,
        /// Take ground truth as `verb noun` from a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

/// Exit code for an error class.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Input => EXIT_INPUT,
        ErrorClass::Algorithm => EXIT_ALGORITHM,
        ErrorClass::Contract => EXIT_CONTRACT,
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

struct Ctx<'a> {
    global: &'a Global,
}

impl Ctx<'_> {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.global.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn emit(&self, text: &str) -> Result<(), Error> {
        match &self.global.output {
            Some(path) => fs::write(path, text)?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())?;
                out.flush()?;
            }
        }
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, value: &T) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.emit(&text)
    }
}

pub fn run(cli: &Cli) -> Result<(), Error> {
    let ctx = Ctx { global: &cli.global };
    match &cli.command {
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Sample(a) => {
            let sq = read_theta(&a.theta)?;
            if a.n == 0 {
                return Err(Error::InvalidParameter("sample count must be at least 1".into()));
            }
            ctx.emit(&write_xyz(&sample_surface(&sq, a.n, ctx.global.seed)))
        }
        Command::Mesh(a) => {
            let sq = read_theta(&a.theta)?;
            ctx.emit(&write_obj(&make_mesh(&sq, a.resolution)))
        }
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Metrics(m) => cmd_metrics(&ctx, m),
        Command::Splits(s) => cmd_splits(&ctx, s),
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| with_path(path, e.into()))
}

fn read_theta(path: &Path) -> Result<Superquadric, Error> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
}

fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_geometry(path: &Path) -> Result<MeshFile, Error> {
    read_mesh(path).map_err(|e| with_path(path, e))
}

fn cmd_fit(ctx: &Ctx, a: &FitArgs) -> Result<(), Error> {
    let cloud = match read_geometry(&a.input)? {
        MeshFile::Points(c) => c,
        MeshFile::Mesh(m) if a.vertices => m.vertex_cloud(),
        MeshFile::Mesh(m) => {
            if !is_watertight(&m) {
                ctx.note(format!(
                    "warning: {} is not watertight; fitting {} points resampled uniformly from its surface",
                    a.input.display(),
                    a.samples
                ));
            }
            resample_mesh(&m, a.samples, ctx.global.seed)?
        }
    };
    let defaults = FitConfig::default();
    let config = FitConfig {
        max_iters: a.max_iters.unwrap_or(defaults.max_iters),
        tol: a.tol.unwrap_or(defaults.tol),
        w0: a.w0.unwrap_or(defaults.w0),
        estimate_w0: a.estimate_w0,
        sigma_init: a.sigma_init,
        lsq_iters: a.lsq_iters.unwrap_or(defaults.lsq_iters),
        switch_every: a.switch_every.unwrap_or(defaults.switch_every),
        seed: ctx.global.seed,
        max_points: a.max_points,
        bounds: None,
    };
    let mut report = fit(&cloud, &config)?;
    let v = report.theta.to_vector();
    ctx.note(format!(
        "fit {} points: eps=({:.3}, {:.3}) scale=({:.2}, {:.2}, {:.2}) sigma={:.3} iterations={} converged={} switched={}",
        cloud.len(),
        v[0],
        v[1],
        v[2],
        v[3],
        v[4],
        report.sigma,
        report.iterations,
        report.converged,
        report.switched
    ));
    if a.no_responsibilities {
        report.responsibilities.clear();
    }
    ctx.emit_json(&report)
}

/// File name of one sweep cell.
pub fn sweep_file_name(eps1: f64, eps2: f64) -> String {
    format!("sq_e1-{eps1:.2}_e2-{eps2:.2}.obj")
}

#[derive(Debug, Serialize)]
struct SweepCell {
    eps1: f64,
    eps2: f64,
    file: String,
    volume: f64,
    watertight: bool,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    scale: [f64; 3],
    resolution: usize,
    cells: Vec<SweepCell>,
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<(), Error> {
    let scale: [f64; 3] = a
        .scale
        .as_slice()
        .try_into()
        .map_err(|_| Error::InvalidParameter(format!("--scale takes 3 values, got {}", a.scale.len())))?;
    let thetas = a
        .eps1
        .iter()
        .flat_map(|&e1| a.eps2.iter().map(move |&e2| (e1, e2)))
        .map(|(e1, e2)| Superquadric::from_parts(e1, e2, scale, [0.0; 3], [0.0; 3]))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&a.outdir)?;
    let mut cells = Vec::with_capacity(thetas.len());
    for sq in &thetas {
        let (e1, e2) = (sq.shape().eps1(), sq.shape().eps2());
        let mesh = make_mesh(sq, a.resolution);
        let file = sweep_file_name(e1, e2);
        fs::write(a.outdir.join(&file), write_obj(&mesh))?;
        cells.push(SweepCell {
            eps1: e1,
            eps2: e2,
            file,
            volume: mesh.volume(),
            watertight: is_watertight(&mesh),
        });
    }
    ctx.note(format!("wrote {} meshes to {}", cells.len(), a.outdir.display()));
    ctx.emit_json(&SweepSummary {
        scale,
        resolution: a.resolution,
        cells,
    })
}

#[derive(Debug, Serialize)]
struct IngestReport {
    vertices: usize,
    faces: usize,
    watertight: bool,
    area: f64,
    volume: Option<f64>,
}

fn cmd_ingest(ctx: &Ctx, a: &IngestArgs) -> Result<(), Error> {
    let mesh = match read_geometry(&a.input)? {
        MeshFile::Mesh(m) => m,
        MeshFile::Points(c) => TriangleMesh::new(c.into_points(), Vec::new())?,
    };
    let watertight = is_watertight(&mesh);
    if a.check_watertight {
        ctx.note(format!("{}: watertight = {watertight}", a.input.display()));
        return ctx.emit_json(&watertight);
    }
    if let Some(n) = a.resample {
        if !watertight {
            ctx.note(format!("warning: {} is not watertight", a.input.display()));
        }
        return ctx.emit(&write_xyz(&resample_mesh(&mesh, n, ctx.global.seed)?));
    }
    ctx.emit_json(&IngestReport {
        vertices: mesh.vertices().len(),
        faces: mesh.faces().len(),
        watertight,
        area: mesh.area(),
        volume: watertight.then(|| mesh.volume()),
    })
}

enum Object {
    Theta(Superquadric),
    Mesh(TriangleMesh),
}

fn read_object(path: &Path) -> Result<Object, Error> {
    if is_json(path) {
        return Ok(Object::Theta(read_theta(path)?));
    }
    match read_geometry(path)? {
        MeshFile::Mesh(m) => Ok(Object::Mesh(m)),
        MeshFile::Points(_) => Err(Error::parse(
            path.display().to_string(),
            0,
            "expected a superquadric JSON or a mesh with faces",
        )),
    }
}

fn voxelize(object: &Object, voxel_size: f64) -> Result<VoxelGrid, Error> {
    match object {
        Object::Theta(sq) => voxelize_superquadric(sq, voxel_size, None),
        Object::Mesh(m) => voxelize_mesh(m, voxel_size, None),
    }
}

fn read_cloud(path: &Path) -> Result<PointCloud, Error> {
    read_points(path).map_err(|e| with_path(path, e))
}

fn read_joints(path: &Path) -> Result<JointSet, Error> {
    JointSet::new(read_cloud(path)?.into_points())
}

fn cmd_metrics(ctx: &Ctx, m: &MetricsCommand) -> Result<(), Error> {
    let report = match m {
        MetricsCommand::Chamfer { a, b, root } => {
            let (ca, cb) = (read_cloud(a)?, read_cloud(b)?);
            if *root {
                MetricReport::new("chamfer_root", metrics::chamfer_root(&ca, &cb)?, "mm")
            } else {
                MetricReport::new("chamfer", metrics::chamfer(&ca, &cb)?, "mm^2")
            }
        }
        MetricsCommand::Penetration { hand, object } => {
            let hand = read_cloud(hand)?;
            let depth = match read_object(object)? {
                Object::Theta(sq) => metrics::penetration_depth(&hand, Solid::Superquadric(&sq))?,
                Object::Mesh(mesh) => metrics::penetration_depth(&hand, Solid::Mesh(&mesh))?,
            };
            MetricReport::new("penetration_depth", depth, "mm")
        }
        MetricsCommand::Volume {
            a,
            b,
            voxel_size,
            voxel_size_b,
        } => {
            let ga = voxelize(&read_object(a)?, *voxel_size)?;
            let gb = voxelize(&read_object(b)?, voxel_size_b.unwrap_or(*voxel_size))?;
            MetricReport::new("intersection_volume", metrics::intersection_volume(&ga, &gb)?, "cm^3")
        }
        MetricsCommand::Mepe { pred, gt } => MetricReport::new("mepe", metrics::mepe(&read_joints(pred)?, &read_joints(gt)?), "mm"),
        MetricsCommand::ThetaL1 { a, b } => {
            MetricReport::new("theta_l1", metrics::theta_l1(&read_theta(a)?, &read_theta(b)?), "")
        }
    };
    ctx.note(format!("{} = {} {}", report.name, report.value, report.units));
    ctx.emit_json(&report)
}

/// Parses `a+b` pair tokens.
pub fn parse_pairs(tokens: &[String]) -> Result<Vec<(String, String)>, Error> {
    tokens
        .iter()
        .map(|t| match t.split_once('+') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => Ok((a.trim().to_string(), b.trim().to_string())),
            _ => Err(Error::parse("--pairs", 0, format!("expected `noun+noun`, got `{t}`"))),
        })
        .collect()
}

fn cmd_splits(ctx: &Ctx, s: &SplitsCommand) -> Result<(), Error> {
    match s {
        SplitsCommand::Make {
            manifest,
            mode,
            nouns,
            pairs,
            h2o,
            test_ids,
        } => {
            let records = splits::read_manifest(&read_text(manifest)?, &manifest.display().to_string())?;
            let folds = match mode {
                SplitMode::S0 => {
                    let path = test_ids
                        .as_ref()
                        .ok_or_else(|| Error::InvalidParameter("--mode s0 needs --test-ids".into()))?;
                    let ids: Vec<String> = read_text(path)?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect();
                    splits::make_s0(&records, &ids)?
                }
                SplitMode::S1 => splits::make_s1(&records, nouns.as_deref())?,
                SplitMode::S2 => {
                    let source = match (pairs, h2o) {
                        (Some(p), _) => PairSource::Explicit(parse_pairs(p)?),
                        (None, true) => PairSource::Explicit(splits::h2o_s2_pairs()),
                        (None, false) => PairSource::Seeded(ctx.global.seed),
                    };
                    splits::make_s2(&records, &source)?
                }
            };
            let mut summary = String::new();
            for f in &folds {
                let _ = write!(summary, "\n  {}: train {} test {}", f.name, f.train_ids.len(), f.test_ids.len());
            }
            ctx.note(format!("{} folds from {} records{summary}", folds.len(), records.len()));
            ctx.emit_json(&FoldsFile { folds })
        }
        SplitsCommand::Score {
            folds,
            predictions,
            labels,
            manifest,
        } => {
            let folds_text = read_text(folds)?;
            let folds_file: FoldsFile = serde_json::from_str(&folds_text)
                .map_err(|e| Error::parse(folds.display().to_string(), e.line(), e.to_string()))?;
            let preds = splits::read_predictions(&read_text(predictions)?, &predictions.display().to_string())?;
            let truth = match (labels, manifest) {
                (Some(l), _) => splits::read_labels(&read_text(l)?, &l.display().to_string())?,
                (None, Some(m)) => splits::manifest_labels(&splits::read_manifest(&read_text(m)?, &m.display().to_string())?),
                (None, None) => return Err(Error::InvalidParameter("score needs --labels or --manifest".into())),
            };
            let summary = splits::score_folds(&folds_file.folds, &preds, &truth)?;
            ctx.note(format!("accuracy {:.4} ± {:.4} over {} folds", summary.mean, summary.std, summary.per_fold.len()));
            ctx.emit_json(&summary)
        }
    }
}
