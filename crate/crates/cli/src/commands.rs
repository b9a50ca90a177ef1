use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use imls_sdf::geometry::{
    load_mesh, load_point_cloud, normalize, save_mesh, save_xyz, MeshFormat, NormalizationTransform, PointCloud,
    PointFormat, TriangleMesh,
};
use imls_sdf::isosurface::{
    marching_cubes, marching_squares, sample_grid, write_contours_csv, write_contours_svg, GridSpec, Polyline,
};
use imls_sdf::metrics::{
    evaluate_thresholds, sample_polylines, sample_surface, MetricsPreset, MetricsReport, SampledSurface,
};
use imls_sdf::mlp::{read_checkpoint, write_checkpoint, Checkpoint, MlpParams};
use imls_sdf::trainer::{ablation_mode, AblationMode, TrainReport, Trainer};
use imls_sdf::{synthetic, Error, Point3};
use log::info;
use serde::Serialize;

use crate::config::{self, MetricArgs, MetricsPlan, Overrides, ResolvedConfig};
use crate::manifest::RunManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Obj,
    Ply,
}

impl OutputFormat {
    fn mesh_format(self) -> MeshFormat {
        match self {
            OutputFormat::Obj => MeshFormat::Obj,
            OutputFormat::Ply => MeshFormat::Ply,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Obj => "obj",
            OutputFormat::Ply => "ply",
        }
    }
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Input point cloud (.xyz, .ply or .obj vertices).
    pub input: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    pub output: PathBuf,
    /// TOML file with any of the training settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Mesh file format.
    #[arg(long, value_enum, default_value = "obj")]
    pub format: OutputFormat,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Train on the raw coordinates instead of the normalized cloud.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Reconstructed mesh.
    pub mesh: PathBuf,
    /// Reference mesh, or a point cloud used as-is.
    pub reference: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for metrics.json and metrics.csv.
    #[arg(short, long, default_value = "out")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Input point cloud.
    pub input: PathBuf,
    /// Modes to compare: full, no_theta, no_psi, no_gni, knn:<k> [default: full,no_theta,no_psi,
    /// or full alone with a coherence sweep].
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<AblationMode>>,
    /// Coherence kernel widths to sweep, comma separated.
    #[arg(long = "sigma-coherence-sweep", value_delimiter = ',')]
    pub sigma_sweep: Vec<f64>,
    /// Reference surface for the metrics; the input cloud is used otherwise.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(short, long, default_value = "out")]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Args, Debug)]
pub struct Demo2dArgs {
    /// Built-in shape (circle, L, square) or a point file with z = 0.
    pub shape: String,
    /// Gaussian noise standard deviation as a fraction of d_P.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Points sampled on a built-in shape.
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    /// Epochs after which a contour snapshot is written.
    #[arg(long, value_delimiter = ',', default_value = "1,10,30,50,100")]
    pub snapshots: Vec<usize>,
    #[arg(short, long, default_value = "out")]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training settings; epochs default to 50 here.
    #[command(flatten)]
    pub overrides: Overrides,
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        }
        .into());
    }
    Ok(())
}

fn point_format(path: &Path) -> anyhow::Result<PointFormat> {
    PointFormat::from_path(path)
        .ok_or_else(|| Error::Config(format!("{}: unrecognized point-cloud extension", path.display())).into())
}

fn mesh_format(path: &Path) -> anyhow::Result<MeshFormat> {
    MeshFormat::from_path(path)
        .ok_or_else(|| Error::Config(format!("{}: unrecognized mesh extension", path.display())).into())
}

fn read_cloud(path: &Path) -> anyhow::Result<PointCloud> {
    require_file(path)?;
    Ok(load_point_cloud(path, point_format(path)?)?)
}

/// Runs `body` between a "running" manifest and a final one that records
/// the outcome, so interrupted runs stay identifiable.
fn with_manifest(
    dir: &Path,
    mut manifest: RunManifest,
    body: impl FnOnce(&mut Vec<PathBuf>) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    manifest.write(dir)?;
    let mut outputs = Vec::new();
    let outcome = body(&mut outputs);
    manifest.outputs = outputs;
    manifest.finish(dir, &outcome)?;
    outcome
}

/// Trains on `cloud`, writing the log to `log_path` and periodic checkpoints
/// to `checkpoint_dir`.
fn train_cloud(
    cloud: &PointCloud,
    config: &ResolvedConfig,
    log_path: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
    resume: Option<&Path>,
    mut observer: impl FnMut(usize, &MlpParams) -> anyhow::Result<()>,
) -> anyhow::Result<(MlpParams, TrainReport, Checkpoint)> {
    let mut train = config.train.clone();
    train.log_path = log_path;
    train.checkpoint_dir = checkpoint_dir.or(train.checkpoint_dir);
    if let Some(d) = &train.checkpoint_dir {
        create_dir(d)?;
    }
    let mut trainer = match resume {
        Some(path) => {
            require_file(path)?;
            Trainer::resume(cloud, train, read_checkpoint(path)?)?
        }
        None => Trainer::new(cloud, train)?,
    };
    let mut failure = None;
    trainer.run(|summary, params| {
        info!(
            "epoch {} loss {:.4e} ({:.1} s, {} steps)",
            summary.epoch, summary.loss, summary.seconds, summary.steps
        );
        if let Err(e) = observer(summary.epoch, params) {
            failure = Some(e);
            return Err(Error::Input("epoch observer failed".into()));
        }
        Ok(())
    })
    .map_err(|e| failure.take().unwrap_or_else(|| e.into()))?;
    let checkpoint = trainer.checkpoint();
    let (params, report) = trainer.finish();
    Ok((params, report, checkpoint))
}

fn extract_mesh(params: &MlpParams, cloud: &PointCloud, config: &ResolvedConfig) -> anyhow::Result<TriangleMesh> {
    let spec = GridSpec::around(&cloud.bbox_min(), &cloud.bbox_max(), config.grid, config.margin, 3);
    let grid = sample_grid(params, &spec)?;
    Ok(marching_cubes(&grid, spec.iso_value))
}

fn extract_contours(params: &MlpParams, cloud: &PointCloud, config: &ResolvedConfig) -> anyhow::Result<(Vec<Polyline>, GridSpec)> {
    let spec = GridSpec::around(&cloud.bbox_min(), &cloud.bbox_max(), config.grid, config.margin, 2);
    let grid = sample_grid(params, &spec)?;
    Ok((marching_squares(&grid, spec.iso_value), spec))
}

fn is_planar(cloud: &PointCloud) -> bool {
    cloud.points().iter().all(|p| p.z == 0.0)
}

pub fn reconstruct(args: &ReconstructArgs) -> anyhow::Result<()> {
    let config = config::load(args.config.as_ref(), &args.overrides)?;
    let raw = read_cloud(&args.input)?;
    if is_planar(&raw) {
        return Err(Error::Config(format!("{} is planar; use demo2d for 2D inputs", args.input.display())).into());
    }
    let (cloud, transform) = if args.no_normalize {
        (raw, NormalizationTransform::identity())
    } else {
        normalize(&raw)?
    };
    create_dir(&args.output)?;
    let mut inputs = vec![args.input.as_path()];
    if let Some(r) = &args.resume {
        require_file(r)?;
        inputs.push(r.as_path());
    }
    let manifest = RunManifest::start("reconstruct", &config, &inputs, config.train.seed)?;
    let out = &args.output;
    with_manifest(out, manifest, |outputs| {
        let log = out.join("train.csv");
        let ckpt_dir = (config.train.checkpoint_every > 0).then(|| out.join("checkpoints"));
        let (params, report, mut checkpoint) =
            train_cloud(&cloud, &config, Some(log.clone()), ckpt_dir, args.resume.as_deref(), |_, _| Ok(()))?;
        outputs.push(log);
        checkpoint.transform = Some(transform);
        let ckpt = out.join("checkpoint");
        write_checkpoint(&ckpt, &checkpoint)?;
        outputs.push(ckpt);
        let mesh = extract_mesh(&params, &cloud, &config)?;
        let mesh_path = out.join(format!("mesh.{}", args.format.extension()));
        save_mesh(&mesh, &transform, &mesh_path, args.format.mesh_format())?;
        outputs.push(mesh_path.clone());
        let report_path = out.join("report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::Io {
            path: report_path.clone(),
            source: e,
        })?;
        outputs.push(report_path);
        println!(
            "{}: {} vertices, {} faces, final loss {:.4e}",
            mesh_path.display(),
            mesh.vertices.len(),
            mesh.triangles.len(),
            report.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
        Ok(())
    })
}

/// Loads a reference surface: meshes are sampled, point clouds used directly.
fn reference_surface(path: &Path, plan: &MetricsPlan, seed: u64) -> anyhow::Result<SampledSurface> {
    require_file(path)?;
    let is_cloud_format = matches!(PointFormat::from_path(path), Some(PointFormat::Xyz));
    if !is_cloud_format {
        if let Some(format) = MeshFormat::from_path(path) {
            let mesh = load_mesh(path, format)?;
            if !mesh.is_empty() {
                return Ok(sample_surface(&mesh, plan.config.sample_count, seed)?);
            }
        }
    }
    let cloud = read_cloud(path)?;
    cloud_surface(&cloud)
}

fn cloud_surface(cloud: &PointCloud) -> anyhow::Result<SampledSurface> {
    let normals = cloud.normals().and_then(|n| {
        let unit: Option<Vec<Point3>> = n.iter().map(|v| v.try_normalize(1e-300)).collect();
        unit
    });
    Ok(SampledSurface::from_points(cloud.points().to_vec(), normals)?)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    convention: &'static str,
    reports: &'a [MetricsReport],
}

fn write_metrics(dir: &Path, reports: &[MetricsReport], outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let convention = reports[0].chamfer_convention.name();
    let json = dir.join("metrics.json");
    let body = serde_json::to_string_pretty(&MetricsFile { convention, reports })?;
    std::fs::write(&json, body).map_err(|e| Error::Io { path: json.clone(), source: e })?;
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let text = r.to_csv();
        csv.push_str(if i == 0 { &text } else { text.split_once('\n').map_or("", |(_, rest)| rest) });
    }
    let csv_path = dir.join("metrics.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::Io { path: csv_path.clone(), source: e })?;
    outputs.push(json);
    outputs.push(csv_path);
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let plan = args.metrics.resolve(MetricsPreset::ShapeNet)?;
    require_file(&args.mesh)?;
    let mesh = load_mesh(&args.mesh, mesh_format(&args.mesh)?)?;
    create_dir(&args.output)?;
    let manifest = RunManifest::start("evaluate", &plan, &[&args.mesh, &args.reference], plan.config.seed)?;
    with_manifest(&args.output, manifest, |outputs| {
        let reference = reference_surface(&args.reference, &plan, plan.config.seed)?;
        let recon = sample_surface(&mesh, plan.config.sample_count, plan.config.seed)?;
        let reports = evaluate_thresholds(&reference, &recon, &plan.config, &plan.thresholds)?;
        write_metrics(&args.output, &reports, outputs)?;
        let r = &reports[0];
        let mut line = format!("cd[{}] {:.6e} hd {:.6e}", r.chamfer_convention.name(), r.cd, r.hd);
        if let Some(nc) = r.nc {
            let _ = write!(line, " nc {nc:.6}");
        }
        for r in &reports {
            let _ = write!(line, " fs@{} {:.6}", r.tau, r.fs);
        }
        println!("{line}");
        Ok(())
    })
}

#[derive(Clone, Debug, Serialize)]
struct AblationRow {
    mode: String,
    sigma_coherence: f64,
    final_loss: f64,
    cd: f64,
    hd: f64,
    nc: Option<f64>,
    fs: f64,
    valid_queries: usize,
    seconds: f64,
}

pub fn ablate(args: &AblateArgs) -> anyhow::Result<()> {
    let base = config::load(args.config.as_ref(), &args.overrides)?;
    let plan = args.metrics.resolve(MetricsPreset::ShapeNet)?;
    let modes = match &args.modes {
        Some(m) if m.is_empty() => return Err(Error::Config("--modes is empty".into()).into()),
        Some(m) => m.clone(),
        None if !args.sigma_sweep.is_empty() => vec![AblationMode::Full],
        None => vec![AblationMode::Full, AblationMode::NoTheta, AblationMode::NoPsi],
    };
    let sigmas = if args.sigma_sweep.is_empty() { vec![None] } else { args.sigma_sweep.iter().map(|&s| Some(s)).collect() };
    let raw = read_cloud(&args.input)?;
    let (cloud, transform) = normalize(&raw)?;
    create_dir(&args.output)?;
    let mut inputs = vec![args.input.as_path()];
    if let Some(r) = &args.reference {
        inputs.push(r.as_path());
    }
    #[derive(Serialize)]
    struct AblationPlan<'a> {
        base: &'a ResolvedConfig,
        modes: Vec<String>,
        sigma_coherence: &'a [f64],
        metrics: &'a MetricsPlan,
    }
    let plan_record = AblationPlan {
        base: &base,
        modes: modes.iter().map(AblationMode::name).collect(),
        sigma_coherence: &args.sigma_sweep,
        metrics: &plan,
    };
    let manifest = RunManifest::start("ablate", &plan_record, &inputs, base.train.seed)?;
    let out = &args.output;
    with_manifest(out, manifest, |outputs| {
        let reference = match &args.reference {
            Some(path) => reference_surface(path, &plan, plan.config.seed)?,
            None => cloud_surface(&raw)?,
        };
        let mut rows = Vec::new();
        for mode in &modes {
            for sigma in &sigmas {
                let mut config = base.clone();
                if let Some(s) = sigma {
                    config.train.imls.sigma_coherence = *s;
                }
                config.train = ablation_mode(&config.train, *mode)?;
                let name = match sigma {
                    Some(s) => format!("{}_sigma{s}", mode.name()),
                    None => mode.name(),
                };
                info!("ablation run {name}");
                let start = Instant::now();
                let (params, report, _) =
                    train_cloud(&cloud, &config, Some(out.join(format!("{name}.train.csv"))), None, None, |_, _| Ok(()))?;
                let mesh = extract_mesh(&params, &cloud, &config)?;
                let world = mesh.transformed(|v| transform.invert(v));
                let mesh_path = out.join(format!("{name}.obj"));
                save_mesh(&mesh, &transform, &mesh_path, MeshFormat::Obj)?;
                outputs.push(mesh_path);
                let recon = sample_surface(&world, plan.config.sample_count, plan.config.seed)?;
                let r = &evaluate_thresholds(&reference, &recon, &plan.config, &plan.thresholds[..1])?[0];
                rows.push(AblationRow {
                    mode: name,
                    sigma_coherence: config.train.imls.sigma_coherence,
                    final_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                    cd: r.cd,
                    hd: r.hd,
                    nc: r.nc,
                    fs: r.fs,
                    valid_queries: report.valid_queries,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
        let mut csv = format!("mode,sigma_coherence,final_loss,cd_{},hd,nc,fs,valid_queries,seconds\n", plan.config.chamfer_convention.name());
        for r in &rows {
            let nc = r.nc.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{:e},{:e},{:e},{},{:e},{},{:.3}",
                r.mode, r.sigma_coherence, r.final_loss, r.cd, r.hd, nc, r.fs, r.valid_queries, r.seconds
            );
        }
        let path = out.join("ablation.csv");
        std::fs::write(&path, &csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        outputs.push(path);
        print!("{csv}");
        Ok(())
    })
}

/// Built-in 2D shapes with a dense reference sampling of the clean outline.
fn builtin_shape(name: &str, n: usize, seed: u64) -> Option<(PointCloud, PointCloud)> {
    const REFERENCE: usize = 10_000;
    match name {
        "circle" => Some((synthetic::circle(n, 1.0, seed), synthetic::circle_even(REFERENCE, 1.0))),
        "square" => Some((synthetic::square(n, 2.0, seed), synthetic::square(REFERENCE, 2.0, seed ^ 0x5eed))),
        "L" | "l" => Some((synthetic::l_shape(n, seed), synthetic::l_shape(REFERENCE, seed ^ 0x5eed))),
        _ => None,
    }
}

pub fn demo2d(args: &Demo2dArgs) -> anyhow::Result<()> {
    let file = args.config.as_ref().map(|p| Overrides::from_file(p)).transpose()?;
    let mut config = config::resolve(file.as_ref(), &args.overrides);
    config.train.mlp.input_dim = 2;
    if args.overrides.epochs.is_none() && file.as_ref().and_then(|f| f.epochs).is_none() {
        config.train.epochs = 50;
    }
    config.train.validate()?;
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(Error::Config(format!("--noise must be non-negative, got {}", args.noise)).into());
    }
    let seed = config.train.seed;
    let (clean, reference, inputs): (PointCloud, PointCloud, Vec<&Path>) = match builtin_shape(&args.shape, args.points, seed) {
        Some((c, r)) => (c, r, Vec::new()),
        None => {
            let path = Path::new(&args.shape);
            if !path.exists() && PointFormat::from_path(path).is_none() {
                return Err(Error::Config(format!("unknown shape '{}' (expected circle, L, square or a point file)", args.shape)).into());
            }
            let cloud = read_cloud(path)?;
            if !is_planar(&cloud) {
                return Err(Error::Config(format!("{}: demo2d needs points with z = 0", path.display())).into());
            }
            (cloud.clone(), cloud, vec![path])
        }
    };
    let cloud = synthetic::add_noise(&clean, args.noise * clean.diagonal(), seed.wrapping_add(1))?;
    create_dir(&args.output)?;
    #[derive(Serialize)]
    struct DemoPlan<'a> {
        shape: &'a str,
        noise: f64,
        points: usize,
        snapshots: &'a [usize],
        config: &'a ResolvedConfig,
    }
    let plan = DemoPlan { shape: &args.shape, noise: args.noise, points: clean.len(), snapshots: &args.snapshots, config: &config };
    let manifest = RunManifest::start("demo2d", &plan, &inputs, seed)?;
    let out = &args.output;
    with_manifest(out, manifest, |outputs| {
        let input_path = out.join("input.xyz");
        save_xyz(&cloud, &input_path)?;
        outputs.push(input_path);
        let mut snapshot_paths = Vec::new();
        let log = out.join("train.csv");
        let (params, _, _) = train_cloud(&cloud, &config, Some(log.clone()), None, None, |epoch, params| {
            if args.snapshots.contains(&epoch) {
                let (lines, spec) = extract_contours(params, &cloud, &config)?;
                let path = out.join(format!("snapshot_epoch_{epoch:04}.svg"));
                write_contours_svg(&lines, &spec, &path)?;
                snapshot_paths.push(path);
            }
            Ok(())
        })?;
        outputs.push(log);
        outputs.append(&mut snapshot_paths);
        let (lines, spec) = extract_contours(&params, &cloud, &config)?;
        let svg = out.join("final.svg");
        write_contours_svg(&lines, &spec, &svg)?;
        let csv = out.join("contours.csv");
        write_contours_csv(&lines, &csv)?;
        outputs.push(svg);
        outputs.push(csv);
        let reference = SampledSurface::from_points(reference.points().to_vec(), None)?;
        let metrics = MetricsPlan {
            config: imls_sdf::metrics::MetricsConfig { sample_count: reference.len(), ..MetricsPreset::ShapeNet.config() },
            thresholds: vec![0.01],
        };
        let cd = if lines.is_empty() {
            log::warn!("no contour was extracted");
            f64::INFINITY
        } else {
            let recon = sample_polylines(&lines, metrics.config.sample_count, metrics.config.seed)?;
            let recon = SampledSurface::from_points(recon.points, None)?;
            let reports = evaluate_thresholds(&reference, &recon, &metrics.config, &metrics.thresholds)?;
            write_metrics(out, &reports, outputs)?;
            reports[0].cd
        };
        println!("chamfer_mean_l2 {cd:.6e} ({} contours)", lines.len());
        Ok(())
    })
}
