//! `silcomp`: dataset generation, two-stage training, inference,
//! standalone calibration and evaluation.
//!
//! On failure the last line on stderr is `error[<category>]: <message>` and
//! the exit code is nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use silcomp::autodiff::Stage;
use silcomp::calibrator::{calibrate, calibrate_multi, cross_view_outliers};
use silcomp::dataset::formats::{read_camera, read_pgm, read_xyz, write_xyz};
use silcomp::dataset::{build_dataset, DatasetConfig, Manifest, ShapeKind, Split, MANIFEST_FILE};
use silcomp::geometry::{resample_to, CameraTransform, PointCloud};
use silcomp::network::Ablation;
use silcomp::pipeline::{
    evaluate_objects, load_split, summarize_results, train, Checkpoint, EvalOptions, RunConfig, TrainView,
};
use silcomp::silhouette::SilhouetteImage;

#[derive(Parser)]
#[command(name = "silcomp", version, about = "Point cloud completion supervised by silhouettes")]
struct Cli {
    /// JSON file: a dataset config for `gen-data`, a run config otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(GenData),
    /// Train the coarse stage, then the offset predictor.
    Train(Train),
    /// Complete one partial cloud.
    Infer(Infer),
    /// Snap a cloud into one or more silhouettes.
    Calibrate(Calibrate),
    /// Per-view CD of a checkpoint on a dataset split.
    Eval(Eval),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    /// Sampled 2D points per silhouette.
    #[arg(long)]
    m: Option<usize>,
    /// Points per ground-truth and partial cloud.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    test_objects: Option<usize>,
    /// Comma-separated shape kinds, cycled over objects.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    #[arg(long)]
    save_dense: bool,
}

#[derive(Args)]
struct Train {
    /// Directory for checkpoints and the CSV log.
    #[arg(long)]
    out: PathBuf,
    /// Dataset manifest (overrides the config).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Start from the reduced desk-scale configuration instead of the full one.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    epochs_csr: Option<usize>,
    #[arg(long)]
    epochs_vsr: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Cycle the input view over all views instead of always using view 0.
    #[arg(long)]
    random_view: bool,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ViewFiles {
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    silhouette: PathBuf,
    /// Extra calibration views as `camera.json,silhouette.pgm`; the main
    /// view is applied last.
    #[arg(long = "view", value_name = "CAMERA,SILHOUETTE")]
    views: Vec<String>,
}

impl ViewFiles {
    fn load(&self) -> Result<(CameraTransform, SilhouetteImage, Vec<(CameraTransform, SilhouetteImage)>)> {
        let cam = read_camera(&self.camera).with_context(|| format!("reading {}", self.camera.display()))?;
        let sil = read_pgm(&self.silhouette).with_context(|| format!("reading {}", self.silhouette.display()))?;
        let mut all = Vec::new();
        for spec in &self.views {
            let Some((c, s)) = spec.split_once(',') else {
                bail!(silcomp::Error::Invalid(format!("--view expects CAMERA,SILHOUETTE, got {spec:?}")));
            };
            all.push((read_camera(Path::new(c))?, read_pgm(Path::new(s))?));
        }
        all.push((cam.clone(), sil.clone()));
        Ok((cam, sil, all))
    }
}

#[derive(Args)]
struct Infer {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    partial: PathBuf,
    #[command(flatten)]
    view: ViewFiles,
    #[arg(long)]
    out: PathBuf,
    /// Coarse stage only: no calibration, no offsets.
    #[arg(long)]
    csr_only: bool,
}

#[derive(Args)]
struct Calibrate {
    #[arg(long)]
    cloud: PathBuf,
    #[command(flatten)]
    view: ViewFiles,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablate {
    /// Coarse output only.
    NoVsr,
    /// Zero image features.
    NoIfb,
    /// No view calibration.
    NoVc,
    /// No offset predictor.
    NoOffsets,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Calibration views (defaults to the run config's value).
    #[arg(long)]
    calibration_views: Option<usize>,
    #[arg(long, value_enum)]
    ablate: Vec<Ablate>,
    /// Directory of reference `.xyz` clouds for minimal matching distance.
    #[arg(long)]
    mmd: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| silcomp::Error::Invalid(format!("{}: {e}", path.display())).into())
}

fn gen_data(cli: &Cli, args: &GenData) -> Result<()> {
    let mut config: DatasetConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut config.objects, args.objects);
    set(&mut config.views, args.views);
    set(&mut config.m, args.m);
    set(&mut config.points, args.points);
    set(&mut config.image_size, args.image_size);
    set(&mut config.test_objects, args.test_objects);
    if let Some(kinds) = &args.kinds {
        config.kinds = kinds.iter().map(|k| ShapeKind::parse(k)).collect::<silcomp::Result<_>>()?;
    }
    config.save_dense |= args.save_dense;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let manifest = build_dataset(&config, &args.out)?;
    println!("wrote {} objects to {}", manifest.objects.len(), args.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn run_config(cli: &Cli, desk: bool) -> Result<RunConfig> {
    let mut run = match &cli.config {
        Some(p) => read_json(p)?,
        None if desk => RunConfig::desk(),
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    Ok(run)
}

fn cmd_train(cli: &Cli, args: &Train) -> Result<()> {
    let mut run = run_config(cli, args.desk)?;
    if let Some(d) = &args.dataset {
        run.dataset = d.clone();
    }
    if let Some(e) = args.epochs_csr {
        run.epochs_csr = e;
    }
    if let Some(e) = args.epochs_vsr {
        run.epochs_vsr = e;
    }
    if let Some(b) = args.batch_size {
        run.batch_size = b;
    }
    if args.random_view {
        run.train_view = TrainView::Cycle;
    }
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let out = train(&run, &args.out, resume)?;
    for e in &out.epochs {
        println!("{:?} epoch {:>3}  proj {:.6}  total {:.6}", e.stage, e.epoch, e.projection(), e.total);
    }
    println!("checkpoint: {:?} epoch {}; log: {}", out.checkpoint.stage, out.checkpoint.epoch, out.log_path.display());
    Ok(())
}

fn cmd_infer(args: &Infer) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    if ck.stage != Stage::Vsr && !args.csr_only {
        bail!(silcomp::Error::Invalid("checkpoint has no trained offset predictor; pass --csr-only".into()));
    }
    let model = ck.model()?;
    let partial = read_xyz(&args.partial)?;
    let (_, sil, views) = args.view.load()?;
    let p_in = resample_to(&partial, model.config.n, 0)?;
    let ablation = if args.csr_only { Ablation::csr_only() } else { Ablation::full() };
    let out = model.complete(&p_in, &sil.to_image(), &views, ablation)?;
    write_xyz(&args.out, &out.p_out)?;
    println!("wrote {} points to {}", out.p_out.len(), args.out.display());
    Ok(())
}

fn cmd_calibrate(args: &Calibrate) -> Result<()> {
    let cloud = read_xyz(&args.cloud)?;
    let (cam, sil, views) = args.view.load()?;
    let out = if views.len() == 1 {
        let (out, report) = calibrate(&cloud, &cam, &sil)?;
        println!("K_before {} K_after {}", report.k_before, report.k_after);
        out
    } else {
        let before = cross_view_outliers(&cloud, &views)?;
        let out = calibrate_multi(&cloud, &views, &(0..views.len()).collect::<Vec<_>>())?;
        let after = cross_view_outliers(&out, &views)?;
        println!("views {} cross-view outliers before {before} after {after}", views.len());
        out
    };
    write_xyz(&args.out, &out)?;
    Ok(())
}

fn reference_clouds(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "xyz"));
    paths.sort();
    if paths.is_empty() {
        bail!(silcomp::Error::Empty);
    }
    paths.iter().map(|p| Ok(read_xyz(p)?)).collect()
}

fn cmd_eval(args: &Eval) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let manifest = Manifest::load(&args.manifest)?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let objects = load_split(&manifest, split, &model.config)?;
    let mut ablation = Ablation::full();
    if ck.stage != Stage::Vsr {
        ablation.offsets = false;
    }
    for a in &args.ablate {
        match a {
            Ablate::NoVsr => ablation = Ablation { ifb: ablation.ifb, ..Ablation::csr_only() },
            Ablate::NoIfb => ablation.ifb = false,
            Ablate::NoVc => (ablation.first_vc, ablation.second_vc) = (false, false),
            Ablate::NoOffsets => ablation.offsets = false,
        }
    }
    let options = EvalOptions { calibration_views: args.calibration_views.unwrap_or(ck.config.calibration_views), ablation };
    let refs = args.mmd.as_deref().map(reference_clouds).transpose()?;
    let results = evaluate_objects(&model, &objects, &options, refs.as_deref())?;
    let summary = summarize_results(&objects, &results)?;
    fs::write(&args.out, summary.to_csv())?;
    print!("{}", summary.to_table());
    Ok(())
}

fn category(e: &anyhow::Error) -> &'static str {
    if let Some(e) = e.downcast_ref::<silcomp::Error>() {
        return e.category();
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    e.chain().find_map(|c| c.downcast_ref::<silcomp::Error>()).map_or("error", |e| e.category())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[invalid_argument]: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::GenData(a) => gen_data(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Infer(a) => cmd_infer(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {message}", category(&e));
            ExitCode::FAILURE
        }
    }
}
