//! Command-line interface: synthetic data generation, coordinate-map
//! rendering, training, completion, evaluation, and gradient checking.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tripoint::config::RunConfig;
use tripoint::error::{Error, Result};
use tripoint::network::Model;
use tripoint::{ccm, eval, geometry, io, network, synth, train};

#[derive(Parser)]
#[command(
    name = "tripoint",
    version,
    about = "Point cloud completion with tri-plane coordinate-map conditioning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate (complete, partial) synthetic cloud pairs into gt/ and partial/.
    Synth(SynthArgs),
    /// Render the three canonical coordinate maps of a cloud.
    RenderCcm(RenderCcmArgs),
    /// Train a completion model on paired directories.
    Train(TrainArgs),
    /// Complete a partial cloud with a trained model.
    Complete(CompleteArgs),
    /// Score predictions against ground truth, writing a metrics CSV.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, e.g. `--set c=16 --set lr=0.01` (applied after
    /// the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::BadConfig(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Shape family: sphere, box, cylinder, torus, or union-two.
    #[arg(long)]
    family: synth::ShapeFamily,
    /// Number of pairs to generate.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Points in each complete cloud.
    #[arg(long, default_value_t = 2048)]
    gt_points: usize,
    /// Points in each partial cloud.
    #[arg(long, default_value_t = 512)]
    partial_points: usize,
    /// Fraction of the complete cloud the occluder keeps.
    #[arg(long, default_value_t = 0.5)]
    keep: f64,
    /// Gaussian jitter sigma added to partial clouds (0 disables).
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; gets gt/ and partial/ subdirectories.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderCcmArgs {
    /// Input cloud (.xyz or .pcb). Normalized before rendering.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for view_0.ccm, view_1.ccm, view_2.ccm.
    #[arg(long)]
    out: PathBuf,
    /// Image resolution (square).
    #[arg(long, default_value_t = ccm::DEFAULT_CCM_RES)]
    res: usize,
    /// Also write preview images view_N.ppm.
    #[arg(long)]
    ppm: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing partial/ and gt/ with matching filenames.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for logs and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CompleteArgs {
    /// Trained checkpoint (model.gfck). Must match the configured
    /// architecture.
    #[arg(long)]
    model: PathBuf,
    /// Partial input cloud (.xyz or .pcb).
    #[arg(long)]
    input: PathBuf,
    /// Where to write the completed cloud (.xyz or .pcb).
    #[arg(long)]
    out: PathBuf,
    /// Also write the coarse proposal here.
    #[arg(long)]
    coarse: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted clouds.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth clouds with matching filenames.
    #[arg(long)]
    gt: PathBuf,
    /// Optional directory of partial inputs; enables the fidelity column.
    #[arg(long)]
    partial: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference probes per case.
    #[arg(long, default_value_t = 24)]
    probes: usize,
    /// Also check the assembled network blocks (slower).
    #[arg(long)]
    blocks: bool,
}

fn read_cloud(path: &Path) -> Result<geometry::PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pcb") => io::read_pcb(path),
        _ => io::read_xyz(path),
    }
}

fn write_cloud(path: &Path, cloud: &geometry::PointCloud) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        io::ensure_dir(parent)?;
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("pcb") => io::write_pcb(path, cloud),
        _ => io::write_xyz(path, cloud),
    }
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let gt_dir = a.out.join("gt");
    let partial_dir = a.out.join("partial");
    io::ensure_dir(&gt_dir)?;
    io::ensure_dir(&partial_dir)?;
    for i in 0..a.count {
        let spec = synth::SynthSpec {
            family: a.family,
            gt_points: a.gt_points,
            partial_points: a.partial_points,
            keep_fraction: a.keep,
            jitter: a.jitter,
            seed: a.seed.wrapping_add(i as u64),
        };
        let (gt, partial) = synth::generate(&spec)?;
        let name = format!("{}_{i:04}.xyz", a.family);
        io::write_xyz(&gt_dir.join(&name), &gt)?;
        io::write_xyz(&partial_dir.join(&name), &partial)?;
    }
    println!(
        "wrote {} pairs under {} (gt/, partial/)",
        a.count,
        a.out.display()
    );
    Ok(())
}

fn run_render(a: &RenderCcmArgs) -> Result<()> {
    let cloud = read_cloud(&a.input)?;
    let (norm, _, _) = geometry::normalize_canonical(&cloud)?;
    let set = ccm::render_triplane(&norm, a.res, a.res)?;
    io::ensure_dir(&a.out)?;
    for (i, view) in set.views.iter().enumerate() {
        io::write_ccm(&a.out.join(format!("view_{i}.ccm")), view)?;
        if a.ppm {
            io::write_ppm(&a.out.join(format!("view_{i}.ppm")), view)?;
        }
    }
    println!("wrote 3 coordinate maps to {}", a.out.display());
    Ok(())
}

fn load_pairs(data: &Path) -> Result<Vec<(geometry::PointCloud, geometry::PointCloud)>> {
    let partial_dir = data.join("partial");
    let gt_dir = data.join("gt");
    let mut names: Vec<PathBuf> = std::fs::read_dir(&partial_dir)
        .map_err(|e| Error::UnreadableFile {
            path: partial_dir.display().to_string(),
            reason: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("xyz") | Some("pcb")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::BadConfig(format!(
            "no clouds found in {}",
            partial_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(names.len());
    for partial_path in names {
        let file = partial_path.file_name().expect("listed files have names");
        let gt_path = gt_dir.join(file);
        if !gt_path.is_file() {
            return Err(Error::MissingPair(gt_path.display().to_string()));
        }
        pairs.push((read_cloud(&partial_path)?, read_cloud(&gt_path)?));
    }
    Ok(pairs)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let pairs = load_pairs(&a.data)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    io::ensure_dir(&a.out)?;
    std::fs::write(a.out.join("config.txt"), cfg.to_text()).map_err(Error::from)?;
    println!(
        "training on {} pairs, {} parameters, {} iterations",
        pairs.len(),
        model.store.scalar_count(),
        cfg.train.iters
    );
    let summary = train::train(&mut model, &pairs, &cfg.train, &a.out)?;
    println!(
        "loss {:.6} -> {:.6}; checkpoint {}",
        summary.first_loss,
        summary.final_loss,
        summary.checkpoint.display()
    );
    Ok(())
}

fn run_complete(a: &CompleteArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let tensors = io::read_checkpoint(&a.model)?;
    model.store.load_named_tensors(&tensors)?;
    let input = read_cloud(&a.input)?;
    let completion = model.complete(&input)?;
    let last = completion.stages.last().expect("at least one stage");
    write_cloud(&a.out, last)?;
    if let Some(coarse_path) = &a.coarse {
        write_cloud(coarse_path, &completion.coarse)?;
    }
    println!(
        "completed {} -> {} points, wrote {}",
        input.len(),
        last.len(),
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let outcome = eval::evaluate_dirs(&a.pred, &a.gt, a.partial.as_deref(), &a.out)?;
    for (name, rep) in &outcome.rows {
        println!("{}", eval::metric_line(name, rep));
    }
    println!("{}", eval::metric_line("mean", &outcome.mean));
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut reports = tripoint::autodiff::gradcheck::op_suite(a.seed, a.probes)?;
    if a.blocks {
        reports.extend(network::checks::block_suite(a.seed, a.probes)?);
    }
    let mut ok = true;
    for r in &reports {
        println!("{}", r.line());
        ok &= r.pass;
    }
    if !ok {
        return Err(Error::BadConfig(
            "finite-difference check failed; see report lines above".into(),
        ));
    }
    println!("{} cases passed", reports.len());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::RenderCcm(a) => run_render(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Complete(a) => run_complete(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Gradcheck(a) => run_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
