//! `floorloc` — floor-plan localization from posed depth scans.
//!
//! Subcommands: `localize` (stationary scan → heatmap stack + pose),
//! `track` (heatmap prior + odometry → trajectory), `eval-match`
//! (kernel vs. ray-tracing matcher on perfect observations), and
//! `gen-synthetic` (complete synthetic scenario on disk).
//!
//! All randomized stages honor `--seed`; identical inputs and seed produce
//! byte-identical outputs. Timings go to stderr so output files stay
//! deterministic.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use floorloc::config::RunConfig;
use floorloc::error::Error;
use floorloc::io;
use floorloc::matching::normalize_to_pdf;
use floorloc::pipeline::{self, MatchMethod};
use floorloc::scale::AlignmentMode;
use floorloc::synth::{PlanSpec, ScanSpec};

#[derive(Parser)]
#[command(name = "floorloc", version, about = "Floor-plan indoor localization toolkit")]
struct Cli {
    /// Seed for every randomized stage (RANSAC, Hough, sampling, filter).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Ground,
    Full,
}

impl From<ModeArg> for AlignmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => AlignmentMode::None,
            ModeArg::Ground => AlignmentMode::Ground,
            ModeArg::Full => AlignmentMode::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Kernel,
    Rays,
}

#[derive(Subcommand)]
enum Command {
    /// Localize a stationary scan bundle against a floor plan.
    Localize(LocalizeArgs),
    /// Track an odometry trajectory from a heatmap prior.
    Track(TrackArgs),
    /// Compare layout matchers on ray-cast perfect observations.
    EvalMatch(EvalArgs),
    /// Generate a synthetic plan, scan bundle, and trajectory.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct LocalizeArgs {
    /// Observation bundle directory (manifest.json + depth rasters).
    bundle: PathBuf,
    /// Floor plan file (JSON).
    plan: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Scale alignment mode (default from config: full).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Number of orientation candidates (default from config: 10).
    #[arg(long)]
    orientations: Option<usize>,
    /// Corrective scale factors, comma-separated (default 0.9,1.0,1.1).
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// Honor per-frame depth masks (default).
    #[arg(long, overrides_with = "no_mask")]
    mask: bool,
    /// Ignore per-frame depth masks.
    #[arg(long = "no-mask")]
    no_mask: bool,
}

#[derive(Args)]
struct TrackArgs {
    /// Odometry file: {"steps": [[forward_m, heading_rad], ...]}.
    odometry: PathBuf,
    /// Floor plan file (JSON).
    plan: PathBuf,
    /// Directory holding a `localize` run's output (its heatmap stack).
    #[arg(long, conflicts_with = "bundle")]
    heatmap: Option<PathBuf>,
    /// Observation bundle to localize first, instead of --heatmap.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Ground-truth poses file for metrics: {"poses": [[x, y, theta], ...]}.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Floor plan file; omit to generate one with --gen-seed.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Seed for a generated evaluation plan (used when --plan is absent).
    #[arg(long, default_value_t = 0)]
    gen_seed: u64,
    /// Number of evaluation poses.
    #[arg(long, default_value_t = 10)]
    poses: usize,
    /// Matching method under test.
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Rays per scan for the ray-tracing baseline.
    #[arg(long, default_value_t = 36)]
    rays: usize,
    /// Maximum observation distance in meters.
    #[arg(long, default_value_t = 10.0)]
    max_range: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Plan width in meters.
    #[arg(long, default_value_t = 18.0)]
    width: f64,
    /// Plan height in meters.
    #[arg(long, default_value_t = 14.0)]
    height: f64,
    /// Target room count.
    #[arg(long, default_value_t = 6)]
    rooms: usize,
    /// Trajectory length in steps.
    #[arg(long, default_value_t = 120)]
    steps: usize,
    /// Per-view depth-scale corruption range, e.g. 0.6,1.6 (omit for none).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    corrupt: Option<Vec<f64>>,
    /// Views per scan.
    #[arg(long, default_value_t = 6)]
    views: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse(_) => 2,
        Error::DegenerateGeometry(_) => 3,
        Error::EmptyObservation(_) => 4,
        Error::NoSolution(_) => 5,
        Error::InvalidInput(_) => 6,
        Error::Io(_) => 7,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => io::read_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let seed = cli.seed;
    let mut cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Localize(args) => {
            if let Some(mode) = args.mode {
                cfg.alignment_mode = mode.into();
            }
            if let Some(o) = args.orientations {
                cfg.orientations = o;
            }
            if let Some(s) = args.scales.clone() {
                cfg.scales = s;
            }
            if args.no_mask {
                cfg.use_masks = false;
            }
            cfg.validate()?;
            cmd_localize(&args, &cfg, seed)
        }
        Command::Track(args) => cmd_track(&args, &cfg, seed),
        Command::EvalMatch(args) => cmd_eval(&args, &cfg, seed),
        Command::GenSynthetic(args) => cmd_gen(&args, seed),
    }
}

fn cmd_localize(args: &LocalizeArgs, cfg: &RunConfig, seed: u64) -> Result<(), Error> {
    let t0 = Instant::now();
    let bundle = io::read_bundle(&args.bundle)?;
    let plan = io::read_plan(&args.plan)?;
    eprintln!("[time] load inputs: {:.3}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let outcome = pipeline::localize(&bundle, &plan, cfg, seed, None)?;
    eprintln!("[time] localize: {:.3}s", t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    write_localize_output(&args.out, &outcome, seed)?;
    eprintln!("[time] write outputs: {:.3}s", t2.elapsed().as_secs_f64());
    println!(
        "pose: x={:.3} m, y={:.3} m, theta={:.2}°, score={:.3}",
        outcome.pose.x,
        outcome.pose.y,
        outcome.pose.theta.to_degrees(),
        outcome.pose.score
    );
    Ok(())
}

fn write_localize_output(
    out: &Path,
    outcome: &pipeline::LocalizeOutcome,
    seed: u64,
) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let layout = io::LocalizeLayout::new(out);
    io::write_stack(&layout.stack_dir(), &outcome.stack)?;
    let pdf_dir = layout.pdf_dir();
    std::fs::create_dir_all(&pdf_dir)?;
    for (i, map) in outcome.pdf.maps.iter().enumerate() {
        io::write_pgm(&pdf_dir.join(format!("pdf_{i:02}.pgm")), map)?;
    }
    let result = io::LocalizeResult {
        pose: outcome.pose,
        candidate_thetas: outcome.candidate_thetas.clone(),
        observed_segments: outcome.observed.len(),
        scale_report: outcome.report.clone(),
        seed,
    };
    io::write_json(&layout.result(), &result)
}

fn cmd_track(args: &TrackArgs, cfg: &RunConfig, seed: u64) -> Result<(), Error> {
    let plan = io::read_plan(&args.plan)?;
    let steps = io::read_odometry(&args.odometry)?;
    let truth = args.truth.as_ref().map(|p| io::read_poses(p)).transpose()?;

    let stack = match (&args.heatmap, &args.bundle) {
        (Some(dir), None) => io::read_stack(&io::LocalizeLayout::new(dir).stack_dir())?,
        (None, Some(bundle_dir)) => {
            let bundle = io::read_bundle(bundle_dir)?;
            let t = Instant::now();
            let outcome =
                pipeline::localize(&bundle, &plan, cfg, seed, Some(cfg.orientations_sequential))?;
            eprintln!("[time] localize prior: {:.3}s", t.elapsed().as_secs_f64());
            outcome.stack
        }
        _ => {
            return Err(Error::invalid(
                "pass exactly one of --heatmap (a localize output directory) or --bundle".to_string(),
            ))
        }
    };

    let t = Instant::now();
    let (estimates, metrics, flags) =
        pipeline::track(&stack, &steps, &plan, &cfg.filter, seed, truth.as_deref())?;
    eprintln!("[time] track: {:.3}s", t.elapsed().as_secs_f64());

    std::fs::create_dir_all(&args.out)?;
    io::write_poses(&args.out.join("estimates.json"), &estimates)?;
    let result = io::TrackResult { estimates, metrics, flags, seed };
    io::write_json(&args.out.join("track.json"), &result)?;
    match metrics {
        Some(m) => println!(
            "tracked {} steps: rmse(last 10) = {:.3} m, final error = {:.3} m",
            steps.len(),
            m.rmse_last10,
            m.final_error
        ),
        None => println!("tracked {} steps (no ground truth given)", steps.len()),
    }
    if flags.recoveries > 0 || flags.reinits > 0 {
        println!("warning: {} recoveries, {} reinitializations", flags.recoveries, flags.reinits);
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, cfg: &RunConfig, seed: u64) -> Result<(), Error> {
    let plan = match &args.plan {
        Some(p) => io::read_plan(p)?,
        None => floorloc::synth::gen_floorplan(args.gen_seed, &PlanSpec::default())?,
    };
    let method = match args.method {
        MethodArg::Kernel => MatchMethod::Kernel,
        MethodArg::Rays => MatchMethod::Rays,
    };
    let t = Instant::now();
    let (report, pairs) =
        pipeline::eval_match(&plan, args.poses, method, cfg, seed, args.rays, args.max_range)?;
    eprintln!("[time] eval: {:.3}s", t.elapsed().as_secs_f64());

    std::fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join("report.json"), &report)?;
    let estimates: Vec<_> = pairs.iter().map(|(p, _)| *p).collect();
    let truths: Vec<_> = pairs.iter().map(|(_, t)| *t).collect();
    io::write_poses(&args.out.join("predictions.json"), &estimates)?;
    io::write_poses(&args.out.join("truths.json"), &truths)?;
    println!("{report}");
    Ok(())
}

fn cmd_gen(args: &GenArgs, seed: u64) -> Result<(), Error> {
    if let Some(c) = &args.corrupt {
        if c.len() != 2 || c[0] <= 0.0 || c[1] < c[0] {
            return Err(Error::invalid("--corrupt expects LO,HI with 0 < LO <= HI".to_string()));
        }
    }
    let plan_spec = PlanSpec {
        width: args.width,
        height: args.height,
        rooms: args.rooms,
        ..PlanSpec::default()
    };
    let view_scales = match &args.corrupt {
        Some(c) => {
            // Spread corruption factors deterministically across the range.
            (0..args.views)
                .map(|i| c[0] + (c[1] - c[0]) * splitmix(seed.wrapping_add(i as u64)))
                .collect()
        }
        None => Vec::new(),
    };
    let scan_spec = ScanSpec { n_views: args.views, view_scales, ..ScanSpec::default() };
    let scenario = pipeline::gen_scenario(seed, &plan_spec, &scan_spec, args.steps, 0.5)?;

    std::fs::create_dir_all(&args.out)?;
    io::write_plan(&args.out.join("plan.json"), &scenario.plan)?;
    io::write_bundle(&args.out.join("bundle"), &scenario.bundle)?;
    io::write_odometry(&args.out.join("odometry.json"), &scenario.odometry)?;
    io::write_poses(&args.out.join("truth.json"), &scenario.truth)?;
    io::write_poses(&args.out.join("scan_pose.json"), &[scenario.scan_pose])?;
    println!(
        "scenario written to {}: {} walls, scan at ({:.2}, {:.2}, {:.1}°), {} steps",
        args.out.display(),
        scenario.plan.vector.len(),
        scenario.scan_pose.x,
        scenario.scan_pose.y,
        scenario.scan_pose.theta.to_degrees(),
        scenario.odometry.len()
    );
    Ok(())
}

fn splitmix(mut z: u64) -> f64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
}
