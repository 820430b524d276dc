use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionflow::mesh::io::load_mesh;
use lesionflow::synth::{DeformParams, SubjectParams, TemplateKind, TextureMode};
use lesionflow_cli::config::{apply_overrides, RunConfig};
use lesionflow_cli::stages::{self, LocationsFile, Manifest, ReportFile, LOCATIONS_FILE, REPORT_FILE};
use lesionflow_cli::{evaluate, overlay, read_batch, run_batch, synth_cmd};

#[derive(Parser)]
#[command(name = "lesionflow", version, about = "Track skin lesions between two scans of the same body")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic subjects with known ground truth.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Full pipeline: coarse maps, flow refinement and matching.
    Run(RunArgs),
    /// Flow refinement only.
    Flow {
        #[command(subcommand)]
        command: FlowCommand,
    },
    /// Matching from the maps of an earlier `flow solve`.
    Match(ConfigArgs),
    /// Scores runs against ground truth.
    Evaluate(EvaluateArgs),
    /// Writes the template with a colored sphere at every lesion.
    ExportOverlay(OverlayArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    Make(SynthArgs),
}

#[derive(Subcommand)]
enum FlowCommand {
    Solve(ConfigArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Texture {
    Consistent,
    Inconsistent,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "capsule")]
    kind: TemplateKind,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    n_lesions: Option<usize>,
    /// Minimum lesion spacing on the template (mm).
    #[arg(long)]
    spacing: Option<f64>,
    /// RMS registration error of the deformed templates (mm).
    #[arg(long)]
    noise: Option<f64>,
    /// Bend angle (radians).
    #[arg(long, allow_hyphen_values = true)]
    bend: Option<f64>,
    /// Twist angle (radians).
    #[arg(long, allow_hyphen_values = true)]
    twist: Option<f64>,
    /// Bulge amplitude (mm).
    #[arg(long, allow_hyphen_values = true)]
    bulge: Option<f64>,
    #[arg(long)]
    bulges: Option<usize>,
    #[arg(long, value_enum, default_value = "consistent")]
    texture: Texture,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set flow.w_lesion=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output folder; defaults to `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute artifacts that belong to a different configuration.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    config: Option<PathBuf>,
    /// File listing one run config per line; subjects run in parallel.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, conflicts_with = "manifest")]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run output folders.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Ground truth file, overriding the one in the run's config.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OverlayArgs {
    /// Run output folder; supplies template, report and locations.
    #[arg(long, conflicts_with_all = ["template", "report", "locations"])]
    run: Option<PathBuf>,
    #[arg(long, requires_all = ["report", "locations"])]
    template: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Glyph radius (mm).
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Path, set: &[String], out: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(&mut cfg, set)?;
    if let Some(o) = out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn synth(a: SynthArgs) -> Result<()> {
    let defaults = SubjectParams::default();
    let d = DeformParams::default();
    let params = SubjectParams {
        seed: a.seed,
        kind: a.kind,
        resolution: a.resolution.unwrap_or(defaults.resolution),
        deform: DeformParams {
            bend: a.bend.unwrap_or(d.bend),
            twist: a.twist.unwrap_or(d.twist),
            bulge: a.bulge.unwrap_or(d.bulge),
            n_bulges: a.bulges.unwrap_or(d.n_bulges),
        },
        n_lesions: a.n_lesions.unwrap_or(defaults.n_lesions),
        spacing_mm: a.spacing.unwrap_or(defaults.spacing_mm),
        texture_mode: match a.texture {
            Texture::Consistent => TextureMode::Consistent,
            Texture::Inconsistent => TextureMode::Inconsistent,
        },
        registration_noise_mm: a.noise.unwrap_or(defaults.registration_noise_mm),
        noise_length_mm: defaults.noise_length_mm,
    };
    let run = synth_cmd::make(&params, &a.out)?;
    println!("{}", run.display());
    Ok(())
}

fn summarize(report: &ReportFile, cfg: &RunConfig) {
    let r = &report.report;
    println!(
        "{} matches, {} unmatched source, {} unmatched target -> {}",
        r.matches.len(),
        r.unmatched_src.len(),
        r.unmatched_tgt.len(),
        cfg.out_dir.join(REPORT_FILE).display()
    );
}

fn run(a: RunArgs) -> Result<()> {
    if let Some(m) = &a.manifest {
        let configs = read_batch(m)?;
        let mut failed = 0;
        for (p, r) in run_batch(&configs, &a.set, a.force) {
            match r {
                Ok(rep) => println!("{}: {} matches", p.display(), rep.report.matches.len()),
                Err(e) => {
                    failed += 1;
                    eprintln!("{}: {e:#}", p.display());
                }
            }
        }
        if failed > 0 {
            bail!("{failed} of {} subjects failed", configs.len());
        }
        return Ok(());
    }
    let cfg = load_config(a.config.as_ref().expect("clap requires --config"), &a.set, &a.out)?;
    let report = stages::run(&cfg, a.force)?;
    summarize(&report, &cfg);
    Ok(())
}

fn flow_solve(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a.config, &a.set, &a.out)?;
    let field = stages::flow_solve(&cfg, a.force)?;
    println!(
        "field max {:.3} mm -> {}",
        field.max_norm(),
        cfg.out_dir.join(stages::FIELD_FILE).display()
    );
    Ok(())
}

fn match_cmd(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a.config, &a.set, &a.out)?;
    let report = stages::match_only(&cfg, a.force)?;
    summarize(&report, &cfg);
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let e = evaluate::evaluate(&a.runs, a.gt.as_deref())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&e)?);
    } else {
        print!("{}", evaluate::table(&e));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(p: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

fn export_overlay(a: OverlayArgs) -> Result<()> {
    let (template, report, locations, units) = match (&a.run, &a.template) {
        (Some(run), _) => {
            let m = Manifest::load(run)?;
            (m.config.template.clone(), run.join(REPORT_FILE), run.join(LOCATIONS_FILE), m.config.units)
        }
        (None, Some(t)) => (
            t.clone(),
            a.report.clone().expect("clap requires --report"),
            a.locations.clone().expect("clap requires --locations"),
            Default::default(),
        ),
        (None, None) => bail!("pass --run, or --template with --report and --locations"),
    };
    let mesh = load_mesh(&template, units)?;
    let report: ReportFile = read_json(&report)?;
    let locations: LocationsFile = read_json(&locations)?;
    overlay::export_overlay(&mesh, &report, &locations, a.radius, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { command: SynthCommand::Make(a) } => synth(a),
        Command::Run(a) => run(a),
        Command::Flow { command: FlowCommand::Solve(a) } => flow_solve(a),
        Command::Match(a) => match_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ExportOverlay(a) => export_overlay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
