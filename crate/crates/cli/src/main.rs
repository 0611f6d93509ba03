use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use scenelift::bundle::{CameraRecord, SceneBundle};
use scenelift::edit::{apply_edits, EditScript};
use scenelift::formats::{read_png_rgb, write_png};
use scenelift::pipeline::{
    evaluate, read_mask_dir, reconstruct, refine_bundle, render_view, spiral_poses, write_frames, EvalConfig,
    GroundTruth, PipelineConfig, LOSS_FILE,
};
use scenelift::providers::{serve, MockSpec, ProtocolProviders, ProvidersConfig};
use scenelift::refine::write_history_csv;
use scenelift::scene::default_camera;
use scenelift::synth::{synthesize, SynthConfig};
use scenelift::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "scenelift", version, about = "Decomposed 3D scenes from a single image")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// providers.json describing the provider executables.
    #[arg(long, global = true)]
    providers: Option<PathBuf>,
    /// JSON configuration for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log filter, e.g. `warn`, `info` or `scenelift=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Build a scene bundle from an image and a directory of obj_XX.png masks.
    Reconstruct {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Stop after the coarse assembly.
        #[arg(long)]
        skip_refine: bool,
    },
    /// Continue refining an existing bundle.
    Refine { bundle: PathBuf },
    /// Hard-render frames of a bundle.
    Render {
        bundle: PathBuf,
        /// Render N poses along the spiral instead of the input pose.
        #[arg(long, conflicts_with = "pose")]
        spiral: Option<usize>,
        /// Camera JSON in the manifest's camera format.
        #[arg(long)]
        pose: Option<PathBuf>,
    },
    /// Apply an edit script to a copy of a bundle.
    Edit { bundle: PathBuf, script: PathBuf },
    /// Compare a bundle with ground-truth views and meshes.
    Eval {
        bundle: PathBuf,
        /// gt.json listing the reference views and meshes.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = scenelift::metrics::SURFACE_SAMPLES)]
        samples: usize,
    },
    /// Write a seeded synthetic scene with ground truth and oracle providers.
    Synth,
    /// Serve one request with a built-in mock; the work directory comes last.
    MockProvider {
        /// Mock spec as JSON, or a path to a JSON file.
        spec: String,
        workdir: PathBuf,
    },
}

fn out_dir(common: &Common) -> anyhow::Result<&Path> {
    match &common.out {
        Some(p) => Ok(p),
        None => Err(Error::InvalidArgument("--out is required".into()).into()),
    }
}

fn pipeline_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    Ok(match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn providers(common: &Common, out: &Path) -> anyhow::Result<ProtocolProviders> {
    let cfg = match &common.providers {
        Some(p) => ProvidersConfig::load(p)?,
        None => return Err(Error::InvalidArgument("--providers is required".into()).into()),
    };
    let work = out.join("provider_work");
    ProtocolProviders::new(cfg, &work).with_context(|| format!("creating {}", work.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Reconstruct {
            image,
            masks,
            skip_refine,
        } => {
            let out = out_dir(common)?;
            let config = pipeline_config(common)?;
            let img = read_png_rgb(&image)?;
            let masks = read_mask_dir(&masks)?;
            let camera = default_camera(img.width(), img.height())?;
            let mut p = providers(common, out)?;
            let stages = out.join("stages");
            let r = reconstruct(&img, &masks, &camera, &mut p, &config, skip_refine, Some(&stages))?;
            r.bundle.save(out)?;
            if !r.history.is_empty() {
                write_history_csv(&out.join(LOSS_FILE), &r.history)?;
            }
            write_png(&out.join("render.png"), &render_view(&r.bundle.scene(), &r.bundle.camera).color)?;
            println!("wrote {} objects to {}", r.bundle.objects.len(), out.display());
        }
        Command::Refine { bundle } => {
            let out = out_dir(common)?;
            let config = pipeline_config(common)?;
            let b = SceneBundle::load(&bundle)?;
            let mut p = providers(common, out)?;
            let (refined, outcome) = refine_bundle(&b, &mut p, &config.refine, Some(&out.join("stages")))?;
            refined.save(out)?;
            write_history_csv(&out.join(LOSS_FILE), &outcome.history)?;
            let last = outcome.history.last().map_or(f64::NAN, |r| r.total);
            println!("refined {} iterations, final loss {last:.6}", config.refine.iterations);
        }
        Command::Render { bundle, spiral, pose } => {
            let out = out_dir(common)?;
            let b = SceneBundle::load(&bundle)?;
            let poses = match (spiral, pose) {
                (Some(n), _) => spiral_poses(&b, n)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                    let rec: CameraRecord =
                        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    vec![rec.to_camera()?]
                }
                (None, None) => vec![b.camera],
            };
            let frames = write_frames(out, &b.scene(), &poses)?;
            println!("rendered {} frames to {}", frames.len(), out.display());
        }
        Command::Edit { bundle, script } => {
            let out = out_dir(common)?;
            if out.canonicalize().ok() == bundle.canonicalize().ok() {
                bail!(Error::InvalidArgument("--out must differ from the source bundle".into()));
            }
            let b = SceneBundle::load(&bundle)?;
            let text = std::fs::read_to_string(&script).with_context(|| script.display().to_string())?;
            let edited = apply_edits(&b, &EditScript::parse(&text)?)?;
            edited.save(out)?;
            println!("{} objects remain", edited.objects.len());
        }
        Command::Eval { bundle, gt, samples } => {
            let b = SceneBundle::load(&bundle)?;
            let truth = GroundTruth::load(&gt)?;
            let base = gt.parent().unwrap_or(Path::new("."));
            let report = evaluate(&b, &truth, base, &EvalConfig { samples, seed: common.seed })?;
            print!("{}", report.to_text());
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
                std::fs::write(out.join("report.txt"), report.to_text())?;
            }
        }
        Command::Synth => {
            let out = out_dir(common)?;
            let config: SynthConfig = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthConfig::default(),
            };
            let s = synthesize(common.seed, &config)?;
            s.write(out, &config)?;
            println!("seed {}: {} ({} objects)", common.seed, s.caption, s.scene.objects.len());
        }
        Command::MockProvider { spec, workdir } => {
            let text = if spec.trim_start().starts_with('{') {
                spec
            } else {
                std::fs::read_to_string(&spec).with_context(|| spec.clone())?
            };
            let mock: MockSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("mock spec: {e}")))?;
            serve(&mock, &workdir).with_context(|| format!("serving {}", workdir.display()))?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_FAILURE;
    };
    match e.root() {
        Error::InvalidArgument(_)
        | Error::Validation(_)
        | Error::Config(_)
        | Error::MissingFiles(_)
        | Error::Format { .. }
        | Error::Json(_) => EXIT_USAGE,
        Error::Provider(_) => EXIT_PROVIDER,
        Error::NumericalFailure { .. } => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

/// The error chain joined with `: `, skipping links already spelled out by
/// the previous one (stage errors embed their source).
fn message(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for link in err.chain() {
        let text = link.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.common.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_wrappers_do_not_hide_the_exit_code() {
        let numerical = Error::NumericalFailure {
            iteration: 3,
            message: "nan".into(),
        }
        .in_stage("refine");
        assert_eq!(exit_code(&numerical.into()), EXIT_NUMERICAL);
        let usage: anyhow::Error = Error::MissingFiles(vec![]).into();
        assert_eq!(exit_code(&usage.context("loading")), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_FAILURE);
    }

    #[test]
    fn stage_messages_are_not_repeated() {
        let e: anyhow::Error = Error::InvalidArgument("bad mask".into()).in_stage("lift").into();
        assert_eq!(message(&e.context("reconstructing")), "reconstructing: stage `lift` failed: invalid argument: bad mask");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
