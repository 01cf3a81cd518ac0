//! `gradps`: render synthetic data, train, evaluate and run ablations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gradps::ablation::run_ablation;
use gradps::dataset::{load_dataset, DatasetObject, LoadOptions};
use gradps::evaluate::{evaluate, run_baseline, EvalOptions, EvalSummary};
use gradps::synth::{generate_dataset, BrdfSpec, NoiseSpec, SurfaceKind, SurfaceSpec};
use gradps::train::{train_with_validation, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gradps", version, about = "Gradient-attention photometric stereo toolkit")]
struct Cli {
    /// TOML file with training settings (same fields as the training config).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the seed for rendering, weight init and crop sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Decode datasets on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Keep only the last 76 images of a 96-image "bear" object.
    #[arg(long, global = true)]
    bear_fix: bool,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset in the benchmark directory layout.
    Render(RenderArgs),
    /// Train a model and write per-epoch and best checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Held-out objects; defaults to the training objects.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Score a checkpoint against ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "gt_as_prediction")]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself.
        #[arg(long)]
        gt_as_prediction: bool,
    },
    /// Run the least-squares Lambertian baseline.
    Baseline {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and score rows of the component ablation table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u8, 1, 2, 3, 4, 5, 6, 7, 8])]
        ids: Vec<u8>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Surface {
    Sphere,
    Bumps,
    Wrinkles,
    Plane,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long, value_delimiter = ',', default_value = "sphere")]
    surfaces: Vec<Surface>,
    /// Image height and width in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    lights: usize,
    #[arg(long, default_value_t = 0.8)]
    albedo: f64,
    /// Blinn-Phong specular strength; 0 renders Lambertian.
    #[arg(long, default_value_t = 0.0)]
    specular: f64,
    #[arg(long, default_value_t = 20.0)]
    shininess: f64,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of observations replaced by shadow or saturation outliers.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
}

impl RenderArgs {
    fn surface(&self, surface: Surface) -> SurfaceSpec {
        let kind = match surface {
            Surface::Sphere => SurfaceKind::Sphere {
                radius: 0.45 * self.size as f64,
            },
            Surface::Bumps => SurfaceKind::SinusoidalBumps {
                amplitude: 3.0,
                frequency: 0.05,
            },
            Surface::Wrinkles => SurfaceKind::WrinkleField {
                amplitude: 2.0,
                frequency: 0.04,
            },
            Surface::Plane => SurfaceKind::Plane,
        };
        SurfaceSpec {
            kind,
            height: self.size,
            width: self.size,
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.net.seed = seed;
    }
    Ok(config)
}

fn load(cli: &Cli, root: &Path) -> Result<Vec<DatasetObject>> {
    let options = LoadOptions {
        bear_fix: cli.bear_fix,
        deterministic: cli.deterministic,
    };
    let objects = load_dataset(root, options).with_context(|| format!("loading {}", root.display()))?;
    for o in &objects {
        println!(
            "loaded {}: {} images, {}x{}",
            o.name,
            o.stack.count(),
            o.stack.height(),
            o.stack.width()
        );
    }
    Ok(objects)
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn print_summary(summary: &EvalSummary, out: &Path) {
    print!("{}", summary.table());
    println!("reports written to {}", out.display());
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Render(args) => {
            if args.surfaces.is_empty() {
                bail!("no surfaces requested");
            }
            let brdf = if args.specular > 0.0 {
                BrdfSpec::blinn_phong(args.albedo, args.specular, args.shininess)
            } else {
                BrdfSpec::lambertian(args.albedo)
            };
            let noise = NoiseSpec {
                gaussian_sigma: args.noise,
                outlier_fraction: args.outliers,
                seed: cli.seed.unwrap_or(0),
            };
            let surfaces: Vec<_> = args.surfaces.iter().map(|&s| args.surface(s)).collect();
            let out = out_dir(cli, "data");
            let manifest = generate_dataset(&surfaces, args.lights, &brdf, &noise, &out)?;
            for o in &manifest.objects {
                println!("wrote {}", out.join(&o.name).display());
            }
        }
        Command::Train { data, validation } => {
            let mut config = load_config(cli)?;
            if let Some(out) = &cli.out {
                config.checkpoint_dir = out.clone();
            }
            let train_set = load(cli, data)?;
            let validation_set = match validation {
                Some(path) => load(cli, path)?,
                None => train_set.clone(),
            };
            let summary = train_with_validation(&config, &train_set, &validation_set)?;
            for e in &summary.epochs {
                println!(
                    "epoch {:>3}  loss {:.5}  validation MAE {:.3}",
                    e.epoch, e.mean_loss, e.validation_mae
                );
            }
            println!("best checkpoint: {}", summary.best_checkpoint.display());
            println!("log: {}", summary.log_path.display());
        }
        Command::Eval {
            data,
            checkpoint,
            gt_as_prediction,
        } => {
            let objects = load(cli, data)?;
            let options = EvalOptions {
                gt_as_prediction: *gt_as_prediction,
                expected_config: match &cli.config {
                    Some(_) => Some(load_config(cli)?.net),
                    None => None,
                },
            };
            let checkpoint = checkpoint.clone().unwrap_or_default();
            let out = out_dir(cli, "eval");
            let summary = evaluate(&checkpoint, &objects, &out, &options)?;
            print_summary(&summary, &out);
        }
        Command::Baseline { data } => {
            let objects = load(cli, data)?;
            let out = out_dir(cli, "baseline");
            let summary = run_baseline(&objects, &out)?;
            print_summary(&summary, &out);
        }
        Command::Ablate { data, validation, ids } => {
            let config = load_config(cli)?;
            let train_set = load(cli, data)?;
            let validation_set = match validation {
                Some(path) => load(cli, path)?,
                None => Vec::new(),
            };
            let out = out_dir(cli, "ablation");
            let report = run_ablation(&config, ids, &train_set, &validation_set, &out)?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("gradps: error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
