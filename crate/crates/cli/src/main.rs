//! `rccn` command-line tool: scene synthesis, training, evaluation,
//! prediction, gradient checking and variant ablation.

use clap::{Args, Parser, Subcommand};
use rccn::data::{generate_dataset, generate_samples, load_dataset, read_ppm, render, write_dmap, write_ppm, SceneSample};
use rccn::model::{load, save, tiny_objective, CheckTarget};
use rccn::tensor::{gradcheck, Tensor, DEFAULT_STEP};
use rccn::train::{ablate, curve_csv, evaluate, train, EvalOptions, ExperimentConfig, TrainOptions};
use rccn::{Error, ModelState, Variant};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Largest relative error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "rccn", version, about = "Regression-classification cascaded depth network")]
struct Cli {
    /// Experiment configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the world, training and gradient-check seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for `predict`'s depth map).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic scene set to disk.
    Synth,
    /// Run the staged training protocol.
    Train(TrainArgs),
    /// Score a trained model on the dataset.
    Eval(EvalArgs),
    /// Predict a depth map for one PPM image.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients on a tiny network.
    Gradcheck(GradcheckArgs),
    /// Train every variant over several seeds and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Print progress every this many iterations (0 = quiet).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Clamp prediction and ground truth to the depth range.
    #[arg(long)]
    cap: bool,
    /// Score only this central fraction of each axis.
    #[arg(long)]
    center_crop: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Also write a false-colour rendering of the depth map.
    #[arg(long)]
    color: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "RCCN")]
    variant: Variant,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Number of seeds, counting up from the base seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Held-out scenes rendered after the training scenes.
    #[arg(long, default_value_t = 16)]
    heldout: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::NonFinite(_) | Error::Diverged { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn runtime(message: String) -> Failure {
    Failure { code: 2, message }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.world.seed = seed;
        cfg.train.seed = seed;
    }
    let out = cli.out.clone();
    match cli.command {
        Command::Synth => synth(&cfg, out),
        Command::Train(args) => run_train(&cfg, out, &args),
        Command::Eval(args) => run_eval(&cfg, out, &args),
        Command::Predict(args) => predict(out, &args),
        Command::Gradcheck(args) => run_gradcheck(cli.seed.unwrap_or(7), &args),
        Command::Ablate(args) => run_ablate(&cfg, out, &args),
    }
}

fn out_dir(out: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    out.or_else(|| cfg.paths.output.clone()).unwrap_or_else(|| PathBuf::from("runs"))
}

/// The configured dataset directory, or freshly rendered scenes.
fn samples(cfg: &ExperimentConfig) -> Result<Vec<SceneSample>, Failure> {
    match &cfg.paths.dataset {
        Some(dir) if dir.join(rccn::data::MANIFEST_FILE).exists() => Ok(load_dataset(dir)?.1),
        _ => Ok(generate_samples(&cfg.world)?),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn synth(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out
        .or_else(|| cfg.paths.dataset.clone())
        .unwrap_or_else(|| PathBuf::from("data"));
    let manifest = generate_dataset(&cfg.world, &dir)?;
    println!("wrote {} scenes to {}", manifest.samples.len(), dir.display());
    Ok(())
}

fn run_train(cfg: &ExperimentConfig, out: Option<PathBuf>, args: &TrainArgs) -> Result<(), Failure> {
    let dir = out_dir(out, cfg);
    let data = samples(cfg)?;
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.clone()),
        log_every: args.log_every,
    };
    let (model, report) = train(cfg, &data, &opts)?;
    let model_path = dir.join("model.rccn");
    save(&model, &model_path)?;
    std::fs::write(dir.join("curve.csv"), curve_csv(&report.curve)).map_err(|e| Error::Io {
        path: dir.join("curve.csv"),
        source: e,
    })?;
    let metrics = evaluate(&model, &data, &EvalOptions::default())?;
    write_json(&dir.join("train_metrics.json"), &metrics)?;
    println!(
        "trained {} for {:?} iterations in {:.1}s; train RMSE_log {:.4}; model at {}",
        model.spec.variant,
        report.stage_iters,
        report.wall_seconds,
        metrics.best().rmse_log,
        model_path.display()
    );
    Ok(())
}

fn run_eval(cfg: &ExperimentConfig, out: Option<PathBuf>, args: &EvalArgs) -> Result<(), Failure> {
    let model = load(&args.model)?;
    let opts = EvalOptions {
        cap: args.cap,
        center_crop: args.center_crop,
    };
    let reports = evaluate(&model, &samples(cfg)?, &opts)?;
    let text = serde_json::to_string_pretty(&reports).map_err(Error::from)?;
    println!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        write_json(&dir.join("eval.json"), &reports)?;
    }
    Ok(())
}

fn predict(out: Option<PathBuf>, args: &PredictArgs) -> Result<(), Failure> {
    let model = load(&args.model)?;
    let (h, w, rgb) = read_ppm(&args.input)?;
    let image = planar_image(&model, h, w, &rgb)?;
    let depth = model.predict(&image)?;
    let depth32: Vec<f32> = depth.data().iter().map(|&d| d as f32).collect();
    let path = out.unwrap_or_else(|| args.input.with_extension("dmap"));
    write_dmap(&path, h, w, &depth32, &vec![true; h * w])?;
    println!("wrote {}", path.display());
    if let Some(color) = &args.color {
        let (a, b) = (model.scheme.min_depth, model.scheme.max_depth);
        write_ppm(color, h, w, &false_color(&depth32, a, b))?;
        println!("wrote {}", color.display());
    }
    Ok(())
}

/// Interleaved RGB to the `1×3×H×W` layout the network reads.
fn planar_image(model: &ModelState, h: usize, w: usize, rgb: &[f32]) -> Result<Tensor, Failure> {
    if (h, w) != (model.spec.input_height, model.spec.input_width) {
        return Err(Failure {
            code: 1,
            message: format!(
                "image is {h}×{w} but the model expects {}×{}",
                model.spec.input_height, model.spec.input_width
            ),
        });
    }
    let plane = h * w;
    Ok(Tensor::from_fn(&[1, 3, h, w], |i| rgb[(i % plane) * 3 + i / plane] as f64))
}

/// Log-depth mapped onto a blue (near) to red (far) ramp.
fn false_color(depth: &[f32], min_depth: f64, max_depth: f64) -> Vec<f32> {
    let span = (max_depth / min_depth).ln();
    depth
        .iter()
        .flat_map(|&d| {
            let t = (((d as f64) / min_depth).ln() / span).clamp(0.0, 1.0) as f32;
            let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
            let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
            let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
            [r, g, b].map(|c| (c * 255.0).round() / 255.0)
        })
        .collect()
}

fn run_gradcheck(seed: u64, args: &GradcheckArgs) -> Result<(), Failure> {
    let start = std::time::Instant::now();
    let mut obj = tiny_objective(args.variant, CheckTarget::Cascade, seed)?;
    let report = gradcheck(&mut obj, DEFAULT_STEP)?;
    for (name, err) in &report.per_parameter_errors {
        println!("{name:<14} {err:.3e}");
    }
    println!(
        "max rel error {:.3e} ({} variant, seed {seed}, {:.1}s)",
        report.max_rel_error,
        args.variant,
        start.elapsed().as_secs_f64()
    );
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(runtime(format!(
            "max rel error {:.3e} is not below {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

fn run_ablate(cfg: &ExperimentConfig, out: Option<PathBuf>, args: &AblateArgs) -> Result<(), Failure> {
    if args.seeds == 0 {
        return Err(Failure {
            code: 1,
            message: "--seeds must be at least 1".into(),
        });
    }
    let dir = out_dir(out, cfg);
    let train_set = samples(cfg)?;
    let first = cfg.world.n_samples as u64;
    let heldout = (first..first + args.heldout as u64)
        .map(|i| render(&cfg.world, i))
        .collect::<rccn::Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..args.seeds).map(|i| cfg.train.seed + i).collect();
    let result = ablate(
        cfg,
        &train_set,
        &heldout,
        &Variant::ALL,
        &seeds,
        &[Variant::Rccn],
        &TrainOptions::default(),
    )?;
    result.write(&dir)?;
    print!("{}", result.table());
    println!("results in {}", dir.display());
    Ok(())
}
