//! Command-line front end: phantom generation, training, inference,
//! evaluation, oracle verification, and stage-count ablation sweeps.
//!
//! Exit status: 0 on success, 1 on argument or configuration errors, 2 on
//! runtime failures (including failed verification suites).

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{load_dataset, write_phantom_dataset, AugmentationRanges, Dataset};
use crate::error::{Error, Result};
use crate::pipeline::{evaluate, infer, train, ErnetModel, ModelManifest, TrainConfig};
use crate::refcheck;

#[derive(Parser, Debug)]
#[command(
    name = "ernet",
    version,
    about = "Jointly trained multi-stage brain extraction and affine registration"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset with ground truth.
    Phantom(PhantomArgs),
    /// Train a model on a dataset of source/target pairs.
    Train(TrainArgs),
    /// Run one source/target pair through a trained model.
    Infer(InferArgs),
    /// Score a model against a dataset that carries ground truth.
    Eval(EvalArgs),
    /// Run the oracle-equivalence and gradient suites.
    Verify(VerifyArgs),
    /// Train and score a grid of stage-count configurations.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// Output directory for the dataset.
    #[arg(long)]
    out: PathBuf,
    /// Number of source volumes to generate.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Volume extents (three values), at least 32 each.
    #[arg(long, num_args = 3, default_values_t = [32, 32, 32])]
    extents: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturbation bound in voxels per axis.
    #[arg(long, default_value_t = 3.0)]
    translation: f64,
    /// Perturbation bound in degrees per axis.
    #[arg(long, default_value_t = 8.0)]
    rotation: f64,
    #[arg(long, default_value_t = 0.95)]
    scale_min: f64,
    #[arg(long, default_value_t = 1.05)]
    scale_max: f64,
}

#[derive(Args, Debug, Default, Clone)]
struct ModelFlags {
    /// Extraction and registration stage counts.
    #[arg(long, num_args = 2, value_names = ["M", "N"])]
    stages: Option<Vec<usize>>,
    /// Mask smoothness weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Sigmoid slope used while training.
    #[arg(long)]
    gamma: Option<f64>,
    /// Local correlation window (odd).
    #[arg(long)]
    window: Option<usize>,
    /// Multiply every layer width by this factor.
    #[arg(long)]
    width_scale: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, mut manifest: ModelManifest) -> ModelManifest {
        if let Some(stages) = &self.stages {
            manifest.stages = [stages[0], stages[1]];
        }
        if let Some(lambda) = self.lambda {
            manifest.lambda = lambda;
        }
        if let Some(gamma) = self.gamma {
            manifest.gamma = gamma;
        }
        if let Some(window) = self.window {
            manifest.ncc_window = window;
        }
        if let Some(scale) = self.width_scale {
            manifest = manifest.with_width_scale(scale);
        }
        manifest
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset: a directory or a manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Optional validation dataset for checkpoint selection.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long, default_value = "checkpoints")]
    out: PathBuf,
    /// JSON config mirroring the model manifest and train settings;
    /// explicit flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    validate_every: Option<u64>,
    /// Resume from a previous last.ern1 checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Enable source augmentation: translation bound in voxels.
    #[arg(long)]
    aug_translate: Option<f64>,
    /// Augmentation rotation bound in degrees.
    #[arg(long)]
    aug_rotate: Option<f64>,
    /// Augmentation scale interval.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    aug_scale: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Model directory (model.json plus weights).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-stage masks and warps.
    #[arg(long)]
    stage_artifacts: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write the per-pair JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the CSV summary here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset to score; defaults to the training data.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
    /// Comma-separated extraction stage counts, e.g. "0,1,5".
    #[arg(long, default_value = "0,1,5")]
    ext_stages: String,
    /// Comma-separated registration stage counts.
    #[arg(long, default_value = "0,1,5")]
    reg_stages: String,
    #[arg(long, default_value_t = 300)]
    iterations: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.25)]
    width_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

/// On-disk config mirroring the model manifest and train settings.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    model: Option<ModelManifest>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn load_config(path: &PathBuf) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(Error::from)
}

fn parse_stage_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad stage count '{s}': {e}")))
        })
        .collect()
}

fn load_nonempty_dataset(path: &PathBuf) -> Result<Dataset> {
    let dataset = load_dataset(path)?;
    if dataset.is_empty() {
        return Err(Error::invalid(format!(
            "{}: dataset is empty",
            path.display()
        )));
    }
    Ok(dataset)
}

fn cmd_phantom(args: &PhantomArgs) -> Result<()> {
    let ranges = AugmentationRanges {
        translation_voxels: args.translation,
        rotation_degrees: args.rotation,
        scale: (args.scale_min, args.scale_max),
    };
    let extents = [args.extents[0], args.extents[1], args.extents[2]];
    write_phantom_dataset(&args.out, args.count, extents, &ranges, args.seed)?;
    println!(
        "wrote {} phantoms at {}x{}x{} under {}",
        args.count,
        extents[0],
        extents[1],
        extents[2],
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    let manifest = args.model.apply(file.model.unwrap_or_default());
    let mut config = file.train.unwrap_or_default();
    config.checkpoint_dir = args.out.clone();
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(every) = args.validate_every {
        config.validate_every = every;
    }
    if args.resume.is_some() {
        config.resume = args.resume.clone();
    }
    if args.aug_translate.is_some() || args.aug_rotate.is_some() || args.aug_scale.is_some() {
        let mut ranges = config.augmentation.unwrap_or(AugmentationRanges::none());
        if let Some(t) = args.aug_translate {
            ranges.translation_voxels = t;
        }
        if let Some(r) = args.aug_rotate {
            ranges.rotation_degrees = r;
        }
        if let Some(s) = &args.aug_scale {
            ranges.scale = (s[0], s[1]);
        }
        config.augmentation = Some(ranges);
    }

    let dataset = load_nonempty_dataset(&args.data)?;
    let validation = args.val.as_ref().map(load_nonempty_dataset).transpose()?;
    let mut model = ErnetModel::new(manifest, crate::data::mix_seed(config.seed, 0x0ddba11))?;
    println!(
        "training stages ({}, {}) on {} pairs for {} iterations (lr {:.1e}, seed {})",
        model.extraction_stages(),
        model.registration_stages(),
        dataset.len(),
        config.iterations,
        config.learning_rate,
        config.seed
    );
    let outcome = train(&mut model, &dataset, validation.as_ref(), &config)?;
    if let Some(row) = outcome.log.last() {
        println!(
            "final loss {:.6} (similarity {:.6}, regularizer {:.6})",
            row.total, row.similarity, row.regularizer_sum
        );
    }
    if let Some((iteration, score)) = outcome.best {
        println!("best validation at iteration {iteration}: combined dice {score:.4}");
    }
    println!("checkpoints under {}", config.checkpoint_dir.display());
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let model = ErnetModel::load(&args.model)?;
    let source = crate::data::read_volume(&args.source)?;
    let target = crate::data::read_volume(&args.target)?;
    let outputs = infer(&model, &source, &target, &args.out, args.stage_artifacts)?;
    println!(
        "wrote {} artifacts under {}",
        outputs.written.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = ErnetModel::load(&args.model)?;
    let dataset = load_nonempty_dataset(&args.data)?;
    let summary = evaluate(&model, &dataset)?;
    println!("pair                     dice_ext  dice_reg  components");
    for (name, report) in &summary.reports {
        println!(
            "{name:<24} {:>8.4} {:>9.4} {:>11}",
            report.dice_ext, report.dice_reg, report.component_count
        );
    }
    println!(
        "mean ± std               {:.4} ± {:.4}   {:.4} ± {:.4}",
        summary.mean_dice_ext, summary.std_dice_ext, summary.mean_dice_reg, summary.std_dice_reg
    );
    if let Some(err) = summary.mean_translation_error {
        println!("mean displacement error  {err:.3} voxels");
    }
    if summary.skipped > 0 {
        println!("skipped {} pairs without ground truth", summary.skipped);
    }
    if let Some(path) = &args.out {
        std::fs::write(path, summary.to_json()?).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, summary.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let results = refcheck::run_all_suites(args.seed);
    let mut all_passed = true;
    for suite in &results {
        let status = if suite.passed() { "PASS" } else { "FAIL" };
        println!(
            "[{status}] {} ({} cases): worst {:.3e}, threshold {:.0e}",
            suite.name, suite.cases, suite.worst, suite.threshold
        );
        all_passed &= suite.passed();
    }
    if all_passed {
        println!("all suites passed (seed {})", args.seed);
        Ok(())
    } else {
        Err(Error::invalid("verification suites failed"))
    }
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let dataset = load_nonempty_dataset(&args.data)?;
    let test = match &args.test {
        Some(path) => load_nonempty_dataset(path)?,
        None => {
            eprintln!("warning: no --test dataset; scoring on the training data");
            dataset.clone()
        }
    };
    let ext_stages = parse_stage_list(&args.ext_stages)?;
    let reg_stages = parse_stage_list(&args.reg_stages)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut csv = String::from("ext_stages,reg_stages,dice_ext,dice_reg\n");
    println!("ext  reg  dice_ext  dice_reg");
    for &m in &ext_stages {
        for &n in &reg_stages {
            let mut manifest = ModelManifest::default()
                .with_stages(m, n)
                .with_width_scale(args.width_scale);
            if let Some(lambda) = args.lambda {
                manifest.lambda = lambda;
            }
            if let Some(gamma) = args.gamma {
                manifest.gamma = gamma;
            }
            let mut model =
                ErnetModel::new(manifest, crate::data::mix_seed(args.seed, 0x0ddba11))?;
            let config = TrainConfig {
                learning_rate: args.lr,
                iterations: if m == 0 && n == 0 { 0 } else { args.iterations },
                seed: args.seed,
                checkpoint_dir: args.out.join(format!("stages_{m}_{n}")),
                ..TrainConfig::default()
            };
            if config.iterations > 0 {
                train(&mut model, &dataset, None, &config)?;
            }
            let summary = evaluate(&model, &test)?;
            println!(
                "{m:>3} {n:>4} {:>9.4} {:>9.4}",
                summary.mean_dice_ext, summary.mean_dice_reg
            );
            csv.push_str(&format!(
                "{m},{n},{:.6},{:.6}\n",
                summary.mean_dice_ext, summary.mean_dice_reg
            ));
        }
    }
    let csv_path = args.out.join("ablation.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!("grid written to {}", csv_path.display());
    Ok(())
}

fn validate(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(args) => {
            if args.extents.len() != 3 {
                return Err(Error::invalid("--extents takes exactly three values"));
            }
            if args.scale_min > args.scale_max {
                return Err(Error::invalid("--scale-min must not exceed --scale-max"));
            }
        }
        Command::Train(args) => {
            if let Some(stages) = &args.model.stages {
                if stages.len() != 2 {
                    return Err(Error::invalid("--stages takes exactly two values"));
                }
            }
            if let Some(scale) = &args.aug_scale {
                if scale.len() != 2 || scale[0] > scale[1] {
                    return Err(Error::invalid("--aug-scale takes MIN MAX with MIN <= MAX"));
                }
            }
        }
        Command::Ablate(args) => {
            parse_stage_list(&args.ext_stages)?;
            parse_stage_list(&args.reg_stages)?;
        }
        _ => {}
    }
    Ok(())
}

/// Parse and dispatch. Returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    if let Err(err) = validate(&cli) {
        eprintln!("error: {err}");
        return 1;
    }
    let outcome = match &cli.command {
        Command::Phantom(args) => cmd_phantom(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}
