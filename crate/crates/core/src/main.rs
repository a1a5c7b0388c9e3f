use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use photosketch::checkpoint::{inspect_checkpoint, load_checkpoint, save_checkpoint};
use photosketch::config::canonical_eyes;
use photosketch::data::{align_image, generate_toy_dataset, ImageBuffer, ToyDatasetSpec};
use photosketch::eval::{cmc_curve, evaluate_identities, export_report, EvalReport, PartitionResult, Split};
use photosketch::train::{
    distractor_manifest, evaluate_protocol, target_manifest, train_pipeline, PretrainCache, TrainState,
};
use photosketch::{Config, Error, Result};

#[derive(Parser)]
#[command(name = "photosketch", version, about = "Photo/sketch synthesis and cross-modal face matching")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// TOML config file; relative manifest paths resolve against its directory.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Override any config leaf, e.g. `train.step3.weights.lambda_w=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shortcut for `train.seed=<n>`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Photo2sketch,
    Sketch2photo,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural paired photo/sketch dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        identities: usize,
        #[arg(long = "per-id", default_value_t = 4)]
        per_id: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Allow writing into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Run training steps and write checkpoints and loss logs.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "all")]
        step: StepArg,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Start step 2 or 3 from fresh parameters.
        #[arg(long)]
        allow_fresh: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, or train and evaluate over random partitions.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Evaluate this model on every identity of the target manifest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `data.target_manifest`.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Overrides `data.distractor_manifest`.
        #[arg(long)]
        distractors: Option<PathBuf>,
        /// Overrides `eval.partitions`.
        #[arg(long)]
        partitions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate once per value of one config parameter.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate one image with a trained generator.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Which generator to apply; the input modality is not checked.
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long)]
        output: PathBuf,
        /// Eye coordinates `lx,ly,rx,ry` for alignment; without them the
        /// input is center-cropped.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        eyes: Option<Vec<f64>>,
    },
    /// Print checkpoint metadata.
    Inspect { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            identities,
            per_id,
            size,
            seed,
            force,
        } => gen_data(&out, identities, per_id, size, seed, force),
        Command::Train {
            cfg,
            step,
            resume,
            allow_fresh,
            out,
        } => train(&cfg, step, resume.as_deref(), allow_fresh, &out),
        Command::Eval {
            cfg,
            checkpoint,
            target,
            distractors,
            partitions,
            out,
        } => {
            let mut config = load_config(&cfg)?;
            if let Some(t) = target {
                config.data.target_manifest = t.to_string_lossy().into_owned();
            }
            if let Some(d) = distractors {
                config.data.distractor_manifest = d.to_string_lossy().into_owned();
            }
            if let Some(p) = partitions {
                config.eval.partitions = p;
            }
            config.validate()?;
            echo_config(&config, &out)?;
            let report = match checkpoint {
                Some(ckpt) => eval_checkpoint(&config, &ckpt)?,
                None => evaluate_protocol(&config, &mut PretrainCache::new())?,
            };
            finish_report(&report, &out)
        }
        Command::Sweep {
            cfg,
            param,
            values,
            out,
        } => sweep(&cfg, &param, &values, &out),
        Command::Synthesize {
            checkpoint,
            input,
            direction,
            output,
            eyes,
        } => synthesize(&checkpoint, &input, direction, &output, eyes.as_deref()),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    }
}

fn load_config(args: &ConfigArgs) -> Result<Config> {
    let mut config = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::preset(&args.preset)?,
    };
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
    config.validate()?;
    Ok(config)
}

/// Prints the effective config and stores it next to the outputs.
fn echo_config(config: &Config, out: &Path) -> Result<()> {
    let text = config.to_toml_string();
    println!("# effective configuration\n{text}");
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("effective_config.toml"), text)?;
    Ok(())
}

fn gen_data(out: &Path, identities: usize, per_id: usize, size: usize, seed: u64, force: bool) -> Result<()> {
    let spec = ToyDatasetSpec {
        n_identities: identities,
        images_per_identity: per_id,
        image_size: size,
        seed,
    };
    if identities < 2 {
        return Err(Error::Config(format!("--identities must be at least 2, got {identities}")));
    }
    if !force && out.is_dir() && std::fs::read_dir(out)?.next().is_some() {
        return Err(Error::Config(format!(
            "{} is not empty (use --force to write into it)",
            out.display()
        )));
    }
    let ds = generate_toy_dataset(&spec, out)?;
    println!("catalog\t{}", ds.catalog_path.display());
    println!("paired\t{}", ds.paired_path.display());
    println!("photos\t{}", ds.photos_path.display());
    println!("images\t{}", ds.catalog.records.len());
    Ok(())
}

fn train(cfg: &ConfigArgs, step: StepArg, resume: Option<&Path>, allow_fresh: bool, out: &Path) -> Result<()> {
    let mut config = load_config(cfg)?;
    let first = match step {
        StepArg::One => 1,
        StepArg::Two => 2,
        StepArg::Three => 3,
        StepArg::All => config.train.steps[0],
    };
    if !matches!(step, StepArg::All) {
        config.train.steps = vec![first];
    }
    let state = match resume {
        Some(p) => {
            let s: TrainState<f32> = load_checkpoint(p)?;
            if s.config.model != config.model {
                return Err(Error::Config(format!(
                    "model settings differ from those stored in {}",
                    p.display()
                )));
            }
            Some(s)
        }
        None if first > 1 && !allow_fresh => {
            return Err(Error::Config(format!(
                "step {first} needs --resume <checkpoint> (or --allow-fresh to start from scratch)"
            )));
        }
        None => None,
    };
    echo_config(&config, out)?;
    let state = train_pipeline(&config, state, Some(out))?;
    let last = out.join("final.ckpt");
    save_checkpoint(&state, &last)?;
    println!("checkpoint\t{}", last.display());
    Ok(())
}

fn eval_checkpoint(config: &Config, ckpt: &Path) -> Result<EvalReport> {
    let state: TrainState<f32> = load_checkpoint(ckpt)?;
    let target = target_manifest(config)?;
    let distractors = distractor_manifest(config)?;
    let ids: Vec<String> = target.pairing.keys().cloned().collect();
    let results = evaluate_identities(&state.model, &target, &ids, distractors.as_ref(), &config.data)?;
    let cmc = cmc_curve(&results)?;
    Ok(EvalReport {
        ranks: config.eval.ranks.clone(),
        partitions: vec![PartitionResult {
            split: Split {
                train: Vec::new(),
                test: ids,
            },
            cmc: cmc.values,
            excluded: cmc.excluded,
        }],
        config: config.to_toml_string(),
    })
}

fn finish_report(report: &EvalReport, out: &Path) -> Result<()> {
    export_report(report, out)?;
    print!("{}", photosketch::eval::summary_text(report));
    Ok(())
}

fn sweep(cfg: &ConfigArgs, param: &str, values: &[String], out: &Path) -> Result<()> {
    let base = load_config(cfg)?;
    if !Config::valid_paths().iter().any(|p| p == param) {
        return Err(Error::Config(format!(
            "unknown parameter path '{param}'; valid paths: {}",
            Config::valid_paths().join(", ")
        )));
    }
    echo_config(&base, out)?;
    let mut cache = PretrainCache::new();
    let mut rows = String::from("value,rank1_mean,rank10_mean,rank50_mean\n");
    for v in values {
        let mut config = base.clone();
        config.set(param, v)?;
        log::info!("sweep {param}={v}");
        let report = evaluate_protocol(&config, &mut cache)?;
        let dir = out.join(format!("value_{}", sanitize(v)));
        export_report(&report, &dir)?;
        rows.push_str(&format!(
            "{v},{:.6},{:.6},{:.6}\n",
            report.mean(1),
            report.mean(10),
            report.mean(50)
        ));
    }
    std::fs::write(out.join("comparison.csv"), &rows)?;
    print!("{rows}");
    Ok(())
}

fn sanitize(v: &str) -> String {
    v.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn synthesize(
    ckpt: &Path,
    input: &Path,
    direction: Direction,
    output: &Path,
    eyes: Option<&[f64]>,
) -> Result<()> {
    let state: TrainState<f32> = load_checkpoint(ckpt)?;
    let (m, d) = (&state.config.model, &state.config.data);
    let img = ImageBuffer::load_png(input)?;
    let aligned = match eyes {
        Some(e) => {
            let canon = canonical_eyes(d.initial_size, d.eye_height, d.eye_distance);
            align_image(&img, ((e[0], e[1]), (e[2], e[3])), canon, d.initial_size)?
        }
        None => img,
    };
    let crop = aligned.center_crop(m.image_size)?;
    let out = match direction {
        Direction::Photo2sketch => state.model.photo_to_sketch(&crop)?,
        Direction::Sketch2photo => state.model.sketch_to_photo(&crop)?,
    };
    out.save_png(output)?;
    println!("{}", output.display());
    Ok(())
}

fn inspect(ckpt: &Path) -> Result<()> {
    let h = inspect_checkpoint(ckpt)?;
    println!("dtype\t{}", h.dtype);
    println!("byte_order\t{}", h.byte_order);
    println!("step\t{}", h.step);
    println!("epoch\t{}", h.epoch);
    println!("iteration\t{}", h.iteration);
    if let Some(d) = h.adacos_dynamic {
        println!("adacos_dynamic\t{d}");
    }
    for (name, o) in &h.optimizers {
        println!("optimizer\t{name}\tlr={} t={}", o.lr, o.t);
    }
    let mut total = 0u64;
    for t in &h.tensors {
        println!("tensor\t{}\t{:?}", t.name, t.shape);
        total += t.nbytes;
    }
    println!("payload_bytes\t{total}");
    println!("# config\n{}", h.config);
    Ok(())
}
