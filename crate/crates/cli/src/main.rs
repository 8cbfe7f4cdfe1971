use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ducc_core::data::{
    load_image, save_grid, split_train_val, synth_crack_corpus, tile_file, to_working_size, write_corpus,
    AugmentConfig, AugmentParams,
};
use ducc_core::models::{count_params, export_feature_maps, extract_feature_maps, ModelConfig, ModelVariant};
use ducc_core::optim::is_crack;
use ducc_core::seed;
use ducc_core::train::{
    evaluate, history_csv, parse_model_tag, run_ablation, train, Checkpoint, DataSource, TrainConfig,
};
use ducc_core::{Error, Tensor};

#[derive(Parser, Debug)]
#[command(name = "ducc", version, about = "Train, evaluate, and inspect concrete crack classifiers")]
struct Cli {
    /// Seed for every random choice (initialization, shuffling, augmentation, splits).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write checkpoints plus history.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Crack probability for one image.
    Predict {
        image: PathBuf,
        #[arg(long, short)]
        checkpoint: PathBuf,
    },
    /// Cut a large photograph into square tiles.
    Tile {
        mother_image: PathBuf,
        #[arg(long, short, default_value = "tiles")]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        tile: usize,
    },
    /// Write a synthetic corpus with N images per class.
    Synth {
        n: usize,
        #[arg(long, short, default_value = "synth")]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Save a grid of random augmentations of one image.
    AugmentPreview {
        image: PathBuf,
        #[arg(long, short, default_value = "augment-preview.png")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[command(flatten)]
        augment: AugmentArgs,
    },
    /// Export per-filter activations at a named layer as grayscale PNGs.
    FeatureMaps {
        checkpoint: PathBuf,
        image: PathBuf,
        /// Layer id, e.g. stem_bn, deep_b1_conv1, shallow_conv1.
        tap: String,
        #[arg(long, short, default_value = "feature-maps")]
        out: PathBuf,
        /// Also write a tiled overview image.
        #[arg(long)]
        grid: bool,
    },
    /// Train all five variants on one split and print the comparison table.
    Ablation(TrainArgs),
    /// Per-layer parameter counts for a variant.
    Params {
        variant: String,
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset root with cracked/ and non-cracked/ subdirectories.
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Generate N synthetic images per class instead of reading a directory.
    #[arg(long, value_name = "N")]
    synth: Option<usize>,
    /// Side length of generated synthetic images before resizing.
    #[arg(long, default_value_t = 256)]
    synth_size: usize,
}

impl DataArgs {
    fn source(&self, seed: u64) -> DataSource {
        match &self.data {
            Some(root) => DataSource::Directory(root.clone()),
            None => DataSource::Synthetic { n_per_class: self.synth.unwrap_or(200), seed, size: self.synth_size },
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    #[arg(long, default_value_t = 32)]
    filters: usize,
    #[arg(long, default_value_t = 32)]
    dense_units: usize,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            filters: self.filters,
            dense_units: self.dense_units,
            ..ModelConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct AugmentArgs {
    #[arg(long, default_value_t = 25.0)]
    rotation: f64,
    #[arg(long, default_value_t = 0.10)]
    shift: f64,
    #[arg(long, default_value_t = 0.20)]
    zoom: f64,
    #[arg(long, default_value_t = 0.20)]
    intensity: f64,
    #[arg(long)]
    no_flips: bool,
}

impl AugmentArgs {
    fn config(&self, seed: u64) -> AugmentConfig {
        AugmentConfig {
            rot_max_deg: self.rotation,
            shift_frac: self.shift,
            zoom_frac: self.zoom,
            intensity_frac: self.intensity,
            h_flip: !self.no_flips,
            v_flip: !self.no_flips,
            seed,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value = "duccnet")]
    variant: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0005)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Epochs without validation-loss improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Stop once validation accuracy reaches this percentage.
    #[arg(long)]
    target_acc: Option<f64>,
    #[arg(long)]
    no_augment: bool,
    /// Write 0 in the seconds column so histories compare byte-for-byte.
    #[arg(long)]
    no_wall_time: bool,
    #[arg(long, short, default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    augment: AugmentArgs,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig, Error> {
        Ok(TrainConfig {
            variant: self.variant.parse()?,
            model: self.model.config(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: ducc_core::optim::AdamConfig { lr: self.lr, ..Default::default() },
            val_frac: self.val_frac,
            augment: (!self.no_augment).then(|| self.augment.config(seed)),
            seed,
            data: self.data.source(seed),
            output_dir: Some(self.out.clone()),
            patience: (self.patience > 0).then_some(self.patience),
            target_val_acc: self.target_acc,
            target_train_acc: None,
            record_wall_time: !self.no_wall_time,
            eval_batch_size: 32,
        })
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Score only the validation split that training with this seed and
    /// fraction held out.
    #[arg(long)]
    val_split: bool,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
}

fn run(cli: Cli) -> Result<(), Error> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config(seed)?;
            cfg.validate()?;
            let out = train(&cfg)?;
            print!("{}", history_csv(&out.history));
            let best = out.history.iter().map(|r| r.val_acc).fold(0.0, f64::max);
            println!(
                "trained {} on {} samples for {} epochs; best val_acc {best:.2}; artifacts in {}",
                cfg.variant.label(),
                out.train_samples,
                out.history.len(),
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let ck = Checkpoint::load(&args.checkpoint)?;
            let graph = ck.build_graph()?;
            let (_, model) = parse_model_tag(&ck.tag)?;
            let samples = args.data.source(seed).load(model.input_size)?;
            let samples = if args.val_split { split_train_val(samples, args.val_frac, seed)?.1 } else { samples };
            let e = evaluate(&graph, &samples, 32)?;
            println!("samples {}", e.metrics.total());
            println!("loss {:.6}", e.loss);
            println!("va {:.4}", e.accuracy());
            println!("{}", e.confusion());
        }
        Command::Predict { image, checkpoint } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let graph = ck.build_graph()?;
            let (_, model) = parse_model_tag(&ck.tag)?;
            let x = to_working_size(&load_image(&image)?, model.input_size)?;
            let p = graph.infer(&Tensor::stack(&[&x])?)?.data()[0] as f64;
            let label = if is_crack(p) { "cracked" } else { "non-cracked" };
            println!("{}\t{p:.6}\t{label}", image.display());
        }
        Command::Tile { mother_image, out, tile } => {
            let paths = tile_file(&mother_image, &out, tile)?;
            println!("wrote {} tiles to {}", paths.len(), out.display());
        }
        Command::Synth { n, out, size } => {
            let corpus = synth_crack_corpus(n, seed, size)?;
            write_corpus(&corpus, &out)?;
            println!("wrote {n} cracked and {n} non-cracked images to {}", out.display());
        }
        Command::AugmentPreview { image, out, count, augment } => {
            let cfg = augment.config(seed);
            cfg.validate()?;
            let src = load_image(&image)?;
            let mut frames = vec![src.clone()];
            for i in 0..count {
                let mut rng = seed::rng(seed, &[0x9e, i as u64]);
                frames.push(AugmentParams::sample(&cfg, &mut rng).apply(&src)?);
            }
            save_grid(&frames, 3, &out)?;
            println!("wrote original plus {count} augmentations to {}", out.display());
        }
        Command::FeatureMaps { checkpoint, image, tap, out, grid } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let graph = ck.build_graph()?;
            let (_, model) = parse_model_tag(&ck.tag)?;
            let x = to_working_size(&load_image(&image)?, model.input_size)?;
            let maps = extract_feature_maps(&graph, &x, &tap)?;
            let paths = export_feature_maps(&maps, &out, &tap, grid)?;
            println!("wrote {} images to {}", paths.len(), out.display());
        }
        Command::Ablation(args) => {
            let cfg = args.config(seed)?;
            let report = run_ablation(&cfg)?;
            create_dir(&args.out)?;
            write_file(&args.out.join("ablation.csv"), &report.to_csv())?;
            println!("{report}");
        }
        Command::Params { variant, csv, model } => {
            let v: ModelVariant = variant.parse()?;
            let g = ducc_core::models::build_variant::<f32>(v, &model.config(), seed)?;
            let report = count_params(&g);
            if csv {
                print!("{}", report.to_csv());
            } else {
                println!("{} ({})", v.label(), v.tag());
                println!("{report}");
                if let Some(reference) = v.reference_params() {
                    let delta = report.trainable as i64 - reference as i64;
                    println!("reference trainable params: {reference}");
                    println!("delta (engine - reference): {delta:+}");
                }
            }
        }
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })
}

fn write_file(p: &Path, s: &str) -> Result<(), Error> {
    std::fs::write(p, s).map_err(|source| Error::Io { path: p.to_path_buf(), source })
}

/// Usage and configuration problems exit 2, runtime failures exit 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={msg:?}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
