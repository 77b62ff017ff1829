use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use arterylabel::geometry::{read_centerlines, VoxelMask};
use arterylabel::model::Model;
use arterylabel::pipeline::{
    ablate, evaluate, predict, run_gradcheck, train, training_clouds, EpochLog, RunConfig,
};
use arterylabel::synth::{class_name, generate_dataset, load_case, write_dataset, LoadedCase, Manifest};
use arterylabel::{Error, Result};

#[derive(Parser)]
#[command(name = "arterylabel", version, about = "Coronary artery branch labeling with a point transformer")]
struct Cli {
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration (all sections optional).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for dataset generation and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the output directory.
    Synth,
    /// Train on the training split of a dataset.
    Train {
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to score.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Label one mask and, if given, its centerlines.
    Label {
        /// Binary or labeled `.vmask`; only foreground matters.
        #[arg(long)]
        mask: PathBuf,
        /// Centerline JSON; without it only voxel labels are written.
        #[arg(long)]
        centerlines: Option<PathBuf>,
        /// Trained checkpoint.
        #[arg(long)]
        model: PathBuf,
    },
    /// Voxel accuracy as a function of the sampled point count.
    Ablate {
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated point counts (default: from the configuration).
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Finite-difference gradient checks.
    Gradcheck,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_split(dir: &Path, split: Split) -> Result<Vec<LoadedCase>> {
    let manifest = Manifest::read(dir)?;
    let ids: Vec<&String> = match split {
        Split::Train => manifest.train.iter().collect(),
        Split::Test => manifest.test.iter().collect(),
        Split::All => manifest.cases.iter().map(|c| &c.id).collect(),
    };
    if ids.is_empty() {
        return Err(Error::ConfigInvalid(format!("{}: the requested split is empty", dir.display())));
    }
    ids.into_iter().map(|id| load_case(dir, id)).collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.eval.seed = seed;
    }
    config.validate()?;
    let master_seed = cli.seed.unwrap_or(0);
    let threads = cli.threads.max(1);

    match cli.command {
        Command::Synth => {
            let cases = generate_dataset(&config.synth, config.data.count, master_seed, threads)?;
            let manifest = write_dataset(&cli.out, &cases, master_seed, config.data.train)?;
            println!(
                "{} cases ({} train, {} test) written to {}; {:.0}% reach the default point count",
                manifest.cases.len(),
                manifest.train.len(),
                manifest.test.len(),
                cli.out.display(),
                100.0 * manifest.fraction_at_target_voxels
            );
        }
        Command::Train { data } => {
            let cases = load_split(&data, Split::Train)?;
            let clouds = training_clouds(&cases)?;
            create_dir(&cli.out)?;
            let mut model = Model::<f32>::new(config.arch.clone(), config.train.seed)?;
            log::info!(
                "training on {} cases, {} parameters",
                clouds.len(),
                model.params.scalar_count()
            );
            let every = config.train.checkpoint_every;
            let out = cli.out.clone();
            let logs = train(&mut model, &clouds, &config.train, |m, log: &EpochLog| {
                if every > 0 && (log.epoch + 1) % every == 0 {
                    m.save(&out.join(format!("model_epoch{:04}.ckpt", log.epoch + 1)))?;
                }
                Ok(())
            })?;
            model.save(&cli.out.join("model.ckpt"))?;
            write_json(&cli.out.join("train_log.json"), &logs)?;
            let last = logs.last().expect("at least one epoch");
            println!(
                "trained {} epochs: loss {:.5}, point accuracy {:.4}; checkpoint {}",
                logs.len(),
                last.loss,
                last.accuracy,
                cli.out.join("model.ckpt").display()
            );
        }
        Command::Eval { data, model, split } => {
            let model = Model::<f32>::load(&model)?;
            let cases = load_split(&data, split)?;
            let report = evaluate(&model, &cases, &config.eval, threads)?;
            create_dir(&cli.out)?;
            write_json(&cli.out.join("metrics.json"), &report)?;
            print!("{}", report.render());
        }
        Command::Label {
            mask,
            centerlines,
            model,
        } => {
            // Everything is read before anything is written.
            let model = Model::<f32>::load(&model)?;
            let voxels = VoxelMask::read(&mask)?;
            let lines = match &centerlines {
                Some(path) if path.exists() => Some(read_centerlines(path)?),
                Some(path) => {
                    log::warn!("{}: not found; writing the voxel labels only", path.display());
                    None
                }
                None => None,
            };
            let p = predict(
                &model,
                &voxels,
                lines.as_deref(),
                config.eval.sample_count,
                config.eval.seed,
                config.eval.dilation_radius,
            )?;
            create_dir(&cli.out)?;
            let stem = mask
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "mask".into());
            let mask_out = cli.out.join(format!("{stem}.labeled.vmask"));
            p.mask.write(&mask_out)?;
            println!("voxel labels: {}", mask_out.display());
            if let Some(labeling) = &p.branches {
                let branch_out = cli.out.join(format!("{stem}.branches.json"));
                write_json(&branch_out, labeling)?;
                for b in &labeling.branches {
                    match b.class {
                        Some(c) => println!("{:<12} {:<6} overlap {:.3}", b.branch_id, class_name(c), b.overlap_rate),
                        None => println!("{:<12} UNASSIGNED", b.branch_id),
                    }
                }
                println!("branch labels: {}", branch_out.display());
            }
        }
        Command::Ablate { data, counts } => {
            let counts = counts.unwrap_or(config.ablate.counts.clone());
            if counts.is_empty() || counts.contains(&0) {
                return Err(Error::ConfigInvalid("counts must be positive".into()));
            }
            let train_cases = training_clouds(&load_split(&data, Split::Train)?)?;
            let test = load_split(&data, Split::Test)?;
            create_dir(&cli.out)?;
            let out = cli.out.clone();
            let report = ablate(
                &config.arch,
                &config.train,
                &config.eval,
                &counts,
                &train_cases,
                &test,
                threads,
                |count, m| m.save(&out.join(format!("model_n{count}.ckpt"))),
            )?;
            write_json(&cli.out.join("ablation.json"), &report)?;
            print!("{}", report.render());
        }
        Command::Gradcheck => {
            let report = run_gradcheck(master_seed)?;
            print!("{}", report.render());
            if !report.passed() {
                return Err(Error::GradCheck(report.failures().join(", ")));
            }
            println!("all gradient checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
