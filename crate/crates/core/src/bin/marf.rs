//! `marf`: image filtering, pose import, radiance-field training and
//! bootstrap uncertainty over a workspace directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marf::config::{Budget, PipelineConfig};
use marf::fetch::FetchOptions;
use marf::image::load_image;
use marf::pipeline::{Pipeline, StageName, StageRecord, StageStatus, Workspace};
use marf::synthetic::{write_dataset, BoxScene, Orbit};
use marf::train::{format_db, psnr};
use marf::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "marf", version, about = "Neural radiance fields from planetary imagery")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline configuration (TOML with [inputs], [filter], [train],
    /// [evaluation], [search] and [bootstrap] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Workspace directory holding every stage's outputs.
    #[arg(long, global = true, env = "MARF_WORKSPACE")]
    workspace: Option<PathBuf>,

    /// Seed for ray sampling, jitter, initialization and view splits.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Single-threaded, step-bounded training with bit-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Training budget: a duration (90s, 5m, 1h) or a step count (2000).
    #[arg(long, global = true)]
    budget: Option<Budget>,

    /// Background colour composited behind every ray, as r,g,b in [0, 1].
    #[arg(long, global = true, value_parser = parse_rgb)]
    background: Option<[f64; 3]>,

    /// Worker threads for training and rendering (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    filter: FilterOverrides,
}

/// Filter thresholds. Blur is the variance of the Laplacian measured on
/// intensities scaled to 0..255.
#[derive(Args, Debug)]
struct FilterOverrides {
    /// Reject files smaller than this many bytes.
    #[arg(long, global = true)]
    min_file_bytes: Option<u64>,
    #[arg(long, global = true)]
    min_width: Option<usize>,
    #[arg(long, global = true)]
    min_height: Option<usize>,
    /// Maximum perceptual-hash Hamming distance between duplicates.
    #[arg(long, global = true)]
    phash_threshold: Option<u32>,
    /// Minimum Laplacian variance on 0..255 intensities.
    #[arg(long, global = true)]
    blur_threshold: Option<f64>,
    /// Saturation outlier distance, in standard deviations.
    #[arg(long, global = true)]
    histogram_std: Option<f64>,
    /// Share of outlier pixels that rejects an image.
    #[arg(long, global = true)]
    histogram_fraction: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download the URL manifest into the workspace's raw/ directory.
    Fetch {
        /// URL manifest; overrides [inputs].urls.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
    },
    /// Run the filter bank over the raw images or [inputs].images.
    Filter {
        /// Image list, one path per line; overrides [inputs].images.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Import poses from a COLMAP text model or a scene manifest.
    ImportPoses {
        /// Directory with cameras.txt and images.txt.
        #[arg(long, conflicts_with = "scene")]
        colmap: Option<PathBuf>,
        /// Directory the model's image names resolve against.
        #[arg(long, requires = "colmap")]
        images: Option<PathBuf>,
        /// Scene manifest (scene.json) to import as is.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Train the radiance field on the imported scene.
    Train,
    /// Render the held-out views and tabulate their PSNR.
    Render,
    /// Print the PSNR between two images of the same shape.
    Psnr { reference: PathBuf, test: PathBuf },
    /// Random search over learning rate, table size, levels and samples.
    Search {
        #[arg(long)]
        trials: Option<usize>,
        /// Budget of each trial; overrides [search].trial_budget.
        #[arg(long)]
        trial_budget: Option<Budget>,
    },
    /// Train bootstrap replicas for uncertainty estimation.
    Bootstrap {
        #[arg(long)]
        replicas: Option<usize>,
        /// Resample views with replacement for each replica.
        #[arg(long)]
        resample_views: bool,
    },
    /// Render mean and sigma frames along a path through the scene.
    Flythrough {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run several stages in order, skipping those whose inputs are unchanged.
    Run {
        /// Comma-separated stages.
        #[arg(long, value_delimiter = ',', default_value = "filter,train,render,bootstrap")]
        stages: Vec<StageName>,
    },
    /// Write the procedural box scene as a posed dataset.
    Synth {
        /// Output directory (images/ and scene.json).
        dir: PathBuf,
        #[arg(long, default_value_t = 24)]
        views: usize,
        /// Image width and height in pixels.
        #[arg(long, default_value_t = 64)]
        size: u32,
    },
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|v| (0.0..=1.0).contains(v)) => Ok([r, g, b]),
        [_, _, _] => Err("channels must lie in [0, 1]".into()),
        _ => Err(format!("expected r,g,b, got `{s}`")),
    }
}

fn load_config(global: &Global) -> Result<PipelineConfig> {
    let mut c = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        c.train.seed = seed;
    }
    if global.deterministic {
        c.train.deterministic = true;
    }
    if let Some(b) = global.budget {
        b.apply(&mut c.train);
    }
    if let Some(bg) = global.background {
        c.train.render.background = bg;
    }
    if let Some(t) = global.threads {
        c.train.threads = t;
    }
    let f = &global.filter;
    let fc = &mut c.filter;
    if let Some(v) = f.min_file_bytes {
        fc.min_file_bytes = v;
    }
    if let Some(v) = f.min_width {
        fc.min_width = v;
    }
    if let Some(v) = f.min_height {
        fc.min_height = v;
    }
    if let Some(v) = f.phash_threshold {
        fc.phash_hamming_threshold = v;
    }
    if let Some(v) = f.blur_threshold {
        fc.blur_threshold = v;
    }
    if let Some(v) = f.histogram_std {
        fc.histogram_std_multiplier = v;
    }
    if let Some(v) = f.histogram_fraction {
        fc.histogram_pixel_fraction = v;
    }
    Ok(c)
}

fn report(records: &[StageRecord]) {
    for r in records {
        let status = match r.status {
            StageStatus::Ran => "done",
            StageStatus::Skipped => "unchanged, skipped",
        };
        println!("{}: {status} ({:.1}s)", r.stage, r.wall_seconds);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    match &cli.command {
        Command::Psnr { reference, test } => {
            let p = psnr(&load_image(reference)?, &load_image(test)?)?;
            println!("{}", format_db(p));
            return Ok(());
        }
        Command::Synth { dir, views, size } => {
            if *views == 0 || *size == 0 {
                return Err(Error::Argument("views and size must be positive".into()));
            }
            let mut orbit = Orbit::default();
            orbit.intrinsics = orbit.intrinsics.resized(*size, *size);
            let m = write_dataset(&BoxScene::default(), &orbit, &orbit.circle(*views), dir)?;
            println!("wrote {} views to {}", m.entries.len(), dir.join("scene.json").display());
            return Ok(());
        }
        Command::Fetch { manifest, .. } => {
            if manifest.is_some() {
                config.inputs.urls = manifest.clone();
            }
        }
        Command::Filter { images } => {
            if images.is_some() {
                config.inputs.images = images.clone();
            }
        }
        Command::ImportPoses { colmap, images, scene } => {
            if colmap.is_some() {
                config.inputs.colmap_model = colmap.clone();
                config.inputs.colmap_images = images.clone();
                config.inputs.scene = None;
            } else if scene.is_some() {
                config.inputs.scene = scene.clone();
                config.inputs.colmap_model = None;
            }
        }
        Command::Search { trials, trial_budget } => {
            if let Some(t) = trials {
                config.search.trials = *t;
            }
            if let Some(b) = trial_budget {
                config.search.trial_budget = match b {
                    Budget::Seconds(s) => format!("{s}s"),
                    Budget::Steps(n) => n.to_string(),
                };
            }
        }
        Command::Bootstrap { replicas, resample_views } => {
            if let Some(b) = replicas {
                config.bootstrap.replicas = *b;
            }
            config.bootstrap.resample_views |= resample_views;
        }
        Command::Flythrough { frames: Some(f) } => config.bootstrap.flythrough_frames = *f,
        _ => {}
    }
    let root = cli
        .global
        .workspace
        .clone()
        .or_else(|| config.workspace.clone())
        .ok_or_else(|| Error::Config("no workspace: pass --workspace, set MARF_WORKSPACE or [workspace]".into()))?;
    if config.train.threads > 0 {
        // Later pools would ignore this; the first wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.train.threads)
            .build_global();
    }
    let command: Vec<String> = std::env::args().collect();
    let pipeline = Pipeline::new(config, Workspace::open(root)?, command.join(" "))?;
    let records = match cli.command {
        Command::Fetch { concurrency, .. } => {
            let options = FetchOptions {
                concurrency,
                ..FetchOptions::default()
            };
            let (record, fetched) = pipeline.fetch(&options)?;
            print!("{}", fetched.to_table());
            vec![record]
        }
        Command::Filter { .. } => vec![pipeline.filter()?],
        Command::ImportPoses { .. } => vec![pipeline.import_poses()?],
        Command::Train => vec![pipeline.train()?],
        Command::Render => {
            let r = pipeline.render()?;
            let table = pipeline.workspace().psnr_table_path();
            print!("{}", std::fs::read_to_string(&table).unwrap_or_default());
            vec![r]
        }
        Command::Search { .. } => vec![pipeline.search()?],
        Command::Bootstrap { .. } => vec![pipeline.bootstrap()?],
        Command::Flythrough { .. } => vec![pipeline.flythrough()?],
        Command::Run { stages } => pipeline.run(&stages)?,
        Command::Psnr { .. } | Command::Synth { .. } => unreachable!("handled above"),
    };
    report(&records);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
