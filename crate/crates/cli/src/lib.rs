//! Command-line front end. Each subcommand loads its inputs, calls one
//! library operation and writes the results under `--out`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use himix::bench::bench_compare;
use himix::config::RunConfig;
use himix::fusion::{confidence_fraction, fuse_probabilities, pseudo_label, weight_map};
use himix::himix::{classmix, himix, MixOutput};
use himix::instances::{extract_instances, Domain};
use himix::io;
use himix::rng::{tags, RngState};
use himix::synth::{run_pipeline_episode, MixStrategy, ScenePair, NUM_CLASSES};
use himix::{Error, LabelMap};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Environment variable capping the number of bench threads.
pub const THREADS_ENV: &str = "HIMIX_THREADS";

#[derive(Debug, Parser)]
#[command(name = "himix", version, about = "Instance mixing and pseudo-label fusion for aerial segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Pixel adjacency for instance extraction.
    #[arg(long, global = true, value_parser = ["4", "8"])]
    pub connectivity: Option<String>,

    /// Confidence threshold for pseudo-label weighting.
    #[arg(long, global = true)]
    pub tau: Option<f32>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Also write palette renderings of label outputs.
    #[arg(long, global = true)]
    pub colorize: bool,

    /// Number of classes expected in label PNGs.
    #[arg(long, global = true, default_value_t = NUM_CLASSES)]
    pub num_classes: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label connected components of a label PNG.
    Instances {
        labels: PathBuf,
        #[arg(long, default_value = "source", value_parser = ["source", "target"])]
        domain: String,
    },
    /// Hierarchical instance mix of a source pair onto a target pair.
    Mix(PairInputs),
    /// Class-mix baseline on the same inputs as `mix`.
    Classmix(PairInputs),
    /// Fuse two probability maps into a pseudo-label.
    Fuse { head_one: PathBuf, head_two: PathBuf },
    /// Per-pixel loss weights from a mix mask and a confidence fraction.
    Weights { mask: PathBuf, fraction: f64 },
    /// Generate a synthetic source/target scene pair.
    Synth,
    /// Run one simulated training step on a generated scene pair.
    Episode {
        #[arg(long)]
        strategy: Option<MixStrategy>,
    },
    /// Compare domain balance of both mixing strategies.
    Bench {
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads; capped by HIMIX_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct PairInputs {
    pub source_image: PathBuf,
    pub source_labels: PathBuf,
    pub target_image: PathBuf,
    /// Target labels, usually pseudo-labels.
    pub target_labels: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

/// Resolves the run configuration: defaults, then the config file, then flags.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(c) = &global.connectivity {
        cfg.set("connectivity", c)?;
    }
    if let Some(tau) = global.tau {
        cfg.set("tau", &tau.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Thread count for `bench`: the flag or the machine's parallelism, capped
/// by [`THREADS_ENV`] when set.
pub fn bench_threads(flag: Option<usize>, env: Option<&str>) -> Result<usize, Error> {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = flag.unwrap_or(default).max(1);
    if let Some(v) = env {
        let cap: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV}={v:?} is not a count")))?;
        n = n.min(cap.max(1));
    }
    Ok(n)
}

fn out_path(global: &GlobalArgs, name: &str) -> PathBuf {
    global.out.join(name)
}

fn write_labels(global: &GlobalArgs, name: &str, labels: &LabelMap) -> Result<(), Error> {
    io::save_label_png(labels, &out_path(global, &format!("{name}.png")))?;
    if global.colorize {
        io::save_image_png(&io::colorize(labels), &out_path(global, &format!("{name}_color.png")))?;
    }
    Ok(())
}

fn write_mix(global: &GlobalArgs, out: &MixOutput) -> Result<(), Error> {
    io::save_image_png(&out.image, &out_path(global, "mixed_image.png"))?;
    write_labels(global, "mixed_labels", &out.labels)?;
    io::save_mask_png(&out.mask, &out_path(global, "mask.png"))
}

fn load_pair(global: &GlobalArgs, p: &PairInputs) -> Result<[(himix::Image, LabelMap); 2], Error> {
    let load = |image: &Path, labels: &Path| -> Result<_, Error> {
        Ok((io::load_image_png(image)?, io::load_label_png(labels, global.num_classes)?))
    };
    Ok([
        load(&p.source_image, &p.source_labels)?,
        load(&p.target_image, &p.target_labels)?,
    ])
}

/// Runs a parsed command and returns the summary lines for stdout.
pub fn execute(cli: &Cli) -> Result<Vec<String>, Error> {
    let global = &cli.global;
    let cfg = resolve_config(global)?;
    std::fs::create_dir_all(&global.out).map_err(|e| Error::Io {
        path: global.out.clone(),
        source: e,
    })?;
    let master = RngState::new(cfg.seed);

    match &cli.command {
        Command::Instances { labels, domain } => {
            let y = io::load_label_png(labels, global.num_classes)?;
            let domain = if domain == "target" { Domain::Target } else { Domain::Source };
            let inst = extract_instances(&y, cfg.connectivity(), domain);
            io::save_instance_png(&inst, &out_path(global, "instances.png"))?;
            io::save_text(&out_path(global, "instances.csv"), &inst.table_csv())?;
            Ok(vec![format!("instances: {}", inst.len())])
        }
        Command::Mix(inputs) => {
            let [(x_s, y_s), (x_t, y_t)] = load_pair(global, inputs)?;
            let out = himix(&x_s, &y_s, &x_t, &y_t, &cfg.mix, &master.derive(tags::SELECTION))?;
            write_mix(global, &out)?;
            Ok(vec![format!("source_fraction: {:.6}", out.mask.source_fraction())])
        }
        Command::Classmix(inputs) => {
            let [(x_s, y_s), (x_t, y_t)] = load_pair(global, inputs)?;
            let out = classmix(&x_s, &y_s, &x_t, &y_t, &master.derive(tags::SELECTION))?;
            write_mix(global, &out)?;
            Ok(vec![format!("source_fraction: {:.6}", out.mask.source_fraction())])
        }
        Command::Fuse { head_one, head_two } => {
            let fused = fuse_probabilities(&io::load_pmap(head_one)?, &io::load_pmap(head_two)?)?;
            let labels = pseudo_label(&fused);
            let fraction = confidence_fraction(&fused, &cfg.fusion);
            io::save_pmap(&fused, &out_path(global, "fused.pmap"))?;
            write_labels(global, "pseudo_labels", &labels)?;
            io::save_text(&out_path(global, "confidence.txt"), &format!("{fraction:.6}\n"))?;
            Ok(vec![format!("confidence_fraction: {fraction:.6}")])
        }
        Command::Weights { mask, fraction } => {
            let weights = weight_map(&io::load_mask_png(mask)?, *fraction)?;
            io::save_weight_png(&weights, &out_path(global, "weights.png"))?;
            Ok(vec![format!("target_weight: {fraction:.6}")])
        }
        Command::Synth => {
            let pair = ScenePair::generate(&cfg.source, &cfg.target, &master)?;
            for (name, scene) in [("source", &pair.source), ("target", &pair.target)] {
                io::save_image_png(&scene.image, &out_path(global, &format!("{name}_image.png")))?;
                write_labels(global, &format!("{name}_labels"), &scene.labels)?;
            }
            Ok(vec![format!("scene pair: {}x{}", cfg.source.height, cfg.source.width)])
        }
        Command::Episode { strategy } => {
            let strategy = strategy.unwrap_or(cfg.strategy);
            let pair = ScenePair::generate(&cfg.source, &cfg.target, &master)?;
            let report = run_pipeline_episode(&pair, &cfg.segmenter, strategy, &cfg.episode_settings(), &master)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::InvalidParameter(format!("report serialization: {e}")))?;
            io::save_text(&out_path(global, "report.json"), &(json + "\n"))?;
            write_mix(global, &report.mixed)?;
            write_labels(global, "pseudo_labels", &report.pseudo_labels)?;
            io::save_weight_png(&report.weights, &out_path(global, "weights.png"))?;
            Ok(vec![
                format!("strategy: {}", strategy.name()),
                format!("source_fraction: {:.6}", report.source_fraction),
                format!("confidence_fraction: {:.6}", report.confidence_fraction),
                format!("mixed_loss: {:.6}", report.mixed_loss),
            ])
        }
        Command::Bench { trials, threads } => {
            let trials = trials.unwrap_or(cfg.trials);
            let env = std::env::var(THREADS_ENV).ok();
            let threads = bench_threads(*threads, env.as_deref())?;
            let report = bench_compare(trials, &cfg.bench_config(), cfg.seed, threads)?;
            io::save_text(&out_path(global, "bench.csv"), &report.to_csv())?;
            let summary = |s: &himix::bench::BalanceStats| {
                format!(
                    "{}: mean {:.6} mean_abs_deviation {:.6}",
                    s.strategy.name(),
                    s.mean,
                    s.mean_abs_deviation
                )
            };
            Ok(vec![summary(&report.himix), summary(&report.classmix)])
        }
    }
}
