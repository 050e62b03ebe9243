use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use warpmatch::propagate::SubsetHeuristic;
use warpmatch_cli::commands::eval::{cmd_eval, EvalOptions};
use warpmatch_cli::commands::fitgrid::cmd_fitgrid;
use warpmatch_cli::commands::generate::{cmd_generate, read_pairs};
use warpmatch_cli::commands::matching::cmd_match;
use warpmatch_cli::commands::posegraph::cmd_posegraph;
use warpmatch_cli::commands::propagate::{cmd_propagate, read_match_index};
use warpmatch_cli::commands::reconstruct::cmd_reconstruct;
use warpmatch_cli::config::PipelineConfig;
use warpmatch_cli::error::CliError;
use warpmatch_cli::experiments::{
    bank_ablation, prior_benefit, AblationOptions, PriorBenefitOptions,
};
use warpmatch_cli::manifest::DatasetManifest;
use warpmatch_cli::output::{prepare_out_dir, write_json};
use warpmatch_cli::pipeline::WarpSource;
use warpmatch_cli::toy::{write_toy, ToyOptions};

#[derive(Debug, Parser)]
#[command(
    name = "warpmatch",
    version,
    about = "Warp-prior keypoint matching and single-view reconstruction"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, `key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Appearance,
    TrueWarp,
    Seeded,
    Annotation,
    Grids,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentArg {
    PriorBenefit,
    BankAblation,
}

#[derive(Debug, Args)]
struct SubsetArgs {
    /// Use every image whose group label contains this keyword.
    #[arg(long, conflicts_with_all = ["adjacency", "subset"])]
    keyword: Option<String>,
    /// JSON object mapping a group label to its adjacent groups.
    #[arg(long, conflicts_with = "subset")]
    adjacency: Option<PathBuf>,
    /// Explicit comma-separated image ids.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine an exemplar bank and write warped copies of every image.
    Generate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fit control grids to synthetic-pair correspondences.
    Fitgrid {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Match synthetic pairs with the chosen warp source.
    Match {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_enum, default_value = "seeded")]
        source: SourceArg,
        /// Directory of per-pair `ControlGrid` JSON (with `--source grids`).
        #[arg(long)]
        grids: Option<PathBuf>,
    },
    /// Score ranked match CSVs against ground truth.
    Eval {
        /// Match CSV files or directories of them.
        #[arg(required = true)]
        matches: Vec<PathBuf>,
        /// Ground truth for a single match file.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Also write PCK for α in 0.01..=0.10.
        #[arg(long)]
        alpha_sweep: bool,
        /// Fail when the target precision is unattainable.
        #[arg(long)]
        require_precision: bool,
    },
    /// Propagate keypoint tracks from a target image through pairwise matches.
    Propagate {
        /// `matches/index.json` written by `match` or `reconstruct`.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        target: String,
    },
    /// Reconstruct a target image's keypoints in 3D.
    Reconstruct {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        subset: SubsetArgs,
    },
    /// Build the kNN pose graph over manifest images.
    Posegraph {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON object of global descriptors per image id.
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
    /// Run a synthetic experiment.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentArg,
        /// Number of test pairs (prior-benefit only).
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Write a rigid-scene toy dataset.
    Toy {
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn read_adjacency(path: &Path) -> Result<BTreeMap<String, Vec<String>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data("subset", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data("subset", format!("{}: {e}", path.display())))
}

fn heuristic(args: SubsetArgs) -> Result<Option<SubsetHeuristic>, CliError> {
    Ok(match (args.keyword, args.adjacency, args.subset) {
        (Some(k), _, _) => Some(SubsetHeuristic::KeywordGroup(k)),
        (_, Some(p), _) => Some(SubsetHeuristic::NeighborGroups(read_adjacency(&p)?)),
        (_, _, Some(list)) => Some(SubsetHeuristic::ExplicitList(list)),
        _ => None,
    })
}

fn pairs_dir(pairs: &Path) -> PathBuf {
    pairs
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Generate { manifest } => {
            let r = cmd_generate(&DatasetManifest::load(&manifest)?, &cfg, out)?;
            log::info!(
                "{} pairs from {} mining pairs, bank of {}",
                r.pairs,
                r.mining_pairs,
                r.bank_size
            );
        }
        Command::Fitgrid { pairs } => {
            let r = cmd_fitgrid(&read_pairs(&pairs)?, &cfg, out)?;
            log::info!("fitted {} grids", r.len());
        }
        Command::Match {
            pairs,
            source,
            grids,
        } => {
            let source = match (source, grids) {
                (SourceArg::Grids, Some(dir)) => WarpSource::Grids(dir),
                (SourceArg::Grids, None) => {
                    return Err(CliError::Usage("--source grids needs --grids DIR".into()))
                }
                (_, Some(_)) => {
                    return Err(CliError::Usage(
                        "--grids only applies to --source grids".into(),
                    ))
                }
                (SourceArg::Appearance, None) => WarpSource::Appearance,
                (SourceArg::TrueWarp, None) => WarpSource::TrueWarp,
                (SourceArg::Seeded, None) => WarpSource::Seeded,
                (SourceArg::Annotation, None) => WarpSource::Annotation,
            };
            let s = cmd_match(&read_pairs(&pairs)?, &pairs_dir(&pairs), &source, &cfg, out)?;
            println!(
                "pairs {} failures {} mean AP {:.4} mean PCK@0.05 {:.4}",
                s.pairs.len(),
                s.failures.len(),
                s.mean_ap,
                s.mean_pck_005
            );
        }
        Command::Eval {
            matches,
            gt,
            alpha_sweep,
            require_precision,
        } => {
            let opts = EvalOptions {
                gt,
                alpha_sweep,
                require_precision,
            };
            let r = cmd_eval(&matches, &opts, &cfg, out)?;
            println!(
                "files {} mean AP {:.4} mean PCK@0.05 {:.4}",
                r.records.len(),
                r.mean_ap,
                r.mean_pck_005
            );
        }
        Command::Propagate { index, target } => {
            let r = cmd_propagate(&read_match_index(&index)?, &target, &cfg, out)?;
            println!("tracks {} kept images {}", r.tracks, r.kept_images.len());
        }
        Command::Reconstruct {
            manifest,
            target,
            subset,
        } => {
            let (_, r) = cmd_reconstruct(
                &DatasetManifest::load(&manifest)?,
                &target,
                heuristic(subset)?,
                &cfg,
                out,
            )?;
            println!(
                "frames {} points {} residual {:.4} px",
                r.frames, r.points, r.residual
            );
        }
        Command::Posegraph {
            manifest,
            descriptors,
        } => {
            let g = cmd_posegraph(
                &DatasetManifest::load(&manifest)?,
                descriptors.as_deref(),
                &cfg,
                out,
            )?;
            println!("nodes {} edges {}", g.nodes().len(), g.edges().len());
        }
        Command::Experiment { name, pairs } => {
            prepare_out_dir(out, &cfg)?;
            match name {
                ExperimentArg::PriorBenefit => {
                    let mut opts = PriorBenefitOptions::default();
                    opts.pairs = pairs.unwrap_or(opts.pairs);
                    let r = prior_benefit(&opts, &cfg)?;
                    write_json(&out.join("prior_benefit.json"), &r)?;
                    println!(
                        "PCK@{} prior {:.4} appearance {:.4}",
                        cfg.alpha, r.pck_prior, r.pck_appearance
                    );
                }
                ExperimentArg::BankAblation => {
                    let r = bank_ablation(&AblationOptions::default(), &cfg)?;
                    write_json(&out.join("bank_ablation.json"), &r)?;
                    for b in &r.results {
                        println!(
                            "{:<14} cutoff {:?} PCK@cutoff {:.4} PCK {:.4}",
                            b.name, b.cutoff, b.pck_at_cutoff, b.pck
                        );
                    }
                }
            }
        }
        Command::Toy {
            views,
            points,
            seed,
        } => {
            let d = ToyOptions::default();
            let opts = ToyOptions {
                views: views.unwrap_or(d.views),
                points: points.unwrap_or(d.points),
                seed: seed.unwrap_or(d.seed),
                ..d
            };
            let gt = write_toy(out, &opts)?;
            println!("{} views, {} points", gt.views.len(), gt.points.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
