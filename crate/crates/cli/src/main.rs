mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use avl_core::retrieval::ScorerKind;
use avl_core::strategies::StrategyKind;
use config::{MatcherKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "avl", version, about = "Absolute visual localization of UAV frames against a 2.5D reference map")]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides every component seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic orthophoto and DSM.
    GenScene {
        #[arg(long)]
        extent_m: Option<f64>,
        #[arg(long)]
        gsd: Option<f64>,
    },
    /// Sample a flight over a map, render its frames and export oracle data.
    RenderFlight {
        #[arg(long)]
        map: Option<PathBuf>,
        /// Number of frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Tile a map into a retrieval gallery.
    BuildGallery {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        footprint_m: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Localize every frame of a manifest with one strategy.
    Localize(RunArgs),
    /// Localize over a grid of strategies and prior-noise levels.
    Sweep(RunArgs),
    /// Recompute metrics and charts from a records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        metrics: MetricArgs,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    /// Frame manifest written by render-flight.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Gallery JSON; rebuilt from the config when omitted.
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// top1, topn, most_inliers or direct.
    #[arg(long)]
    strategy: Option<StrategyKind>,
    /// ncc, mi or embedding.
    #[arg(long)]
    scorer: Option<ScorerKind>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// builtin or imported.
    #[arg(long)]
    matcher: Option<MatcherKind>,
    /// Correspondence index CSV for the imported matcher.
    #[arg(long)]
    matches: Option<PathBuf>,
    #[arg(long)]
    top_n: Option<usize>,
    #[command(flatten)]
    metrics: MetricArgs,
}

#[derive(Debug, Args)]
struct MetricArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sdm_s: Option<f64>,
}

impl MetricArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(l) = self.lambda {
            cfg.metrics.pdm.lambda = l;
        }
        if let Some(a) = self.alpha {
            cfg.metrics.pdm.alpha = a;
        }
        if let Some(s) = self.sdm_s {
            cfg.metrics.sdm_s = s;
        }
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = &self.map {
            cfg.map.dir = Some(m.clone());
        }
        if let Some(p) = &self.manifest {
            cfg.manifest = Some(p.clone());
        }
        if let Some(p) = &self.gallery {
            cfg.gallery_file = Some(p.clone());
        }
        if let Some(k) = self.strategy {
            cfg.strategy.kind = k;
        }
        if let Some(s) = self.scorer {
            cfg.scorer = s;
        }
        if let Some(p) = &self.embeddings {
            cfg.embeddings = Some(p.clone());
        }
        if let Some(m) = self.matcher {
            cfg.matcher = m;
        }
        if let Some(p) = &self.matches {
            cfg.matches = Some(p.clone());
        }
        if let Some(n) = self.top_n {
            cfg.strategy.top_n = n;
        }
        self.metrics.apply(cfg);
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed.or(cfg.seed) {
        cfg.apply_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::GenScene { extent_m, gsd } => {
            let scene = cfg.scene.get_or_insert_with(Default::default);
            if let Some(e) = extent_m {
                scene.extent_m = *e;
            }
            if let Some(g) = gsd {
                scene.gsd = *g;
            }
        }
        Command::RenderFlight { map, frames } => {
            if let Some(m) = map {
                cfg.map.dir = Some(m.clone());
            }
            if let Some(n) = frames {
                cfg.flight.frames = *n;
            }
        }
        Command::BuildGallery { map, footprint_m, overlap } => {
            if let Some(m) = map {
                cfg.map.dir = Some(m.clone());
            }
            if let Some(f) = footprint_m {
                cfg.gallery.footprint_m = *f;
            }
            if let Some(o) = overlap {
                cfg.gallery.overlap = *o;
            }
        }
        Command::Localize(a) | Command::Sweep(a) => a.apply(&mut cfg),
        Command::Report { metrics, .. } => metrics.apply(&mut cfg),
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::GenScene { .. } => commands::gen_scene(&cfg),
        Command::RenderFlight { .. } => commands::render_flight(&cfg),
        Command::BuildGallery { .. } => commands::build_gallery(&cfg),
        Command::Localize(_) => commands::localize(&cfg, false),
        Command::Sweep(_) => commands::localize(&cfg, true),
        Command::Report { records, .. } => commands::report(&cfg, records),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
