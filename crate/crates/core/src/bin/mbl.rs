use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mbl_core::dataset::SunAngles;
use mbl_core::harness::pipeline::{self, Layout};
use mbl_core::harness::{run_experiment, ExperimentConfig, TerrainSource};
use mbl_core::io;

#[derive(Parser, Debug)]
#[command(name = "mbl", version, about = "Map-based localization experiments on rendered terrain")]
struct Cli {
    /// JSON experiment configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; also reseeds synthetic terrain.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or import the terrain and write it to the output directory.
    GenTerrain,
    /// Render orthographic maps for the configured lightings.
    RenderMap {
        /// Render a single lighting instead of the configured set.
        #[arg(long, requires = "el")]
        az: Option<f64>,
        #[arg(long, requires = "az")]
        el: Option<f64>,
    },
    /// Sample query poses.
    SampleQueries,
    /// Render the sampled queries.
    RenderQueries,
    /// Crop map windows and write the triplet manifest.
    MakeDataset,
    /// Localize every query against every configured map.
    Localize,
    /// Aggregate the per-query CSV into summaries and CDF tables.
    Evaluate,
    /// Run every stage in memory and write the reports.
    Run,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = match &cli.config {
        Some(path) => io::read_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        if let TerrainSource::Synthetic(p) = &mut config.terrain {
            p.seed = seed;
        }
    }
    config.output_dir = Some(cli.out.clone());
    config.validate()?;
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = load_config(&cli)?;
    let layout = Layout::new(&cli.out);
    match &cli.command {
        Command::GenTerrain => {
            let t = pipeline::gen_terrain(&config, &layout)?;
            println!("terrain {}x{} posts -> {}", t.cols(), t.rows(), layout.dtm().display());
        }
        Command::RenderMap { az, el } => {
            let lightings = match (az, el) {
                (Some(az), Some(el)) => vec![SunAngles { az: *az, el: *el }],
                _ => config.lightings(),
            };
            pipeline::render_maps(&config, &layout, &lightings)?;
            println!("rendered {} map(s)", lightings.len());
        }
        Command::SampleQueries => {
            let specs = pipeline::sample_query_specs(&config, &layout)?;
            println!("sampled {} queries", specs.len());
        }
        Command::RenderQueries => {
            let entries = pipeline::render_query_images(&config, &layout)?;
            println!("rendered {} queries", entries.len());
        }
        Command::MakeDataset => {
            let n = pipeline::make_dataset(&config, &layout)?;
            println!("wrote {n} triplets to {}", layout.manifest().display());
        }
        Command::Localize => {
            let out = pipeline::localize_all(&config, &layout)?;
            println!("localized {} attempts, @1m {:.3}", out.report.rows.len(), out.report.at1m);
        }
        Command::Evaluate => {
            let report = pipeline::evaluate(&config, &layout)?;
            print_summary(&report);
        }
        Command::Run => {
            let out = run_experiment(&config)?;
            print_summary(&out.report);
        }
        Command::ShowConfig => {
            writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&config)?)?;
        }
    }
    Ok(())
}

fn print_summary(report: &mbl_core::harness::MetricsReport) {
    println!("attempts {}  @1m {:.3}  median {:.3} m", report.rows.len(), report.at1m, report.median_m);
    for c in &report.cells {
        println!(
            "  d_az {:>6} d_el {:>6} alt {:>9}  n {:>4}  @1m {:.3}  median {:.3}  fail {}",
            c.d_az_deg, c.d_el_deg, c.alt_bin, c.n, c.at1m, c.median_m, c.fail_n
        );
    }
    for (status, n) in &report.failures {
        println!("  {status}: {n}");
    }
}
