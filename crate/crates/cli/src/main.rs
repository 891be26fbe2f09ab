use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mgdispatch::config::{load_config, Algorithm, OutputFormat, ScenarioConfig};
use mgdispatch::par::Execution;
use mgdispatch::scenario;

#[derive(Parser)]
#[command(name = "mgdispatch", version, about = "Distributed power dispatch for hybrid AC/DC microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or `bundled:<name>` for a shipped scenario.
    #[arg(long)]
    config: String,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write trace and summary files here instead of printing the summary.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Run data-parallel work on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized optimum as one JSON object.
    Solve(Common),
    RunSync(Common),
    RunAsync(Common),
    RunRt(Common),
    /// ASDPD over a grid of staleness bounds and seeds.
    SweepDelay {
        #[command(flatten)]
        common: Common,
        /// Comma-separated χ values; defaults to the config's sweep block.
        #[arg(long, value_delimiter = ',')]
        chis: Option<Vec<u64>>,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Simulated wall-clock of SDPD (barrier rounds) against ASDPD.
    Compare(Common),
    /// Operator identity checks on random iterates, as JSON.
    CheckOperators {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Names of the bundled scenarios.
    List,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let cfg = match self.config.strip_prefix("bundled:") {
            Some(name) => match scenario::bundled(name) {
                Some(c) => c?,
                None => bail!("no bundled scenario named {name:?}"),
            },
            None => load_config(&self.config).with_context(|| format!("loading {}", self.config))?,
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }

    fn format(&self, cfg: &ScenarioConfig) -> OutputFormat {
        match self.format {
            Some(Format::Csv) => OutputFormat::Csv,
            Some(Format::Json) => OutputFormat::Json,
            None => cfg.outputs.format,
        }
    }

    fn out_dir(&self, cfg: &ScenarioConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.outputs.dir.as_ref().map(PathBuf::from))
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn report(dir: Option<&Path>, cfg: &ScenarioConfig, stem: &str, body: serde_json::Value) -> Result<()> {
    let stamped = scenario::stamped(cfg, &body);
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}_{stem}.json", cfg.name));
            scenario::write_summary(&path, &stamped)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => print_json(&stamped),
    }
}

fn run(common: &Common, want: Algorithm) -> Result<()> {
    let mut cfg = common.load()?;
    cfg.algorithm = want;
    // the subcommand picks the engine; revalidate so missing blocks are named
    cfg.validate()?;
    let res = scenario::run_configured(&cfg)?;
    let summary = scenario::stamped(&cfg, &res.summary_json());
    match common.out_dir(&cfg) {
        Some(dir) => {
            for p in scenario::write_run(&dir, &cfg.name, res.trace(), &summary, common.format(&cfg))? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        None => print_json(&summary),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve(c) => {
            let cfg = c.load()?;
            print_json(&serde_json::to_value(scenario::solve(&cfg)?)?)
        }
        Command::RunSync(c) => run(c, Algorithm::Sdpd),
        Command::RunAsync(c) => run(c, Algorithm::Asdpd),
        Command::RunRt(c) => run(c, Algorithm::Rtasdpd),
        Command::SweepDelay { common, chis, seeds } => {
            let cfg = common.load()?;
            let chis = chis.clone().or_else(|| cfg.sweep.as_ref().map(|s| s.chis.clone())).unwrap_or_else(|| vec![0, 1, 2, 4]);
            let seeds = seeds.or_else(|| cfg.sweep.as_ref().map(|s| s.seeds)).unwrap_or(20);
            let rep = scenario::sweep_delay(&cfg, &chis, seeds, common.exec())?;
            report(common.out_dir(&cfg).as_deref(), &cfg, "sweep", serde_json::to_value(rep)?)
        }
        Command::Compare(c) => {
            let cfg = c.load()?;
            let rep = scenario::compare_sync_async(&cfg)?;
            report(c.out_dir(&cfg).as_deref(), &cfg, "compare", serde_json::to_value(rep)?)
        }
        Command::CheckOperators { common, samples } => {
            let cfg = common.load()?;
            let rep = scenario::operator_report(&cfg, *samples, common.exec())?;
            print_json(&serde_json::to_value(rep)?)
        }
        Command::List => {
            for (name, _) in scenario::BUNDLED {
                println!("{name}");
            }
            Ok(())
        }
    }
}
