use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use got_core::{serve, NodeConfig};
use got_sim::schema::space_race;
use got_sim::{run_scenario, Scenario, Simulation};

#[derive(Parser)]
#[command(name = "got", version, about = "Versioned object heaps: node server and simulator")]
struct Cli {
    /// Seed for every random choice in a simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TCP node described by a config file.
    Serve { config: PathBuf },
    /// Median latency of the six operations per role, as CSV.
    BenchLatency {
        #[arg(long, default_value_t = 20)]
        asteroids: usize,
        #[arg(long, default_value_t = 72.0)]
        rtt: f64,
        /// The viewer commits its own predictions, forcing merges.
        #[arg(long)]
        conflicts: bool,
        #[arg(long, default_value_t = 60_000)]
        duration_ms: u64,
    },
    /// Producer vertex counts after every graph mutation, as CSV.
    BenchVersions {
        #[arg(long, default_value_t = 1)]
        actors: usize,
        #[arg(long)]
        no_gc: bool,
        #[arg(long, default_value_t = 10_000)]
        commits: u64,
    },
    /// Graphviz DOT of one node's graph after a short simulated run.
    DumpGraph {
        node: String,
        #[arg(value_name = "TYPE")]
        type_name: String,
        #[arg(long, default_value_t = 1)]
        actors: usize,
        #[arg(long, default_value_t = 3_000)]
        duration_ms: u64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config } => {
            let cfg = NodeConfig::load(&config)?;
            let registry = if cfg.schema.is_empty() {
                space_race()
            } else {
                cfg.registry()?
            };
            let listen = cfg
                .listen
                .clone()
                .context("config has no `listen` address")?;
            let df = cfg.build(Arc::new(registry))?;
            let server = serve(df.repository(), &listen)?;
            eprintln!("{} serving on {}", df.name(), server.address());
            server.join();
        }
        Command::BenchLatency {
            asteroids,
            rtt,
            conflicts,
            duration_ms,
        } => {
            let mut s = Scenario::new(asteroids, 1, conflicts);
            s.seed = cli.seed;
            s.rtt_ms = rtt;
            s.duration_ms = duration_ms;
            print!("{}", run_scenario(&s)?.latency_csv());
        }
        Command::BenchVersions { actors, no_gc, commits } => {
            let log = got_sim::run_version_census(actors, commits, !no_gc, cli.seed)?;
            print!("{}", log.census_csv());
        }
        Command::DumpGraph {
            node,
            type_name,
            actors,
            duration_ms,
        } => {
            let mut s = Scenario::new(20, actors, false);
            s.seed = cli.seed;
            s.duration_ms = duration_ms;
            let mut sim = Simulation::new(s)?;
            sim.run()?;
            let Some(df) = sim.node(&node) else {
                let names: Vec<&str> = sim.node_names().collect();
                bail!("no node `{node}`; nodes are {}", names.join(", "));
            };
            let repo = df.lock();
            let graph = repo
                .graph(&type_name)
                .with_context(|| format!("`{node}` has no graph for `{type_name}`"))?;
            print!("{}", graph.to_dot());
        }
    }
    Ok(())
}
