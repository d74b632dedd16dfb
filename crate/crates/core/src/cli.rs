//! Command-line front end for the `tim-admit` binary.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::admission::{exhaustive_oracle, run_pipeline, AdmissionConfig, SearchMode};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::experiment::{cmd_sweep, gen_topology, write_csv, ExperimentSpec, SweepMode};
use crate::objectives::SmoothedL1Params;
use crate::report::AdmissionReport;
use crate::topology_io::{format_topology, read_topology};
use crate::trust_region::TrustRegionConfig;

#[derive(Debug, Parser)]
#[command(name = "tim-admit", version, about = "User admission control for topological interference management")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random topology and write it in the topology file format.
    GenTopology {
        /// Number of users K.
        #[arg(long)]
        users: usize,
        /// Number of directed interfering links.
        #[arg(long)]
        links: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the three-stage admission pipeline on one topology.
    Solve {
        topology: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Batch experiment over a grid of ranks and lambdas.
    Sweep {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        links: usize,
        /// Comma-separated ranks; defaults to 1..=K.
        #[arg(long, value_delimiter = ',')]
        rank: Vec<usize>,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        lambda: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        realizations: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        /// Worker threads (0 uses every core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Exhaustive search for the largest admissible set (K <= 16).
    Oracle {
        topology: PathBuf,
        #[arg(long)]
        rank: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
    },
    /// Run the derivative and geometry self-checks.
    Check {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 0.01)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub feas_tol: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Linear prefix scan instead of bisection.
    #[arg(long)]
    pub scan: bool,
}

impl SolverArgs {
    pub fn config(&self, rank: usize, lambda: f64) -> Result<AdmissionConfig> {
        Ok(AdmissionConfig {
            rank,
            params: SmoothedL1Params::new(lambda, self.rho, self.epsilon)?,
            feasibility_tol: self.feas_tol,
            restarts: self.restarts,
            tr: TrustRegionConfig {
                grad_tol: self.grad_tol,
                max_outer_iters: self.max_iters,
                ..TrustRegionConfig::default()
            },
            seed: self.seed,
            search: if self.scan { SearchMode::Scan } else { SearchMode::Bisection },
            ..AdmissionConfig::new(rank)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pipeline,
    Oracle,
    Baseline,
    All,
}

impl From<ModeArg> for SweepMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pipeline => SweepMode::Pipeline,
            ModeArg::Oracle => SweepMode::Oracle,
            ModeArg::Baseline => SweepMode::Baseline,
            ModeArg::All => SweepMode::All,
        }
    }
}

fn deliver(text: &str, output: Option<&PathBuf>, out: &mut dyn Write) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Executes a parsed command, writing results to `out`. Returns `Ok(false)`
/// when the command ran but reported a failure (for `check`).
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    match cli.command {
        Command::GenTopology {
            users,
            links,
            seed,
            output,
        } => {
            let topo = gen_topology(users, links, seed)?;
            deliver(&format_topology(&topo), output.as_ref(), out)?;
        }
        Command::Solve {
            topology,
            rank,
            lambda,
            solver,
            emit,
            output,
        } => {
            let topo = read_topology(&topology)?;
            let cfg = solver.config(rank, lambda)?;
            let res = run_pipeline(&topo, &cfg)?;
            let report = AdmissionReport::new(&topo, &cfg, &res);
            let text = match emit {
                Some(Emit::Json) => report.to_json() + "\n",
                Some(Emit::Csv) => report.to_csv(),
                None => report.to_text(),
            };
            deliver(&text, output.as_ref(), out)?;
        }
        Command::Sweep {
            users,
            links,
            rank,
            lambda,
            realizations,
            mode,
            jobs,
            solver,
            emit,
            output,
        } => {
            let mut spec = ExperimentSpec::new(users, links);
            if !rank.is_empty() {
                spec.r_values = rank;
            }
            spec.lambda_values = lambda;
            spec.realizations = realizations;
            spec.mode = mode.into();
            spec.seed = solver.seed;
            spec.base = solver.config(1, spec.lambda_values[0])?;
            let outcome = cmd_sweep(&spec, jobs)?;
            if outcome.failures > 0 {
                eprintln!("{} instance(s) failed and were excluded from the means", outcome.failures);
            }
            let text = match emit {
                Emit::Csv => {
                    let mut buf = Vec::new();
                    write_csv(&outcome.rows, &mut buf)?;
                    String::from_utf8(buf).expect("csv is utf-8")
                }
                Emit::Json => serde_json::to_string_pretty(&outcome.rows).expect("rows serialize") + "\n",
            };
            deliver(&text, output.as_ref(), out)?;
        }
        Command::Oracle {
            topology,
            rank,
            solver,
            emit,
        } => {
            let topo = read_topology(&topology)?;
            let cfg = solver.config(rank, SmoothedL1Params::default().lambda)?;
            let o = exhaustive_oracle(&topo, &cfg)?;
            let best: Vec<usize> = o.best.iter().map(|i| i + 1).collect();
            let text = match emit {
                Some(Emit::Json) => {
                    serde_json::json!({"K": topo.k(), "rank": rank, "n_max": o.n_max, "best": best, "solves": o.solves})
                        .to_string()
                        + "\n"
                }
                Some(Emit::Csv) => format!(
                    "K,rank,n_max,best\n{},{},{},{}\n",
                    topo.k(),
                    rank,
                    o.n_max,
                    best.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" ")
                ),
                None => format!("Nmax = {} at r = {}\nbest: {:?}\n", o.n_max, rank, best),
            };
            out.write_all(text.as_bytes())?;
        }
        Command::Check { seed, emit } => {
            let outcomes = diagnostics::run_suite(seed)?;
            let passed = outcomes.iter().all(|o| o.passed);
            match emit {
                Some(Emit::Json) => {
                    writeln!(out, "{}", serde_json::to_string_pretty(&outcomes).expect("outcomes serialize"))?
                }
                Some(Emit::Csv) => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    for o in &outcomes {
                        w.serialize(o).map_err(|e| Error::Io(e.into()))?;
                    }
                    out.write_all(&w.into_inner().expect("flush to Vec"))?;
                }
                None => {
                    for o in &outcomes {
                        let cmp = if o.higher_is_better { ">=" } else { "<=" };
                        writeln!(
                            out,
                            "{} {:<40} worst {:.3e} {cmp} {:.1e} over {} cases",
                            if o.passed { "PASS" } else { "FAIL" },
                            o.name,
                            o.worst,
                            o.threshold,
                            o.cases
                        )?;
                    }
                }
            }
            return Ok(passed);
        }
    }
    Ok(true)
}
