//! Command-line front end: scenario generation, solving, verification, and
//! trace re-export.
//!
//! Exit codes: 0 success, 1 validation/configuration failure, 2 divergence
//! or numeric fault, 3 I/O or serialization failure. Every failure prints one
//! machine-parsable line on stderr: `error code=<N> kind=<K> msg="<reason>"`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use partflow::ascent::{
    solve, write_flows_csv, write_trace_csv, MassMode, SolveOptions, SolveReport, StepSchedule,
};
use partflow::distributed::{run_protocol, write_round_log_jsonl};
use partflow::error::Error;
use partflow::laguerre::write_partition_csv;
use partflow::model::Scenario;
use partflow::oracle::{brute_force, duality_gap_check};
use partflow::scenarios::{generate_power_network, generate_synthetic};

#[derive(Parser)]
#[command(
    name = "partflow",
    about = "Joint space-partitioning and network-flow solver",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file.
    Generate {
        #[command(subcommand)]
        family: GenerateFamily,
    },
    /// Solve a scenario and write the report bundle to a directory.
    Solve {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Solver mode.
        #[arg(long, value_enum, default_value_t = Mode::Centralized)]
        mode: Mode,
        /// Harmonic step-size numerator a in gamma_k = a / (1 + b k).
        #[arg(long, default_value_t = 1.0)]
        step_a: f64,
        /// Harmonic step-size decay b in gamma_k = a / (1 + b k).
        #[arg(long, default_value_t = 0.01)]
        step_b: f64,
        /// Termination threshold on the dual step magnitude.
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Iteration (round) cap.
        #[arg(long, default_value_t = 300)]
        max_iters: usize,
        /// Samples per iteration (stochastic mode only).
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// RNG seed (stochastic mode only).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-solve a scenario by brute force and check the duality gap of a report.
    Verify {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// report.json produced by solve.
        #[arg(long)]
        report: PathBuf,
        /// Grid resolution for cycle (chord) flows in the oracle.
        #[arg(long, default_value_t = 0.05)]
        flow_grid: f64,
    },
    /// Re-emit the iteration trace of a report as CSV on stdout.
    Trace {
        /// report.json produced by solve.
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenerateFamily {
    /// Gaussian demand on a square grid, fixed six-node backbone.
    Synthetic {
        /// Grid resolution (grid_n x grid_n points).
        #[arg(long, default_value_t = 100)]
        grid_n: usize,
        /// Side length of the square domain.
        #[arg(long, default_value_t = 100.0)]
        side: f64,
        /// Gaussian mean, x coordinate.
        #[arg(long, default_value_t = 50.0)]
        mean_x: f64,
        /// Gaussian mean, y coordinate.
        #[arg(long, default_value_t = 75.0)]
        mean_y: f64,
        /// Gaussian standard deviation.
        #[arg(long, default_value_t = 25.0)]
        sigma: f64,
        /// Seed (accepted for interface uniformity; generation is deterministic).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output scenario file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Random consumers with a nearest-neighbour graph and geodesic costs.
    PowerNet {
        /// Number of consumer nodes.
        #[arg(long, default_value_t = 1000)]
        consumers: usize,
        /// Side length of the square domain.
        #[arg(long, default_value_t = 100.0)]
        side: f64,
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output scenario file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Centralized,
    Distributed,
    Stochastic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            let msg = e.to_string().replace('"', "'").replace('\n', " ");
            eprintln!("error code={code} kind={kind} msg=\"{msg}\"");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Validation(_) => (1, "validation"),
        Error::Config(_) => (1, "config"),
        Error::InfeasiblePoint { .. } => (1, "infeasible_point"),
        Error::InstanceTooLarge { .. } => (1, "instance_too_large"),
        Error::OracleInfeasible => (1, "oracle_infeasible"),
        Error::Divergence { .. } => (2, "divergence"),
        Error::NonFinite { .. } => (2, "non_finite"),
        Error::TransportFault(_) => (2, "transport_fault"),
        Error::Io(_) => (3, "io"),
        Error::Json(_) => (3, "json"),
    }
}

fn run(cli: Cli) -> partflow::Result<()> {
    match cli.command {
        Command::Generate { family } => match family {
            GenerateFamily::Synthetic {
                grid_n,
                side,
                mean_x,
                mean_y,
                sigma,
                seed,
                out,
            } => {
                let scenario = generate_synthetic(grid_n, side, [mean_x, mean_y], sigma, seed);
                scenario.write_file(&out)?;
                println!(
                    "wrote {} ({} points, {} nodes, {} arcs)",
                    out.display(),
                    scenario.measure.len(),
                    scenario.network.node_count(),
                    scenario.network.arcs.len()
                );
                Ok(())
            }
            GenerateFamily::PowerNet {
                consumers,
                side,
                seed,
                out,
            } => {
                let scenario = generate_power_network(consumers, side, seed)?;
                scenario.write_file(&out)?;
                println!(
                    "wrote {} ({} consumers, {} nodes, {} arcs)",
                    out.display(),
                    scenario.measure.len(),
                    scenario.network.node_count(),
                    scenario.network.arcs.len()
                );
                Ok(())
            }
        },
        Command::Solve {
            scenario,
            mode,
            step_a,
            step_b,
            eps,
            max_iters,
            samples,
            seed,
            out,
        } => {
            let scenario = Scenario::read_file(&scenario)?;
            let schedule = StepSchedule::Harmonic {
                a: step_a,
                b: step_b,
            };
            fs::create_dir_all(&out)?;
            match mode {
                Mode::Centralized | Mode::Stochastic => {
                    let options = SolveOptions {
                        schedule,
                        epsilon: eps,
                        max_iterations: max_iters,
                        mass_mode: if mode == Mode::Stochastic {
                            MassMode::Stochastic {
                                n_samples: samples,
                                seed,
                            }
                        } else {
                            MassMode::Exact
                        },
                        ..SolveOptions::default()
                    };
                    let report = solve(&scenario, &options)?;
                    write_bundle(&out, &scenario, &report)?;
                }
                Mode::Distributed => {
                    let (report, logs) = run_protocol(&scenario, &schedule, eps, max_iters)?;
                    write_bundle(&out, &scenario, &report)?;
                    let rounds = BufWriter::new(File::create(out.join("rounds.jsonl"))?);
                    write_round_log_jsonl(&logs, rounds)?;
                }
            }
            println!("wrote report bundle to {}", out.display());
            Ok(())
        }
        Command::Verify {
            scenario,
            report,
            flow_grid,
        } => {
            let scenario = Scenario::read_file(&scenario)?;
            let report: SolveReport = serde_json::from_reader(File::open(&report)?)?;
            let oracle = brute_force(&scenario, flow_grid)?;
            let gap = duality_gap_check(&report, &oracle);
            println!("{}", serde_json::to_string_pretty(&gap)?);
            if gap.pass {
                Ok(())
            } else {
                Err(Error::Validation(vec![]))
            }
        }
        Command::Trace { report } => {
            let report: SolveReport = serde_json::from_reader(File::open(&report)?)?;
            let stdout = std::io::stdout();
            write_trace_csv(&report.trace, stdout.lock())?;
            Ok(())
        }
    }
}

fn write_bundle(out: &Path, scenario: &Scenario, report: &SolveReport) -> partflow::Result<()> {
    let mut report_file = BufWriter::new(File::create(out.join("report.json"))?);
    serde_json::to_writer_pretty(&mut report_file, report)?;
    writeln!(report_file)?;
    write_trace_csv(
        &report.trace,
        BufWriter::new(File::create(out.join("trace.csv"))?),
    )?;
    write_partition_csv(
        &report.partition,
        &scenario.measure,
        BufWriter::new(File::create(out.join("partition.csv"))?),
    )?;
    write_flows_csv(
        &scenario.network,
        &report.flows,
        BufWriter::new(File::create(out.join("flows.csv"))?),
    )?;
    Ok(())
}
