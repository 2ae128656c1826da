//! `sale` — batch experiment runner for the SALE spatial-Aloha scheme.
//!
//! Subcommands: `run` executes one scenario config and writes a trace CSV
//! plus a metrics report; `sweep` repeats a scenario along one parameter
//! axis and prints a summary table; `gen-topology` writes a random
//! geometric interference graph in the plain-text topology format.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{Mode, Scenario, TopologySource};
use sale_core::metrics::MetricsReport;
use sale_core::sale::{drive_ideal, SaleState, TreePartition};
use sale_core::simnet::run_frames_full;
use sale_core::topology::InterferenceGraph;
use sale_core::trace::{RunOutcome, RunTrace};

#[derive(Parser)]
#[command(name = "sale", version, about = "SALE spatial-Aloha experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario config; write trace.csv, metrics.txt, metrics.json.
    Run {
        /// Scenario config file (INI-style key = value sections).
        config: PathBuf,
        /// Override the scenario's mode (ideal|packet).
        #[arg(long)]
        mode: Option<Mode>,
        /// Override the packet-simulator RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for emitted files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a scenario once per value of one parameter axis.
    Sweep {
        config: PathBuf,
        /// One of: n_users, area, seed, gain_multiplier, l_f.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (may be empty).
        #[arg(long, default_value = "")]
        values: String,
        #[arg(long)]
        mode: Option<Mode>,
        /// Directory for the summary CSV.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate a connected random geometric topology file.
    GenTopology {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        area: f64,
        #[arg(long, default_value_t = 5.0)]
        range: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            mode,
            seed,
            out_dir,
        } => {
            let mut scenario = load_scenario(&config)?;
            if let Some(mode) = mode {
                scenario.mode = mode;
            }
            if let Some(seed) = seed {
                scenario.frame.seed = seed;
            }
            cmd_run(&scenario, &out_dir)
        }
        Command::Sweep {
            config,
            axis,
            values,
            mode,
            out_dir,
        } => {
            let mut scenario = load_scenario(&config)?;
            if let Some(mode) = mode {
                scenario.mode = mode;
            }
            cmd_sweep(&scenario, &axis, &values, &out_dir)
        }
        Command::GenTopology {
            n,
            area,
            range,
            seed,
            out,
        } => {
            let g = InterferenceGraph::random_geometric(n, area, range, seed)?;
            fs::write(&out, g.to_text()).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} ({} users, {} edges)",
                out.display(),
                g.n(),
                (0..g.n()).map(|i| g.degree(i)).sum::<usize>() / 2
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    Scenario::from_ini(&text).with_context(|| format!("in config {}", path.display()))
}

/// Execute one scenario; the trace and partition fully describe the run.
fn execute(scenario: &Scenario, g: &InterferenceGraph) -> (RunTrace, TreePartition) {
    match scenario.mode {
        Mode::Ideal => {
            let mut state = SaleState::new(g, &scenario.run);
            let trace = drive_ideal(&mut state, &scenario.run);
            (trace, state.partition().clone())
        }
        Mode::Packet => run_frames_full(g, &scenario.frame, &scenario.run),
    }
}

fn cmd_run(scenario: &Scenario, out_dir: &Path) -> Result<ExitCode> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let g = scenario.build_graph()?;
    let (trace, partition) = execute(scenario, &g);
    fs::write(out_dir.join("trace.csv"), trace.to_csv())?;

    let converged = matches!(trace.outcome, RunOutcome::Converged { .. });
    let (text, json) = if converged {
        let report = MetricsReport::compute(
            &g,
            &partition,
            &trace,
            scenario.frame.l_s,
            scenario.frame.header_overhead_bits,
            scenario.metrics_tol,
            scenario.metrics_window,
        )?;
        (
            format!("outcome = converged\n{}", report.to_text()),
            report.to_json(),
        )
    } else {
        (
            "outcome = diverged/oscillating\n".to_string(),
            "{\n  \"outcome\": \"diverged/oscillating\"\n}".to_string(),
        )
    };
    fs::write(out_dir.join("metrics.txt"), &text)?;
    fs::write(out_dir.join("metrics.json"), json)?;
    print!("{text}");

    let ok = converged != scenario.expect_divergence;
    if !ok {
        eprintln!(
            "unexpected outcome: run {} but scenario expect_divergence = {}",
            if converged {
                "converged"
            } else {
                "did not converge"
            },
            scenario.expect_divergence
        );
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Apply one axis value to a scenario copy.
fn apply_axis(base: &Scenario, axis: &str, value: &str) -> Result<Scenario> {
    let mut s = base.clone();
    match axis {
        "n_users" | "area" => {
            let TopologySource::Random {
                ref mut n,
                ref mut area,
                ..
            } = s.topology
            else {
                bail!("axis '{axis}' requires a random topology");
            };
            if axis == "n_users" {
                *n = value.parse().context("n_users value")?;
            } else {
                *area = value.parse().context("area value")?;
            }
        }
        "seed" => {
            let seed: u64 = value.parse().context("seed value")?;
            s.frame.seed = seed;
            if let TopologySource::Random {
                seed: ref mut topo_seed,
                ..
            } = s.topology
            {
                *topo_seed = seed;
            }
        }
        "gain_multiplier" => s.run.gain_multiplier = value.parse().context("gain value")?,
        "l_f" => {
            s.frame.l_f = value.parse().context("l_f value")?;
            // keep the ND window at ten frames
            s.frame.l_nd = 10 * s.frame.l_f;
        }
        other => bail!("unknown sweep axis '{other}'"),
    }
    Ok(s)
}

struct SweepRow {
    value: String,
    users: usize,
    area: Option<f64>,
    report: Option<MetricsReport>,
}

fn cmd_sweep(base: &Scenario, axis: &str, values: &str, out_dir: &Path) -> Result<ExitCode> {
    fs::create_dir_all(out_dir)?;
    let values: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    let scenarios: Vec<Scenario> = values
        .iter()
        .map(|v| apply_axis(base, axis, v))
        .collect::<Result<_>>()?;

    // independent runs, one thread each
    let rows: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .zip(&values)
            .map(|(s, v)| {
                scope.spawn(move || -> Result<SweepRow> {
                    let g = s.build_graph()?;
                    let (trace, partition) = execute(s, &g);
                    let report = match trace.outcome {
                        RunOutcome::Converged { .. } => Some(MetricsReport::compute(
                            &g,
                            &partition,
                            &trace,
                            s.frame.l_s,
                            s.frame.header_overhead_bits,
                            s.metrics_tol,
                            s.metrics_window,
                        )?),
                        RunOutcome::MaxIterations => None,
                    };
                    let area = match s.topology {
                        TopologySource::Random { area, .. } => Some(area),
                        _ => None,
                    };
                    Ok(SweepRow {
                        value: v.to_string(),
                        users: g.n(),
                        area,
                        report,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let header =
        format!("{axis},users,area,ud,total_theta,jain,d_pareto,t_conv,leaders,max_height");
    println!("{header}");
    let mut csv = header + "\n";
    let fmt_f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for row in rows {
        let row = row?;
        let ud = row.area.map(|a| row.users as f64 / a);
        let line = match &row.report {
            Some(r) => format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{},{},{}",
                row.value,
                row.users,
                fmt_f(row.area),
                fmt_f(ud),
                r.total_theta,
                r.jain,
                r.d_pareto,
                r.convergence_iterations
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "-".into()),
                r.leader_count,
                r.max_tree_height
            ),
            None => format!(
                "{},{},{},{},-,-,-,-,-,-",
                row.value,
                row.users,
                fmt_f(row.area),
                fmt_f(ud)
            ),
        };
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}
