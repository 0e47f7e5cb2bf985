use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use oacnet::exec::Mode;
use oacnet::experiments::{self, Check, ExperimentConfig, SnrConfig, SweepConfig};
use oacnet::factorization::{self, AdmmOptions, OacProblem, POWER_TOL};
use oacnet::io::{self, ChannelDoc, CodeDoc, GainDoc, PlantDoc, SynthesisDoc, SystemDoc, TopologyDoc};
use oacnet::model::{self, GainConstraintSet, NetworkTopology, PowerBudget};
use oacnet::simulate::{self, ClosedLoopSystem, InitialState};
use oacnet::synthesis::{self, SynthesisOptions, FREQUENCY_POINTS};
use oacnet::{Error, Result};

/// Structured output-feedback design over an over-the-air aggregation
/// network.
#[derive(Parser)]
#[command(name = "oacnet", version)]
struct Cli {
    /// Initial ADMM penalty.
    #[arg(long, global = true)]
    tau0: Option<f64>,
    /// Proximal weight on the decoder step.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Proximal weight on the precoder step.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Transmission slots per control period.
    #[arg(long, global = true)]
    slots: Option<usize>,
    /// JSON experiment configuration; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run independent jobs on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a structured static output-feedback gain.
    Synthesize {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        /// Frobenius-norm bound on the gain.
        #[arg(long)]
        gmax: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute precoders and decoders that realize a gain over a channel.
    Factorize {
        #[arg(long)]
        gain: PathBuf,
        #[arg(long)]
        channel: PathBuf,
        /// One budget for every sensor, or a comma-separated list.
        #[arg(long)]
        budget: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the closed loop that a code realizes on a plant.
    Assemble {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo state MSE of a closed loop.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start every run from the origin instead of a random unit vector.
        #[arg(long)]
        zero_start: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce one of the studies.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Write input documents.
    #[command(subcommand)]
    Generate(Generate),
}

#[derive(Subcommand)]
enum Experiment {
    /// Unstable fraction of realized loops against the power budget.
    Fig2 {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ball-and-beam state MSE against SNR.
    Fig3 {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Generate {
    /// Random plant with `ρ(A)` uniform in [0.8, 1.5].
    Plant {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 4)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampled ball-and-beam plant.
    BallAndBeam {
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete actuator–sensor graph.
    Topology {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rayleigh(1) channel on a topology's links.
    Channel {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        sigma2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Default experiment configuration.
    Config {
        #[command(flatten)]
        which: WhichConfig,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct WhichConfig {
    #[arg(long)]
    fig2: bool,
    #[arg(long)]
    fig3: bool,
}

/// Whether every checked invariant held.
type Verdict = bool;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more invariants failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn admm_options(cli: &Cli, base: AdmmOptions) -> AdmmOptions {
    AdmmOptions {
        tau0: cli.tau0.unwrap_or(base.tau0),
        alpha: cli.alpha.unwrap_or(base.alpha),
        beta: cli.beta.unwrap_or(base.beta),
        ..base
    }
}

fn mode(cli: &Cli) -> Mode {
    if cli.sequential {
        Mode::Sequential
    } else {
        Mode::default()
    }
}

fn report(checks: &[Check]) -> Verdict {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn parse_budget(text: &str, sensors: usize) -> Result<PowerBudget> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad budget value {v:?}")))
        })
        .collect::<Result<_>>()?;
    match values.len() {
        1 => PowerBudget::uniform(sensors, values[0]),
        k if k == sensors => PowerBudget::new(values),
        k => Err(Error::DimensionMismatch(format!("{k} budgets for {sensors} sensors"))),
    }
}

fn run(cli: &Cli) -> Result<Verdict> {
    match &cli.command {
        Command::Synthesize {
            plant,
            topology,
            gmax,
            out,
        } => {
            let plant = io::read_json::<PlantDoc>(plant)?.to_model()?;
            let topology = io::read_json::<TopologyDoc>(topology)?.to_model()?;
            let constraints = GainConstraintSet::from_topology(&topology, *gmax)?;
            let result = synthesis::synthesize(&plant, &constraints, &SynthesisOptions::default())?;
            let rho = model::spectral_radius(&result.closed_loop(&plant)?)?;
            io::write_json(out, &SynthesisDoc::new(&result, rho))?;
            let grid = synthesis::energy_gain_estimate(&plant, &result.gain, FREQUENCY_POINTS)?;
            println!(
                "gamma {:.6} (grid {:.6}), spectral radius {:.6}, {} iterations",
                result.gamma, grid, rho, result.outer_iterations
            );
            Ok(report(&[
                Check {
                    name: "closed loop stable".into(),
                    passed: rho < 1.0,
                    detail: format!("rho = {rho:.6}"),
                },
                Check {
                    name: "certified bound dominates the frequency grid".into(),
                    passed: grid <= result.gamma * (1.0 + 1e-4),
                    detail: format!("{grid:.6} <= {:.6}", result.gamma),
                },
            ]))
        }
        Command::Factorize {
            gain,
            channel,
            budget,
            seed,
            out,
        } => {
            let g = io::read_json::<GainDoc>(gain)?.gain()?;
            let channel = io::read_json::<ChannelDoc>(channel)?.to_model()?;
            let target = factorization::target_matrix(&g, &channel)?;
            let budgets = parse_budget(budget, target.nrows())?;
            let problem = OacProblem::new(target, budgets.clone(), cli.slots.unwrap_or(4))?;
            if !problem.rank_sufficient() {
                eprintln!(
                    "warning: {} slots for a rank-{} target; an exact code does not exist",
                    problem.slots(),
                    problem.target_rank()
                );
            }
            let outcome = factorization::run_admm(&problem, &admm_options(cli, AdmmOptions::default()), *seed)?;
            io::write_json(out, &CodeDoc::new(&outcome, budgets.as_slice()))?;
            write_history(&out.with_extension("history.csv"), &outcome.trace)?;
            println!(
                "{:?} after {} iterations, residual {:.3e}, max KKT residual {:.3e}",
                outcome.status,
                outcome.iterations,
                outcome.primal_residual(),
                outcome.kkt.max_residual()
            );
            Ok(report(&[
                Check {
                    name: "gain realized exactly".into(),
                    passed: outcome.primal_residual() <= experiments::EXACT_RESIDUAL,
                    detail: format!("residual {:.3e}", outcome.primal_residual()),
                },
                Check {
                    name: "power budgets respected".into(),
                    passed: outcome.code.power_excess(&budgets) <= POWER_TOL,
                    detail: format!("max excess {:.3e}", outcome.code.power_excess(&budgets)),
                },
            ]))
        }
        Command::Assemble {
            plant,
            code,
            channel,
            out,
        } => {
            let plant = io::read_json::<PlantDoc>(plant)?.to_model()?;
            let code = io::read_json::<CodeDoc>(code)?.to_code()?;
            let channel = io::read_json::<ChannelDoc>(channel)?.to_model()?;
            let system = ClosedLoopSystem::from_code(&plant, &code, &channel)?;
            io::write_json(out, &SystemDoc::from(&system))?;
            let rho = model::spectral_radius(system.a_hat())?;
            println!("realized spectral radius {rho:.6}");
            Ok(true)
        }
        Command::Simulate {
            system,
            runs,
            horizon,
            seed,
            zero_start,
            out,
        } => {
            let system = io::read_json::<SystemDoc>(system)?.to_model()?;
            let start = if *zero_start {
                InitialState::Fixed(DVector::zeros(system.n()))
            } else {
                InitialState::RandomUnit
            };
            let report = simulate::monte_carlo_with(mode(cli), &system, &start, *horizon, *runs, *seed)?;
            let mut writer = csv::Writer::from_path(out)?;
            writer.write_record(["run", "mse"])?;
            for (r, v) in report.per_run.iter().enumerate() {
                writer.write_record([r.to_string(), v.to_string()])?;
            }
            writer.write_record(["mean".to_string(), report.mse_mean.to_string()])?;
            writer.write_record(["std".to_string(), report.mse_std.to_string()])?;
            writer.write_record(["unstable_fraction".to_string(), report.unstable_fraction.to_string()])?;
            writer.flush()?;
            println!(
                "mse {:.6e} ± {:.3e} over {} runs, unstable fraction {}",
                report.mse_mean, report.mse_std, report.runs, report.unstable_fraction
            );
            Ok(true)
        }
        Command::Experiment(Experiment::Fig2 { trials, seed, out }) => {
            let mut config = match load_config(cli)? {
                Some(ExperimentConfig::StabilitySweep(c)) => c,
                Some(_) => {
                    return Err(Error::InvalidArgument(
                        "fig2 needs a stability-sweep configuration".into(),
                    ))
                }
                None => SweepConfig::default(),
            };
            config.trials = trials.unwrap_or(config.trials);
            config.seed = seed.unwrap_or(config.seed);
            config.slots = cli.slots.unwrap_or(config.slots);
            config.admm = admm_options(cli, config.admm);
            let outcome = experiments::stability_sweep(&config, mode(cli))?;
            fs::create_dir_all(out)?;
            experiments::emit_table(&outcome.table, &out.join("fig2.csv"))?;
            experiments::emit_plotdata(&outcome.table, &out.join("plot"))?;
            io::write_json(&out.join("trials.json"), &outcome.trials)?;
            io::write_json(&out.join("config.json"), &ExperimentConfig::StabilitySweep(config))?;
            print_table(&outcome.table);
            Ok(report(&experiments::stability_checks(&outcome)))
        }
        Command::Experiment(Experiment::Fig3 { runs, seed, out }) => {
            let mut config = match load_config(cli)? {
                Some(ExperimentConfig::BallAndBeam(c)) => c,
                Some(_) => {
                    return Err(Error::InvalidArgument(
                        "fig3 needs a ball-and-beam configuration".into(),
                    ))
                }
                None => SnrConfig::default(),
            };
            config.runs = runs.unwrap_or(config.runs);
            config.seed = seed.unwrap_or(config.seed);
            config.slots = cli.slots.unwrap_or(config.slots);
            config.admm = admm_options(cli, config.admm);
            let outcome = experiments::mse_vs_snr(&config, mode(cli))?;
            fs::create_dir_all(out)?;
            experiments::emit_table(&outcome.table, &out.join("fig3.csv"))?;
            experiments::emit_plotdata(&outcome.table, &out.join("plot"))?;
            io::write_json(&out.join("points.json"), &outcome.points)?;
            io::write_json(&out.join("variants.json"), &outcome.variants)?;
            io::write_json(&out.join("config.json"), &ExperimentConfig::BallAndBeam(config))?;
            print_table(&outcome.table);
            Ok(report(&experiments::snr_checks(&outcome)))
        }
        Command::Generate(g) => {
            generate(g)?;
            Ok(true)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    cli.config.as_deref().map(ExperimentConfig::load).transpose()
}

fn print_table(table: &experiments::ResultTable) {
    for name in table.series_names() {
        let values: Vec<String> = table
            .series(&name)
            .iter()
            .map(|r| format!("{:.2}:{:.4}", r.x, r.y))
            .collect();
        println!("{name}: {}", values.join(" "));
    }
}

fn write_history(path: &Path, trace: &factorization::AdmmTrace) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["k", "primal_residual", "dual_norm", "tau"])?;
    for k in 0..trace.primal_residual.len() {
        writer.write_record([
            k.to_string(),
            trace.primal_residual[k].to_string(),
            trace.dual_norm[k].to_string(),
            trace.tau[k].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn generate(g: &Generate) -> Result<()> {
    match g {
        Generate::Plant { n, m, p, seed, out } => {
            io::write_json(out, &PlantDoc::from(&model::random_plant(*n, *m, *p, *seed)?))
        }
        Generate::BallAndBeam { delta, out } => {
            io::write_json(out, &PlantDoc::from(&experiments::ball_and_beam_plant(*delta)?))
        }
        Generate::Topology { m, p, out } => io::write_json(out, &TopologyDoc::from(&NetworkTopology::full(*m, *p))),
        Generate::Channel {
            topology,
            sigma2,
            seed,
            out,
        } => {
            let topology = io::read_json::<TopologyDoc>(topology)?.to_model()?;
            let channel = model::sample_channel(&topology, *seed).with_noise(*sigma2)?;
            io::write_json(out, &ChannelDoc::from(&channel))
        }
        Generate::Config { which, out } => {
            let config = if which.fig2 {
                ExperimentConfig::StabilitySweep(SweepConfig::default())
            } else {
                ExperimentConfig::BallAndBeam(SnrConfig::default())
            };
            io::write_json(out, &config)
        }
    }
}
