use clap::{Parser, Subcommand};
use ovsmc::kalman::kalman_filter;
use ovsmc::learn::{vsmc_fit, OvsmcConfig, VsmcConfig};
use ovsmc::rng::RngState;
use ovsmc_cli::config::ExperimentConfig;
use ovsmc_cli::csvio::{read_series, write_series, TraceWriter};
use ovsmc_cli::experiments::{run_experiment, run_online_loop, write_summary};
use ovsmc_cli::{checks, CliError};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Particle filtering with learned proposals and online parameter
/// estimation for state-space models.
#[derive(Parser)]
#[command(name = "ovsmc", version, about)]
struct Cli {
    /// Worker threads for replicate-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a data record from the configured model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Online learning over a stream (from --data, or simulated).
    FitOvsmc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Batch learning: repeated sweeps over a record.
    FitVsmc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exact log-likelihood of a data file under the configured
    /// linear Gaussian model.
    Kalman {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the built-in verification suite.
    Check {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    Ok((cfg, out_dir))
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, seed, out } => {
            let (cfg, out_dir) = load(&config, seed, out)?;
            let summary = run_experiment(&cfg, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(())
        }
        Command::Simulate { config, seed, out } => {
            let (cfg, out_dir) = load(&config, seed, out)?;
            std::fs::create_dir_all(&out_dir).map_err(CliError::io)?;
            let model = cfg.build_model()?;
            let horizon = cfg
                .t
                .or(cfg.steps)
                .ok_or_else(|| CliError::Config("field 't' (or 'steps') is required".into()))?;
            let traj = model.simulate(horizon, cfg.seed)?;
            write_series(&out_dir.join("observations.csv"), &traj.observations, "y")?;
            write_series(&out_dir.join("states.csv"), &traj.states, "x")?;
            println!(
                "wrote {} observations to {}",
                traj.observations.len(),
                out_dir.join("observations.csv").display()
            );
            Ok(())
        }
        Command::FitOvsmc {
            config,
            data,
            seed,
            out,
        } => {
            let (cfg, out_dir) = load(&config, seed, out)?;
            std::fs::create_dir_all(&out_dir).map_err(CliError::io)?;
            let truth = cfg.build_model()?;
            let ys = match data {
                Some(path) => read_series(&path)?,
                None => {
                    let steps = cfg.steps.ok_or_else(|| {
                        CliError::Config("field 'steps' is required without --data".into())
                    })?;
                    truth.simulate(steps, cfg.seed)?.observations
                }
            };
            let model0 = cfg.build_start_model()?;
            let proposal0 = cfg.build_proposal(&truth)?;
            let (mut opt_t, mut opt_l) = cfg.build_optimizers(&model0, &proposal0)?;
            let ocfg = OvsmcConfig {
                l: cfg
                    .l
                    .ok_or_else(|| CliError::Config("field 'l' is required".into()))?,
                n: cfg
                    .n
                    .ok_or_else(|| CliError::Config("field 'n' is required".into()))?,
                learn_theta: cfg.learn_theta,
                learn_lambda: cfg.learn_lambda,
                resampler: cfg.resampler(),
            };
            let mut writer =
                TraceWriter::create(&out_dir.join("trace.csv"), &model0.param_names())?;
            let result = run_online_loop(
                &model0,
                &proposal0,
                &ys,
                &ocfg,
                &mut opt_t,
                &mut opt_l,
                cfg.seed,
                &mut writer,
            );
            writer.flush()?;
            let (trace, model, proposal) = result?;
            let summary = json!({
                "experiment": "fit_ovsmc",
                "seed": cfg.seed,
                "steps": trace.len(),
                "param_names": model.param_names(),
                "theta_final": model.params().values,
                "elbo_window_mean_500": trace.window_mean(500, |r| r.incremental_elbo),
                "lambda_norm_final": proposal.lambda_norm(),
            });
            write_summary(&out_dir, &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(())
        }
        Command::FitVsmc {
            config,
            data,
            seed,
            out,
        } => {
            let (cfg, out_dir) = load(&config, seed, out)?;
            std::fs::create_dir_all(&out_dir).map_err(CliError::io)?;
            let truth = cfg.build_model()?;
            let ys = match data {
                Some(path) => read_series(&path)?,
                None => {
                    let horizon = cfg.t.ok_or_else(|| {
                        CliError::Config("field 't' is required without --data".into())
                    })?;
                    truth.simulate(horizon, cfg.seed)?.observations
                }
            };
            let model0 = cfg.build_start_model()?;
            let proposal0 = cfg.build_proposal(&truth)?;
            let (mut opt_t, mut opt_l) = cfg.build_optimizers(&model0, &proposal0)?;
            let particles = cfg
                .n
                .or(cfg.l)
                .ok_or_else(|| CliError::Config("field 'n' (or 'l') is required".into()))?;
            let vcfg = VsmcConfig {
                n: particles,
                sweeps: cfg.sweeps.unwrap_or(0),
                learn_theta: cfg.learn_theta,
                learn_lambda: cfg.learn_lambda,
                resampler: cfg.resampler(),
            };
            let mut rng = RngState::stream(cfg.seed, 3);
            let fit = vsmc_fit(
                &model0, &proposal0, &ys, &vcfg, &mut opt_t, &mut opt_l, &mut rng,
            )?;
            let mut writer =
                TraceWriter::create(&out_dir.join("trace.csv"), &model0.param_names())?;
            for rec in &fit.trace.records {
                writer.write_record(rec)?;
            }
            writer.flush()?;
            let summary = json!({
                "experiment": "fit_vsmc",
                "seed": cfg.seed,
                "sweeps": vcfg.sweeps,
                "particles": particles,
                "param_names": fit.model.param_names(),
                "theta_final": fit.model.params().values,
                "elbo_final_sweep": fit.trace.records.last().map(|r| r.incremental_elbo),
                "lambda_norm_final": fit.proposal.lambda_norm(),
            });
            write_summary(&out_dir, &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(())
        }
        Command::Kalman { config, data } => {
            let (cfg, _) = load(&config, None, None)?;
            let model = cfg.build_model()?;
            let lg = model
                .as_linear_gaussian()
                .ok_or_else(|| CliError::Config("kalman needs a linear Gaussian model".into()))?;
            let ys = read_series(&data)?;
            let init = model.initial_distribution()?;
            let res = kalman_filter(lg, &ys, &init.mean, &init.cov)?;
            println!("observations={}", ys.len());
            println!("total_loglik={}", res.total_loglik);
            println!("per_step_loglik={}", res.total_loglik / ys.len() as f64);
            Ok(())
        }
        Command::Check { seed, out } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from("check_out"));
            std::fs::create_dir_all(&out_dir).map_err(CliError::io)?;
            let outcomes = checks::run_all(&out_dir, seed.unwrap_or(7))?;
            for o in &outcomes {
                println!("{}", o.report_line());
            }
            let summary = checks::outcome_summary(&outcomes);
            write_summary(&out_dir, &summary)?;
            if outcomes.iter().all(|o| o.passed) {
                println!("all {} checks passed", outcomes.len());
                Ok(())
            } else {
                Err(CliError::CheckFailed(
                    outcomes
                        .iter()
                        .filter(|o| !o.passed)
                        .map(|o| o.name.clone())
                        .collect::<Vec<_>>()
                        .join(", "),
                ))
            }
        }
    }
}
