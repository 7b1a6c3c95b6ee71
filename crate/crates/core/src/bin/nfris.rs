use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nfris::channel::{mimo_ard, mimo_rd, sample_channel, ChannelModel};
use nfris::experiment::{
    condition_violations, default_b_grid, eigen_structure_violations, monotone_violations, nmse_schema_violations,
    nominal_b_min, parse_methods, report_overhead, run_condition_sweep, run_eigen_analysis, run_nmse_sweep,
    run_runtime_table, runtime_law_violations, ExperimentResult, HarnessOptions, Method, NmseSweep, RuntimeOptions,
    SweepCoverage,
};
use nfris::rng::seeded;
use nfris::timescale::InitialAccuracy;
use nfris::training::build_schedule;
use nfris::{Error, Result, SystemConfig};

#[derive(Parser)]
#[command(
    name = "nfris",
    version,
    about = "Two-timescale XL-RIS channel estimation experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Raw CSV destination; the summary goes next to it as `*.summary.csv`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated subset of tsp,pwclra,clra.
    #[arg(long, global = true, default_value = "tsp,pwclra,clra")]
    methods: String,
    /// Check invariants and exit nonzero on failure.
    #[arg(long, global = true)]
    verify: bool,
}

#[derive(Args, Clone)]
struct NmseArgs {
    #[arg(long, default_value = "near-field")]
    model: ChannelModel,
    /// Subframes per block for tsp (default 2 B_min).
    #[arg(long)]
    b: Option<usize>,
    /// Initial-channel accuracy: `perfect` or an NMSE in dB.
    #[arg(long, default_value = "perfect")]
    ia: InitialAccuracy,
    /// Use only the minimum number of benchmark sweeps.
    #[arg(long)]
    minimum_coverage: bool,
    #[arg(long)]
    clra_rank: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Relative eigenvalue ratios of H_0 H_0^H per channel model.
    Eigen {
        #[arg(long, value_delimiter = ',', default_value = "near-field,sparse,rayleigh")]
        models: Vec<ChannelModel>,
    },
    /// Gram condition numbers against the subframe count.
    Cond {
        #[arg(long, value_delimiter = ',', default_value = "near-field,sparse,rayleigh")]
        models: Vec<ChannelModel>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
        values: Vec<usize>,
    },
    /// NMSE against the subframe count B (pilot overhead Q B).
    NmseOverhead {
        #[command(flatten)]
        nmse: NmseArgs,
        /// Defaults to multiples of B_min up to M_sub.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    NmseSnr {
        #[command(flatten)]
        nmse: NmseArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,30")]
        values: Vec<f64>,
    },
    /// NMSE against the number of RF chains.
    NmseRf {
        #[command(flatten)]
        nmse: NmseArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        values: Vec<usize>,
    },
    /// NMSE against the initial-channel accuracy.
    NmseIa {
        #[command(flatten)]
        nmse: NmseArgs,
        #[arg(long, value_delimiter = ',', default_value = "-10,-20,-30,perfect")]
        values: Vec<InitialAccuracy>,
    },
    /// Pilot symbols per block for each method.
    Overhead {
        /// Subframes per block for tsp (default B_min).
        #[arg(long)]
        b: Option<usize>,
    },
    /// Multi-LS solve time over an (M, Q) grid.
    Runtime {
        #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
        m_values: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
        q_values: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        batches: usize,
    },
    /// Export the reflection schedule as CSV.
    Schedule {
        #[arg(long)]
        b: Option<usize>,
    },
    /// Export one channel realization as JSON.
    Channel {
        #[arg(long, default_value = "near-field")]
        model: ChannelModel,
    },
}

fn load_config(common: &Common) -> Result<SystemConfig> {
    let mut cfg = match &common.config {
        Some(path) => SystemConfig::from_file(path)?,
        None => SystemConfig::preset(&common.preset)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn harness_options(args: &NmseArgs) -> HarnessOptions {
    HarnessOptions {
        model: args.model,
        b_subframes: args.b,
        accuracy: args.ia,
        coverage: if args.minimum_coverage {
            SweepCoverage::Minimum
        } else {
            SweepCoverage::Full
        },
        clra_rank: args.clra_rank,
        ..HarnessOptions::default()
    }
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn emit<R: Serialize>(result: &ExperimentResult<R>, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            result.write_rows_csv(BufWriter::new(File::create(path)?))?;
            result.write_summary_csv(BufWriter::new(File::create(summary_path(path))?))?;
        }
        None => result.write_summary_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn write_to<F>(out: Option<&Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(&mut io::stdout().lock())?,
    }
    Ok(())
}

fn nmse(cfg: &SystemConfig, common: &Common, args: &NmseArgs, sweep: NmseSweep) -> Result<Vec<String>> {
    let methods = parse_methods(&common.methods)?;
    let result = run_nmse_sweep(cfg, &sweep, &methods, &harness_options(args))?;
    emit(&result, common.out.as_deref())?;
    let mut problems = nmse_schema_violations(&result);
    for m in &methods {
        problems.extend(monotone_violations(&result, m.name()));
    }
    Ok(problems)
}

fn run(cli: Cli) -> Result<Vec<String>> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    let out = common.out.as_deref();
    match cli.command {
        Command::Eigen { models } => {
            let result = run_eigen_analysis(&cfg, &models)?;
            emit(&result, out)?;
            Ok(eigen_structure_violations(&result))
        }
        Command::Cond { models, values } => {
            let result = run_condition_sweep(&cfg, &models, &values)?;
            emit(&result, out)?;
            let b_min = nominal_b_min(&cfg)?;
            if values.contains(&1) && values.contains(&b_min) {
                Ok(condition_violations(&result, b_min))
            } else {
                Ok(Vec::new())
            }
        }
        Command::NmseOverhead { nmse: args, values } => {
            let values = match values {
                Some(v) => v,
                None => default_b_grid(&cfg)?,
            };
            nmse(&cfg, common, &args, NmseSweep::Overhead(values))
        }
        Command::NmseSnr { nmse: args, values } => nmse(&cfg, common, &args, NmseSweep::Snr(values)),
        Command::NmseRf { nmse: args, values } => {
            // A fixed B keeps the overhead equal across RF-chain counts.
            let args = NmseArgs {
                b: Some(args.b.unwrap_or(2 * nominal_b_min(&cfg)?)),
                ..args
            };
            nmse(&cfg, common, &args, NmseSweep::NRf(values))
        }
        Command::NmseIa { nmse: args, values } => nmse(&cfg, common, &args, NmseSweep::Ia(values)),
        Command::Overhead { b } => {
            let b = match b {
                Some(b) => b,
                None => nominal_b_min(&cfg)?,
            };
            let options = HarnessOptions::default();
            let reports = parse_methods(&common.methods)?
                .into_iter()
                .map(|m| report_overhead(&cfg, m, b, &options))
                .collect::<Result<Vec<_>>>()?;
            write_to(out, |w| {
                let mut csv = csv::Writer::from_writer(w);
                for r in &reports {
                    csv.serialize(r)?;
                }
                csv.flush()?;
                Ok(())
            })?;
            eprintln!("MIMO-ARD {:.1} m, MIMO-RD {:.1} m", mimo_ard(&cfg)?, mimo_rd(&cfg)?);
            let tsp = reports.iter().find(|r| r.method == Method::Tsp.name());
            Ok(tsp
                .filter(|r| r.per_block != cfg.q_pieces * b)
                .map(|r| format!("tsp per-block overhead {} != Q B", r.per_block))
                .into_iter()
                .collect())
        }
        Command::Runtime {
            m_values,
            q_values,
            batches,
        } => {
            let options = RuntimeOptions {
                batches,
                ..RuntimeOptions::default()
            };
            let result = run_runtime_table(&cfg, &m_values, &q_values, options)?;
            emit(&result, out)?;
            Ok(runtime_law_violations(&result))
        }
        Command::Schedule { b } => {
            let b = match b {
                Some(b) => b,
                None => 2 * nominal_b_min(&cfg)?,
            };
            let schedule = build_schedule(&cfg, b)?;
            write_to(out, |w| schedule.write_csv(w))?;
            Ok(Vec::new())
        }
        Command::Channel { model } => {
            let real = sample_channel(model, &cfg, &mut seeded(cfg.seed))?;
            match out {
                Some(path) => real.write_json(path)?,
                None => {
                    serde_json::to_writer(io::stdout().lock(), &real.to_dump())?;
                    println!();
                }
            }
            Ok(Vec::new())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verify = cli.common.verify;
    match run(cli) {
        Ok(problems) => {
            if verify {
                for p in &problems {
                    eprintln!("verify: {p}");
                }
                if !problems.is_empty() {
                    return ExitCode::from(2);
                }
                eprintln!("verify: ok");
            }
            ExitCode::SUCCESS
        }
        Err(Error::InvalidArgument(msg)) | Err(Error::InvalidConfig(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(64)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
