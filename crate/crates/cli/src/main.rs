use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ltrc_ustat::crtest::{self, Scaling, TestOptions, TestResult};
use ltrc_ustat::estimators::{self, LimitConvention};
use ltrc_ustat::io as lio;
use ltrc_ustat::sim::{self, Calibration, Lifetime, SimConfig};
use ltrc_ustat::{Cause, LtrcSample};

#[derive(Parser)]
#[command(name = "ltrc", version, about = "Competing-risks analysis for left-truncated right-censored data")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum LifetimeKind {
    Exp,
    Weibull,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether cause 1 tends to strike later than cause 2.
    Test {
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "left")]
        limit_convention: LimitConvention,
        #[arg(long, default_value = "as-printed")]
        scaling: Scaling,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Write censoring and cumulative incidence estimates as CSV files.
    Estimate {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "left")]
        limit_convention: LimitConvention,
    },
    /// Run a size/power table described by a TOML config.
    Simulate {
        config: PathBuf,
        /// CSV/JSON destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        limit_convention: Option<LimitConvention>,
        #[arg(long)]
        scaling: Option<Scaling>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Draw one synthetic dataset in LTRC CSV form.
    Generate {
        #[arg(long, value_enum, default_value_t = LifetimeKind::Exp)]
        lifetime: LifetimeKind,
        #[arg(long)]
        shape: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0.5)]
        p1: f64,
        #[arg(long, default_value_t = 0.2)]
        censor_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        trunc_frac: f64,
        #[arg(short, long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert the transformer lifetime table to LTRC CSV.
    Convert {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct Conventions {
    limit: LimitConvention,
    scaling: Scaling,
}

#[derive(Serialize)]
struct TestReport {
    delta_hat: f64,
    sigma1c_sq: f64,
    z: f64,
    p_value: f64,
    reject: bool,
    alpha: f64,
    n: usize,
    n_failures: usize,
    n_censored: usize,
    ties_discarded: u64,
    conventions: Conventions,
}

impl From<TestResult> for TestReport {
    fn from(r: TestResult) -> Self {
        TestReport {
            delta_hat: r.delta_hat,
            sigma1c_sq: r.sigma_sq,
            z: r.z,
            p_value: r.p_value,
            reject: r.reject,
            alpha: r.alpha,
            n: r.n,
            n_failures: r.n_failures,
            n_censored: r.n_censored,
            ties_discarded: r.ties_discarded,
            conventions: Conventions { limit: r.options.convention, scaling: r.options.scaling },
        }
    }
}

#[derive(Serialize)]
struct EstimateReport {
    n: usize,
    t_max: f64,
    censor_survival_at_t_max: f64,
    cif1_at_t_max: f64,
    cif2_at_t_max: f64,
    exp_relation_gap: f64,
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
    exit_code: u8,
}

fn read_sample(path: &Path) -> Result<LtrcSample> {
    let text = fs::read_to_string(path).map_err(ltrc_ustat::Error::from).with_context(|| format!("reading {}", path.display()))?;
    Ok(lio::read_dataset(&text)?.0)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).map_err(ltrc_ustat::Error::from).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Test { input, alpha, limit_convention, scaling, format } => {
            let sample = read_sample(&input)?;
            let options = TestOptions { convention: limit_convention, scaling };
            let report = TestReport::from(crtest::run_test_with(&sample, alpha, options)?);
            let mut out = io::stdout().lock();
            match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
                Format::Csv => {
                    writeln!(out, "delta_hat,sigma1c_sq,z,p_value,reject,alpha,n,n_failures,n_censored,ties_discarded,limit,scaling")?;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        report.delta_hat,
                        report.sigma1c_sq,
                        report.z,
                        report.p_value,
                        report.reject,
                        report.alpha,
                        report.n,
                        report.n_failures,
                        report.n_censored,
                        report.ties_discarded,
                        report.conventions.limit,
                        report.conventions.scaling
                    )?;
                }
            }
        }
        Command::Estimate { input, out, limit_convention } => {
            let sample = read_sample(&input)?;
            fs::create_dir_all(&out).map_err(ltrc_ustat::Error::from).with_context(|| format!("creating {}", out.display()))?;
            let survival = estimators::censor_survival(&sample)?;
            let hazard = estimators::censor_cum_hazard(&sample)?;
            let cif1 = estimators::cumulative_incidence_with(&sample, Cause::One, limit_convention)?;
            let cif2 = estimators::cumulative_incidence_with(&sample, Cause::Two, limit_convention)?;
            let sub = estimators::sub_distribution(&sample);
            let mut files = Vec::new();
            for (name, f) in [
                ("censor_survival.csv", &survival),
                ("censor_cum_hazard.csv", &hazard),
                ("cif_cause1.csv", &cif1),
                ("cif_cause2.csv", &cif2),
                ("sub_distribution.csv", &sub),
            ] {
                let path = out.join(name);
                lio::write_step_function(f, open_output(Some(&path))?)?;
                files.push(path);
            }
            let report = EstimateReport {
                n: sample.len(),
                t_max: sample.max_obs_time(),
                censor_survival_at_t_max: survival.terminal_value(),
                cif1_at_t_max: cif1.terminal_value(),
                cif2_at_t_max: cif2.terminal_value(),
                exp_relation_gap: estimators::exp_relation_gap(&survival, &hazard),
                files,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate { config, out, seed, limit_convention, scaling, format } => {
            let text = fs::read_to_string(&config)
                .map_err(ltrc_ustat::Error::from)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut spec = lio::parse_sim_config(&text)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(convention) = limit_convention {
                spec.options.convention = convention;
            }
            if let Some(scaling) = scaling {
                spec.options.scaling = scaling;
            }
            let rows = spec.run()?;
            let to_stdout = out.is_none();
            let mut sink = open_output(out.as_deref())?;
            match format {
                Format::Csv => lio::write_table(&rows, &mut sink)?,
                Format::Json => writeln!(sink, "{}", serde_json::to_string_pretty(&rows)?)?,
            }
            sink.flush()?;
            let summary = format!(
                "{} scenarios x {} levels, {} replications each, seed {}, {} / {}",
                spec.scenarios().len(),
                spec.alpha.len(),
                spec.reps,
                spec.seed,
                spec.options.convention,
                spec.options.scaling
            );
            if to_stdout {
                eprintln!("{summary}");
            } else {
                println!("{summary}");
            }
        }
        Command::Generate { lifetime, shape, a, p1, censor_frac, trunc_frac, n, seed, out } => {
            let lifetime = match (lifetime, shape) {
                (LifetimeKind::Exp, None) => Lifetime::Exponential,
                (LifetimeKind::Weibull, Some(shape)) => Lifetime::Weibull { shape },
                (LifetimeKind::Exp, Some(_)) => {
                    return Err(config_error("shape", "only meaningful with --lifetime weibull"))
                }
                (LifetimeKind::Weibull, None) => {
                    return Err(config_error("shape", "required with --lifetime weibull"))
                }
            };
            let config = SimConfig {
                lifetime,
                censor_frac,
                trunc_frac,
                seed,
                ..SimConfig::exponential(a, p1, n, 1)
            };
            config.validate()?;
            let calibration = Calibration::for_config(&config)?;
            let sample = sim::draw_ltrc_sample(&config, &calibration, &mut sim::replication_rng(seed, 0))?;
            let mut sink = open_output(out.as_deref())?;
            lio::write_ltrc_csv(&sample, &mut sink)?;
            sink.flush()?;
        }
        Command::Convert { input, out } => {
            let file = fs::File::open(&input)
                .map_err(ltrc_ustat::Error::from)
                .with_context(|| format!("reading {}", input.display()))?;
            let sample = lio::ingest_transformer(io::BufReader::new(file))?;
            let mut sink = open_output(out.as_deref())?;
            lio::write_ltrc_csv(&sample, &mut sink)?;
            sink.flush()?;
        }
    }
    Ok(())
}

fn config_error(field: &str, reason: &str) -> anyhow::Error {
    ltrc_ustat::Error::InvalidConfig { field: field.into(), reason: reason.into() }.into()
}

fn error_report(err: &anyhow::Error) -> ErrorReport {
    let message = format!("{err:#}");
    match err.downcast_ref::<ltrc_ustat::Error>() {
        Some(e) if e.is_input_error() => ErrorReport { error: "input", message, exit_code: 2 },
        Some(_) => ErrorReport { error: "numeric", message, exit_code: 3 },
        None => ErrorReport { error: "internal", message, exit_code: 1 },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = error_report(&err);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(report.exit_code)
        }
    }
}
