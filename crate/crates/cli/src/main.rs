use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moralframe::error::{Error, ErrorKind};
use moralframe::pipeline::{write_demo, Pipeline, PipelineConfig, RunSummary};
use moralframe::synthetic::SyntheticConfig;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

/// Joint moral foundation and moral role prediction.
#[derive(Parser)]
#[command(name = "moralframe", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate, then fit on the whole corpus.
    Train,
    /// Predict frames with the trained parameters.
    Predict,
    /// Cross-validated metrics and error counts per rule/constraint variant.
    Ablate,
    /// Partisanship, error, entity, graph and polarity reports from predictions.
    Analyze,
    /// PMI lexicon and lexicon-matching baseline.
    Lexicon,
    /// Ground the program and report its size.
    Ground {
        /// Print the ground program in LP format.
        #[arg(long)]
        dump: bool,
        /// Write the LP text here instead of stdout.
        #[arg(long, requires = "dump")]
        out: Option<PathBuf>,
    },
    /// Write a synthetic demo corpus, priors and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        tweets: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Tweets whose text carries no MF cue.
        #[arg(long)]
        role_driven: bool,
        /// Share of tweets whose MF prior favors a wrong foundation.
        #[arg(long, default_value_t = 0.2)]
        prior_noise: f64,
    },
}

fn exit_for(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Solver => EXIT_SOLVER,
    }
}

fn pipeline(cli: &Cli) -> Result<Pipeline, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    Pipeline::new(PipelineConfig::load(path, &cli.overrides)?)
}

/// Write to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<(), Error> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn report(s: &RunSummary) -> Result<(), Error> {
    let list: String = s.artifacts.iter().map(|a| format!("{}\n", a.display())).collect();
    emit(&list)?;
    if s.nonconverged > 0 {
        eprintln!(
            "warning: {} component(s) did not converge; artifacts were written and flagged",
            s.nonconverged
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let summary = match &cli.command {
        Command::Train => pipeline(cli)?.train()?,
        Command::Predict => pipeline(cli)?.predict()?,
        Command::Ablate => pipeline(cli)?.ablate()?,
        Command::Analyze => pipeline(cli)?.analyze()?,
        Command::Lexicon => pipeline(cli)?.lexicon()?,
        Command::Ground { dump, out } => {
            let p = pipeline(cli)?;
            if *dump {
                let lp = p.ground_lp()?;
                match out {
                    Some(path) => std::fs::write(path, lp).map_err(|e| Error::io(path, e))?,
                    None => emit(&lp)?,
                }
            } else {
                let gp = p.ground_program()?;
                emit(&format!(
                    "atoms {}\nrules {}\nconstraints {}\ngroups {}\ncomponents {}\n",
                    gp.num_atoms(),
                    gp.rules.len(),
                    gp.constraints.len(),
                    gp.groups.len(),
                    gp.components.len()
                ))?;
            }
            return Ok(0);
        }
        Command::Synth {
            out,
            tweets,
            seed,
            role_driven,
            prior_noise,
        } => {
            if !(0.0..=1.0).contains(prior_noise) {
                return Err(Error::Config(format!(
                    "--prior-noise must lie in [0, 1] (got {prior_noise})"
                )));
            }
            let synth = if *role_driven {
                SyntheticConfig::role_driven(*tweets, *seed)
            } else {
                SyntheticConfig {
                    tweets: *tweets,
                    seed: *seed,
                    ..SyntheticConfig::default()
                }
            };
            emit(&format!("{}\n", write_demo(out, &synth, *prior_noise)?.display()))?;
            return Ok(0);
        }
    };
    report(&summary)?;
    Ok(if summary.nonconverged > 0 { EXIT_SOLVER } else { 0 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.sequential {
        moralframe::exec::set_parallel(false);
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        moralframe::exec::configure_threads(j);
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
