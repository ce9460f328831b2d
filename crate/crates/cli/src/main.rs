use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use episeg::harness::{
    emit_plots, generate_synthetic, run, sweep_data_fraction, ExperimentConfig, SyntheticCorpusSpec, OUTPUT_ROOT_ENV,
};
use episeg::Error;

#[derive(Parser)]
#[command(name = "episeg", version, about = "Pre-train, fine-tune and evaluate epidemic forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    ///
    /// Any scalar field can be overridden as `--<path> <value>`, e.g.
    /// `--model.d_model 16 --ablation.no_pretrain true`.
    Run {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Generate a synthetic corpus from a spec file.
    Synth {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: <output root>/synthetic).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run's fine-tuning on the most recent fractions of the data.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        fractions: Vec<f64>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Render SVG plots for a results directory.
    Plot { results_dir: PathBuf },
}

/// Turns `--a.b 1 --c=x` into (path, value) pairs.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--<field path>`, got `{a}`")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("missing value for `--{key}`")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &parse_overrides(&overrides)?)?;
            let outcome = run(&cfg)?;
            for s in &outcome.seeds {
                println!("seed {}: avg RMSE {:.6} ({} weeks)", s.seed, s.eval.average_rmse, s.eval.evaluated_weeks);
            }
            if let Some(p) = &outcome.persistence {
                println!("persistence: avg RMSE {:.6}", p.average_rmse);
            }
            println!("median avg RMSE {:.6}; results in {}", outcome.median_average_rmse(), outcome.dir.display());
        }
        Command::Synth { spec, seed, out } => {
            let spec = SyntheticCorpusSpec::load(&spec)?;
            let out = out.unwrap_or_else(|| {
                std::env::var_os(OUTPUT_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("results"))
                    .join("synthetic")
            });
            let manifest = generate_synthetic(&spec, seed, &out)?;
            println!("{}", manifest.display());
        }
        Command::Sweep {
            config,
            fractions,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &parse_overrides(&overrides)?)?;
            let table = sweep_data_fraction(&cfg, &fractions)?;
            print!("{}", table.to_csv());
            println!("monotone non-increasing: {}", table.monotone);
        }
        Command::Plot { results_dir } => {
            for f in emit_plots(&results_dir)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
