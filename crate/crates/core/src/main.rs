use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use histpolicy::dataset::load_episodes;
use histpolicy::ope::{curves_svg, inverse_probability_products, median_product_curve};
use histpolicy::runner::{self, ExperimentConfig, ModelBundle};
use histpolicy::staterep::StateSpec;
use histpolicy::synthgen::{bayes_auroc, generate_cohort, GeneratorConfig};
use histpolicy::{Error, Result};

/// Environment variable that caps the worker thread count.
const THREADS_ENV: &str = "HISTPOLICY_THREADS";

#[derive(Parser)]
#[command(name = "histpolicy", version, about = "Behavior-policy modeling on sequential decision logs")]
struct Cli {
    /// Overrides every seed in the supplied config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort with its oracle policy table.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full split / fit / evaluate protocol and write the report.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit many random trees per state and bucket them by leaf count.
    SweepTrees {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inverse-probability products of a saved model on episode data.
    Ope {
        /// A model bundle written by `experiment` (models/*.json).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// State spec JSON; must match the model's features.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_stage: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render tables and figures from a finished experiment directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what} {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let mut cfg = GeneratorConfig::from_json_file(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let cohort = generate_cohort(&cfg)?;
            cohort.write_to(&cfg, &out)?;
            let bayes = bayes_auroc(&cohort.oracle, &cohort.episodes).map_or("NA".into(), |a| format!("{a:.4}"));
            println!(
                "wrote {} patients, {} stages to {} (oracle AUROC {bayes})",
                cohort.episodes.len(),
                cohort.episodes.n_stages(),
                out.display()
            );
        }
        Command::Experiment { config, out } => {
            let mut cfg = ExperimentConfig::from_json_file(&config)?;
            if let Some(s) = cli.seed {
                cfg.override_seed(s);
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
            let report = runner::run_experiment(&cfg)?;
            runner::render_report(&report, &out)?;
            print!("{}", runner::summary_table(&report));
            println!("fits attempted: {}, failed: {}", report.meta.fits_attempted, report.meta.fits_failed);
            println!("report written to {}", out.display());
        }
        Command::SweepTrees { config, n, out } => {
            let mut cfg = ExperimentConfig::from_json_file(&config)?;
            if let Some(s) = cli.seed {
                cfg.override_seed(s);
            }
            let sweep = runner::run_sweep(&cfg, n)?;
            println!("state,bucket,leaves,n_models,best_leaves,val_auroc,test_auroc,test_auroc_switch");
            for p in &sweep.points {
                let f = |v: Option<f64>| v.map_or("NA".into(), histpolicy::util::fmt6);
                println!(
                    "{},{},{}-{},{},{},{},{},{}",
                    p.state,
                    p.bucket,
                    p.leaves_min,
                    p.leaves_max,
                    p.n_models,
                    p.best_leaves,
                    f(p.val_auroc),
                    f(p.test_auroc),
                    f(p.test_auroc_switch)
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("complexity.json"), serde_json::to_string_pretty(&sweep)?)?;
            }
        }
        Command::Ope { model, data, spec, max_stage, out } => {
            let bundle: ModelBundle = read_json(&model, "model bundle")?;
            let spec: StateSpec = read_json(&spec, "state spec")?;
            spec.validate()?;
            let episodes = load_episodes(&data, &bundle.preprocessor.schema)?;
            if episodes.is_empty() {
                return Err(Error::NoEpisodes);
            }
            let set = bundle.preprocessor.apply(&episodes);
            let series = inverse_probability_products(&set, &bundle.model, &spec)?;
            let curve = median_product_curve(&series, max_stage);
            curve.write_csv(std::io::stdout().lock(), &spec.label(), bundle.model.kind().as_str())?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                curve.write_csv(std::fs::File::create(dir.join("ope_curve.csv"))?, &spec.label(), bundle.model.kind().as_str())?;
                std::fs::write(dir.join("ope_curve.svg"), curves_svg(&[(spec.label(), &curve)]))?;
            }
        }
        Command::Report { input } => {
            let report = runner::load_report(&input)?;
            runner::render_report(&report, &input)?;
            print!("{}", runner::summary_table(&report));
        }
    }
    Ok(())
}

fn configure_threads() {
    let Ok(v) = std::env::var(THREADS_ENV) else { return };
    match v.parse::<usize>() {
        #[cfg(feature = "parallel")]
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("{THREADS_ENV}: {e}");
            }
        }
        _ => log::warn!("{THREADS_ENV}={v} ignored"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
