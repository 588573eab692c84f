use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gridleak::blackbox::serve;
use gridleak::dataio::{load_csv, save_dataset};
use gridleak::experiment::{Experiment, ExperimentConfig, ExperimentError, OracleMode, RemoteTarget, Stage, StageStatus};
use gridleak::forecaster::ForecastModel;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "gridleak", version, about = "Property inference against black-box load forecasters")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load) the dataset and its auxiliary/honest split.
    GenData {
        /// Households, when running without a config.
        #[arg(long, requires = "days")]
        households: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        /// Also copy the dataset files here.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Convert meter and label CSV files into a dataset directory.
    Ingest {
        #[arg(long)]
        meters: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        dest: PathBuf,
        /// Meters with fewer readings are dropped.
        #[arg(long, default_value_t = 49)]
        min_readings: usize,
    },
    /// Select forecaster hyperparameters.
    Tune,
    /// Train one shadow forecaster per auxiliary household.
    TrainShadows,
    /// Extract shadow-model signatures.
    Signatures,
    /// Train one meta-classifier per property.
    TrainMeta,
    /// Train the raw-data baseline classifiers.
    TrainBaseline,
    /// Serve one forecaster over the wire protocol until SIGINT/SIGTERM.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        endpoint: String,
        /// Write the final query statistics here as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Query the honest oracles and infer their properties.
    Attack {
        /// Remote oracle as METER_ID=HOST:PORT; repeatable.
        #[arg(long = "target", value_parser = parse_target)]
        targets: Vec<RemoteTarget>,
        /// Serve the pipeline's honest models over TCP instead of in-process.
        #[arg(long)]
        tcp: bool,
    },
    /// Score Baseline, Random and Adversary probabilities.
    Evaluate,
    /// Build the leakage report and print it.
    Report,
    /// Forecaster model-size sweep on one auxiliary meter.
    Sweep {
        #[arg(long)]
        meter: Option<u64>,
        /// Sizes as LSTMxFC, comma separated, e.g. 8x16,32x64.
        #[arg(long, value_delimiter = ',', value_parser = parse_size)]
        sizes: Vec<(usize, usize)>,
    },
    /// Run every stage and print the report.
    Run,
}

fn parse_target(s: &str) -> Result<RemoteTarget, String> {
    let (id, addr) = s.split_once('=').ok_or("expected METER_ID=HOST:PORT")?;
    Ok(RemoteTarget {
        meter_id: id.parse().map_err(|_| format!("bad meter id {id:?}"))?,
        addr: addr.to_string(),
    })
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (l, f) = s.split_once('x').ok_or("expected LSTMxFC")?;
    let n = |v: &str| v.parse::<usize>().map_err(|_| format!("bad size {s:?}"));
    Ok((n(l)?, n(f)?))
}

/// Exit 2 for configuration or argument problems, 3 for stage failures.
enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => Failure::Config(e.into()),
            ExperimentError::Stage { .. } => Failure::Stage(e.into()),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| config_err(anyhow!("--config is required for this command")))?;
    let mut cfg = ExperimentConfig::load(path).map_err(config_err)?;
    apply_overrides(&mut cfg, g);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, g: &Global) {
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
}

fn run_stage(g: &Global, stage: Stage) -> Result<Experiment, Failure> {
    let mut exp = Experiment::new(load_config(g)?)?;
    exp.run_to(stage)?;
    summarize(&exp);
    Ok(exp)
}

fn summarize(exp: &Experiment) {
    for r in &exp.manifest().stages {
        let status = match r.status {
            StageStatus::Completed => "done",
            StageStatus::Skipped => "skipped",
            StageStatus::Failed => "FAILED",
        };
        let queries = r.queries.map(|q| format!(" ({q} queries)")).unwrap_or_default();
        eprintln!("{:<11} {:<8} {}{queries}", r.stage.name(), status, r.dir.display());
    }
}

fn copy_dir(from: &Path, to: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(to).with_context(|| to.display().to_string())?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        std::fs::copy(entry.path(), to.join(entry.file_name())).with_context(|| entry.path().display().to_string())?;
    }
    Ok(())
}

fn cmd_serve(model: &Path, endpoint: &str, stats_path: Option<&Path>) -> Result<(), Failure> {
    let m = ForecastModel::load(model)
        .with_context(|| format!("loading {}", model.display()))
        .map_err(config_err)?;
    let server = serve(Arc::new(m), endpoint).map_err(|e| Failure::Stage(e.into()))?;
    let stop = server.stop_flag();
    ctrlc::set_handler(move || stop.store(true, std::sync::atomic::Ordering::SeqCst)).map_err(|e| Failure::Stage(e.into()))?;
    println!("listening on {}", server.addr());
    let snapshot = server.wait();
    let json = serde_json::to_string(&snapshot).expect("stats serialize");
    println!("{json}");
    if let Some(p) = stats_path {
        std::fs::write(p, json + "\n")
            .with_context(|| p.display().to_string())
            .map_err(Failure::Stage)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::GenData { households, days, dest } => {
            let cfg = match (&g.config, households, days) {
                (Some(_), None, None) => load_config(g)?,
                (None, Some(households), Some(days)) => {
                    let mut cfg = ExperimentConfig::from_toml(&format!("[data.synthetic]\nhouseholds = {households}\ndays = {days}\n"))
                        .map_err(config_err)?;
                    apply_overrides(&mut cfg, g);
                    cfg
                }
                _ => return Err(config_err(anyhow!("use either --config or --households with --days"))),
            };
            let mut exp = Experiment::new(cfg)?;
            exp.run_to(Stage::Data)?;
            summarize(&exp);
            let dir = exp.stage_dir(Stage::Data).join("dataset");
            if let Some(dest) = dest {
                copy_dir(&dir, &dest).map_err(Failure::Stage)?;
                println!("{}", dest.display());
            } else {
                println!("{}", dir.display());
            }
        }
        Command::Ingest {
            meters,
            labels,
            dest,
            min_readings,
        } => {
            let ds = load_csv(&meters, &labels, min_readings).map_err(config_err)?;
            let info = serde_json::json!({ "meters": meters, "labels": labels, "min_readings": min_readings });
            save_dataset(&dest, &ds, &info).map_err(|e| Failure::Stage(e.into()))?;
            println!("{} households -> {}", ds.len(), dest.display());
        }
        Command::Tune => {
            let exp = run_stage(g, Stage::Tune)?;
            println!("{}", exp.stage_dir(Stage::Tune).join("hyperparams.json").display());
        }
        Command::TrainShadows => {
            run_stage(g, Stage::Shadows)?;
        }
        Command::Signatures => {
            run_stage(g, Stage::Signatures)?;
        }
        Command::TrainMeta => {
            run_stage(g, Stage::Meta)?;
        }
        Command::TrainBaseline => {
            run_stage(g, Stage::Baseline)?;
        }
        Command::Serve { model, endpoint, stats } => cmd_serve(&model, &endpoint, stats.as_deref())?,
        Command::Attack { targets, tcp } => {
            let mut cfg = load_config(g)?;
            if !targets.is_empty() {
                cfg.attack.targets = targets;
            }
            if tcp {
                cfg.attack.oracle = OracleMode::Tcp;
            }
            let mut exp = Experiment::new(cfg)?;
            exp.run_to(Stage::Attack)?;
            summarize(&exp);
            println!("{}", exp.stage_dir(Stage::Attack).join("adversary_probs.csv").display());
        }
        Command::Evaluate => {
            let exp = run_stage(g, Stage::Evaluate)?;
            println!("{}", exp.stage_dir(Stage::Evaluate).join("metrics.json").display());
        }
        Command::Report | Command::Run => {
            let mut exp = Experiment::new(load_config(g)?)?;
            let report = exp.run()?;
            summarize(&exp);
            print!("{}", report.render());
            eprintln!("report: {}", exp.run_dir().join("report.csv").display());
        }
        Command::Sweep { meter, sizes } => {
            let mut exp = Experiment::new(load_config(g)?)?;
            let sizes = (!sizes.is_empty()).then_some(sizes);
            let rows = exp.sweep(meter, sizes.as_deref())?;
            for r in &rows {
                println!(
                    "{:<12} {:>8} params {:>9} bytes  mae {:.4}  data {} bytes",
                    r.size_label, r.params, r.param_bytes, r.test_mae, r.data_bytes
                );
            }
            eprintln!("sweep: {}", exp.run_dir().join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.workers {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridleak::experiment::{DataConfig, SyntheticData};

    #[test]
    fn parsers() {
        assert_eq!(parse_size("8x16"), Ok((8, 16)));
        assert!(parse_size("8").is_err());
        let t = parse_target("1161=127.0.0.1:7000").unwrap();
        assert_eq!((t.meter_id, t.addr.as_str()), (1161, "127.0.0.1:7000"));
        assert!(parse_target("x=y").is_err());
    }

    #[test]
    fn synthetic_default_is_accepted() {
        let cfg = ExperimentConfig::from_toml("[data.synthetic]\nhouseholds = 20\ndays = 30\n").unwrap();
        assert!(matches!(cfg.data, DataConfig::Synthetic(SyntheticData { households: 20, .. })));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
