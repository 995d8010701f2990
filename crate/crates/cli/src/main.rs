mod config;
mod output;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bdqcd::asymptotics::{calibrate_h, leader_cost_empirical, stackelberg_cost};
use bdqcd::montecarlo::{estimate, sweep, FALSE_ALARM_HORIZON};
use bdqcd::{
    AttackKind, ChangeTime, FusionRule, Metric, RuleKind, SweepAxis, SweepRow, TheoryReport,
};

use config::{parse_config, ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "bdqcd", version, about = "Byzantine-resilient distributed quickest change detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Override the number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Write the results table here instead of the path in the config.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Simultaneous,
    MultiShot,
    Genie,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the configured metric for a single scenario.
    Simulate(RunArgs),
    /// Estimate the metric across the `[sweep]` axis.
    Sweep(RunArgs),
    /// Local threshold that certifies a false-alarm target.
    Calibrate {
        #[arg(long, value_enum)]
        rule: RuleArg,
        /// Honest sensors.
        #[arg(long)]
        n: usize,
        /// Compromised sensors.
        #[arg(long, default_value_t = 0)]
        m: usize,
        /// Votes needed to raise an alarm (ignored for genie).
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long)]
        gamma: f64,
    },
    /// Asymptotic constants of a configuration, as JSON.
    Theory {
        config: PathBuf,
    },
    /// Leader cost of consensus voting under the reverse attack, per gamma.
    Game {
        #[command(flatten)]
        run: RunArgs,
        /// False-alarm targets.
        #[arg(long, value_delimiter = ',', required = true)]
        gamma: Vec<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] bdqcd::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} sweep points failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => {
            let cfg = load(&args)?;
            let axis = match cfg.gamma {
                Some(g) if cfg.scenario.rule.kind != RuleKind::OneShot => SweepAxis::Gamma(vec![g]),
                _ => SweepAxis::Threshold(vec![cfg.scenario.threshold]),
            };
            run_sweep(&cfg, &axis, args.csv.as_deref())
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            let axis = cfg
                .sweep
                .clone()
                .ok_or_else(|| CliError::Usage(format!("{}: no [sweep] table", args.config.display())))?;
            run_sweep(&cfg, &axis, args.csv.as_deref())
        }
        Command::Calibrate { rule, n, m, d, gamma } => {
            let rule = match rule {
                RuleArg::Simultaneous => FusionRule::simultaneous(d),
                RuleArg::MultiShot => FusionRule::multi_shot(d),
                RuleArg::Genie => FusionRule::genie(n.saturating_sub(m).max(1), 1.0),
            };
            rule.validate(n, m).map_err(|e| CliError::Usage(e.to_string()))?;
            let h = calibrate_h(&rule, n, m, gamma).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{h}");
            Ok(())
        }
        Command::Theory { config } => {
            let cfg = read_config(&config)?;
            let sc = &cfg.scenario;
            let mut report = TheoryReport::new(&sc.hypotheses, sc.honest, sc.compromised())?;
            let gamma = cfg.gamma.filter(|_| sc.rule.kind != RuleKind::OneShot);
            report = report.with_rule(&sc.rule, gamma)?;
            let json = serde_json::to_string_pretty(&report)?;
            writeln!(io::stdout(), "{json}").map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
        Command::Game { run, gamma } => {
            let cfg = load(&run)?;
            run_game(&cfg, &gamma, run.csv.as_deref())
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = read_config(&args.config)?;
    if let Some(trials) = args.trials {
        if trials == 0 {
            return Err(CliError::Usage("--trials must be positive".into()));
        }
        cfg.scenario.trials = trials;
    }
    Ok(cfg)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_sweep(cfg: &ExperimentConfig, axis: &SweepAxis, csv_override: Option<&Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Fingerprinted<'a> {
        config: &'a ExperimentConfig,
        axis: &'a SweepAxis,
    }
    let fp = output::fingerprint(&Fingerprinted { config: cfg, axis })?;

    let results = sweep(&cfg.scenario, axis, cfg.metric)?;
    let total = results.len();
    let mut rows: Vec<SweepRow> = Vec::with_capacity(total);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => {
                if row.estimate.lower_estimate {
                    eprintln!(
                        "warning: {} = {}: {:.1}% of trials censored at the horizon; the mean is a lower estimate",
                        axis.name(),
                        row.value,
                        100.0 * row.estimate.censor_fraction
                    );
                }
                if row.undecidable_fraction > 0.0 {
                    eprintln!(
                        "warning: {} = {}: {:.2}% of trials ended undecidable",
                        axis.name(),
                        row.value,
                        100.0 * row.undecidable_fraction
                    );
                }
                rows.push(row);
            }
            Err(e) => eprintln!("error: sweep point {i} failed: {e}"),
        }
    }

    let precision = cfg.output.precision;
    let csv_path = csv_override.or(cfg.output.csv.as_deref());
    output::write_csv(open_output(csv_path)?, &fp, axis.name(), cfg.metric, &rows, precision)?;
    if let Some(plot) = &cfg.output.plot {
        output::write_plot(open_output(Some(plot))?, &rows, precision)?;
    }
    if rows.len() < total {
        return Err(CliError::PartialSweep {
            failed: total - rows.len(),
            total,
        });
    }
    Ok(())
}

/// Consensus voting against the reverse attack: the leader's normalised
/// delay at each gamma next to the equilibrium value.
fn run_game(cfg: &ExperimentConfig, gammas: &[f64], csv_override: Option<&Path>) -> Result<()> {
    let base = &cfg.scenario;
    let (n, m) = (base.honest, base.compromised());
    let rule = FusionRule::simultaneous(n);
    let i_star = base.hypotheses.closest_alternatives().i_star;
    let equilibrium = stackelberg_cost(n, m, i_star);
    let change = match base.change {
        ChangeTime::Never => ChangeTime::At(0),
        at => at,
    };

    #[derive(Serialize)]
    struct Fingerprinted<'a> {
        config: &'a ExperimentConfig,
        game: &'a [f64],
    }
    let fp = output::fingerprint(&Fingerprinted { config: cfg, game: gammas })?;

    let p = cfg.output.precision;
    let mut out = csv::Writer::from_writer(open_output(csv_override.or(cfg.output.csv.as_deref()))?);
    out.write_record([
        "fingerprint",
        "gamma",
        "h",
        "delay",
        "delay_ci",
        "false_alarm",
        "leader_cost",
        "stackelberg_cost",
    ])?;
    for &gamma in gammas {
        let h = calibrate_h(&rule, n, m, gamma).map_err(|e| CliError::Usage(e.to_string()))?;
        let attacked = base
            .clone()
            .with_rule(rule)
            .with_threshold(h)
            .with_attack(AttackKind::Reverse, m);
        let (delay, _) = estimate(&attacked.clone().with_change(change, base.q_true), Metric::Delay)?;
        let quiet = attacked
            .with_change(ChangeTime::Never, base.q_true)
            .with_horizon(FALSE_ALARM_HORIZON.max(base.horizon));
        let (false_alarm, _) = estimate(&quiet, Metric::FalseAlarm)?;
        let cost = leader_cost_empirical(&delay, gamma, &false_alarm);
        out.write_record([
            fp.clone(),
            format!("{gamma}"),
            format!("{h:.p$}"),
            format!("{:.p$}", delay.mean),
            format!("{:.p$}", delay.ci_halfwidth),
            format!("{:.p$}", false_alarm.mean),
            format!("{cost:.p$}"),
            format!("{equilibrium:.p$}"),
        ])?;
    }
    out.flush().map_err(|source| CliError::Io {
        path: PathBuf::from("<output>"),
        source,
    })?;
    Ok(())
}
