use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use macopp::harness::{
    self, brute_force_oracle, csv_report, json_report, HarnessError, ReportFormat, RunConfig,
};
use macopp::model::{format_cost, parse_cost, SearchConfig};

/// Joint-plan synthesis for a proactively assisting robot and a human who
/// plans under uncertainty.
#[derive(Parser)]
#[command(name = "macopp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a robot prefix that provably reduces the human's plan cost.
    Plan(PlanArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Robot-perspective domain file.
    #[arg(long)]
    domain_r: PathBuf,
    /// Human-perspective domain file.
    #[arg(long)]
    domain_h: PathBuf,
    /// Problem file with the uncertain initial state and the human goal.
    #[arg(long)]
    problem: PathBuf,
    /// Sensor file mapping actions to observation symbols.
    #[arg(long)]
    sensors: PathBuf,
    /// Trade-off between prefix length and suffix cost ("1/2", "0.25", ...).
    #[arg(long)]
    alpha: Option<String>,
    /// Maximum tolerated prefix length (strict: k < budget).
    #[arg(long)]
    budget: Option<u32>,
    /// Tree-search iterations.
    #[arg(long)]
    iterations: Option<u32>,
    /// Reward constant for feasible simulations.
    #[arg(long)]
    beta: Option<f64>,
    /// Cost constant for failed simulations.
    #[arg(long)]
    phi: Option<f64>,
    /// UCT exploration constant.
    #[arg(long)]
    exploration: Option<f64>,
    /// Children kept per node during joint-plan extraction.
    #[arg(long)]
    n_best: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Count only steps with non-null observations towards k.
    #[arg(long)]
    count_observable_only: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Cross-check the result against exhaustive prefix enumeration.
    #[arg(long)]
    oracle: bool,
    /// Prefix-length cap for the oracle (defaults to budget - 1).
    #[arg(long)]
    oracle_depth: Option<u32>,
    /// Write the full utility tree as JSON to this path.
    #[arg(long)]
    dump_tree: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn search_config(args: &PlanArgs) -> Result<SearchConfig, HarnessError> {
    let mut config = SearchConfig::default();
    if let Ok(path) = std::env::var("MACOPP_CONFIG") {
        let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        harness::apply_toml_overrides(&mut config, &text)?;
    }
    if let Some(alpha) = &args.alpha {
        config.alpha = parse_cost(alpha)
            .ok_or_else(|| HarnessError::Config(format!("invalid alpha {}", alpha)))?;
    }
    if let Some(v) = args.budget {
        config.budget = v;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.beta {
        config.reward_const = v;
    }
    if let Some(v) = args.phi {
        config.cost_const = v;
    }
    if let Some(v) = args.exploration {
        config.exploration = v;
    }
    if let Some(v) = args.n_best {
        config.n_best = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if args.count_observable_only {
        config.count_observable_only = true;
    }
    Ok(config)
}

fn plan(args: &PlanArgs) -> Result<ExitCode, HarnessError> {
    let search = search_config(args)?;
    let config = RunConfig {
        domain_r: args.domain_r.clone(),
        domain_h: args.domain_h.clone(),
        problem: args.problem.clone(),
        sensors: args.sensors.clone(),
        search,
        format: match args.format {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        },
        oracle: args.oracle,
        oracle_depth: args.oracle_depth,
        dump_tree: args.dump_tree.clone(),
    };
    let (problem, outcome) = harness::run(&config)?;

    let oracle = if config.oracle {
        let depth = config
            .oracle_depth
            .unwrap_or(config.search.budget.saturating_sub(1));
        Some(brute_force_oracle(&problem, &config.search, depth))
    } else {
        None
    };

    match config.format {
        ReportFormat::Json => {
            let mut report = json_report(&problem, &config.search, &outcome);
            if let Some(oracle) = &oracle {
                report["oracle"] = match oracle {
                    Some(reference) => serde_json::json!({
                        "objective": format_cost(reference.objective),
                        "k": reference.k,
                        "robot_prefix": reference.robot_prefix
                            .iter()
                            .map(|&i| problem.robot_actions[i].to_string())
                            .collect::<Vec<_>>(),
                    }),
                    None => serde_json::Value::Null,
                };
            }
            println!("{}", serde_json::to_string_pretty(&report).expect("valid json"));
        }
        ReportFormat::Csv => {
            print!("{}", csv_report(&problem, &config.search, &outcome));
            if let Some(oracle) = &oracle {
                match oracle {
                    Some(reference) => eprintln!(
                        "oracle: objective {} with k = {}",
                        format_cost(reference.objective),
                        reference.k
                    ),
                    None => eprintln!("oracle: no assistance"),
                }
            }
        }
    }
    Ok(if outcome.plan.is_some() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Plan(args) => match plan(&args) {
            Ok(code) => code,
            Err(err) => {
                eprintln!("error: {}", err);
                ExitCode::FAILURE
            }
        },
    }
}
