use clap::{Args, Parser, Subcommand};
use lyapkit::experiment::{
    parse_model, run, AlphaSpec, BetaSpec, ConstructTask, ExperimentConfig, ExperimentError, ProbeTask, ReproduceTask,
    SeriesChoice, SimulateTask, Target, Task, VerifyTask,
};
use lyapkit::probes::Notion;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_USAGE: u8 = 64;

/// Sampled stability classification, Lyapunov verification and converse
/// constructions for disturbed systems.
#[derive(Parser, Debug)]
#[command(name = "lyapkit", version)]
struct Cli {
    /// JSON experiment config; subcommand flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the task of `--config` as is.
    Run,
    /// Regenerate one of the fixed targets: ex26, ex213, ex61, ex62, switched.
    Reproduce {
        target: Target,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Replay a witness JSON file.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    Probe {
        #[command(flatten)]
        model: ModelArg,
        /// Notions to probe (US, UGAS, UAS, UGATT, RFC, REP, FC, weak_attractive, uniform_weak_attractive).
        #[arg(long = "notion", value_delimiter = ',')]
        notions: Option<Vec<Notion>>,
        #[arg(long)]
        budget: Option<usize>,
    },
    Verify {
        #[command(flatten)]
        model: ModelArg,
        /// `candidate`, `linear:<c>` or `quadratic:<c>`.
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        coercivity_radii: Option<Vec<f64>>,
    },
    Construct {
        #[command(flatten)]
        model: ModelArg,
        /// `probe` or `exp:<gain>:<rate>` for β(r,t) = gain·r·e^{−rate·t}.
        #[arg(long)]
        beta: Option<String>,
        #[arg(long)]
        k_max: Option<u32>,
        #[arg(long)]
        radius: Option<f64>,
        /// Use the max-type series.
        #[arg(long)]
        max_series: bool,
    },
}

#[derive(Args, Debug)]
struct ModelArg {
    /// scalar:i..iv, ugatt, blowup:<c>, block:<n>[:<eps>], linear:<a>, switched:common|unstable.
    #[arg(long)]
    model: Option<String>,
}

fn usage(m: impl Into<String>) -> ExperimentError {
    ExperimentError::Usage(m.into())
}

fn parse_alpha(s: &str) -> Result<AlphaSpec, ExperimentError> {
    let num = |v: &str| v.parse::<f64>().map_err(|_| usage(format!("bad alpha {s:?}")));
    match s.split(':').collect::<Vec<_>>().as_slice() {
        ["candidate"] => Ok(AlphaSpec::Candidate),
        ["linear", c] => Ok(AlphaSpec::Linear { c: num(c)? }),
        ["quadratic", c] => Ok(AlphaSpec::Quadratic { c: num(c)? }),
        _ => Err(usage(format!("bad alpha {s:?}"))),
    }
}

fn parse_beta(s: &str, current: &BetaSpec) -> Result<BetaSpec, ExperimentError> {
    let num = |v: &str| v.parse::<f64>().map_err(|_| usage(format!("bad beta {s:?}")));
    match s.split(':').collect::<Vec<_>>().as_slice() {
        ["probe"] => Ok(match current {
            b @ BetaSpec::Probe { .. } => b.clone(),
            _ => ConstructTask::default().beta,
        }),
        ["exp", g, r] => Ok(BetaSpec::Exponential { gain: num(g)?, rate: num(r)? }),
        _ => Err(usage(format!("bad beta {s:?}"))),
    }
}

/// Starts from `--config` when given, else from the task's defaults.
fn base(config: Option<ExperimentConfig>, default: Task) -> Result<ExperimentConfig, ExperimentError> {
    match config {
        Some(c) if std::mem::discriminant(&c.task) != std::mem::discriminant(&default) => {
            Err(usage("the config's task differs from the subcommand"))
        }
        Some(c) => Ok(c),
        None => Ok(ExperimentConfig {
            model: None,
            task: default,
            seed: 0,
            out: PathBuf::from("out"),
        }),
    }
}

fn set_model(cfg: &mut ExperimentConfig, m: &ModelArg) -> Result<(), ExperimentError> {
    if let Some(s) = &m.model {
        cfg.model = Some(parse_model(s)?);
    }
    Ok(())
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, ExperimentError> {
    let loaded = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let mut cfg = match cli.command {
        Command::Run => loaded.ok_or_else(|| usage("run needs --config"))?,
        Command::Reproduce { target, n, epsilon } => {
            let mut c = base(loaded, Task::Reproduce(ReproduceTask { target, n: 40, epsilon: 0.0 }))?;
            if let Task::Reproduce(r) = &mut c.task {
                r.target = target;
                r.n = n.unwrap_or(r.n);
                r.epsilon = epsilon.unwrap_or(r.epsilon);
            }
            c
        }
        Command::Simulate { model, x0, horizon, step, witness } => {
            let mut c = base(loaded, Task::Simulate(SimulateTask::default()))?;
            set_model(&mut c, &model)?;
            if let Task::Simulate(s) = &mut c.task {
                s.x0 = x0.unwrap_or(std::mem::take(&mut s.x0));
                s.horizon = horizon.unwrap_or(s.horizon);
                s.step = step.unwrap_or(s.step);
                s.witness = witness.or(s.witness.take());
            }
            c
        }
        Command::Probe { model, notions, budget } => {
            let mut c = base(loaded, Task::Probe(ProbeTask::default()))?;
            set_model(&mut c, &model)?;
            if let Task::Probe(p) = &mut c.task {
                p.notions = notions.unwrap_or(std::mem::take(&mut p.notions));
                p.options.budget = budget.unwrap_or(p.options.budget);
            }
            c
        }
        Command::Verify { model, alpha, radii, coercivity_radii } => {
            let mut c = base(loaded, Task::Verify(VerifyTask::default()))?;
            set_model(&mut c, &model)?;
            if let Task::Verify(v) = &mut c.task {
                if let Some(a) = alpha {
                    v.alpha = parse_alpha(&a)?;
                }
                v.radii = radii.unwrap_or(std::mem::take(&mut v.radii));
                v.coercivity_radii = coercivity_radii.unwrap_or(std::mem::take(&mut v.coercivity_radii));
            }
            c
        }
        Command::Construct { model, beta, k_max, radius, max_series } => {
            let mut c = base(loaded, Task::Construct(ConstructTask::default()))?;
            set_model(&mut c, &model)?;
            if let Task::Construct(t) = &mut c.task {
                if let Some(b) = beta {
                    t.beta = parse_beta(&b, &t.beta)?;
                }
                t.k_max = k_max.unwrap_or(t.k_max);
                t.radius = radius.unwrap_or(t.radius);
                if max_series {
                    t.series = SeriesChoice::Max;
                }
            }
            c
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match build_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("lyapkit: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            for line in &outcome.artifacts.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", outcome.artifacts.files.len() + 2, cfg.out.display());
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(ExperimentError::Usage(m)) => {
            eprintln!("lyapkit: usage: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("lyapkit: {e}");
            ExitCode::FAILURE
        }
    }
}
