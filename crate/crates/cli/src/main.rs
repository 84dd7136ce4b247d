mod config;
mod pipeline;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use advice_loop::advice::AdviceForm;
use advice_loop::env::EnvConfig;
use advice_loop::eval::{evaluate, Policy};
use advice_loop::gridworld::GridGenConfig;
use advice_loop::pointmaze::PointConfig;
use advice_loop::trajectory::read_trajectories;
use advice_loop::AdviceLedger;
use advice_loop_service::{AppState, ServiceConfig};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{config_err, ConfigError, ExperimentConfig, Phase};
use pipeline::{load_ledger, load_net, write_eval_csv, Run};

const OUT_ENV: &str = "ADVICE_LOOP_OUT";

#[derive(Parser)]
#[command(name = "advice-loop", version, about = "Teach agents with advice, then take the advice away")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; the run directory is created inside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ledger from an earlier phase to keep accumulating into.
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the phases listed in the config, in order.
    Run(Common),
    /// Validate a config as a `run` pipeline without training.
    Check {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Ground the config's `coach.ground` form with PPO (no coach: advice-free RL).
    Ground(Common),
    /// Ground `coach.high` by distilling a surrogate grounded for `coach.ground`.
    Bootstrap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        surrogate: PathBuf,
    },
    /// Distill an advice-free policy from a surrogate coached on the test env.
    Improve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        surrogate: PathBuf,
    },
    /// Hindsight relabeling of the student's own rollouts.
    Relabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        surrogate: PathBuf,
        /// Advice-free policy to start from.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or a reference policy) on the test env.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "reference")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        reference: Option<Reference>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Advice form to feed the network; the matching coach block is used.
        #[arg(long)]
        form: Option<AdviceForm>,
    },
    /// Serve the coaching interface over HTTP and WebSocket.
    Serve(ServeArgs),
    /// Aggregate run summaries.
    Report {
        /// Run directories, roots containing them, or summary.json files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Expert,
    Random,
}

#[derive(Args)]
struct ServeArgs {
    /// Takes the env block from this config when given.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gridworld")]
    env: EnvArg,
    /// Surrogate for live coaching.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Default advice form for new sessions.
    #[arg(long)]
    form: Option<AdviceForm>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, default_value_t = 300)]
    step_ms: u64,
    #[arg(long)]
    wait_for_advice: bool,
    /// Recorded episodes (JSONL) to offer for hindsight annotation.
    #[arg(long)]
    episodes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Gridworld,
    Pointmaze,
}

fn out_root(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn open_run(common: &Common, command: &str, phases: &[Phase]) -> anyhow::Result<Run> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if command == "run" {
        cfg.validate_pipeline()?;
    } else {
        cfg.validate(phases)?;
    }
    let ledger = match &common.ledger {
        Some(p) => load_ledger(p)?,
        None => AdviceLedger::new(),
    };
    let dir = out_root(common, &cfg).join(format!("{}-{command}-seed{}", cfg.name(), cfg.seed));
    let mut run = Run::create(cfg, dir, ledger)?;
    run.verbose = !common.quiet;
    Ok(run)
}

fn finish(run: &Run) {
    println!("{}", run.dir.display());
    for s in &run.summaries {
        println!(
            "{} success {} units {} env_steps {}",
            s.phase.as_str(),
            s.final_success.map_or("-".to_string(), |v| format!("{v:.3}")),
            s.advice_units,
            s.env_steps
        );
    }
}

fn run_phases(common: &Common, command: &str, phases: &[Phase], setup: impl FnOnce(&mut Run) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let mut run = open_run(common, command, phases)?;
    setup(&mut run)?;
    let phases = if command == "run" { run.cfg.phases.clone() } else { phases.to_vec() };
    for p in phases {
        run.run_phase(p)?;
    }
    finish(&run);
    Ok(())
}

fn eval_cmd(common: &Common, checkpoint: Option<&Path>, reference: Option<Reference>, episodes: Option<usize>, form: Option<AdviceForm>) -> anyhow::Result<()> {
    let mut run = open_run(common, "eval", &[])?;
    if let Some(n) = episodes {
        if n == 0 {
            return Err(config_err("--episodes must be positive"));
        }
        run.cfg.eval_episodes = n;
    }
    let env = run.cfg.test_env().clone();
    let net;
    let (policy, label) = match (checkpoint, reference) {
        (_, Some(Reference::Expert)) => (Policy::Expert, "expert"),
        (_, Some(Reference::Random)) => (Policy::Random, "random"),
        (Some(path), None) => {
            net = load_net(path)?;
            let c = net.config();
            if c.obs_dim != env.obs_len() || c.n_actions != env.n_actions() {
                return Err(config_err(format!("{} does not fit the {} env", path.display(), env.kind.as_str())));
            }
            let coach = match form {
                Some(f) if net.config().advice_free => {
                    return Err(config_err(format!("{} is advice-free; --form {f} does not apply", path.display())));
                }
                Some(f) => Some(
                    [&run.cfg.coach.ground, &run.cfg.coach.high, &run.cfg.coach.improve]
                        .into_iter()
                        .flatten()
                        .find(|c| c.form == f)
                        .cloned()
                        .unwrap_or_else(|| advice_loop::coach::CoachConfig::new(f)),
                ),
                None => None,
            };
            if let Some(c) = &coach {
                c.validate(env.kind).map_err(|e| config_err(e.to_string()))?;
            }
            (Policy::Net { net: &net, coach }, "checkpoint")
        }
        (None, None) => unreachable!("clap requires --checkpoint or --reference"),
    };
    let r = evaluate(&policy, &env, run.cfg.eval_episodes, run.cfg.seed)?;
    write_eval_csv(&run.dir.join("eval.csv"), label, &r)?;
    println!("success_rate={:.4} episodes={} mean_steps={:.2} mean_return={:.4}", r.success_rate, r.episodes, r.mean_steps, r.mean_return);
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> anyhow::Result<()> {
    let env = match (&args.config, args.env) {
        (Some(p), _) => ExperimentConfig::load(p)?.env,
        (None, EnvArg::Gridworld) => EnvConfig::gridworld(GridGenConfig::default()),
        (None, EnvArg::Pointmaze) => EnvConfig::pointmaze(PointConfig::default()),
    };
    let surrogate = match &args.checkpoint {
        Some(p) => Some(Arc::new(load_net(p)?)),
        None => None,
    };
    if let Some(f) = args.form {
        if !AdviceForm::valid_for(env.kind).contains(&f) {
            return Err(config_err(format!("{f} advice is not defined for the {} env", env.kind.as_str())));
        }
    }
    let records = match &args.episodes {
        Some(p) => {
            if !p.exists() {
                return Err(config_err(format!("{} does not exist", p.display())));
            }
            read_trajectories(p)?
        }
        None => Vec::new(),
    };
    let cfg = ServiceConfig {
        surrogate,
        form: args.form,
        step_ms: args.step_ms,
        wait_for_advice: args.wait_for_advice,
        out_dir: args.out.clone(),
        seed: args.seed,
        ..ServiceConfig::new(env)
    };
    let app = AppState::new(cfg);
    app.preload(records);
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr).await.with_context(|| format!("binding {}", args.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        advice_loop_service::serve(listener, app).await?;
        Ok(())
    })
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Run(c) => run_phases(&c, "run", &[], |_| Ok(())),
        Cmd::Check { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate_pipeline()?;
            let phases: Vec<&str> = cfg.phases.iter().map(|p| p.as_str()).collect();
            println!("{}: ok ({})", config.display(), phases.join(", "));
            Ok(())
        }
        Cmd::Ground(c) => run_phases(&c, "ground", &[Phase::Ground], |_| Ok(())),
        Cmd::Bootstrap { common, surrogate } => run_phases(&common, "bootstrap", &[Phase::Bootstrap], |run| {
            let form = run.cfg.coach.ground.as_ref().map(|c| c.form);
            run.add_surrogate(form, load_net(&surrogate)?)
        }),
        Cmd::Improve { common, surrogate } => run_phases(&common, "improve", &[Phase::Improve], |run| {
            let form = run.cfg.coach.improve.as_ref().map(|c| c.form);
            run.add_surrogate(form, load_net(&surrogate)?)
        }),
        Cmd::Relabel { common, surrogate, policy } => run_phases(&common, "relabel", &[Phase::Relabel], |run| {
            let form = run.cfg.coach.improve.as_ref().map(|c| c.form);
            run.add_surrogate(form, load_net(&surrogate)?)?;
            if let Some(p) = &policy {
                run.set_policy(load_net(p)?)?;
            }
            Ok(())
        }),
        Cmd::Eval {
            common,
            checkpoint,
            reference,
            episodes,
            form,
        } => eval_cmd(&common, checkpoint.as_deref(), reference, episodes, form),
        Cmd::Serve(args) => serve_cmd(args),
        Cmd::Report { paths, csv } => {
            let rows = report::aggregate(&report::collect(&paths)?);
            report::print_table(&rows);
            if let Some(p) = csv {
                report::write_csv(&p, &rows)?;
            }
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<advice_loop::Error>() {
        Some(advice_loop::Error::Config(_)) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
