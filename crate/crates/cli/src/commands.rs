use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vcplan_core::checkpoint::load_checkpoint;
use vcplan_core::composite::GridLayout;
use vcplan_core::generator::{generate_mixed, generate_scenario_with, ScenarioKind};
use vcplan_core::gradcheck::default_gradcheck;
use vcplan_core::metrics::{evaluate, Evaluation};
use vcplan_core::planner::Parameters;
use vcplan_core::scenario::{load_scenarios_with, save_scenarios, Scenario};
use vcplan_core::sim::{ExpertPlanner, NetworkPlanner, Planner, SimLog};
use vcplan_core::trainer::{fit, CheckpointTarget};
use vcplan_numerics::Fault;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::svg;

/// Largest accepted gradient-check error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "vcplan",
    version,
    about = "Detection-driven trajectory planner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios as JSON lines.
    Gen(GenArgs),
    /// Train the planner and write a checkpoint plus a per-epoch report.
    Train(TrainArgs),
    /// Closed-loop evaluation with metrics CSV.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a tiny network.
    Gradcheck(GradcheckArgs),
    /// Render a simulation log as SVG plus an ego-track CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// straight, lead_brake, crosswalk, lane_change or mixed
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Camera cell side in pixels.
    #[arg(long, default_value_t = vcplan_core::composite::DEFAULT_CELL_SIZE)]
    pub cell_size: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario file; defaults to `paths.scenarios`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory; defaults to `paths.report_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to `paths.checkpoint`; not needed with `--oracle-expert`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metrics CSV; defaults to `<paths.report_dir>/metrics.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Replace the network with the logged expert.
    #[arg(long)]
    pub oracle_expert: bool,
    /// Directory for per-scenario simulation logs.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale every matmul left-operand gradient (self-test of the checker).
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Plot(a) => cmd_plot(&a, out),
    }
}

fn print(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<(), CliError> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Usage(format!("stdout: {e}")))
}

fn require(path: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Usage(format!("missing --{flag} (or `{key}` in the config)")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let layout = GridLayout::standard(a.cell_size);
    layout.validate()?;
    let scenarios: Vec<Scenario> = if a.kind == "mixed" {
        if a.cell_size != vcplan_core::composite::DEFAULT_CELL_SIZE {
            (0..a.count)
                .map(|i| {
                    let kind = ScenarioKind::ALL[i % ScenarioKind::ALL.len()];
                    generate_scenario_with(kind, a.seed + i as u64, &layout)
                })
                .collect()
        } else {
            generate_mixed(a.count, a.seed)
        }
    } else {
        let kind: ScenarioKind = a
            .kind
            .parse()
            .map_err(|e: vcplan_core::CoreError| CliError::Usage(e.to_string()))?;
        (0..a.count)
            .map(|i| generate_scenario_with(kind, a.seed + i as u64, &layout))
            .collect()
    };
    save_scenarios(&scenarios, &a.out)?;
    print(out, format_args!("{}", scenarios.len()))
}

fn load_data(cfg: &RunConfig, data: Option<PathBuf>) -> Result<Vec<Scenario>, CliError> {
    let path = require(
        data.or_else(|| cfg.paths.scenarios.clone()),
        "data",
        "paths.scenarios",
    )?;
    let scenarios = load_scenarios_with(&path, &cfg.layout())?;
    if scenarios.is_empty() {
        return Err(CliError::Usage(format!("{}: no scenarios", path.display())));
    }
    Ok(scenarios)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(seed) = a.seed {
        cfg.seed = Some(seed);
        cfg.apply_seed();
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(t) = a.threads {
        cfg.train.threads = t;
    }
    cfg.validate()?;
    let scenarios = load_data(&cfg, a.data.clone())?;
    cfg.check_scenarios(&scenarios)?;
    if scenarios.len() < 2 {
        return Err(CliError::Usage(
            "training needs at least 2 scenarios".into(),
        ));
    }
    let dir = require(
        a.out.clone().or_else(|| cfg.paths.report_dir.clone()),
        "out",
        "paths.report_dir",
    )?;
    create_dir(&dir)?;
    let checkpoint = cfg
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| dir.join("model.ckpt"));
    let report_path = dir.join("train_report.csv");

    let init = Parameters::init(&cfg.planner)?;
    let target = CheckpointTarget {
        best: Some(checkpoint.clone()),
    };
    let outcome = fit(&scenarios, init, &cfg.train, &cfg.loss, &target, |row| {
        eprintln!(
            "epoch {:>4}  train {:.6}  val {:.6}  l1 {:.4}  ({:.1}s)",
            row.epoch, row.train_loss, row.val_loss, row.l1, row.seconds
        );
    })?;
    outcome.report.write_csv(&report_path)?;
    match outcome.report.best() {
        Some(best) => print(
            out,
            format_args!(
                "best epoch {} val_loss {}; checkpoint {}; report {}",
                best.epoch,
                best.val_loss,
                checkpoint.display(),
                report_path.display()
            ),
        ),
        None => print(
            out,
            format_args!(
                "no epochs run; checkpoint {} holds the initialization",
                checkpoint.display()
            ),
        ),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let scenarios = load_data(&cfg, a.data.clone())?;
    let layout = cfg.layout();
    let report = match (&a.report, &cfg.paths.report_dir) {
        (Some(r), _) => r.clone(),
        (None, Some(dir)) => dir.join("metrics.csv"),
        (None, None) => {
            return Err(CliError::Usage(
                "missing --report (or `paths.report_dir`)".into(),
            ))
        }
    };
    let params;
    let planner: Box<dyn Planner> = if a.oracle_expert {
        Box::new(ExpertPlanner)
    } else {
        let path = require(
            a.checkpoint
                .clone()
                .or_else(|| cfg.paths.checkpoint.clone()),
            "checkpoint",
            "paths.checkpoint",
        )?;
        let expected = a.config.as_ref().map(|_| &cfg.planner);
        params = load_checkpoint(&path, expected)?;
        let mut check = cfg.clone();
        check.planner = params.config.clone();
        check.check_scenarios(&scenarios)?;
        Box::new(NetworkPlanner { params: &params })
    };
    if a.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let evaluation: Evaluation = evaluate(&scenarios, planner.as_ref(), &layout, a.threads)?;
    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    evaluation.write_csv(&report)?;
    if let Some(dir) = &a.logs {
        create_dir(dir)?;
        for log in &evaluation.logs {
            log.save(dir.join(format!("{}.json", log.scenario_id)))?;
        }
    }
    print(out, format_args!("{}", Evaluation::header()))?;
    print(out, format_args!("{}", evaluation.aggregate_row()))
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let fault = a.inject_fault.map(Fault::MatmulGradScale);
    let r = default_gradcheck(a.seed, fault)?;
    print(
        out,
        format_args!(
            "max relative error {:e} over {} entries (worst tensor {}, entry {})",
            r.max_rel_error, r.checked, r.worst, r.worst_index
        ),
    )?;
    if r.max_rel_error.is_nan() || r.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(CliError::CheckFailed(format!(
            "gradient check failed: relative error {:e} in `{}` exceeds {GRADCHECK_TOLERANCE:e}",
            r.max_rel_error, r.worst
        )));
    }
    Ok(())
}

pub fn cmd_plot(a: &PlotArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let log = SimLog::load(&a.log)?;
    create_dir(&a.out)?;
    let svg_path = a.out.join(format!("{}.svg", log.scenario_id));
    let csv_path = a.out.join(format!("{}_ego.csv", log.scenario_id));
    let write = |p: &Path, text: String| {
        std::fs::write(p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
    };
    write(&svg_path, svg::render(&log))?;
    write(&csv_path, svg::ego_csv(&log))?;
    print(
        out,
        format_args!("{}\n{}", svg_path.display(), csv_path.display()),
    )
}
