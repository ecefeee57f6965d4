// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bwtwin::agent::QTable;
use bwtwin::harness::{
    emit_report, obtain_predictor, render_text_table, run_scenario_with, train_policy,
    train_predictor, ReportFormat, ScenarioConfig, ScenarioName,
};
use bwtwin::predictor::{BiLstmModel, PredictorBundle};
use bwtwin::traffic::{generate_plateau_series, generate_series, Scaler};
use bwtwin::twin::{ActionDatabase, TwinState};
use bwtwin::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "bwtwin", version, about = "Digital-twin assisted closed-loop bandwidth management")]
struct Cli {
    /// JSON config file (defaults are used for missing fields)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the Poisson traffic series and the plateau telemetry as CSV
    Generate {
        /// Print the default config and exit
        #[arg(long)]
        print_defaults: bool,
    },
    /// Train the predictor and the policy and save them
    Train,
    /// Run one scenario through the closed loop
    Run {
        #[arg(long, default_value = "default")]
        scenario: String,
    },
    /// Compare the five techniques
    Compare,
    /// Precompute the optimal action of a hypothetical state
    WhatIf {
        #[arg(long)]
        state: f64,
    },
    /// Print the action database
    InspectDb,
}

const BUNDLE_FILE: &str = "bundle.json";
const QTABLE_FILE: &str = "qtable.csv";
const DB_FILE: &str = "action_db.json";

struct Ctx {
    cfg: ScenarioConfig,
    out: PathBuf,
}

impl Ctx {
    fn db_path(&self) -> PathBuf {
        self.cfg
            .paths
            .action_db
            .clone()
            .unwrap_or_else(|| self.out.join(DB_FILE))
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            message: e.to_string(),
        })
    }
}

fn load_ctx(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok(Ctx { cfg, out })
}

fn save_twin_artifacts(ctx: &Ctx, twin: &TwinState) -> Result<()> {
    twin.db.save(&ctx.db_path())?;
    twin.qtable
        .save_csv(&ctx.out.join(QTABLE_FILE), &twin.states, &twin.actions)
}

fn cmd_generate(ctx: &Ctx, print_defaults: bool) -> Result<()> {
    if print_defaults {
        println!("{}", ScenarioConfig::default().to_json());
        return Ok(());
    }
    ctx.ensure_out()?;
    let series = generate_series(&ctx.cfg.traffic)?;
    let telemetry = generate_plateau_series(&ctx.cfg.telemetry)?;
    series.save_csv(&ctx.out.join("traffic.csv"))?;
    telemetry.save_csv(&ctx.out.join("telemetry.csv"))?;
    println!(
        "traffic: {} steps, mean {:.2} Kbps -> {}",
        series.len(),
        series.mean(),
        ctx.out.join("traffic.csv").display()
    );
    println!(
        "telemetry: {} steps -> {}",
        telemetry.len(),
        ctx.out.join("telemetry.csv").display()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    ctx.ensure_out()?;
    let bundle = train_predictor(&ctx.cfg)?;
    bundle.save(&ctx.out.join(BUNDLE_FILE))?;
    let q = train_policy(&ctx.cfg)?;
    let twin = build_policy_twin(ctx, bundle.clone(), q)?;
    save_twin_artifacts(ctx, &twin)?;
    let h = &bundle.loss_history;
    println!(
        "predictor: {} epochs, mse {:.6} -> {:.6}",
        h.len(),
        h[0],
        h[h.len() - 1]
    );
    println!("saved {}, {}, {}", BUNDLE_FILE, QTABLE_FILE, DB_FILE);
    Ok(())
}

fn build_policy_twin(ctx: &Ctx, bundle: PredictorBundle, q: QTable) -> Result<TwinState> {
    bwtwin::harness::build_twin(&ctx.cfg, bundle, q, ctx.cfg.twin.clone())
}

fn cmd_run(ctx: &mut Ctx, name: ScenarioName) -> Result<()> {
    ctx.cfg.name = name;
    ctx.cfg.validate()?;
    let predictor = obtain_predictor(&ctx.cfg)?;
    let report = run_scenario_with(&ctx.cfg, &predictor)?;
    let written = emit_report(&report, &[ReportFormat::Csv, ReportFormat::SvgChart], &ctx.out)?;
    save_twin_artifacts(ctx, &report.twin)?;
    print!("{}", render_text_table(&report));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// The predictor is not needed for what-if; use the saved bundle if any.
fn what_if_predictor(ctx: &Ctx) -> Result<PredictorBundle> {
    let saved = ctx
        .cfg
        .paths
        .bundle
        .clone()
        .unwrap_or_else(|| ctx.out.join(BUNDLE_FILE));
    if saved.exists() {
        return PredictorBundle::load(&saved);
    }
    let p = &ctx.cfg.predictor;
    Ok(PredictorBundle::new(
        BiLstmModel::zeros(p.hidden_size, p.seq_len)?,
        Scaler::new(0.0, ctx.cfg.agent.actions.max_rate())?,
    ))
}

fn load_db(path: &Path) -> Result<Option<ActionDatabase>> {
    if path.exists() {
        Ok(Some(ActionDatabase::load(path)?))
    } else {
        Ok(None)
    }
}

fn cmd_what_if(ctx: &Ctx, state: f64) -> Result<()> {
    if !(state > 0.0) {
        return Err(Error::config("--state", "must be > 0"));
    }
    ctx.ensure_out()?;
    let q = train_policy(&ctx.cfg)?;
    let mut twin = build_policy_twin(ctx, what_if_predictor(ctx)?, q)?;
    if let Some(db) = load_db(&ctx.db_path())? {
        db.validate(&twin.actions)?;
        twin.db = db;
    }
    let e = twin.what_if(state)?;
    twin.db.save(&ctx.db_path())?;
    println!(
        "state {} Kbps -> action {} Kbps ({:?}, occurrences {})",
        e.state_kbps, e.action_kbps, e.origin, e.occurrences
    );
    println!("saved {}", ctx.db_path().display());
    Ok(())
}

fn cmd_inspect_db(ctx: &Ctx) -> Result<()> {
    let path = ctx.db_path();
    let db = ActionDatabase::load(&path)?;
    println!("{} ({} entries)", path.display(), db.len());
    println!("{:>10}  {:>10}  {:<9}  {:>11}", "state", "action", "origin", "occurrences");
    for e in &db.entries {
        let origin = serde_json::to_value(e.origin)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        println!(
            "{:>10}  {:>10}  {:<9}  {:>11}",
            e.state_kbps, e.action_kbps, origin, e.occurrences
        );
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut ctx = load_ctx(cli)?;
    match &cli.command {
        Command::Generate { print_defaults } => cmd_generate(&ctx, *print_defaults),
        Command::Train => cmd_train(&ctx),
        Command::Run { scenario } => {
            let name: ScenarioName = scenario
                .parse()
                .map_err(|_| Error::config("--scenario", format!("unknown scenario `{scenario}`")))?;
            cmd_run(&mut ctx, name)
        }
        Command::Compare => cmd_run(&mut ctx, ScenarioName::Compare),
        Command::WhatIf { state } => cmd_what_if(&ctx, *state),
        Command::InspectDb => cmd_inspect_db(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
