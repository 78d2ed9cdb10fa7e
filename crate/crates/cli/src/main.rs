//! `stackdet`: dataset validation, synthetic data, training, evaluation and reports.
//!
//! Exit codes: 0 success, 1 fold validation failed, 2 bad config or arguments,
//! 3 data or I/O error, 4 numeric failure during training.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stackdet_core::config::{load_config, render_config, RunConfig};
use stackdet_core::dataset::{language_stats, load_manifest, validate_folds, Fold, Source};
use stackdet_core::harness::{
    ablation_suite, baselines, evaluate, plot_report, pretrain_auxiliary, render_table, run_protocol_models, EvalMode,
    ModelPredictor, PreparedData, RunReport,
};
use stackdet_core::models::{load_model, save_model, ModelKind};
use stackdet_core::synth::{generate_dataset, MANIFEST_FILE, STORE_FILE};
use stackdet_core::CoreError;

#[derive(Parser)]
#[command(name = "stackdet", version, about = "Detect whether a dropped object ended up in or on a target")]
struct Cli {
    /// TOML config with [experiment] and [synth] tables.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Dotted override applied after the config file, e.g. experiment.epochs=5. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory. Defaults to $STACKDET_OUT/<command>, or runs/<command>.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the pair-fold rule and print per-fold counts.
    Validate { manifest: PathBuf },
    /// Generate a synthetic dataset (manifest, captures, embedding store) from [synth].
    Synth,
    /// Run the seed protocol for [experiment] and save one checkpoint per seed.
    Train,
    /// Train the object-only auxiliary model on All Pairs for each seed.
    Pretrain,
    /// Evaluate saved checkpoints on the dev and test folds.
    Eval {
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Run every ablation row with the ego_obj model.
    Ablate,
    /// Expression length histogram and word frequency ranks.
    Stats { manifest: PathBuf },
    /// Render a table from saved report JSON files.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Pretrain => "pretrain",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::Stats { .. } => "stats",
            Command::Report { .. } => "report",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Validation(_)) => 1,
        Some(CoreError::Config(_) | CoreError::Argument(_)) => 2,
        Some(CoreError::Numeric(_)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn data(&self) -> Result<PreparedData> {
        let e = &self.cfg.experiment;
        let missing = |k: &str| CoreError::Config(format!("experiment.{k} is not set"));
        let manifest = e.manifest.as_deref().ok_or_else(|| missing("manifest"))?;
        let store = e.store.as_deref().ok_or_else(|| missing("store"))?;
        log::info!("loading {} and {}", manifest.display(), store.display());
        Ok(PreparedData::load(manifest, store, e.relation)?)
    }

    fn save_report(&self, report: &RunReport, stem: &str) -> Result<()> {
        self.write(&format!("{stem}.json"), report.to_json()?)?;
        plot_report(report, &self.out.join(format!("{stem}.png")))?;
        Ok(())
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    let out = match &cli.out {
        Some(o) => o.clone(),
        None => std::env::var_os("STACKDET_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(cli.command.name()),
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { cfg, out };
    ctx.write("config.toml", render_config(&ctx.cfg)?)?;

    match &cli.command {
        Command::Validate { manifest } => cmd_validate(&ctx, manifest),
        Command::Synth => cmd_synth(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Pretrain => cmd_pretrain(&ctx),
        Command::Eval { models } => cmd_eval(&ctx, models),
        Command::Ablate => cmd_ablate(&ctx),
        Command::Stats { manifest } => cmd_stats(&ctx, manifest),
        Command::Report { reports } => cmd_report(&ctx, reports),
    }
}

fn cmd_validate(ctx: &Ctx, manifest: &Path) -> Result<()> {
    let report = load_manifest(manifest).and_then(|ds| validate_folds(&ds.catalog, &ds.pairs));
    match report {
        Ok(r) => {
            let text = r.render();
            print!("{text}");
            ctx.write("validate.txt", &text)?;
            Ok(())
        }
        Err(CoreError::Validation(offenders)) => {
            let mut text = String::from("FAILED\n");
            for o in &offenders {
                text.push_str(o);
                text.push('\n');
            }
            print!("{text}");
            ctx.write("validate.txt", &text)?;
            Err(CoreError::Validation(offenders).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let synth = generate_dataset(&ctx.cfg.synth)?;
    synth.write(&ctx.out)?;
    let counts = validate_folds(&synth.dataset.catalog, &synth.dataset.pairs)?;
    print!("{}", counts.render());
    println!("manifest: {}", ctx.out.join(MANIFEST_FILE).display());
    println!("store: {}", ctx.out.join(STORE_FILE).display());
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let e = &ctx.cfg.experiment;
    let data = ctx.data()?;
    let (report, models) = run_protocol_models(e, &data)?;
    for (seed, model) in e.seeds.iter().zip(&models) {
        save_model(&ctx.out.join(format!("model-seed{seed}.sdta")), model)?;
    }
    ctx.save_report(&report, "report")?;
    let base = baselines(&data, e.relation, &e.seeds)?;
    ctx.write("baselines.json", serde_json::to_string_pretty(&base)?)?;
    let table = render_table(std::slice::from_ref(&report));
    ctx.write("table.txt", &table)?;
    print!("{table}");
    println!(
        "baseline MC     dev {:.2}  test {:.2}\nbaseline random dev {:.2}  test {:.2}",
        base.majority_dev, base.majority_test, base.random_dev.mean, base.random_test.mean
    );
    Ok(())
}

fn cmd_pretrain(ctx: &Ctx) -> Result<()> {
    let e = &ctx.cfg.experiment;
    let data = ctx.data()?;
    let mut lines = String::from("seed,best_epoch,best_dev\n");
    for &seed in &e.seeds {
        let out = pretrain_auxiliary(e, &data, seed)?;
        save_model(&ctx.out.join(format!("pretrained-seed{seed}.sdta")), &out.model)?;
        lines.push_str(&format!("{seed},{},{}\n", out.best_epoch, out.best_dev));
    }
    ctx.write("pretrain.csv", &lines)?;
    print!("{lines}");
    Ok(())
}

fn cmd_eval(ctx: &Ctx, models: &[PathBuf]) -> Result<()> {
    let e = &ctx.cfg.experiment;
    let data = ctx.data()?;
    let mut rows = Vec::new();
    for path in models {
        let model = load_model(path)?;
        let (source, mode) = match model.spec.kind {
            ModelKind::ObjOnly => (Source::Annotation, EvalMode::AllPairs),
            _ => (Source::Robot, EvalMode::Robot),
        };
        let predictor = ModelPredictor { model: &model, mask: e.mask };
        let mut row = serde_json::Map::new();
        row.insert("model".into(), path.display().to_string().into());
        for fold in [Fold::Dev, Fold::Test] {
            let pairs = data.pairs(fold, model.spec.relation, source);
            let acc = evaluate(&predictor, &data, &pairs, mode)?;
            println!("{} {fold}: {acc:.4}", path.display());
            row.insert(fold.name().into(), acc.into());
        }
        rows.push(serde_json::Value::Object(row));
    }
    ctx.write("eval.json", serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

fn cmd_ablate(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let reports = ablation_suite(&ctx.cfg.experiment, &data)?;
    ctx.write("ablation.json", serde_json::to_string_pretty(&reports)?)?;
    let table = render_table(&reports);
    ctx.write("table.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_stats(ctx: &Ctx, manifest: &Path) -> Result<()> {
    let ds = load_manifest(manifest)?;
    let stats = language_stats(&ds.catalog);
    ctx.write("lengths.csv", stats.lengths_csv())?;
    ctx.write("ranks.csv", stats.ranks_csv())?;
    if let Some(m) = stats.modal_length() {
        println!("modal expression length: {m}");
    }
    println!("{} distinct words", stats.ranks.len());
    Ok(())
}

fn cmd_report(ctx: &Ctx, paths: &[PathBuf]) -> Result<()> {
    let mut reports = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        // either a single run report or an ablation list
        let parsed: Vec<RunReport> = match serde_json::from_str::<RunReport>(&text) {
            Ok(r) => vec![r],
            Err(_) => serde_json::from_str(&text)
                .map_err(|e| CoreError::Data(format!("{}: not a run report: {e}", p.display())))?,
        };
        reports.extend(parsed);
    }
    let table = render_table(&reports);
    ctx.write("table.txt", &table)?;
    print!("{table}");
    Ok(())
}
