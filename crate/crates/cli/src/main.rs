//! Command-line front end: corpus generation, training, attacks,
//! evaluation, transfer studies, overlays, and summary tables.

mod config;
mod render;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use docadv_core::data::{
    load_annotations, stats, synth_corpus, write_corpus, Corpus, Granularity, LoadOptions,
    SynthConfig,
};
use docadv_core::eval::{evaluate_attack, transfer_eval, AttackReport, ScenarioMatrix};
use docadv_core::model::{
    load_predictor, load_surrogate, save_predictor, save_surrogate, train_bbox_predictor,
    train_surrogate, PredictorConfig, PredictorTrainConfig, SurrogateConfig, SurrogateTrainConfig,
};
use docadv_core::scenario::{
    run_scenario, AttackConfig, Method, RunManifest, Scenario, ScenarioContext, TextMode,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "docadv",
    version,
    about = "Budget-constrained multi-modal adversarial perturbations for document understanding"
)]
struct Cli {
    /// JSON run configuration; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for document-level parallelism (0 = all cores,
    /// 1 = sequential). Results do not depend on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic key-value corpus with rendered page rasters.
    Synth(SynthArgs),
    /// Train the surrogate token classifier.
    TrainSurrogate(TrainSurrogateArgs),
    /// Train a per-token box predictor on frozen surrogate embeddings.
    TrainBboxPredictor(TrainPredictorArgs),
    /// Run one attack scenario over a corpus.
    Attack(AttackArgs),
    /// Score a perturbed corpus against its original and re-check budgets.
    Evaluate(EvaluateArgs),
    /// Score one perturbed corpus on the source and an independent target.
    Transfer(TransferArgs),
    /// Write before/after overlay images.
    Render(RenderArgs),
    /// Aggregate attack reports into a scenario-by-method drop table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    docs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 400)]
    page_width: u32,
    #[arg(long, default_value_t = 520)]
    page_height: u32,
    /// Skip raster rendering (annotations only).
    #[arg(long)]
    no_rasters: bool,
}

#[derive(Args)]
struct TrainSurrogateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value_t = 16.0)]
    jitter: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainPredictorArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 4e-3)]
    lr: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda_giou: f64,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    text_mode: Option<String>,
    /// Apply one page augmentation (S6 only; S3 always augments).
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Export per-candidate trace records for gradient attacks.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum number of documents to render (0 = all).
    #[arg(long, default_value_t = 16)]
    limit: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation output directories (each holding a report.json).
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "Drop in span F1 (percentage points)")]
    title: String,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let category = err
                .downcast_ref::<docadv_core::Error>()
                .map(|e| e.category())
                .unwrap_or("general");
            eprintln!("error [{category}]: {err:#}");
            let code = match category {
                "config" | "invalid-argument" => 2,
                "parse" => 3,
                "training" => 4,
                "attack" => 5,
                "checkpoint" => 6,
                "image" => 7,
                "io" | "json" => 8,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let workers = cli.workers.or(cfg.workers).unwrap_or(0);
    #[cfg(feature = "parallel")]
    if workers >= 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .ok();
    }
    let parallel = workers != 1;
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, &cfg),
        Cmd::TrainSurrogate(a) => cmd_train_surrogate(a, &cfg),
        Cmd::TrainBboxPredictor(a) => cmd_train_predictor(a, &cfg),
        Cmd::Attack(a) => cmd_attack(a, &cfg, parallel),
        Cmd::Evaluate(a) => cmd_evaluate(a, &cfg, parallel),
        Cmd::Transfer(a) => cmd_transfer(a, &cfg, parallel),
        Cmd::Render(a) => cmd_render(a, &cfg),
        Cmd::Report(a) => cmd_report(a, &cfg),
    }
}

fn want<T: Clone>(flag: Option<T>, cfg: Option<T>, what: &str) -> Result<T> {
    flag.or(cfg).ok_or_else(|| {
        anyhow!(docadv_core::Error::Config(format!(
            "missing required {what}"
        )))
    })
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let corpus = load_annotations(path, &LoadOptions::default())
        .with_context(|| format!("loading corpus from {}", path.display()))?;
    Ok(corpus)
}

fn cmd_synth(a: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let out = want(a.out, cfg.out.clone(), "--out directory")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let scfg = SynthConfig {
        docs: a.docs,
        seed,
        rasters: !a.no_rasters,
        page: (a.page_width, a.page_height),
        ..Default::default()
    };
    let corpus = synth_corpus(&scfg);
    write_corpus(&out, &corpus)?;
    let mut manifest = RunManifest::new("synth", seed, &corpus, serde_json::to_value(&scfg)?);
    manifest.outputs = vec!["annotations/".into(), "images/".into()];
    manifest.write(&out.join("manifest.json"))?;
    print!("{}", stats(&corpus));
    println!("wrote {} documents to {}", corpus.len(), out.display());
    Ok(())
}

fn cmd_train_surrogate(a: TrainSurrogateArgs, cfg: &RunConfig) -> Result<()> {
    let data = want(a.data, cfg.data.clone(), "--data directory")?;
    let out = want(a.out, cfg.out.clone(), "--out checkpoint path")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let corpus = load_corpus(&data)?;
    let model_cfg = SurrogateConfig::desk(seed);
    let train_cfg = SurrogateTrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        final_lr_frac: 0.05,
        coord_jitter: a.jitter,
        holdout_frac: a.holdout,
        batch_docs: 4,
        weight_decay: 0.01,
        seed,
    };
    let (model, report) = train_surrogate(&corpus, &model_cfg, &train_cfg)?;
    save_surrogate(&out, &model)?;
    let mut manifest = RunManifest::new(
        "train-surrogate",
        seed,
        &corpus,
        serde_json::json!({"model": model_cfg, "train": train_cfg, "report": report}),
    );
    manifest.outputs = vec![out.display().to_string()];
    manifest.write(&out.with_extension("manifest.json"))?;
    println!(
        "trained surrogate: held-out span F1 {:.4}, final loss {:.5}; saved to {}",
        report.heldout_f1,
        report.final_train_loss,
        out.display()
    );
    Ok(())
}

fn cmd_train_predictor(a: TrainPredictorArgs, cfg: &RunConfig) -> Result<()> {
    let data = want(a.data, cfg.data.clone(), "--data directory")?;
    let surrogate_path = want(a.surrogate, cfg.surrogate.clone(), "--surrogate checkpoint")?;
    let out = want(a.out, cfg.out.clone(), "--out checkpoint path")?;
    let granularity: Granularity = want(a.granularity, cfg.granularity.clone(), "--granularity")?
        .parse()
        .map_err(anyhow::Error::from)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let corpus = load_corpus(&data)?;
    let surrogate = load_surrogate(&surrogate_path)?;
    let pred_cfg = PredictorConfig::desk(surrogate.cfg.dim, granularity, seed);
    let train_cfg = PredictorTrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        final_lr_frac: 0.03,
        ema_decay: 0.9,
        lambda_giou: a.lambda_giou,
        holdout_frac: a.holdout,
        batch_docs: 4,
        weight_decay: 0.01,
        seed,
    };
    let (predictor, report) = train_bbox_predictor(&surrogate, &corpus, &pred_cfg, &train_cfg)?;
    save_predictor(&out, &predictor)?;
    let mut manifest = RunManifest::new(
        "train-bbox-predictor",
        seed,
        &corpus,
        serde_json::json!({"model": pred_cfg, "train": train_cfg, "report": {
            "heldout_miou": report.heldout_miou, "final_train_loss": report.final_train_loss,
        }}),
    );
    manifest.outputs = vec![out.display().to_string()];
    manifest.write(&out.with_extension("manifest.json"))?;
    println!(
        "trained {} box predictor: held-out mIoU {:.4}; saved to {}",
        granularity,
        report.heldout_miou,
        out.display()
    );
    Ok(())
}

fn attack_config_from(a: &AttackArgs, cfg: &RunConfig) -> Result<AttackConfig> {
    let scenario: Scenario = want(a.scenario.clone(), cfg.scenario.clone(), "--scenario")?
        .parse()
        .map_err(anyhow::Error::from)?;
    let granularity: Granularity = want(
        a.granularity.clone(),
        cfg.granularity.clone(),
        "--granularity",
    )?
    .parse()
    .map_err(anyhow::Error::from)?;
    let method: Method = a
        .method
        .clone()
        .or(cfg.method.clone())
        .unwrap_or_else(|| "random".into())
        .parse()
        .map_err(anyhow::Error::from)?;
    let tau = a.tau.or(cfg.tau).unwrap_or(0.6);
    let rho = a.rho.or(cfg.rho).unwrap_or(0.1);
    let text_mode: TextMode = a
        .text_mode
        .clone()
        .or(cfg.text_mode.clone())
        .unwrap_or_else(|| "random_replace".into())
        .parse()
        .map_err(anyhow::Error::from)?;
    let pgd = cfg.pgd.clone().unwrap_or_default();
    let diacritic = cfg.diacritic.clone().unwrap_or_default();
    let mut out =
        AttackConfig::new(scenario, granularity, method, tau, rho).map_err(anyhow::Error::from)?;
    out.text_mode = text_mode;
    out.augment = out.augment || (a.augment || cfg.augment.unwrap_or(false));
    out.pgd_steps = pgd.steps;
    out.pgd_alpha = pgd.alpha;
    out.pgd_lambda_box = pgd.lambda_box;
    out.diacritic = diacritic;
    out.seed = a.seed.or(cfg.seed).unwrap_or(0);
    out.keep_traces = a.traces || cfg.keep_traces.unwrap_or(false);
    out.validate().map_err(anyhow::Error::from)?;
    Ok(out)
}

fn cmd_attack(a: AttackArgs, cfg: &RunConfig, parallel: bool) -> Result<()> {
    let data = want(a.data.clone(), cfg.data.clone(), "--data directory")?;
    let out = want(a.out.clone(), cfg.out.clone(), "--out directory")?;
    let attack = attack_config_from(&a, cfg)?;
    let corpus = load_corpus(&data)?;

    let surrogate_path = a.surrogate.clone().or(cfg.surrogate.clone());
    let predictor_path = a.predictor.clone().or(cfg.predictor.clone());
    let surrogate = surrogate_path.map(|p| load_surrogate(&p)).transpose()?;
    let predictor = predictor_path.map(|p| load_predictor(&p)).transpose()?;
    let ctx = ScenarioContext {
        surrogate: surrogate.as_ref(),
        predictor: predictor.as_ref(),
    };
    let run = run_scenario(&ctx, &corpus, &attack, parallel)?;

    let perturbed = Corpus::new(run.docs);
    write_corpus(&out, &perturbed)?;
    let mut ledger_bytes = serde_json::to_vec_pretty(&run.ledger)?;
    ledger_bytes.push(b'\n');
    std::fs::write(out.join("ledger.json"), ledger_bytes)?;
    let mut outputs = vec![
        "annotations/".into(),
        "images/".into(),
        "ledger.json".into(),
    ];
    if attack.keep_traces {
        let tdir = out.join("traces");
        std::fs::create_dir_all(&tdir)?;
        for trace in &run.traces {
            let mut lines = String::new();
            for c in &trace.candidates {
                lines.push_str(&serde_json::to_string(c)?);
                lines.push('\n');
            }
            std::fs::write(tdir.join(format!("{}.jsonl", trace.doc_id)), lines)?;
        }
        outputs.push("traces/".into());
    }
    let mut manifest = RunManifest::new(
        "attack",
        attack.seed,
        &corpus,
        serde_json::json!({"attack": attack, "data": data, "out": out}),
    );
    manifest.outputs = outputs;
    manifest.write(&out.join("manifest.json"))?;
    let failed = run
        .ledger
        .entries
        .iter()
        .filter(|e| e.layout_failed == Some(true))
        .count();
    let errors = run
        .ledger
        .entries
        .iter()
        .filter(|e| e.error.is_some())
        .count();
    println!(
        "attacked {} documents ({} layout-failed, {} errors); wrote {}",
        perturbed.len(),
        failed,
        errors,
        out.display()
    );
    Ok(())
}

/// The attack configuration a run directory was produced with.
fn attack_config_of_run(dir: &Path) -> Result<AttackConfig> {
    let manifest = RunManifest::read(&dir.join("manifest.json"))
        .with_context(|| format!("reading {}/manifest.json", dir.display()))?;
    let attack = manifest
        .config
        .get("attack")
        .cloned()
        .ok_or_else(|| anyhow!("manifest in {} has no attack section", dir.display()))?;
    Ok(serde_json::from_value(attack)?)
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &RunConfig, parallel: bool) -> Result<()> {
    let surrogate_path = want(a.surrogate, cfg.surrogate.clone(), "--surrogate checkpoint")?;
    let out = want(a.out, cfg.out.clone(), "--out directory")?;
    let attack = attack_config_of_run(&a.perturbed)?;
    let original = load_corpus(&a.original)?;
    let perturbed = load_corpus(&a.perturbed)?;
    let surrogate = load_surrogate(&surrogate_path)?;
    let report = evaluate_attack(&surrogate, &original, &perturbed, &attack, None, parallel)?;
    std::fs::create_dir_all(&out)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    std::fs::write(out.join("report.json"), bytes)?;
    let matrix = ScenarioMatrix::from_reports(std::slice::from_ref(&report));
    std::fs::write(
        out.join("report.txt"),
        matrix.render("Drop in span F1 (pp)"),
    )?;
    let mut manifest = RunManifest::new(
        "evaluate",
        attack.seed,
        &original,
        serde_json::json!({"attack": attack, "original": a.original, "perturbed": a.perturbed}),
    );
    manifest.outputs = vec!["report.json".into(), "report.txt".into()];
    manifest.write(&out.join("manifest.json"))?;
    let compliant = report.compliance.as_ref().is_some_and(|c| c.compliant());
    println!(
        "{} {} {}: clean F1 {:.2}, attacked {:.2}, drop {:.2} pp; budgets {}",
        report.scenario,
        report.method,
        report.granularity,
        report.clean_f1,
        report.attacked_f1,
        report.drop_pp,
        if compliant { "compliant" } else { "VIOLATED" }
    );
    Ok(())
}

fn cmd_transfer(a: TransferArgs, cfg: &RunConfig, parallel: bool) -> Result<()> {
    let out = want(a.out, cfg.out.clone(), "--out directory")?;
    let attack = attack_config_of_run(&a.perturbed)?;
    let original = load_corpus(&a.original)?;
    let perturbed = load_corpus(&a.perturbed)?;
    let source = load_surrogate(&a.source)?;
    let target = load_surrogate(&a.target)?;
    let report = transfer_eval(
        &source, &target, &original, &perturbed, &attack, None, parallel,
    )?;
    std::fs::create_dir_all(&out)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    std::fs::write(out.join("transfer.json"), bytes)?;
    let mut manifest = RunManifest::new(
        "transfer",
        attack.seed,
        &original,
        serde_json::json!({
            "attack": attack, "original": a.original, "perturbed": a.perturbed,
            "source": a.source, "target": a.target
        }),
    );
    manifest.outputs = vec!["transfer.json".into()];
    manifest.write(&out.join("manifest.json"))?;
    println!(
        "drop on source {:.2} pp, on target {:.2} pp",
        report.on_source.drop_pp, report.on_target.drop_pp
    );
    Ok(())
}

fn cmd_render(a: RenderArgs, cfg: &RunConfig) -> Result<()> {
    let out = want(a.out, cfg.out.clone(), "--out directory")?;
    let original = load_corpus(&a.original)?;
    let perturbed = load_corpus(&a.perturbed)?;
    if original.len() != perturbed.len() {
        bail!(
            "corpus sizes differ: {} vs {}",
            original.len(),
            perturbed.len()
        );
    }
    std::fs::create_dir_all(&out)?;
    let limit = if a.limit == 0 {
        original.len()
    } else {
        a.limit
    };
    let mut written = Vec::new();
    for (o, p) in original.docs.iter().zip(&perturbed.docs).take(limit) {
        let img = render::overlay(o, p)?;
        let path = out.join(format!("{}.png", o.id));
        docadv_core::attack_pixel::save_raster(&img, &path)?;
        written.push(format!("{}.png", o.id));
    }
    let mut manifest = RunManifest::new(
        "render",
        0,
        &original,
        serde_json::json!({"original": a.original, "perturbed": a.perturbed, "limit": limit}),
    );
    manifest.outputs = written;
    manifest.write(&out.join("manifest.json"))?;
    println!(
        "wrote {} overlays to {}",
        limit.min(original.len()),
        out.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs, cfg: &RunConfig) -> Result<()> {
    let out = want(a.out, cfg.out.clone(), "--out directory")?;
    let mut reports: Vec<AttackReport> = Vec::new();
    for dir in &a.runs {
        let path = dir.join("report.json");
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        reports.push(serde_json::from_slice(&bytes)?);
    }
    let matrix = ScenarioMatrix::from_reports(&reports);
    std::fs::create_dir_all(&out)?;
    let mut bytes = serde_json::to_vec_pretty(&matrix)?;
    bytes.push(b'\n');
    std::fs::write(out.join("matrix.json"), bytes)?;
    let text = matrix.render(&a.title);
    std::fs::write(out.join("matrix.txt"), &text)?;
    print!("{text}");
    Ok(())
}
