//! `opl`: offline-policy-learning pipeline over the synthetic push env.
//!
//! Every subcommand is deterministic given its flags, config, and seed;
//! outputs carry no timestamps, so reruns are byte-identical. Errors leave
//! on exit code 1 as a single `error[kind]: message` line on stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use opl_cli::config::{meta_path, FilterReport, GenMeta, PipelineConfig, ReproReport, ReproRun};
use opl_cli::pipeline::{corpus_env, prepare, run_variant, Variant};
use opl_core::bctrainer::{train_theory_to_real, BcConfig, PolicyModel, TrainReport};
use opl_core::dataset::{EpisodeDataset, Label};
use opl_core::error::{Error, Result};
use opl_core::evalharness::{compare_table, evaluate_policy, score_filter, EvalReport};
use opl_core::expertfilter::{run_filter, select_episodes, FilterConfig};
use opl_core::rng;
use opl_core::symaug::{augment_dataset, augment_gaussian, SymmetrySchema};
use opl_core::synthenv::{generate_dataset, DatasetKind, EnvParams, SynthEnv};

#[derive(Parser)]
#[command(
    name = "opl",
    about = "Offline policy learning: dataset generation, expert filtering, \
             symmetry augmentation, behavioral cloning, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset plus an env/schema sidecar.
    Gen {
        /// Dataset composition: "expert" or "mixed".
        #[arg(long)]
        kind: String,
        /// Number of episodes.
        #[arg(long)]
        n: usize,
        /// Environment RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path (.opld); sidecar goes to <out>.meta.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the episode length from the config/defaults.
        #[arg(long)]
        episode_len: Option<usize>,
        /// Write all labels as unknown, as real-world corpora arrive.
        #[arg(long, default_value_t = false)]
        strip_labels: bool,
        /// Pipeline config supplying EnvParams (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the semi-supervised expert filter over a dataset.
    Filter {
        /// Input dataset (.opld).
        #[arg(long)]
        data: PathBuf,
        /// Output dataset holding only the selected episodes.
        #[arg(long)]
        out: PathBuf,
        /// JSON report: selected ids, seeds, confidences, iteration history.
        #[arg(long)]
        report: PathBuf,
        /// Confidence threshold override.
        #[arg(long)]
        theta: Option<f64>,
        /// Filter RNG seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Pipeline config supplying FilterConfig (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also score the selection against ground-truth labels (CSV).
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Expand a dataset by symmetry rotations or Gaussian state noise.
    Augment {
        /// Input dataset (.opld).
        #[arg(long)]
        data: PathBuf,
        /// Symmetry schema JSON: a gen sidecar or a bare schema.
        #[arg(long)]
        schema: PathBuf,
        /// "rot" for group rotations, "gauss" for state noise.
        #[arg(long)]
        mode: String,
        /// Gaussian noise standard deviation (gauss mode).
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        /// Total copies per episode including the original (gauss mode).
        #[arg(long, default_value_t = 3)]
        copies: usize,
        /// Noise RNG seed (gauss mode).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-phase behavioral cloning: phase 1 on --aug, phase 2 on --raw.
    Train {
        /// Fine-tuning dataset; also the phase-1 dataset when --aug is absent.
        #[arg(long)]
        raw: PathBuf,
        /// Phase-1 (augmented) dataset.
        #[arg(long)]
        aug: Option<PathBuf>,
        #[arg(long)]
        phase1_steps: Option<usize>,
        #[arg(long)]
        phase2_steps: Option<usize>,
        /// Phase-1 learning rate.
        #[arg(long)]
        lr1: Option<f64>,
        /// Phase-2 learning rate.
        #[arg(long)]
        lr2: Option<f64>,
        /// Minibatch size for both phases.
        #[arg(long)]
        batch: Option<usize>,
        /// Training RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss-curve CSV (phase,step,loss).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Pipeline config supplying BcConfig (scaled defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Roll out a trained policy on fresh episodes and report returns.
    Eval {
        /// Policy checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Env description: a gen sidecar or bare EnvParams JSON.
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 15)]
        n_episodes: usize,
        /// Evaluation RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// EvalReport JSON output.
        #[arg(long)]
        out_json: PathBuf,
        /// Per-episode returns CSV output.
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Score a filter selection against a labeled dataset.
    ScoreFilter {
        /// Labeled dataset the filter ran on (.opld).
        #[arg(long)]
        data: PathBuf,
        /// Filter report JSON with the selected ids.
        #[arg(long)]
        report: PathBuf,
        /// Confusion matrix CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge eval reports into one comparison table.
    Report {
        /// Named eval reports as name=path, repeatable.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        /// Comparison CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end pipeline for one variant: generate, filter, train, eval.
    Repro {
        /// ours | ablation1 | ablation2 | caug | bc | topk10 | topk50
        #[arg(long)]
        variant: String,
        /// Directory for all artifacts.
        #[arg(long)]
        out_dir: PathBuf,
        /// Top-level seed, split into gen/filter/train/eval streams.
        #[arg(long)]
        seed: Option<u64>,
        /// Mixed-corpus size in episodes.
        #[arg(long, default_value_t = 120)]
        n_episodes: usize,
        /// Evaluation episodes per trained policy.
        #[arg(long, default_value_t = 15)]
        eval_episodes: usize,
        /// Independently seeded training repetitions.
        #[arg(long, default_value_t = 1)]
        train_seeds: usize,
        /// Pipeline config (defaults otherwise, with BC steps scaled to
        /// the corpus size).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let code = match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), single_line(&e.to_string()));
            1
        }
    };
    std::process::exit(code);
}

fn run() -> Result<()> {
    init_thread_pool()?;
    match Cli::parse().cmd {
        Cmd::Gen {
            kind,
            n,
            seed,
            out,
            episode_len,
            strip_labels,
            config,
        } => cmd_gen(&kind, n, seed, &out, episode_len, strip_labels, config),
        Cmd::Filter {
            data,
            out,
            report,
            theta,
            seed,
            config,
            confusion,
        } => cmd_filter(&data, &out, &report, theta, seed, config, confusion),
        Cmd::Augment {
            data,
            schema,
            mode,
            sigma,
            copies,
            seed,
            out,
        } => cmd_augment(&data, &schema, &mode, sigma, copies, seed, &out),
        Cmd::Train {
            raw,
            aug,
            phase1_steps,
            phase2_steps,
            lr1,
            lr2,
            batch,
            seed,
            out,
            loss_csv,
            config,
        } => {
            let overrides = TrainOverrides {
                phase1_steps,
                phase2_steps,
                lr1,
                lr2,
                batch,
                seed,
            };
            cmd_train(&raw, aug, &overrides, &out, loss_csv, config)
        }
        Cmd::Eval {
            model,
            env,
            n_episodes,
            seed,
            out_json,
            out_csv,
        } => cmd_eval(&model, &env, n_episodes, seed, &out_json, &out_csv),
        Cmd::ScoreFilter { data, report, out } => cmd_score_filter(&data, &report, &out),
        Cmd::Report { inputs, out } => cmd_report(&inputs, &out),
        Cmd::Repro {
            variant,
            out_dir,
            seed,
            n_episodes,
            eval_episodes,
            train_seeds,
            config,
        } => cmd_repro(
            &variant,
            &out_dir,
            seed,
            n_episodes,
            eval_episodes,
            train_seeds,
            config,
        ),
    }
}

/// Caps rayon's worker count when OPL_THREADS is set.
fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("OPL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::Domain(format!("OPL_THREADS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Domain(format!("thread pool setup failed: {e}")))
}

fn single_line(msg: &str) -> String {
    msg.replace('\n', "; ")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_kind(s: &str) -> Result<DatasetKind> {
    match s {
        "expert" => Ok(DatasetKind::Expert),
        "mixed" => Ok(DatasetKind::Mixed),
        other => Err(Error::Domain(format!(
            "unknown dataset kind {other:?} (expected expert or mixed)"
        ))),
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let cfg = PipelineConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Env description files are either a gen sidecar (env + schema) or bare EnvParams;
/// both parse unambiguously because unknown keys are rejected.
fn load_env_params(path: &Path) -> Result<EnvParams> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(meta) = serde_json::from_str::<GenMeta>(&text) {
        return Ok(meta.env);
    }
    if let Ok(params) = serde_json::from_str::<EnvParams>(&text) {
        return Ok(params);
    }
    Err(Error::Schema(format!(
        "{} is neither a gen sidecar nor bare EnvParams JSON",
        path.display()
    )))
}

/// Schema files are either a gen sidecar or a bare SymmetrySchema.
fn load_schema_spec(path: &Path) -> Result<SymmetrySchema> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(meta) = serde_json::from_str::<GenMeta>(&text) {
        return Ok(meta.schema);
    }
    if let Ok(schema) = serde_json::from_str::<SymmetrySchema>(&text) {
        return Ok(schema);
    }
    Err(Error::Schema(format!(
        "{} is neither a gen sidecar nor bare SymmetrySchema JSON",
        path.display()
    )))
}

fn cmd_gen(
    kind: &str,
    n: usize,
    seed: u64,
    out: &Path,
    episode_len: Option<usize>,
    strip_labels: bool,
    config: Option<PathBuf>,
) -> Result<()> {
    let kind = parse_kind(kind)?;
    let mut params = match config {
        Some(p) => load_config(&p)?.env,
        None => EnvParams::default(),
    };
    if let Some(len) = episode_len {
        params.episode_len = len;
    }
    params.rng_seed = seed;
    let env = SynthEnv::new(params)?;
    let mut ds = generate_dataset(&env, kind, n)?;
    if strip_labels {
        for ep in &mut ds.episodes {
            ep.label = Label::Unknown;
        }
    }
    ensure_parent(out)?;
    ds.save(out)?;
    GenMeta {
        env: params,
        schema: env.symmetry_schema(),
    }
    .save(meta_path(out))?;
    println!(
        "wrote {} episodes ({} transitions) to {}",
        ds.n_episodes(),
        ds.n_transitions(),
        out.display()
    );
    Ok(())
}

fn cmd_filter(
    data: &Path,
    out: &Path,
    report: &Path,
    theta: Option<f64>,
    seed: Option<u64>,
    config: Option<PathBuf>,
    confusion: Option<PathBuf>,
) -> Result<()> {
    let ds = EpisodeDataset::load(data)?;
    let mut cfg = match config {
        Some(p) => load_config(&p)?.filter,
        None => FilterConfig::default(),
    };
    if let Some(t) = theta {
        cfg.theta_conf = t;
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let outcome = run_filter(&ds, &cfg)?;
    let selected = select_episodes(&ds, &outcome.kept_ids)?;
    ensure_parent(out)?;
    selected.save(out)?;
    FilterReport {
        selected: outcome.kept_ids.clone(),
        seed_ids: outcome.seed_ids.clone(),
        converged: outcome.converged,
        iterations: outcome.iterations.clone(),
        confidences: outcome.confidences.clone(),
    }
    .save(report)?;
    if let Some(csv_path) = confusion {
        let cm = score_filter(&outcome.kept_ids, &ds)?;
        write_text(&csv_path, &cm.to_csv())?;
    }
    println!(
        "kept {}/{} episodes (converged: {}, iterations: {})",
        outcome.kept_ids.len(),
        ds.n_episodes(),
        outcome.converged,
        outcome.iterations.len()
    );
    Ok(())
}

fn cmd_augment(
    data: &Path,
    schema: &Path,
    mode: &str,
    sigma: f64,
    copies: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ds = EpisodeDataset::load(data)?;
    let schema = load_schema_spec(schema)?;
    let aug = match mode {
        "rot" => augment_dataset(&ds, &schema)?,
        "gauss" => augment_gaussian(&ds, copies, sigma * sigma, seed)?,
        other => {
            return Err(Error::Domain(format!(
                "unknown augment mode {other:?} (expected rot or gauss)"
            )))
        }
    };
    ensure_parent(out)?;
    aug.save(out)?;
    println!(
        "augmented {} -> {} episodes at {}",
        ds.n_episodes(),
        aug.n_episodes(),
        out.display()
    );
    Ok(())
}

struct TrainOverrides {
    phase1_steps: Option<usize>,
    phase2_steps: Option<usize>,
    lr1: Option<f64>,
    lr2: Option<f64>,
    batch: Option<usize>,
    seed: u64,
}

fn loss_curve_csv(report: &TrainReport) -> String {
    let mut csv = String::from("phase,step,loss\n");
    for (phase, curve) in [(1, &report.phase1), (2, &report.phase2)] {
        for (step, loss) in curve {
            csv.push_str(&format!("{phase},{step},{loss}\n"));
        }
    }
    csv
}

fn cmd_train(
    raw: &Path,
    aug: Option<PathBuf>,
    ov: &TrainOverrides,
    out: &Path,
    loss_csv: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<()> {
    let raw_ds = EpisodeDataset::load(raw)?;
    let aug_ds = match aug {
        Some(p) => EpisodeDataset::load(&p)?,
        None => raw_ds.clone(),
    };
    let mut cfg = match config {
        Some(p) => load_config(&p)?.bc,
        None => BcConfig::scaled_to(aug_ds.n_transitions()),
    };
    if let Some(s) = ov.phase1_steps {
        cfg.phase1.steps = s;
    }
    if let Some(s) = ov.phase2_steps {
        cfg.phase2.steps = s;
    }
    if let Some(lr) = ov.lr1 {
        cfg.phase1.lr = lr;
    }
    if let Some(lr) = ov.lr2 {
        cfg.phase2.lr = lr;
    }
    if let Some(b) = ov.batch {
        cfg.phase1.batch = b;
        cfg.phase2.batch = b;
    }
    cfg.rng_seed = ov.seed;
    let (model, report) = train_theory_to_real(&raw_ds, &aug_ds, &cfg)?;
    ensure_parent(out)?;
    model.save(out)?;
    if let Some(p) = loss_csv {
        write_text(&p, &loss_curve_csv(&report))?;
    }
    let final_loss = report
        .phase2
        .last()
        .or(report.phase1.last())
        .map(|(_, l)| *l)
        .unwrap_or(f64::NAN);
    println!(
        "trained policy ({} + {} steps, final loss {:.6}) to {}",
        cfg.phase1.steps,
        cfg.phase2.steps,
        final_loss,
        out.display()
    );
    Ok(())
}

fn returns_csv(rows: &[(u64, &EvalReport)]) -> String {
    let mut csv = String::from("train_seed,episode,episode_seed,return\n");
    for (train_seed, report) in rows {
        for (i, (ret, ep_seed)) in report
            .per_episode_returns
            .iter()
            .zip(&report.seeds)
            .enumerate()
        {
            csv.push_str(&format!("{train_seed},{i},{ep_seed},{ret}\n"));
        }
    }
    csv
}

fn cmd_eval(
    model: &Path,
    env_desc: &Path,
    n_episodes: usize,
    seed: u64,
    out_json: &Path,
    out_csv: &Path,
) -> Result<()> {
    let model = PolicyModel::load(model)?;
    let env = SynthEnv::new(load_env_params(env_desc)?)?;
    let report = evaluate_policy(&model, &env, n_episodes, seed)?;
    write_text(out_json, &serde_json::to_string_pretty(&report)?)?;
    write_text(out_csv, &returns_csv(&[(seed, &report)]))?;
    println!(
        "evaluated {} episodes: mean return {:.6}, sd {:.6}",
        report.n_episodes, report.mean, report.sd
    );
    Ok(())
}

fn cmd_score_filter(data: &Path, report: &Path, out: &Path) -> Result<()> {
    let ds = EpisodeDataset::load(data)?;
    let rep = FilterReport::load(report)?;
    let cm = score_filter(&rep.selected, &ds)?;
    write_text(out, &cm.to_csv())?;
    println!(
        "selection accuracy {:.6} (precision {:.6}, recall {:.6})",
        cm.accuracy, cm.precision, cm.recall
    );
    Ok(())
}

/// Accepts a bare eval report or a repro report (runs pooled).
fn load_eval_input(path: &str) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
        return Ok(report);
    }
    if let Ok(repro) = serde_json::from_str::<ReproReport>(&text) {
        let mut returns = Vec::new();
        let mut seeds = Vec::new();
        for run in &repro.runs {
            returns.extend_from_slice(&run.eval.per_episode_returns);
            seeds.extend_from_slice(&run.eval.seeds);
        }
        return Ok(EvalReport::from_returns(returns, seeds));
    }
    Err(Error::Schema(format!(
        "{path} is neither an eval report nor a repro report"
    )))
}

fn cmd_report(inputs: &[String], out: &Path) -> Result<()> {
    let mut rows = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (name, path) = input.split_once('=').ok_or_else(|| {
            Error::Domain(format!("report input must be name=path, got {input:?}"))
        })?;
        rows.push((name.to_string(), load_eval_input(path)?));
    }
    let table = compare_table(&rows);
    write_text(out, &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_repro(
    variant: &str,
    out_dir: &Path,
    seed: Option<u64>,
    n_episodes: usize,
    eval_episodes: usize,
    train_seeds: usize,
    config: Option<PathBuf>,
) -> Result<()> {
    let variant = Variant::parse(variant)?;
    if train_seeds == 0 {
        return Err(Error::Domain("train_seeds must be >= 1".to_string()));
    }
    let (env_params, filter_cfg, cfg_bc, cfg_seed) = match config {
        Some(p) => {
            let cfg = load_config(&p)?;
            (cfg.env, cfg.filter, Some(cfg.bc), cfg.seed)
        }
        None => (EnvParams::default(), FilterConfig::default(), None, 0),
    };
    let seed = seed.unwrap_or(cfg_seed);
    std::fs::create_dir_all(out_dir)?;

    let data = prepare(&env_params, n_episodes, seed, &filter_cfg)?;
    let env = corpus_env(&env_params, seed)?;
    // Without an explicit config, BC budgets scale with the corpus so one
    // flag moves the whole experiment between desk and full scale.
    let bc = cfg_bc.unwrap_or_else(|| BcConfig::scaled_to(data.mixed.n_transitions()));

    let train_base = rng::derive_seed(seed, "train");
    let eval_seed = rng::derive_seed(seed, "eval");
    let mut runs: Vec<ReproRun> = Vec::with_capacity(train_seeds);
    for j in 0..train_seeds {
        let train_seed = rng::derive_indexed_seed(train_base, j as u64);
        let run = run_variant(
            &env,
            &data,
            variant,
            &bc,
            train_seed,
            eval_episodes,
            eval_seed,
        )?;
        if j == 0 {
            run.model
                .save(out_dir.join(format!("{}.ckpt", variant.name())))?;
            write_text(
                &out_dir.join(format!("{}_losses.csv", variant.name())),
                &loss_curve_csv(&run.train_report),
            )?;
        }
        runs.push(ReproRun {
            train_seed,
            eval: run.eval,
        });
    }

    FilterReport {
        selected: data.filter.kept_ids.clone(),
        seed_ids: data.filter.seed_ids.clone(),
        converged: data.filter.converged,
        iterations: data.filter.iterations.clone(),
        confidences: data.filter.confidences.clone(),
    }
    .save(out_dir.join(format!("{}_filter.json", variant.name())))?;

    let report = ReproReport {
        variant: variant.name().to_string(),
        seed,
        n_episodes,
        eval_episodes,
        filter_selected: data.filter.kept_ids.clone(),
        filter_converged: data.filter.converged,
        filter_iterations: data.filter.iterations.len(),
        runs,
    };
    report.save(out_dir.join(format!("{}_eval.json", variant.name())))?;

    let csv_rows: Vec<(u64, &EvalReport)> = report
        .runs
        .iter()
        .map(|r| (r.train_seed, &r.eval))
        .collect();
    write_text(
        &out_dir.join(format!("{}_returns.csv", variant.name())),
        &returns_csv(&csv_rows),
    )?;

    let mut pooled_returns = Vec::with_capacity(train_seeds * eval_episodes);
    let mut pooled_seeds = Vec::with_capacity(train_seeds * eval_episodes);
    for r in &report.runs {
        pooled_returns.extend_from_slice(&r.eval.per_episode_returns);
        pooled_seeds.extend_from_slice(&r.eval.seeds);
    }
    let pooled = EvalReport::from_returns(pooled_returns, pooled_seeds);
    let table = compare_table(&[(variant.name().to_string(), pooled)]);
    write_text(&out_dir.join(format!("{}.csv", variant.name())), &table)?;
    print!("{table}");
    Ok(())
}
