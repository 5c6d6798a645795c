//! Command-line entry point wiring data generation, training, embedding
//! extraction, scoring, metrics and the experiment studies into one
//! binary. Every command takes its randomness from `--seed` (or the
//! config's `[training] seed`) and is byte-deterministic given its inputs.

use clap::{Args, Parser, Subcommand};
use spherelab::config::{ExperimentConfig, LossKind};
use spherelab::data::{
    gen_universe, make_trials, read_embeddings, read_scores, read_trials, read_utterances,
    write_embeddings, write_scores, write_trials, write_utterances,
};
use spherelab::error::{Error, Result};
use spherelab::eval::{asnorm, eer, min_dcf, report, score_trials, DcfParams, ScoredTrials};
use spherelab::losses::{max_grad_check_error, CheckTarget};
use spherelab::model::load_checkpoint;
use spherelab::rng::Rng;
use spherelab::train::{
    extract_embeddings, lmft_from_path, parse_report, parse_sweep_grid, run_ablation,
    run_noise_study, train, LmftConfig,
};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "spherelab",
    about = "Loss-function laboratory for open-set verification on the hypersphere",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (sectioned key = value); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed governing all randomness; overrides the config's [training] seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(ExperimentConfig, u64)> {
        let mut config = load_config_file(self.config.as_deref())?;
        let seed = self.seed.or(config.training.seed).ok_or_else(|| {
            Error::InvalidConfig("no seed given: pass --seed or set [training] seed".into())
        })?;
        config.training.seed = Some(seed);
        config.validate()?;
        Ok((config, seed))
    }
}

fn load_config_file(path: Option<&Path>) -> Result<ExperimentConfig> {
    let config = match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speaker universe and write its files
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for train/eval utterances and trials
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one model and write its report and checkpoint
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Run name used in reports and file stems
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Extract embeddings for an utterance file through a checkpoint
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        utterances: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine-score a trial list against an embedding file
    Score {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply adaptive score normalization against a cohort
        #[arg(long)]
        asnorm: bool,
        /// Cohort embedding file (required with --asnorm)
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Top-N cohort scores per side; default 10% of the cohort
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// EER and minDCF from score and trial files
    Metrics {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        p_target: f64,
        #[arg(long, default_value_t = 1.0)]
        c_miss: f64,
        #[arg(long, default_value_t = 1.0)]
        c_fa: f64,
    },
    /// Verify analytic gradients against finite differences
    GradCheck {
        /// Loss to check (or "all")
        #[arg(long, default_value = "all")]
        loss: String,
        /// Number of random configurations per loss
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Hyperparameter ablation over a grid file (one "lambda t s m" per line)
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel cells (0 = library default)
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Label-noise robustness study across losses, proportions and seeds
    NoiseStudy {
        /// Experiment config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated loss kinds (e.g. aam-softmax,sphereface2)
        #[arg(long, value_delimiter = ',', default_value = "aam-softmax,sphereface2")]
        losses: Vec<String>,
        /// Comma-separated corruption proportions in [0, 1]
        #[arg(long, value_delimiter = ',', default_value = "0,0.3")]
        proportions: Vec<f64>,
        /// Comma-separated seeds, one run per (loss, proportion, seed)
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Large-margin fine-tuning of a trained checkpoint
    Lmft {
        /// The config the checkpoint was trained with
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.35)]
        margin: f64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        /// Within-class noise multiplier standing in for longer segments
        #[arg(long, default_value_t = 0.5)]
        noise_reduction: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lmft")]
        name: String,
    },
    /// Multi-system comparison table from saved run reports
    Compare {
        /// Report files produced by `train` / `lmft`
        #[arg(long, value_delimiter = ',', required = true)]
        reports: Vec<PathBuf>,
        /// Optional output path (CSV twin lands next to it)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn cmd_gen_data(config: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let universe = gen_universe(&config.universe, seed)?;
    write_utterances(
        &out_dir.join("train_utterances.tsv"),
        &universe.train_utterances,
    )?;
    write_utterances(
        &out_dir.join("eval_utterances.tsv"),
        &universe.unseen_utterances,
    )?;
    let mut trial_rng = Rng::from_seed(seed).split("trials");
    let trials = make_trials(
        &universe.unseen_utterances,
        config.evaluation.n_target,
        config.evaluation.n_nontarget,
        &mut trial_rng,
    )?;
    write_trials(&out_dir.join("trials.txt"), &trials)?;
    println!(
        "wrote {} train utterances, {} eval utterances, {} trials to {}",
        universe.train_utterances.len(),
        universe.unseen_utterances.len(),
        trials.len(),
        out_dir.display()
    );
    Ok(())
}

fn print_metrics(metrics: &[(String, spherelab::eval::MetricPair)]) {
    for (set, m) in metrics {
        println!("{set}.eer_percent = {:.3}", m.eer * 100.0);
        println!("{set}.min_dcf = {:.4}", m.min_dcf);
    }
}

fn cmd_train(config: &ExperimentConfig, seed: u64, out: &Path, name: &str) -> Result<()> {
    let record = train(config, seed, name)?;
    record.save(out, name)?;
    println!(
        "trained '{name}' for {} epochs (final mean loss {:.6})",
        record.epoch_losses.len(),
        record.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    print_metrics(&record.metrics);
    println!(
        "report: {}",
        out.join(format!("{name}.report.txt")).display()
    );
    Ok(())
}

fn cmd_extract(checkpoint: &Path, utterances: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let utts = read_utterances(utterances)?;
    let embeddings = extract_embeddings(&ckpt.encoder, &utts)?;
    write_embeddings(out, &embeddings)?;
    println!("wrote {} embeddings to {}", embeddings.len(), out.display());
    Ok(())
}

fn cmd_score(
    embeddings_path: &Path,
    trials_path: &Path,
    out: &Path,
    use_asnorm: bool,
    cohort_path: Option<&Path>,
    top_n: Option<usize>,
) -> Result<()> {
    let embeddings: HashMap<String, Vec<f64>> =
        read_embeddings(embeddings_path)?.into_iter().collect();
    let trials = read_trials(trials_path)?;
    let mut scored = score_trials(&embeddings, &trials)?;
    if use_asnorm {
        let cohort_path = cohort_path.ok_or_else(|| {
            Error::InvalidConfig("--asnorm requires --cohort <embedding file>".into())
        })?;
        let cohort: Vec<Vec<f64>> = read_embeddings(cohort_path)?
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        let n = top_n.unwrap_or_else(|| ((cohort.len() as f64 * 0.1).round() as usize).max(2));
        scored = asnorm(&scored, &trials, &embeddings, &cohort, n)?;
    }
    let rows: Vec<(String, String, f64)> = trials
        .iter()
        .zip(scored.scores())
        .map(|(t, s)| (t.enroll.clone(), t.test.clone(), *s))
        .collect();
    write_scores(out, &rows)?;
    println!("wrote {} scores to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_metrics(
    scores_path: &Path,
    trials_path: &Path,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> Result<()> {
    let scores = read_scores(scores_path)?;
    let trials = read_trials(trials_path)?;
    let by_pair: HashMap<(String, String), f64> =
        scores.into_iter().map(|(e, t, s)| ((e, t), s)).collect();
    let mut values = Vec::with_capacity(trials.len());
    let mut targets = Vec::with_capacity(trials.len());
    for t in &trials {
        let s = by_pair
            .get(&(t.enroll.clone(), t.test.clone()))
            .ok_or_else(|| Error::MissingId(format!("{} {}", t.enroll, t.test)))?;
        values.push(*s);
        targets.push(t.target);
    }
    let scored = ScoredTrials::new(values, targets)?;
    let (e, e_thr) = eer(&scored)?;
    let params = DcfParams::new(p_target, c_miss, c_fa)?;
    let (d, d_thr) = min_dcf(&scored, &params)?;
    println!("eer_percent = {:.3}", e * 100.0);
    println!("eer_threshold = {e_thr:.6}");
    println!("min_dcf = {d:.4}");
    println!("min_dcf_threshold = {d_thr:.6}");
    Ok(())
}

fn cmd_grad_check(loss: &str, trials: usize, seed: u64, tolerance: f64) -> Result<()> {
    let targets: Vec<CheckTarget> = if loss == "all" {
        CheckTarget::ALL.to_vec()
    } else {
        vec![CheckTarget::parse(loss)?]
    };
    let mut worst_overall = 0.0f64;
    for target in &targets {
        let worst = max_grad_check_error(*target, trials, seed)?;
        println!(
            "{}: max_rel_error = {worst:.3e} ({trials} trials)",
            target.as_str()
        );
        worst_overall = worst_overall.max(worst);
    }
    if worst_overall <= tolerance {
        println!("grad-check: PASS (max {worst_overall:.3e} <= tolerance {tolerance:.1e})");
        Ok(())
    } else {
        println!("grad-check: FAIL (max {worst_overall:.3e} > tolerance {tolerance:.1e})");
        Err(Error::InvariantViolation(format!(
            "gradient check exceeded tolerance: {worst_overall:.3e} > {tolerance:.1e}"
        )))
    }
}

fn cmd_sweep(
    config: &ExperimentConfig,
    seed: u64,
    grid_path: &Path,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let grid_text = std::fs::read_to_string(grid_path)
        .map_err(|e| Error::Io(format!("{}: {e}", grid_path.display())))?;
    let cells = parse_sweep_grid(&grid_text)?;
    let table = run_ablation(config, &cells, seed, jobs)?;
    ensure_dir(out)?;
    let text = table.render_text();
    write_text(&out.join("sweep.txt"), &text)?;
    write_text(&out.join("sweep.csv"), &table.render_csv())?;
    print!("{text}");
    Ok(())
}

fn cmd_noise_study(
    config: &ExperimentConfig,
    losses: &[String],
    proportions: &[f64],
    seeds: &[u64],
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let kinds: Vec<LossKind> = losses
        .iter()
        .map(|s| LossKind::parse(s))
        .collect::<Result<_>>()?;
    let table = run_noise_study(config, &kinds, proportions, seeds, jobs)?;
    ensure_dir(out)?;
    let text = table.render_text();
    write_text(&out.join("noise_study.txt"), &text)?;
    write_text(&out.join("noise_study.csv"), &table.render_csv())?;
    print!("{text}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lmft(
    config: &ExperimentConfig,
    checkpoint: &Path,
    margin: f64,
    lr: f64,
    epochs: usize,
    noise_reduction: f64,
    out: &Path,
    name: &str,
) -> Result<()> {
    let stage = LmftConfig {
        margin_override: margin,
        lr,
        epochs,
        noise_reduction,
    };
    let record = lmft_from_path(checkpoint, config, &stage, name)?;
    record.save(out, name)?;
    println!("fine-tuned '{name}' for {epochs} epochs (margin {margin})");
    print_metrics(&record.metrics);
    println!(
        "report: {}",
        out.join(format!("{name}.report.txt")).display()
    );
    Ok(())
}

fn cmd_compare(reports: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::with_capacity(reports.len());
    for path in reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let parsed = parse_report(&text, &path.display().to_string())?;
        rows.push(spherelab::eval::ReportRow {
            system: parsed.name,
            metrics: parsed.metrics,
        });
    }
    let (text, csv) = report(&rows)?;
    print!("{text}");
    if let Some(out) = out {
        write_text(out, &text)?;
        write_text(&out.with_extension("csv"), &csv)?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, out_dir } => {
            let (config, seed) = config.load()?;
            cmd_gen_data(&config, seed, &out_dir)
        }
        Command::Train { config, out, name } => {
            let (config, seed) = config.load()?;
            cmd_train(&config, seed, &out, &name)
        }
        Command::Extract {
            checkpoint,
            utterances,
            out,
        } => cmd_extract(&checkpoint, &utterances, &out),
        Command::Score {
            embeddings,
            trials,
            out,
            asnorm,
            cohort,
            top_n,
        } => cmd_score(&embeddings, &trials, &out, asnorm, cohort.as_deref(), top_n),
        Command::Metrics {
            scores,
            trials,
            p_target,
            c_miss,
            c_fa,
        } => cmd_metrics(&scores, &trials, p_target, c_miss, c_fa),
        Command::GradCheck {
            loss,
            trials,
            seed,
            tolerance,
        } => cmd_grad_check(&loss, trials, seed, tolerance),
        Command::Sweep {
            config,
            grid,
            out,
            jobs,
        } => {
            let (config, seed) = config.load()?;
            cmd_sweep(&config, seed, &grid, &out, jobs)
        }
        Command::NoiseStudy {
            config,
            losses,
            proportions,
            seeds,
            out,
            jobs,
        } => {
            let config = load_config_file(config.as_deref())?;
            cmd_noise_study(&config, &losses, &proportions, &seeds, &out, jobs)
        }
        Command::Lmft {
            config,
            checkpoint,
            margin,
            lr,
            epochs,
            noise_reduction,
            out,
            name,
        } => {
            let config = load_config_file(config.as_deref())?;
            cmd_lmft(
                &config,
                &checkpoint,
                margin,
                lr,
                epochs,
                noise_reduction,
                &out,
                &name,
            )
        }
        Command::Compare { reports, out } => cmd_compare(&reports, out.as_deref()),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {}: {e}", e.category());
        std::process::exit(1);
    }
}
