use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cprgcn::cohort::{apply_data_attack, generate_cohort, Cohort};
use cprgcn::condition::Volume;
use cprgcn::geometry::CenterlineTree;
use cprgcn::harness::{
    cross_validate, evaluate, five_fold_split, prepare_cohort, prepare_input, run_ablation_grid,
    run_data_attack, train, CrossValidation, ExperimentConfig, FoldResult, FoldSplit,
    MetricsReport, Selection,
};
use cprgcn::model::{CprGcnModel, TreeInput};

#[derive(Parser)]
#[command(name = "cprgcn", version, about = "Coronary artery labeling with CPR-GCN")]
struct Cli {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for cohort generation, folds, attack and training.
    #[arg(long, global = true, env = "CPRGCN_SEED")]
    seed: Option<u64>,
    /// Directory for everything the command writes.
    #[arg(long, global = true, env = "CPRGCN_OUT_DIR", default_value = "cprgcn-out")]
    out_dir: PathBuf,
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective config.
    Config,
    /// Generate a synthetic cohort into `<out-dir>/cohort`.
    Generate,
    /// Cross-validate on a cohort, or train one fold with `--fold`.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a saved model on one fold's held-out trees or the whole cohort.
    Evaluate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Label one tree; prints one label per segment in graph order.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        centerlines: PathBuf,
        /// Volume header file.
        #[arg(long)]
        volume: PathBuf,
    },
    /// Cross-validate every ablation cell on the same folds.
    Ablate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate saved fold models on a copy of the cohort with LM/RCA removed.
    Attack {
        #[arg(long)]
        cohort: PathBuf,
        /// Directory holding `fold{k}.json` from `train`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Pool metrics files by summing their confusion matrices.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Config => println!("{}", serde_json::to_string_pretty(&config)?),
        Command::Generate => {
            let cohort = generate_cohort(&config.cohort)?;
            let dir = out.join("cohort");
            cohort.save(&dir)?;
            let branches: usize = cohort.trees.iter().map(|t| t.tree.branches.len()).sum();
            let clipped: usize = cohort.trees.iter().map(|t| t.clip.total()).sum();
            println!(
                "wrote {} trees ({:.2} branches per tree, {clipped} clipped points) to {}",
                cohort.trees.len(),
                branches as f64 / cohort.trees.len() as f64,
                dir.display()
            );
        }
        Command::Train { cohort, fold, epochs } => {
            let mut config = config.clone();
            if let Some(e) = epochs {
                config.training.epochs = *e;
            }
            let (data, split) = load_data(cohort, &config)?;
            let models = out.join("models");
            fs::create_dir_all(&models)?;
            match fold {
                Some(k) => {
                    check_fold(*k, &split)?;
                    let train_idx = split.train_indices(*k);
                    let test = pick(&data, split.test_indices(*k));
                    let selection = match config.training.selection {
                        Selection::HeldOut => test.clone(),
                        _ => Vec::new(),
                    };
                    let outcome = train(
                        &config.model,
                        &config.optimizer,
                        &config.training,
                        &pick(&data, &train_idx),
                        &selection,
                    )?;
                    let report = evaluate(&outcome.model, &test)?.with_config(format!("fold {k}"));
                    save_fold(out, &FoldResult { fold: *k, report, log: outcome.log, model: outcome.model })?;
                }
                None => {
                    let cv = cross_validate("full", &config.model, &config.optimizer, &config.training, &data, &split)?;
                    save_cv(out, &cv)?;
                }
            }
        }
        Command::Evaluate { cohort, model, fold } => {
            let model = CprGcnModel::load(model)?;
            let (data, split) = load_data(cohort, &config)?;
            let trees = match fold {
                Some(k) => {
                    check_fold(*k, &split)?;
                    pick(&data, split.test_indices(*k))
                }
                None => data.iter().collect(),
            };
            let mut seconds = Vec::with_capacity(trees.len());
            for (i, t) in trees.iter().enumerate() {
                let start = Instant::now();
                model.predict(t)?;
                let s = start.elapsed().as_secs_f64();
                log::info!("tree {i}: inference {s:.4} s");
                seconds.push(s);
            }
            let report = evaluate(&model, &trees)?.with_config("evaluate");
            write_report(out, "evaluate", &report)?;
            print!("{}", report.to_table());
            println!(
                "mean inference time per tree: {:.4} s",
                seconds.iter().sum::<f64>() / seconds.len().max(1) as f64
            );
        }
        Command::Predict { model, centerlines, volume } => {
            let model = CprGcnModel::load(model)?;
            let tree = CenterlineTree::load(centerlines)?;
            let volume = Volume::load(volume)?;
            let (input, _) = prepare_input(
                &tree.branches,
                &volume,
                &config.pipeline,
                model.config().condition.gamma,
            )?;
            for label in model.predict(&input)?.labels() {
                println!("{label}");
            }
        }
        Command::Ablate { cohort, epochs } => {
            let mut config = config.clone();
            if let Some(e) = epochs {
                config.training.epochs = *e;
            }
            let (data, split) = load_data(cohort, &config)?;
            let grid = run_ablation_grid(&config.model, &config.optimizer, &config.training, &data, &split)?;
            let mut summary = String::from("config,mean_precision,mean_recall,mean_f1,fold_f1_std\n");
            for cv in &grid {
                let (_, std) = cv.fold_mean_f1();
                let p = &cv.pooled;
                summary.push_str(&format!(
                    "{},{:.3},{:.3},{:.3},{:.3}\n",
                    cv.name, p.mean_precision, p.mean_recall, p.mean_f1, std
                ));
                write_report(&out.join("ablation"), &cv.name, p)?;
            }
            fs::write(out.join("ablation").join("summary.csv"), &summary)?;
            print!("{summary}");
        }
        Command::Attack { cohort, models, fraction } => {
            let fraction = fraction.unwrap_or(config.cohort.attack_fraction);
            let original = Cohort::load(cohort)?;
            let attacked = apply_data_attack(&original, fraction, config.attack_seed)?;
            let gamma = config.model.condition.gamma;
            let clean = prepare_cohort(&original.trees, &config.pipeline, gamma)?;
            let dirty = prepare_cohort(&attacked.trees, &config.pipeline, gamma)?;
            let split = five_fold_split(clean.len(), config.fold_seed)?;
            let mut folds = Vec::new();
            for k in 0..split.folds.len() {
                let path = models.join(format!("fold{k}.json"));
                let model = CprGcnModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
                let report = evaluate(&model, &pick(&clean, split.test_indices(k)))?;
                folds.push(FoldResult { fold: k, report, log: Default::default(), model });
            }
            let pooled = MetricsReport::pooled(&folds.iter().map(|f| f.report.clone()).collect::<Vec<_>>())?;
            let cv = CrossValidation { name: "attack".into(), folds, pooled };
            let report = run_data_attack(&cv, &clean, &dirty, &split)?;
            let removed = attacked.trees.iter().filter(|t| t.attacked).count();
            write_report(out, "attack_original", &report.original)?;
            write_report(out, "attack_attacked", &report.attacked)?;
            println!("removed a main branch from {removed} of {} trees", attacked.trees.len());
            println!("original meanF1 {:.3}", report.original.mean_f1);
            println!("attacked meanF1 {:.3}", report.attacked.mean_f1);
            println!(
                "delta precision {:.3} recall {:.3} f1 {:.3}",
                report.delta_mean_precision, report.delta_mean_recall, report.delta_mean_f1
            );
        }
        Command::Report { inputs } => {
            let reports = inputs
                .iter()
                .map(|p| -> Result<MetricsReport> {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let pooled = MetricsReport::pooled(&reports)?.with_config("pooled");
            write_report(out, "pooled", &pooled)?;
            print!("{}", pooled.to_table());
        }
    }
    Ok(())
}

fn load_data(cohort: &Path, config: &ExperimentConfig) -> Result<(Vec<TreeInput>, FoldSplit)> {
    let cohort = Cohort::load(cohort).with_context(|| format!("loading cohort {}", cohort.display()))?;
    let data = prepare_cohort(&cohort.trees, &config.pipeline, config.model.condition.gamma)?;
    let split = five_fold_split(data.len(), config.fold_seed)?;
    Ok((data, split))
}

fn check_fold(k: usize, split: &FoldSplit) -> Result<()> {
    if k >= split.folds.len() {
        bail!("fold {k} out of range 0..{}", split.folds.len());
    }
    Ok(())
}

fn pick<'a>(data: &'a [TreeInput], idx: &[usize]) -> Vec<&'a TreeInput> {
    idx.iter().map(|&i| &data[i]).collect()
}

/// Writes `<name>.json` and `<name>.csv` under `dir`.
fn write_report(dir: &Path, name: &str, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join(format!("{name}.csv")), report.to_csv())?;
    Ok(())
}

fn save_fold(out: &Path, f: &FoldResult) -> Result<()> {
    let models = out.join("models");
    f.model.save(&models.join(format!("fold{}.json", f.fold)))?;
    fs::write(models.join(format!("fold{}.log.json", f.fold)), serde_json::to_string_pretty(&f.log)?)?;
    write_report(&out.join("metrics"), &format!("fold{}", f.fold), &f.report)?;
    println!("fold {}: meanF1 {:.3} (best epoch {})", f.fold, f.report.mean_f1, f.log.best_epoch);
    Ok(())
}

fn save_cv(out: &Path, cv: &CrossValidation) -> Result<()> {
    for f in &cv.folds {
        save_fold(out, f)?;
    }
    write_report(&out.join("metrics"), "pooled", &cv.pooled)?;
    let (mean, std) = cv.fold_mean_f1();
    print!("{}", cv.pooled.to_table());
    println!("fold meanF1 {mean:.3} ± {std:.3}");
    Ok(())
}
