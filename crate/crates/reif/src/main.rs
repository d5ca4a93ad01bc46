use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reif_core::data::{generate_synthetic_ds, Dataset, NoiseSpec, Split, NA_CLASS};
use reif_core::influence;
use reif_core::trainer::{LearningRate, RunConfig};
use reif_core::SoftmaxModel;
use reif::artifacts as art;
use reif::dataset_io::{self, LoadOptions};
use reif::experiment::{ExperimentSpec, InfluenceSettings, Solver};
use reif::runner::{self, GridOptions, PreparedData, RunOutcome};
use reif::{Error, ExitKind, Result};

#[derive(Parser)]
#[command(name = "reif", version, about = "Influence-based subsampling for noisy bag-supervised classification")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON Lines.
    Generate(GenerateArgs),
    /// Run an experiment grid.
    Run(RunArgs),
    /// Score training instances with a trained model.
    Influence(InfluenceArgs),
    /// Bag-level PR curve and P@N of a trained model.
    Evaluate(EvaluateArgs),
    /// Rebuild the summary tables of a finished grid.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML file: an experiment document (its [data] table is used) or a bare generator spec.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_bags: Option<usize>,
    #[arg(long)]
    num_test_bags: Option<usize>,
    #[arg(long)]
    num_relations: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    experiment: PathBuf,
    /// Skip runs whose manifest shows they already completed with the same inputs.
    #[arg(long)]
    resume: bool,
    /// Parallel runs; capped by REIF_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Replaces the grid seeds and the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct InfluenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "influences.csv")]
    out: PathBuf,
    #[arg(long)]
    lenient: bool,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Multiply alpha by the validation size.
    #[arg(long)]
    validation_sum: bool,
    #[arg(long, default_value_t = 1e-2)]
    lambda_reg: f64,
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverArg,
    #[arg(long, default_value_t = 0.01)]
    damping: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epoch number written to the epoch column.
    #[arg(long, default_value_t = 0)]
    epoch: usize,
    /// Also write the train × validation influence matrix.
    #[arg(long)]
    pairwise: bool,
    #[arg(long, default_value = "pairwise.csv")]
    pairwise_out: PathBuf,
    #[arg(long, default_value_t = influence::DEFAULT_PAIRWISE_CAP)]
    pairwise_cap: usize,
    /// Use only the first N training instances as pairwise rows.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N validation instances as pairwise columns.
    #[arg(long)]
    val_limit: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SolverArg {
    Auto,
    Exact,
    Lissa,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100,200,300")]
    patn: Vec<usize>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a grid.
    #[arg(long)]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Influence(a) => influence_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind() as u8)
        }
    }
}

fn load_spec_toml(path: &Path) -> Result<NoiseSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let table = match value.get("data") {
        Some(toml::Value::Table(t)) => t.clone(),
        _ => value,
    };
    table.try_into().map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => load_spec_toml(p)?,
        None => NoiseSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.num_bags {
        spec.num_bags = n;
    }
    if let Some(n) = a.num_test_bags {
        spec.num_test_bags = n;
    }
    if let Some(k) = a.num_relations {
        spec.num_relations = k;
    }
    if let Some(r) = a.noise_rate {
        spec.noise_rate = r;
    }
    let ds = generate_synthetic_ds(&spec)?;
    dataset_io::write_dataset(&a.out, &ds)?;
    print!("{}", stats_table(&ds));
    Ok(())
}

fn stats_table(ds: &Dataset) -> String {
    let mut out = format!(
        "{:<11} {:>7} {:>10} {:>10} {:>8} {:>11}\n",
        "split", "bags", "instances", "relations", "NA bags", "noise rate"
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        let sub = ds.subset(split);
        if sub.is_empty() {
            continue;
        }
        let mut rels: Vec<usize> = sub.bags().iter().map(|b| b.relation_label).filter(|&r| r != NA_CLASS).collect();
        rels.sort_unstable();
        rels.dedup();
        let na = sub.bags().iter().filter(|b| b.relation_label == NA_CLASS).count();
        let noise = if sub.has_gold() {
            let noisy = sub.instances().iter().filter(|i| i.is_noisy() == Some(true)).count();
            format!("{:.3}", noisy as f64 / sub.len() as f64)
        } else {
            "-".into()
        };
        out += &format!(
            "{:<11} {:>7} {:>10} {:>10} {:>8} {:>11}\n",
            split.as_str(),
            sub.bags().len(),
            sub.len(),
            rels.len(),
            na,
            noise
        );
    }
    out
}

fn run(a: RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.experiment)?;
    if let Some(s) = a.seed {
        spec.grid.seeds = vec![s];
        spec.data.seed = s;
    }
    if let Some(d) = a.output_dir {
        spec.output_dir = d;
    }
    if let Some(e) = a.epochs {
        spec.run.epochs = e;
    }
    spec.validate()?;
    let report = runner::run_grid(&spec, GridOptions { resume: a.resume, workers: a.workers })?;
    print_strategy_table(&report.summary);
    let failed: Vec<ExitKind> = report
        .outcomes
        .iter()
        .filter_map(|(_, o)| match o {
            RunOutcome::Failed(k) => Some(*k),
            _ => None,
        })
        .collect();
    if !failed.is_empty() {
        log::warn!("{} of {} runs failed; see summary.csv", failed.len(), report.outcomes.len());
    }
    if report.all_failed() {
        return Err(Error::Failed { kind: failed[0], message: "every run failed".into() });
    }
    Ok(())
}

fn print_strategy_table(rows: &[runner::SummaryRow]) {
    let groups = runner::strategy_rows(rows);
    let mut header = format!("{:<12} {:>6} {:>5} {:>8}", "strategy", "ratio", "runs", "PR-AUC");
    if let Some(g) = groups.first() {
        for (n, _) in &g.patn {
            header += &format!(" {:>8}", format!("P@{n}"));
        }
    }
    header += &format!(" {:>9}", "noise-AUC");
    println!("{header}");
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for g in groups {
        let mut line = format!(
            "{:<12} {:>6} {:>5} {:>8}",
            g.strategy.as_str(),
            g.ratio.map_or("-".into(), |r| r.to_string()),
            format!("{}/{}", g.completed, g.runs),
            cell(g.pr_auc)
        );
        for (_, p) in &g.patn {
            line += &format!(" {:>8}", cell(*p));
        }
        line += &format!(" {:>9}", cell(g.noise_auroc));
        println!("{line}");
    }
}

fn load_split(dataset: &Path, lenient: bool) -> Result<(Dataset, Dataset, Dataset)> {
    let ds = dataset_io::read_dataset(dataset, LoadOptions { lenient, num_classes: None })?.dataset;
    let (_, train, val, test) = PreparedData::split(&ds, &Default::default())?;
    Ok((train, val, test))
}

fn load_model_for(path: &Path, ds: &Dataset) -> Result<SoftmaxModel> {
    let model = runner::read_model(path)?;
    if model.dim() != ds.dim() {
        return Err(Error::Data(format!(
            "model expects {} features, dataset has {}",
            model.dim(),
            ds.dim()
        )));
    }
    Ok(model)
}

fn influence_cmd(a: InfluenceArgs) -> Result<()> {
    let (train, val, _) = load_split(&a.dataset, a.lenient)?;
    let model = load_model_for(&a.model, &train)?;
    let settings = InfluenceSettings {
        solver: match a.solver {
            SolverArg::Auto => Solver::Auto,
            SolverArg::Exact => Solver::Exact,
            SolverArg::Lissa => Solver::Lissa,
        },
        damping: a.damping,
        ..InfluenceSettings::default()
    };
    let mut config = RunConfig {
        lambda_reg: a.lambda_reg,
        seed: a.seed,
        validation_sum: a.validation_sum,
        learning_rate: LearningRate::default(),
        ..RunConfig::default()
    };
    config.sampler.alpha = a.alpha;
    let report = runner::final_influences(&model, &train, &val, &config, &settings, a.epoch)?;
    art::write_csv(&a.out, &art::influence_rows(&report), &["instance_id", "bag_id", "phi", "pi", "epoch"])?;
    log::info!("wrote {} influence rows to {}", report.entries.len(), a.out.display());

    if a.pairwise {
        let rows = &train.instances()[..a.train_limit.unwrap_or(train.len()).min(train.len())];
        let cols = &val.instances()[..a.val_limit.unwrap_or(val.len()).min(val.len())];
        let method = settings.method(model.num_params(), &config);
        let pw = influence::influence_matrix(&model, train.instances(), rows, cols, &method, a.lambda_reg, a.pairwise_cap)
            .map_err(|e| match e {
                reif_core::Error::CapExceeded { .. } => Error::Config(format!("{e} (--train-limit, --val-limit, --pairwise-cap)")),
                other => Error::Core(other),
            })?;
        art::write_csv(&a.pairwise_out, &art::pairwise_rows(&pw), &["train_id", "val_id", "phi"])?;
        log::info!(
            "wrote {} x {} pairwise influences to {}",
            pw.train_ids.len(),
            pw.val_ids.len(),
            a.pairwise_out.display()
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ds = dataset_io::read_dataset(&a.dataset, LoadOptions { lenient: a.lenient, num_classes: None })?.dataset;
    let test = ds.subset(Split::Test);
    if test.is_empty() {
        return Err(Error::Data(format!("{} has no test split", a.dataset.display())));
    }
    let model = load_model_for(&a.model, &test)?;
    let ev = runner::evaluate(&model, &test, &a.patn)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    art::write_csv(&a.out_dir.join(art::PR_CURVE), &art::pr_rows(&ev.pr), &["threshold", "precision", "recall"])?;
    art::write_csv(&a.out_dir.join(art::PATN), &ev.patn, &["n", "precision"])?;
    println!("bags {}  PR-AUC {:.4}", ev.predictions.len(), ev.pr.auc);
    for p in &ev.patn {
        println!("P@{:<5} {:.4}", p.n, p.precision);
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rows = runner::summarize(&a.dir)?;
    print_strategy_table(&rows);
    Ok(())
}
