//! `sqfa` command-line front end.
//!
//! Every command writes its outputs atomically and drops a
//! `<output>.manifest.json` next to each one; `sqfa --manifest <file>` reruns
//! the recorded command with the same flags.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sqfa::baselines::{self, DEFAULT_LDA_SHRINKAGE};
use sqfa::evaluation::{self, Classifier};
use sqfa::stats::{self, ClassEnsemble, LabeledDataset};
use sqfa::sweep::{self, SweepName, SweepOptions, Table};
use sqfa::toy::{self, ToyName, ToySpec};
use sqfa::trainer::{self, FilterRecord};
use sqfa::{distances, DistanceKind, Error, FilterBank, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "sqfa", version, about = "Supervised quadratic feature analysis", arg_required_else_help = true, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Rerun the command recorded in a `.manifest.json` file.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", content = "flags", rename_all = "lowercase")]
enum Command {
    /// Sample a synthetic dataset and its ground-truth subspaces.
    Toygen(ToygenArgs),
    /// Estimate per-class statistics from a dataset CSV.
    Stats(StatsArgs),
    /// Learn filters with SQFA or a baseline.
    Fit(FitArgs),
    /// Classify projected test data and report accuracy.
    Eval(EvalArgs),
    /// Pairwise class distances from a statistics file.
    Distances(DistancesArgs),
    /// Validation tables.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ToygenArgs {
    #[arg(long)]
    name: ToyName,
    /// Samples per class.
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON path [default: <out> with extension `truth.json`].
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Sqfa,
    Smsqfa,
    SqfaB,
    SqfaH,
    Pca,
    Lda,
    Ama,
}

impl Method {
    fn kind(self) -> Option<DistanceKind> {
        match self {
            Method::Sqfa => Some(DistanceKind::FisherRaoCalvoOller),
            Method::Smsqfa => Some(DistanceKind::FisherRaoZeroMean),
            Method::SqfaB => Some(DistanceKind::Bhattacharyya),
            Method::SqfaH => Some(DistanceKind::Hellinger),
            Method::Pca | Method::Lda | Method::Ama => None,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Number of filters.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.01)]
    sigma2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    /// Learn filters two at a time.
    #[arg(long)]
    pairs: bool,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// LDA covariance shrinkage in [0, 1].
    #[arg(long, default_value_t = DEFAULT_LDA_SHRINKAGE)]
    shrinkage: f64,
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines) [default: <out> with extension `log.jsonl`].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ClassifierKind {
    Qda,
    Knn,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvalArgs {
    #[arg(long)]
    train: PathBuf,
    /// Test set [default: the training set].
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    filters: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Qda)]
    classifier: ClassifierKind,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// QDA covariance ridge [default: the filters' training sigma2].
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace train and test by Gaussian draws with their class statistics.
    #[arg(long)]
    gaussian_resample: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct DistancesArgs {
    #[arg(long)]
    stats: PathBuf,
    #[arg(long)]
    metric: DistanceKind,
    /// Project the statistics through these filters first.
    #[arg(long)]
    filters: Option<PathBuf>,
    /// Ridge added to the (projected) covariances.
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SweepArgs {
    #[arg(long)]
    name: SweepName,
    /// Monte-Carlo samples per class.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Statistics file, needed by `co_gap_dataset`.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    run: Command,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    version: String,
    wall_time_secs: f64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

type CliResult<T> = Result<T, CliError>;

/// Paths touched by one command.
#[derive(Default)]
struct Artifacts {
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

/// Writes through a sibling temporary file renamed into place on success.
fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> sqfa::Result<()>) -> sqfa::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_json(path: &Path, value: &impl Serialize) -> sqfa::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_filters(path: &Path) -> CliResult<(FilterRecord, FilterBank)> {
    let rec = FilterRecord::load(path)?;
    let bank = rec.bank()?;
    Ok((rec, bank))
}

fn toygen(a: &ToygenArgs, art: &mut Artifacts) -> CliResult<()> {
    if a.samples < 2 {
        return Err(CliError::Usage(format!("--samples must be at least 2, got {}", a.samples)));
    }
    let spec = ToySpec {
        name: a.name,
        samples_per_class: a.samples,
        seed: a.seed,
    };
    let (data, truth) = toy::generate(&spec)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| a.out.with_extension("truth.json"));
    write_atomic(&a.out, |w| data.write_csv(w))?;
    write_json(&truth_path, &truth)?;
    art.seeds.push(a.seed);
    art.outputs.extend([a.out.clone(), truth_path]);
    Ok(())
}

fn stats_cmd(a: &StatsArgs, art: &mut Artifacts) -> CliResult<()> {
    let data = LabeledDataset::load_csv(&a.data)?;
    let ens = stats::estimate_class_statistics(&data)?;
    let json = ens.to_json()?;
    write_atomic(&a.out, |w| Ok(writeln!(w, "{json}")?))?;
    art.inputs.push(a.data.clone());
    art.outputs.push(a.out.clone());
    Ok(())
}

fn fit(a: &FitArgs, art: &mut Artifacts) -> CliResult<()> {
    let data = LabeledDataset::load_csv(&a.data)?;
    art.inputs.push(a.data.clone());
    let cfg = TrainConfig {
        sigma2: a.sigma2,
        seed: a.seed,
        restarts: a.restarts,
        tol: a.tol,
        max_iters: a.max_iters,
        sequential_pairs: a.pairs,
        ..TrainConfig::new(a.method.kind().unwrap_or(DistanceKind::FisherRaoCalvoOller), a.m)
    };
    cfg.validate(data.dim()).map_err(|e| CliError::Usage(e.to_string()))?;
    let c = data.num_classes();
    if a.method == Method::Lda && a.m + 1 > c {
        return Err(CliError::Usage(Error::RankBound { requested: a.m, max: c - 1 }.to_string()));
    }
    if !(0.0..=1.0).contains(&a.shrinkage) {
        return Err(CliError::Usage(format!("--shrinkage must lie in [0, 1], got {}", a.shrinkage)));
    }

    let (bank, label, log) = match a.method {
        Method::Pca => {
            let ens = stats::estimate_class_statistics(&data)?;
            (baselines::pca(&ens, a.m)?, "pca".to_string(), None)
        }
        Method::Lda => {
            let ens = stats::estimate_class_statistics(&data)?;
            (baselines::lda(&ens, a.m, a.shrinkage)?.filters, "lda".to_string(), None)
        }
        Method::Ama => {
            let (model, log) = baselines::ama_gauss_fit(&data, &cfg)?;
            (model.filters, "ama".to_string(), Some(log))
        }
        _ => {
            let ens = stats::estimate_class_statistics(&data)?;
            let (bank, log) = trainer::fit(&ens, &cfg)?;
            (bank, cfg.kind.as_str().to_string(), Some(log))
        }
    };
    write_json(&a.out, &bank.to_record(a.sigma2, &label))?;
    art.outputs.push(a.out.clone());
    if let Some(log) = log {
        let path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
        write_atomic(&path, |w| log.write_jsonl(w))?;
        art.outputs.push(path);
        art.seeds.extend(log.restarts.iter().map(|r| r.seed));
    }
    Ok(())
}

fn eval(a: &EvalArgs, art: &mut Artifacts) -> CliResult<()> {
    let train = LabeledDataset::load_csv(&a.train)?;
    art.inputs.push(a.train.clone());
    let test = match &a.test {
        Some(p) => {
            art.inputs.push(p.clone());
            LabeledDataset::load_csv(p)?
        }
        None => train.clone(),
    };
    let (rec, bank) = load_filters(&a.filters)?;
    art.inputs.push(a.filters.clone());
    let classifier = match a.classifier {
        ClassifierKind::Qda => Classifier::Qda {
            ridge: a.ridge.unwrap_or(rec.sigma2),
        },
        ClassifierKind::Knn => {
            if a.k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            Classifier::Knn { k: a.k }
        }
    };
    let mut report = if a.gaussian_resample {
        evaluation::gaussian_resample_eval(&train, &test, &bank, classifier, a.seed)?
    } else {
        evaluation::evaluate(classifier, &train, &test, &bank)?
    };
    report.seed = a.seed;
    write_json(&a.out, &report)?;
    art.seeds.push(a.seed);
    art.outputs.push(a.out.clone());
    Ok(())
}

fn distances_cmd(a: &DistancesArgs, art: &mut Artifacts) -> CliResult<()> {
    let ens = ClassEnsemble::load_json(&a.stats)?;
    art.inputs.push(a.stats.clone());
    let f = match &a.filters {
        Some(p) => {
            art.inputs.push(p.clone());
            load_filters(p)?.1.into_matrix()
        }
        None => DMatrix::identity(ens.dim(), ens.dim()),
    };
    let fs = stats::project_statistics(&ens, &f, a.sigma2)?;
    let g = if a.metric.uses_second_moments() {
        fs.zero_mean_second_moments()
    } else {
        fs.gaussians()
    };
    let mut t = Table::new(&["class_i", "class_j", "distance"]);
    for i in 0..g.len() {
        for j in (i + 1)..g.len() {
            t.rows.push(vec![i as f64, j as f64, distances::distance(a.metric, &g[i], &g[j])?]);
        }
    }
    write_atomic(&a.out, |w| t.write_csv(w))?;
    art.outputs.push(a.out.clone());
    Ok(())
}

fn sweep_cmd(a: &SweepArgs, art: &mut Artifacts) -> CliResult<()> {
    let ens = match &a.stats {
        Some(p) => {
            art.inputs.push(p.clone());
            Some(ClassEnsemble::load_json(p)?)
        }
        None if a.name == SweepName::CoGapDataset => {
            return Err(CliError::Usage("sweep co_gap_dataset needs --stats".into()));
        }
        None => None,
    };
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let opts = SweepOptions {
        samples_per_class: a.samples,
        seed: a.seed,
        sigma2: a.sigma2,
    };
    let table = sweep::sweep_grid(a.name, &opts, ens.as_ref())?;
    write_atomic(&a.out, |w| table.write_csv(w))?;
    art.seeds.push(a.seed);
    art.outputs.push(a.out.clone());
    Ok(())
}

fn run(command: Command) -> CliResult<()> {
    let start = Instant::now();
    let mut art = Artifacts::default();
    match &command {
        Command::Toygen(a) => toygen(a, &mut art)?,
        Command::Stats(a) => stats_cmd(a, &mut art)?,
        Command::Fit(a) => fit(a, &mut art)?,
        Command::Eval(a) => eval(a, &mut art)?,
        Command::Distances(a) => distances_cmd(a, &mut art)?,
        Command::Sweep(a) => sweep_cmd(a, &mut art)?,
    }
    let manifest = Manifest {
        run: command,
        seeds: art.seeds,
        inputs: art.inputs,
        outputs: art.outputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    for out in &manifest.outputs {
        write_json(&manifest_path(out), &manifest)?;
    }
    Ok(())
}

fn replay(path: &Path) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))?;
    run(manifest.run)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match (cli.manifest, cli.command) {
        (Some(path), _) => replay(&path),
        (None, Some(command)) => run(command),
        (None, None) => Err(CliError::Usage("no command given".into())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
