use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fsvm_core::benchmark::{compare, fixture_config, format_table, run_fixture_bench, Comparison, FIXTURE_SEED};
use fsvm_core::data::{load_dataset, load_for_prediction, load_libsvm, load_points_csv, DataFormat};
use fsvm_core::experiment::{
    grid_search_cv, run_experiment, train_classifier, write_report, Classifier, ExperimentConfig, GridPoint, ModelKind,
};
use fsvm_core::radius::{meb_exact, verify_bounds, PointCloud};
use fsvm_core::{FsvmError, Result};

#[derive(Parser)]
#[command(name = "fsvm", version, about = "Joint metric and max-margin classifier learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a classifier and write it as JSON. Several values for a
    /// hyperparameter trigger a cross-validated grid search first.
    Train(TrainArgs),
    /// Predict labels with a saved classifier.
    Predict(PredictArgs),
    /// Grid search with k-fold cross-validation; writes one report per dataset.
    Cv(CvArgs),
    /// Baseline against learned metric. Without --data, runs the bundled fixtures.
    Bench(BenchArgs),
    /// Exact enclosing-ball radius and its centroid and diameter bounds.
    VerifyBounds(BoundsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Libsvm,
    Csv,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Libsvm => DataFormat::Libsvm,
            Format::Csv => DataFormat::Csv,
        }
    }
}

#[derive(Args)]
struct Input {
    /// Input file (LIBSVM or CSV with a header row).
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Name of the CSV label column.
    #[arg(long)]
    label_col: Option<String>,
}

impl Input {
    fn format_of(&self, path: &Path) -> DataFormat {
        self.format.map_or_else(|| DataFormat::guess(path), Into::into)
    }
}

/// Overrides applied on top of the configuration file (or the defaults).
#[derive(Args)]
struct Settings {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind: svm, fsvm, kernel-svm or kernel-fsvm.
    #[arg(long)]
    kind: Option<ModelKind>,
    /// Hinge-loss tradeoff values, comma separated.
    #[arg(long = "C", value_delimiter = ',')]
    c: Vec<f64>,
    /// Radius weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// RBF widths, comma separated; only kernel models use them.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    /// Kernel PCA dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    kpca_dim: Vec<usize>,
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Seed for fold assignment and the solver's sweep order.
    #[arg(long)]
    seed: Option<u64>,
}

impl Settings {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => base,
        };
        if let Some(kind) = self.kind {
            cfg.model = kind;
        }
        if !self.c.is_empty() {
            cfg.c_grid = self.c.clone();
        }
        if !self.rho.is_empty() {
            cfg.rho_grid = self.rho.clone();
        }
        if !self.gamma.is_empty() {
            cfg.gamma_grid = self.gamma.clone();
        }
        if !self.kpca_dim.is_empty() {
            cfg.kpca_dims = self.kpca_dim.clone();
        }
        if let Some(k) = self.folds {
            cfg.folds = k;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.hyper.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    settings: Settings,
    /// Where to write the model.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Model written by `fsvm train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: Input,
    /// Write predictions here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    settings: Settings,
    /// Report directory.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// UCI-style datasets; every model kind is evaluated on each.
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    label_col: Option<String>,
    #[command(flatten)]
    settings: Settings,
    /// Report directory.
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    /// Points, one per row. CSV rows are read as plain coordinates.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FsvmError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| FsvmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The single grid point when every relevant axis has one value.
fn single_point(cfg: &ExperimentConfig) -> Option<GridPoint> {
    let one = |v: &[f64]| (v.len() == 1).then(|| v[0]);
    let c = one(&cfg.c_grid)?;
    let rho = if cfg.model.learns_metric() {
        Some(one(&cfg.rho_grid)?)
    } else {
        None
    };
    let gamma = if cfg.model.is_kernel() {
        Some(one(&cfg.gamma_grid)?)
    } else {
        None
    };
    let kpca_dim = match (cfg.model.is_kernel(), cfg.kpca_dims.as_slice()) {
        (false, _) => None,
        (true, []) => None,
        (true, [d]) => Some(*d),
        (true, _) => return None,
    };
    Some(GridPoint {
        c,
        rho,
        gamma,
        kpca_dim,
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let [path] = args.input.data.as_slice() else {
        return Err(FsvmError::InvalidInput("train takes exactly one --data file".into()));
    };
    let ds = load_dataset(path, args.input.format_of(path), args.input.label_col.as_deref())?;
    let cfg = args.settings.resolve(ExperimentConfig::default())?;
    let point = match single_point(&cfg) {
        Some(p) => p,
        None => {
            let (best, report) = grid_search_cv(&ds, &cfg)?;
            println!("selected {best} ({:.2}% cv accuracy)", 100.0 * report.mean_accuracy);
            best
        }
    };
    let (clf, _) = train_classifier(&ds, cfg.model, &point, &cfg.hyper, cfg.standardize)?;
    let predicted = clf.predict_many(&ds.x)?;
    let hits = predicted.iter().zip(&ds.y).filter(|(a, b)| a == b).count();
    write_file(&args.out, &clf.to_json())?;
    println!(
        "{} {point}: training accuracy {:.2}% on {} samples, model written to {}",
        cfg.model,
        100.0 * hits as f64 / ds.len() as f64,
        ds.len(),
        args.out.display()
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let text = fs::read_to_string(&args.model).map_err(|source| FsvmError::Io {
        path: args.model.clone(),
        source,
    })?;
    let clf = Classifier::from_json(&text)?;
    let [path] = args.input.data.as_slice() else {
        return Err(FsvmError::InvalidInput("predict takes exactly one --data file".into()));
    };
    let (mut x, labels) = load_for_prediction(path, args.input.format_of(path), args.input.label_col.as_deref())?;
    let width = clf.input_dim();
    if x.ncols() > width {
        return Err(FsvmError::DimensionMismatch {
            expected: width,
            found: x.ncols(),
        });
    }
    // Sparse files may simply never mention the trailing features.
    if x.ncols() < width {
        x = x.resize_horizontally(width, 0.0);
    }
    let predicted = clf.predict_many(&x)?;
    let mut out = String::new();
    for p in &predicted {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    match &args.out {
        Some(file) => write_file(file, &out)?,
        None => print!("{out}"),
    }
    if let Some(y) = labels {
        let hits = predicted.iter().zip(&y).filter(|(a, b)| a == b).count();
        eprintln!(
            "accuracy {:.2}% ({hits}/{})",
            100.0 * hits as f64 / y.len() as f64,
            y.len()
        );
    }
    Ok(())
}

fn cv(args: CvArgs) -> Result<()> {
    let cfg = args.settings.resolve(ExperimentConfig::default())?;
    let format = args.input.format.map(Into::into);
    let reports = run_experiment(
        &cfg,
        &args.input.data,
        format,
        args.input.label_col.as_deref(),
        &args.out,
    )?;
    for (file, r) in reports {
        println!(
            "{} {}: {:.2}% ± {:.2} with {} -> {}",
            r.dataset,
            r.model,
            100.0 * r.mean_accuracy,
            100.0 * r.std_accuracy,
            r.best,
            file.display()
        );
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let comparisons: Vec<Comparison> = if args.data.is_empty() {
        let seed = args.settings.seed.unwrap_or(FIXTURE_SEED);
        let cfg = args.settings.resolve(fixture_config(seed))?;
        run_fixture_bench(&cfg)?
    } else {
        let cfg = args.settings.resolve(ExperimentConfig::default())?;
        let mut out = Vec::new();
        for path in &args.data {
            let format = args.format.map_or_else(|| DataFormat::guess(path), Into::into);
            let mut ds = load_dataset(path, format, args.label_col.as_deref())?;
            if let Some(stem) = path.file_stem() {
                ds.name = stem.to_string_lossy().into_owned();
            }
            out.push(compare(&ds, ModelKind::Svm, ModelKind::Fsvm, &cfg)?);
            out.push(compare(&ds, ModelKind::KernelSvm, ModelKind::KernelFsvm, &cfg)?);
        }
        out
    };
    for c in &comparisons {
        write_report(&c.baseline, &args.out)?;
        write_report(&c.learned, &args.out)?;
    }
    let table = format_table(&comparisons);
    write_file(&args.out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn verify(args: BoundsArgs) -> Result<()> {
    let format = args.format.map_or_else(|| DataFormat::guess(&args.data), Into::into);
    let points = match format {
        DataFormat::Csv => load_points_csv(&args.data)?,
        DataFormat::Libsvm => load_libsvm(&args.data)?.x,
    };
    let cloud = PointCloud::new(points)?;
    let report = verify_bounds(&cloud);
    let ball = meb_exact(&cloud);
    let doc = serde_json::json!({
        "bounds": report,
        "center": ball.center.as_slice(),
        "n_points": cloud.len(),
        "dim": cloud.dim(),
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Cv(a) => cv(a),
        Command::Bench(a) => bench(a),
        Command::VerifyBounds(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fsvm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
