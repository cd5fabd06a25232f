use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fisherpca::harness::{self, analyze_dataset, run_sweep, ExperimentConfig};
use fisherpca::mixture::{make_separation_family, sample};
use fisherpca::transform::{transform_pipeline, DEFAULT_ALPHA};
use fisherpca::{Error, ErrorKind, LabeledDataset, MixtureSpec, Result, WeightScheme};

#[derive(Parser)]
#[command(name = "fisherpca", version, about = "Isotropize and weight mixture data so PCA recovers the Fisher subspace")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labelled dataset from a mixture spec or a separation family.
    Generate(GenerateArgs),
    /// Write the isotropic data, weights and weighted data for a dataset.
    Transform(TransformArgs),
    /// Report distinctness before and after weighting, and subspace similarity.
    Analyze(TransformArgs),
    /// Run every cell and replicate of a config and write the records CSV.
    Sweep(SweepArgs),
    /// Print a canned experiment config.
    Recipe(RecipeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Mixture spec (JSON with `means` and `covariances`).
    #[arg(long, conflicts_with = "family")]
    spec: Option<PathBuf>,
    /// Separation family as `d,k,separation,dispersion`.
    #[arg(long, value_parser = parse_family)]
    family: Option<(usize, usize, f64, f64)>,
    #[arg(long, default_value_t = 100)]
    n_per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    /// Dataset CSV with header `x1,...,xd,label`.
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = WeightScheme::Hyperbolic)]
    scheme: WeightScheme,
    /// `transform`: output directory. `analyze`: JSON report file, stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    config: PathBuf,
    /// Records CSV; overrides `output_path` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    scheme: Option<WeightScheme>,
    /// Worker threads; all cores if omitted.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RecipeArgs {
    name: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Config file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_family(s: &str) -> std::result::Result<(usize, usize, f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err("expected d,k,separation,dispersion".into());
    }
    let bad = |what: &str| format!("cannot parse {what} in `{s}`");
    Ok((
        parts[0].parse().map_err(|_| bad("d"))?,
        parts[1].parse().map_err(|_| bad("k"))?,
        parts[2].parse().map_err(|_| bad("separation"))?,
        parts[3].parse().map_err(|_| bad("dispersion"))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    LabeledDataset::read_csv(BufReader::new(file))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let spec = match (&args.spec, args.family) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            MixtureSpec::from_json(&text)?
        }
        (None, Some((d, k, s, w))) => make_separation_family(d, k, s, w, args.seed)?,
        (None, None) => return Err(Error::Config("generate needs --spec or --family".into())),
    };
    let data = sample(&spec, args.n_per_cluster, args.seed)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_text(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn transform(args: TransformArgs) -> Result<()> {
    let dir = args
        .out
        .ok_or_else(|| Error::Config("transform needs --out <directory>".into()))?;
    let x = read_dataset(&args.data)?;
    let out = transform_pipeline(&x, args.alpha, args.scheme)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e| Error::Io { path, source: e }
    };
    let y_path = dir.join("y.csv");
    let mut w = create(&y_path)?;
    out.y.dataset().write_csv(&mut w)?;
    w.flush().map_err(io_err(&y_path))?;
    let z_path = dir.join("z0.csv");
    let mut w = create(&z_path)?;
    out.z0.write_csv(&mut w)?;
    w.flush().map_err(io_err(&z_path))?;
    let w_path = dir.join("weights.csv");
    let mut text = String::from("weight\n");
    for v in out.w.weights.iter() {
        text.push_str(&format!("{v}\n"));
    }
    write_text(Some(&w_path), &text)
}

fn analyze(args: TransformArgs) -> Result<()> {
    let x = read_dataset(&args.data)?;
    let a = analyze_dataset(&x, args.alpha, args.scheme)?;
    let report = serde_json::json!({
        "scheme": args.scheme.to_string(),
        "report": a.report,
        "lambda_min_x": a.lambda_min_x,
        "sss_x": a.sss_x,
        "sss_z": a.sss_z,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    write_text(args.out.as_deref(), &text)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = args.out {
        cfg.output_path = Some(out);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        for grid in std::iter::once(&mut cfg.grid).chain(cfg.extra_grids.iter_mut()) {
            grid.alpha = vec![alpha];
        }
    }
    if let Some(scheme) = args.scheme {
        cfg.scheme = scheme;
    }
    if cfg.output_path.is_none() {
        return Err(Error::Config("sweep needs --out or output_path in the config".into()));
    }
    if args.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let records = run_sweep(&cfg, args.threads)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    eprintln!("{} records, {failed} failed", records.len());
    Ok(())
}

fn recipe(args: RecipeArgs) -> Result<()> {
    let mut cfg = harness::recipe(&args.name)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    write_text(args.out.as_deref(), &(cfg.to_json()? + "\n"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Transform(a) => transform(a),
        Command::Analyze(a) => analyze(a),
        Command::Sweep(a) => sweep(a),
        Command::Recipe(a) => recipe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
