use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedviz::cluster::{MetricsReport, MetricsSummary};
use fedviz::pipeline::{
    emit_scatter_svg, evaluate_embedding_csv, read_embedding_csv, rerun_manifest, run_command, Command, RunConfig,
    RunContext, RunManifest,
};
use fedviz::{Error, ErrorClass, Result};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

/// Federated landmark learning, Nyström completion and visualization.
#[derive(Parser, Debug)]
#[command(name = "fedviz", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory that relative dataset paths resolve against.
    #[arg(long, global = true, env = "FEDVIZ_DATA_DIR", default_value = ".")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run seed; stage seeds not pinned in the config derive from it.
    #[arg(long)]
    seed: Option<u64>,

    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, default_value = "fedviz-out")]
    out_dir: PathBuf,

    /// Override a config value, e.g. `--set fed.rounds=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,

    /// Run on the pooled data instead of federating.
    #[arg(long)]
    centralized: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Landmark learning only.
    Feddl {
        #[command(subcommand)]
        action: FeddlCmd,
    },
    /// Fed-tSNE (or t-SNE with --centralized).
    Tsne(RunArgs),
    /// Fed-UMAP (or UMAP with --centralized).
    Umap(RunArgs),
    /// Fed-SpeClust (or spectral clustering with --centralized).
    Speclust(RunArgs),
    /// Metrics for an embedding CSV with a label column.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Scatter plot of an embedding CSV.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embedding: PathBuf,
    },
    Manifest {
        #[command(subcommand)]
        action: ManifestCmd,
    },
}

#[derive(Subcommand, Debug)]
enum FeddlCmd {
    Fit(RunArgs),
}

#[derive(Subcommand, Debug)]
enum ManifestCmd {
    /// Replay a saved manifest and compare output digests.
    Rerun {
        #[command(flatten)]
        common: Common,
        manifest: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
        ErrorClass::Io => EXIT_IO,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in parents {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn load_config(common: &Common, centralized: bool) -> Result<RunConfig> {
    let mut table = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => toml::Table::new(),
    };
    for o in &common.overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::Config("seed must be below 2^63".into()))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    if centralized {
        table.insert("centralized".into(), toml::Value::Boolean(true));
    }
    RunConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)
}

fn print_metrics(method: &str, m: &MetricsReport) {
    println!("{method}: NMI {:.4}  ARI {:.4}", m.nmi, m.ari);
    if let Some(sc) = m.sc {
        println!("  SC {sc:.4}");
    }
    for (k, v) in &m.ca_knn {
        println!("  CA@{k} {v:.4}");
    }
    for (k, v) in &m.npa_knn {
        println!("  NPA@{k} {v:.4}");
    }
}

fn report(manifest: &RunManifest, out_dir: &Path) {
    let r = &manifest.resolved;
    println!(
        "{}: {} points, {} features, {} clients",
        manifest.command.name(),
        r.points,
        r.features,
        r.clients.len()
    );
    if let (Some(g), Some(f)) = (r.gamma, r.final_objective) {
        println!("  gamma {g:.6e}, final MMD objective {f:.6e}");
    }
    println!("  outputs in {}", out_dir.display());
}

fn run_pipeline(command: Command, args: &RunArgs, data_dir: &Path) -> Result<()> {
    let config = load_config(&args.common, args.centralized)?;
    let ctx = RunContext {
        data_dir: data_dir.to_path_buf(),
        out_dir: Some(args.common.out_dir.clone()),
    };
    let manifest = run_command(command, &config, &ctx)?;
    report(&manifest, &args.common.out_dir);
    let metrics = args.common.out_dir.join("metrics.csv");
    if metrics.exists() && command != Command::FeddlFit {
        print!("{}", std::fs::read_to_string(metrics)?);
    }
    Ok(())
}

fn eval(common: &Common, embedding: &Path) -> Result<()> {
    let config = load_config(common, false)?.with_resolved_seeds();
    let seed = config.seeds.eval.unwrap_or(config.seed);
    let m = evaluate_embedding_csv(embedding, &config.eval.ks, seed)?;
    std::fs::create_dir_all(&common.out_dir)?;
    let mut f = std::fs::File::create(common.out_dir.join("metrics.csv"))?;
    MetricsSummary::write_csv(&[MetricsSummary::from_reports("embedding", std::slice::from_ref(&m))], &mut f)?;
    print_metrics(&embedding.display().to_string(), &m);
    Ok(())
}

fn plot(common: &Common, embedding: &Path) -> Result<()> {
    load_config(common, false)?;
    let (z, labels) = read_embedding_csv(embedding)?;
    std::fs::create_dir_all(&common.out_dir)?;
    let path = common.out_dir.join("scatter.svg");
    emit_scatter_svg(&z, labels.as_deref(), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn rerun(common: &Common, manifest_path: &Path, data_dir: &Path) -> Result<bool> {
    let original = RunManifest::load(manifest_path)?;
    if common.config.is_some() || !common.overrides.is_empty() {
        return Err(Error::Config("manifest rerun takes its configuration from the manifest".into()));
    }
    if let Some(seed) = common.seed {
        if seed != original.config.seed {
            return Err(Error::Config(format!(
                "--seed {seed} contradicts the manifest seed {}",
                original.config.seed
            )));
        }
    }
    let ctx = RunContext {
        data_dir: data_dir.to_path_buf(),
        out_dir: Some(common.out_dir.clone()),
    };
    let r = rerun_manifest(&original, &ctx)?;
    report(&r.manifest, &common.out_dir);
    if r.mismatches.is_empty() {
        let checked = original.outputs.iter().filter(|o| o.deterministic).count();
        println!("  all {checked} deterministic outputs reproduced byte for byte");
        Ok(true)
    } else {
        for name in &r.mismatches {
            eprintln!("  mismatch: {name}");
        }
        Ok(false)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let data_dir = cli.data_dir.as_path();
    let result = match &cli.command {
        Cmd::Feddl { action: FeddlCmd::Fit(a) } => run_pipeline(Command::FeddlFit, a, data_dir).map(|()| true),
        Cmd::Tsne(a) => run_pipeline(Command::Tsne, a, data_dir).map(|()| true),
        Cmd::Umap(a) => run_pipeline(Command::Umap, a, data_dir).map(|()| true),
        Cmd::Speclust(a) => run_pipeline(Command::Speclust, a, data_dir).map(|()| true),
        Cmd::Eval { common, embedding } => eval(common, embedding).map(|()| true),
        Cmd::Plot { common, embedding } => plot(common, embedding).map(|()| true),
        Cmd::Manifest {
            action: ManifestCmd::Rerun { common, manifest },
        } => rerun(common, manifest, data_dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_MISMATCH),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
