//! `hetflow` command-line harness: generate workloads, fit duration models,
//! run one design or compare several over many seeds.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hetflow::designs::{load_trace, DesignId, RunConfig, TaskKind};
use hetflow::experiment::{run_one, run_plan, write_experiment, write_run, ExperimentPlan};
use hetflow::io::{write_atomic, write_json};
use hetflow::parallel::ExecutionMode;
use hetflow::perfmodel::{
    bin_by_size, bins_csv, fit_linear, parse_pairs, restrict_to_representative_bins, BinSpec,
    ModelRegistry, REPRESENTATIVE_BINS,
};
use hetflow::workload::{generate_workload, load_workload, write_manifest, ImageSpec, WorkloadSpec};

use crate::config::{parse_bin_range, FileConfig, SeedList};

#[derive(Parser, Debug)]
#[command(name = "hetflow", version, about = "Workflow design analysis for CPU/GPU image pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic workload manifest.
    Generate(GenerateArgs),
    /// Fit a linear duration model to (size, duration) data.
    Fit(FitArgs),
    /// Execute one design on one seed.
    Run(RunArgs),
    /// Execute several designs over several seeds on one workload.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 1304.85)]
    mean: f64,
    #[arg(long, default_value_t = 512.68)]
    std: f64,
    #[arg(long, default_value_t = 50.0)]
    min: f64,
    #[arg(long, default_value_t = 2770.0)]
    max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest path. Defaults to `workload.csv` in the output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, env = "HETFLOW_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with header `size_mb,duration_s`.
    #[arg(long, conflicts_with = "trace")]
    pairs: Option<PathBuf>,
    /// Trace CSV; sizes come from `--workload`.
    #[arg(long, requires = "workload")]
    trace: Option<PathBuf>,
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Task kind to fit when reading a trace (t1 or t2).
    #[arg(long, default_value = "t1")]
    kind: TaskKind,
    /// Fit every point instead of the representative size bins.
    #[arg(long)]
    no_restrict: bool,
    /// One-based inclusive bin range, `first:last`.
    #[arg(long, value_parser = parse_bin_range)]
    bins: Option<(usize, usize)>,
    /// Write per-bin statistics here.
    #[arg(long)]
    bins_csv: Option<PathBuf>,
    /// Write the fit result JSON here as well as to stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Store the fitted model in this registry file under `--design`.
    #[arg(long, requires = "design")]
    registry: Option<PathBuf>,
    #[arg(long)]
    design: Option<DesignId>,
}

/// Settings shared by `run` and `compare`. Flags win over the config file.
#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload manifest; otherwise a reference workload is generated.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Images in the generated workload.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    workload_seed: Option<u64>,
    /// Cluster JSON (`nodes` and optional `caps`).
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// Model registry JSON.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    backend: Option<hetflow::designs::Backend>,
    #[arg(long)]
    poll: Option<f64>,
    /// Real seconds per modelled second on the realtime backend.
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long, env = "HETFLOW_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    design: Option<DesignId>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Comma-separated designs.
    #[arg(long, value_delimiter = ',')]
    designs: Option<Vec<DesignId>>,
    /// Seeds as a list and/or half-open ranges, e.g. `0..10` or `1,4,9`.
    #[arg(long)]
    seeds: Option<SeedList>,
    /// Run the (design, seed) grid on one thread.
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    common: CommonArgs,
}

const DEFAULT_OUT: &str = "hetflow-out";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let spec = WorkloadSpec {
        count: args.count,
        mean_mb: args.mean,
        std_mb: args.std,
        min_mb: args.min,
        max_mb: args.max,
        seed: args.seed,
    };
    let images = generate_workload(&spec)?;
    let path = match args.output {
        Some(p) => p,
        None => {
            let dir = args.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            ensure_dir(&dir)?;
            dir.join("workload.csv")
        }
    };
    write_manifest(&path, &images)?;
    println!("{} images -> {}", images.len(), path.display());
    Ok(())
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let pairs = if let Some(path) = &args.pairs {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        parse_pairs(file)?
    } else if let (Some(trace), Some(workload)) = (&args.trace, &args.workload) {
        trace_pairs(trace, workload, args.kind)?
    } else {
        bail!("fit needs --pairs or --trace with --workload");
    };

    let bins = BinSpec::default();
    if let Some(path) = &args.bins_csv {
        write_atomic(path, bins_csv(&bin_by_size(&pairs, &bins)?)?.as_bytes())?;
    }
    let selected = if args.no_restrict {
        pairs
    } else {
        let (first, last) = args.bins.unwrap_or(REPRESENTATIVE_BINS);
        restrict_to_representative_bins(&pairs, &bins, first, last)?
    };
    let fit = fit_linear(&selected)?;
    let json = serde_json::to_string_pretty(&fit)?;
    println!("{json}");
    if let Some(path) = &args.output {
        write_json(path, &fit)?;
    }
    if let (Some(path), Some(design)) = (&args.registry, args.design) {
        let mut registry = if path.exists() {
            ModelRegistry::load(path)?
        } else {
            ModelRegistry::reference()
        };
        registry.insert(design, args.kind, fit.as_model());
        registry.save(path)?;
        log::info!("stored {design}/{} in {}", args.kind, path.display());
    }
    Ok(())
}

/// Successful records of `kind` joined with image sizes from the manifest.
fn trace_pairs(trace: &Path, workload: &Path, kind: TaskKind) -> anyhow::Result<Vec<(f64, f64)>> {
    let records = load_trace(trace)?;
    let images = load_workload(workload)?;
    let sizes: std::collections::HashMap<_, _> = images.iter().map(|i| (&i.id, i.size_mb)).collect();
    records
        .iter()
        .filter(|r| r.kind == kind && r.outcome == hetflow::designs::Outcome::Ok)
        .map(|r| {
            sizes
                .get(&r.image_id)
                .map(|&s| (s, r.duration()))
                .with_context(|| format!("image {} is not in {}", r.image_id, workload.display()))
        })
        .collect()
}

struct Resolved {
    images: Vec<ImageSpec>,
    base: RunConfig,
    out: PathBuf,
}

fn resolve(common: &CommonArgs, file: &FileConfig) -> anyhow::Result<Resolved> {
    let images = match common.workload.as_ref().or(file.manifest.as_ref()) {
        Some(path) => load_workload(path)?,
        None => {
            let mut spec = file.workload.clone().unwrap_or_else(|| WorkloadSpec::reference(200, 0));
            if let Some(count) = common.count {
                spec.count = count;
            }
            if let Some(seed) = common.workload_seed {
                spec.seed = seed;
            }
            generate_workload(&spec)?
        }
    };

    let mut base = RunConfig::reference(DesignId::D1, 0);
    let cluster = match &common.cluster {
        Some(path) => Some(hetflow::cluster::ClusterConfig::load(path)?),
        None => file.cluster.clone(),
    };
    if let Some(cluster) = cluster {
        base.cluster = cluster.cluster();
        base.caps = cluster.caps;
    }
    base.models = match &common.models {
        Some(path) => ModelRegistry::load(path)?,
        None => file.models.clone().unwrap_or(base.models),
    };
    file.apply(&mut base);
    if let Some(backend) = common.backend {
        base.backend = backend;
    }
    if let Some(poll) = common.poll {
        base.poll_interval_s = poll;
    }
    if let Some(scale) = common.time_scale {
        base.time_scale = scale;
    }
    let out = common
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Resolved { images, base, out })
}

fn load_config(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    match path {
        Some(p) => Ok(hetflow::io::read_json(p)?),
        None => Ok(FileConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let file = load_config(args.common.config.as_deref())?;
    let Resolved { images, mut base, out } = resolve(&args.common, &file)?;
    base.design = match args.design {
        Some(d) => d,
        None => match file.designs.as_deref() {
            Some([d]) => *d,
            _ => bail!("run needs --design (or exactly one design in the config)"),
        },
    };
    base.seed = args.seed.or_else(|| file.seeds.as_ref().and_then(|s| s.first().copied())).unwrap_or(0);
    base.validate()?;

    let run = run_one(&images, &base)?;
    ensure_dir(&out)?;
    write_manifest(&out.join("workload.csv"), &images)?;
    let written = write_run(&out, &run)?;
    for path in &written {
        log::info!("wrote {}", path.display());
    }
    let r = &run.report;
    println!(
        "{} seed {} ({}): {} images, TTC {:.1} s, cpu {:.2}%, gpu {:.2}%, overhead {:.2} s, audit ok",
        r.design,
        r.seed,
        r.backend,
        r.images,
        r.ttc_s,
        r.cpu.mean_pct,
        r.gpu.mean_pct,
        r.overheads.total()
    );
    for w in &r.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    let file = load_config(args.common.config.as_deref())?;
    let Resolved { images, base, out } = resolve(&args.common, &file)?;
    let plan = ExperimentPlan {
        designs: args
            .designs
            .or_else(|| file.designs.clone())
            .unwrap_or_else(|| DesignId::ALL.to_vec()),
        seeds: args
            .seeds
            .map(|s| s.0)
            .or_else(|| file.seeds.clone())
            .unwrap_or_else(|| (0..10).collect()),
        base,
    };
    plan.validate()?;
    let mode = if args.sequential {
        ExecutionMode::Sequential
    } else {
        ExecutionMode::Parallel
    };
    let result = run_plan(&plan, &images, mode)?;
    write_experiment(&out, &images, &result)?;

    print!("{}", result.combined()?.render_text());
    println!();
    for s in &result.summary {
        println!(
            "{}: mean TTC {:.1} s [{:.1}, {:.1}], fastest on {}/{} seeds, gpu {:.2}%",
            s.design,
            s.ttc_mean_s,
            s.ttc_min_s,
            s.ttc_max_s,
            s.wins,
            plan.seeds.len(),
            s.gpu_mean_pct
        );
    }
    println!("results in {}", out.display());
    Ok(())
}
