use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use bucket_decimate::baseline::{voxel_centroid_filter, LeafSize};
use bucket_decimate::bench::{
    default_radius, emit_csv, emit_table, grid_exponent_for, max_threads, run_bench, BenchError,
    BenchSuite, ImplKind, MonotonicClock, DEFAULT_THRESHOLD, DEFAULT_WARMUP,
};
use bucket_decimate::cloud::{compute_aabb, PointCloud};
use bucket_decimate::filter::{
    decimate_with_threads, FilterConfig, FilterError, DEFAULT_BATCH_SIZE,
};
use bucket_decimate::io::{
    gen_synthetic, read_pcd, write_pcd, PcdEncoding, PcdError, SceneError, SceneKind, SceneSpec,
};

/// Worker-thread cap used when `--threads` is not given.
const THREADS_ENV: &str = "BUCKET_DECIMATE_THREADS";

#[derive(Parser)]
#[command(
    name = "bucket-decimate",
    version,
    about = "Point-cloud decimation over a sorted cubic-bucket grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter one cloud and optionally write the result.
    Filter(FilterArgs),
    /// Time the filters over a resolution sweep.
    Bench(BenchArgs),
    /// Generate a synthetic scene as PCD.
    Gen(GenArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Synthetic scene kind: corridor, uniform-box or gaussian-clusters.
    #[arg(long, default_value = "corridor")]
    scene: String,
    #[arg(long, default_value_t = 1_000_000)]
    points: usize,
    /// Scene size in meters as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [12.0, 2.5, 2.5])]
    extents: Vec<f32>,
    /// Gaussian perturbation sigma in meters.
    #[arg(long, default_value_t = 0.005)]
    noise: f32,
    #[arg(long, default_value_t = 1)]
    scene_seed: u64,
}

impl SceneArgs {
    fn spec(&self) -> Result<SceneSpec, SceneError> {
        Ok(SceneSpec {
            kind: self.scene.parse::<SceneKind>()?,
            extents: [self.extents[0], self.extents[1], self.extents[2]],
            point_count: self.points,
            noise_sigma: self.noise,
            seed: self.scene_seed,
        })
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Input PCD file; a synthetic scene is generated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
}

impl SourceArgs {
    fn load(&self) -> Result<PointCloud> {
        match &self.input {
            Some(path) => read_pcd(path).with_context(|| format!("reading {}", path.display())),
            None => Ok(gen_synthetic(&self.scene.spec()?)?),
        }
    }
}

#[derive(Args)]
struct FilterParams {
    /// Neighbor radius in meters (default: just under the finest cell edge).
    #[arg(long)]
    radius: Option<f32>,
    /// Mark a point when its neighbor count exceeds this.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u32,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Target resolution in meters; picks the grid exponent (and the leaf for voxel-centroid).
    #[arg(long, default_value_t = 0.05)]
    resolution: f32,
    /// Override the grid exponent derived from --resolution.
    #[arg(long)]
    n: Option<u32>,
    #[command(flatten)]
    params: FilterParams,
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    /// bucket-parallel, bucket-serial or voxel-centroid.
    #[arg(long = "impl", default_value = "bucket-parallel")]
    implementation: String,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write ASCII instead of binary PCD.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.04, 0.05])]
    resolutions: Vec<f32>,
    /// Worker counts for bucket-parallel (default: all available).
    #[arg(long, value_delimiter = ',', env = THREADS_ENV)]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long = "impls", value_delimiter = ',', default_values_t = ["bucket-parallel".to_string(), "bucket-serial".to_string(), "voxel-centroid".to_string()])]
    impls: Vec<String>,
    #[command(flatten)]
    params: FilterParams,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    ascii: bool,
}

fn encoding(ascii: bool) -> PcdEncoding {
    if ascii {
        PcdEncoding::Ascii
    } else {
        PcdEncoding::Binary
    }
}

fn run_filter(args: FilterArgs) -> Result<()> {
    let cloud = args.source.load()?;
    let kind: ImplKind = args.implementation.parse()?;
    let bounds = compute_aabb(&cloud).map_err(FilterError::from)?;
    let start = Instant::now();
    let out = match kind {
        ImplKind::VoxelCentroid => voxel_centroid_filter(&cloud, LeafSize::new(args.resolution)?)?,
        ImplKind::BucketParallel | ImplKind::BucketSerial => {
            let n = args
                .n
                .unwrap_or_else(|| grid_exponent_for(&bounds, args.resolution));
            let radius = args
                .params
                .radius
                .unwrap_or_else(|| default_radius(&bounds, n, args.resolution));
            let cfg = FilterConfig::new(n, radius, args.params.threshold)
                .with_batch_size(args.params.batch_size)
                .with_seed(args.params.seed);
            let threads = match kind {
                ImplKind::BucketSerial => 1,
                _ => args.threads.unwrap_or_else(max_threads),
            };
            let (out, stats) = decimate_with_threads(&cloud, &cfg, threads)?;
            println!(
                "n={n} radius={radius} m threshold={} batch={} threads={threads} passes={} deleted={}",
                cfg.threshold, cfg.batch_size, stats.passes, stats.deleted_total
            );
            out
        }
    };
    println!(
        "{kind}: {} -> {} points in {:.3} ms",
        cloud.len(),
        out.len(),
        start.elapsed().as_secs_f64() * 1e3
    );
    if let Some(path) = &args.output {
        write_pcd(&out, path, encoding(args.ascii))?;
    }
    Ok(())
}

fn run_bench_cmd(args: BenchArgs) -> Result<()> {
    let cloud = args.source.load()?;
    let impls = args
        .impls
        .iter()
        .map(|s| s.parse::<ImplKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let suite = BenchSuite {
        impls,
        resolutions: args.resolutions,
        threads: if args.threads.is_empty() {
            vec![max_threads()]
        } else {
            args.threads
        },
        repetitions: args.reps,
        warmup: args.warmup,
        radius: args.params.radius,
        threshold: args.params.threshold,
        batch_size: args.params.batch_size,
        seed: args.params.seed,
    };
    let records = run_bench(&cloud, &suite, &mut MonotonicClock::default())?;
    print!("{}", emit_table(&records)?);
    if let Some(path) = &args.csv {
        emit_csv(&records, path)?;
    }
    Ok(())
}

fn run_gen(args: GenArgs) -> Result<()> {
    let cloud = gen_synthetic(&args.scene.spec()?)?;
    write_pcd(&cloud, &args.output, encoding(args.ascii))?;
    println!("wrote {} points to {}", cloud.len(), args.output.display());
    Ok(())
}

/// Exit status per error class.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<BenchError>() {
            return match e {
                BenchError::Config(_) => 2,
                BenchError::Determinism { .. } => 6,
                BenchError::Io(_) => 3,
                BenchError::Filter(f) => filter_code(f),
            };
        }
        if let Some(e) = cause.downcast_ref::<FilterError>() {
            return filter_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PcdError>() {
            return if matches!(e, PcdError::Io(_)) { 3 } else { 4 };
        }
        if cause.downcast_ref::<SceneError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn filter_code(e: &FilterError) -> u8 {
    match e {
        FilterError::MaxPasses(_) => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Filter(args) => run_filter(args),
        Command::Bench(args) => run_bench_cmd(args),
        Command::Gen(args) => run_gen(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
