//! Timed repetitions of the filters over a resolution sweep, with mean and
//! sample standard deviation per (implementation, resolution, threads) cell.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::baseline::{voxel_centroid_filter, LeafSize};
use crate::cloud::{compute_aabb, Aabb, PointCloud};
use crate::filter::{
    decimate, with_threads, FilterConfig, FilterError, PhaseTimes, DEFAULT_BATCH_SIZE,
};
use crate::grid::NOMINAL_EXPONENTS;

pub const CSV_HEADER: &str =
    "impl,resolution_m,threads,repetitions,mean_ms,stddev_ms,input_size,output_size";
pub const MIN_REPETITIONS: usize = 3;
pub const DEFAULT_WARMUP: usize = 2;
pub const DEFAULT_THRESHOLD: u32 = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench configuration: {0}")]
    Config(String),
    #[error("{label} at {resolution} m, {threads} thread(s): repetition {repetition} produced a different cloud")]
    Determinism {
        label: ImplKind,
        resolution: f32,
        threads: usize,
        repetition: usize,
    },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImplKind {
    BucketParallel,
    BucketSerial,
    VoxelCentroid,
}

impl ImplKind {
    pub const ALL: [ImplKind; 3] = [
        ImplKind::BucketParallel,
        ImplKind::BucketSerial,
        ImplKind::VoxelCentroid,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ImplKind::BucketParallel => "bucket-parallel",
            ImplKind::BucketSerial => "bucket-serial",
            ImplKind::VoxelCentroid => "voxel-centroid",
        }
    }
}

impl fmt::Display for ImplKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ImplKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ImplKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown impl `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub impl_kind: ImplKind,
    pub resolution_m: f32,
    pub threads: usize,
    pub repetitions: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub input_size: usize,
    pub output_size: usize,
    /// Grid exponent used by the bucket implementations.
    pub grid_exponent: Option<u32>,
    /// Mean per-phase wall time of the bucket implementations.
    pub phase_means: Option<PhaseTimes>,
}

/// Source of timestamps for the harness; injectable so snapshots are exact.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

/// Monotonic wall clock.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> Duration {
        self.origin.elapsed()
    }
}

/// Deterministic clock that advances by the given steps in turn, cycling.
#[derive(Debug, Clone)]
pub struct SteppingClock {
    now: Duration,
    steps: Vec<Duration>,
    next: usize,
}

impl SteppingClock {
    pub fn new(steps: Vec<Duration>) -> Self {
        assert!(!steps.is_empty(), "stepping clock needs at least one step");
        Self {
            now: Duration::ZERO,
            steps,
            next: 0,
        }
    }
}

impl Clock for SteppingClock {
    fn now(&mut self) -> Duration {
        self.now += self.steps[self.next];
        self.next = (self.next + 1) % self.steps.len();
        self.now
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSuite {
    pub impls: Vec<ImplKind>,
    pub resolutions: Vec<f32>,
    /// Worker counts for `bucket-parallel`; the other impls always use one.
    pub threads: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    /// Metric neighbor radius; `None` picks [`default_radius`].
    pub radius: Option<f32>,
    pub threshold: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchSuite {
    fn default() -> Self {
        Self {
            impls: ImplKind::ALL.to_vec(),
            resolutions: vec![0.02, 0.04, 0.05],
            threads: vec![max_threads()],
            repetitions: 10,
            warmup: DEFAULT_WARMUP,
            radius: None,
            threshold: DEFAULT_THRESHOLD,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

/// Worker count of the global rayon pool (honors `RAYON_NUM_THREADS`).
pub fn max_threads() -> usize {
    rayon::current_num_threads()
}

/// `n = clamp(ceil(log2(max_extent / resolution)), 4, 9)`, so the cell edge
/// along the longest axis does not exceed the resolution (unless clamped).
pub fn grid_exponent_for(bounds: &Aabb, resolution: f32) -> u32 {
    let ratio = bounds.max_extent() as f64 / resolution as f64;
    let n = if ratio > 1.0 {
        ratio.log2().ceil() as u32
    } else {
        0
    };
    n.clamp(*NOMINAL_EXPONENTS.start(), *NOMINAL_EXPONENTS.end())
}

/// Share of the finest metric cell edge used as the default radius; just
/// under one so the admissibility check passes with room to spare.
pub const DEFAULT_RADIUS_FRACTION: f32 = 0.99;

/// [`DEFAULT_RADIUS_FRACTION`] of the smallest metric cell edge over the
/// axes with nonzero extent: the widest radius the 27-cell scan admits.
pub fn default_radius(bounds: &Aabb, n: u32, resolution: f32) -> f32 {
    let cells = (1u32 << n) as f32;
    bounds
        .extent()
        .into_iter()
        .filter(|&e| e > 0.0)
        .map(|e| DEFAULT_RADIUS_FRACTION * e / cells)
        .reduce(f32::min)
        .unwrap_or(DEFAULT_RADIUS_FRACTION * resolution)
}

/// Sample mean and sample (n - 1) standard deviation.
pub fn mean_stddev(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl BenchSuite {
    fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.impls.is_empty() {
            return fail("no implementations selected");
        }
        if self.resolutions.is_empty()
            || !self.resolutions.iter().all(|r| *r > 0.0 && r.is_finite())
        {
            return fail("resolutions must be a non-empty list of positive values");
        }
        if self.threads.is_empty() || self.threads.contains(&0) {
            return fail("thread counts must be a non-empty list of positive values");
        }
        if self.repetitions < MIN_REPETITIONS {
            return Err(BenchError::Config(format!(
                "need at least {MIN_REPETITIONS} repetitions, got {}",
                self.repetitions
            )));
        }
        Ok(())
    }

    pub fn filter_config(&self, bounds: &Aabb, resolution: f32) -> FilterConfig {
        let n = grid_exponent_for(bounds, resolution);
        let radius = self
            .radius
            .unwrap_or_else(|| default_radius(bounds, n, resolution));
        FilterConfig::new(n, radius, self.threshold)
            .with_batch_size(self.batch_size)
            .with_seed(self.seed)
    }
}

struct Run {
    output: PointCloud,
    phases: Option<PhaseTimes>,
}

fn run_once(
    cloud: &PointCloud,
    kind: ImplKind,
    cfg: &FilterConfig,
    resolution: f32,
    threads: usize,
) -> Result<Run, BenchError> {
    match kind {
        ImplKind::BucketParallel | ImplKind::BucketSerial => {
            let (output, stats) = with_threads(threads, || decimate(cloud, cfg))??;
            Ok(Run {
                output,
                phases: Some(stats.phases),
            })
        }
        ImplKind::VoxelCentroid => Ok(Run {
            output: voxel_centroid_filter(cloud, LeafSize::new(resolution)?)?,
            phases: None,
        }),
    }
}

/// Runs every (impl, resolution, threads) cell of `suite` over `cloud`.
///
/// Each cell does `warmup` untimed runs then `repetitions` timed ones; only
/// the filter call sits between the two clock reads. Every run of a cell
/// must produce the same cloud.
pub fn run_bench(
    cloud: &PointCloud,
    suite: &BenchSuite,
    clock: &mut dyn Clock,
) -> Result<Vec<BenchRecord>, BenchError> {
    suite.validate()?;
    let bounds = compute_aabb(cloud).map_err(FilterError::from)?;
    let mut records = Vec::new();
    for &kind in &suite.impls {
        for &resolution in &suite.resolutions {
            let thread_counts = match kind {
                ImplKind::BucketParallel => suite.threads.clone(),
                _ => vec![1],
            };
            for threads in thread_counts {
                let cfg = suite.filter_config(&bounds, resolution);
                let record = run_cell(cloud, kind, &cfg, resolution, threads, suite, clock)?;
                match record.grid_exponent {
                    Some(n) => log::info!(
                        "{kind} res={resolution} m n={n} radius={} m threads={threads}: {:.3} ± {:.3} ms",
                        cfg.radius,
                        record.mean_ms,
                        record.stddev_ms
                    ),
                    None => log::info!(
                        "{kind} res={resolution} m: {:.3} ± {:.3} ms",
                        record.mean_ms,
                        record.stddev_ms
                    ),
                }
                records.push(record);
            }
        }
    }
    Ok(records)
}

fn run_cell(
    cloud: &PointCloud,
    kind: ImplKind,
    cfg: &FilterConfig,
    resolution: f32,
    threads: usize,
    suite: &BenchSuite,
    clock: &mut dyn Clock,
) -> Result<BenchRecord, BenchError> {
    let mut reference: Option<PointCloud> = None;
    let mut audit = |out: PointCloud, repetition: usize| -> Result<(), BenchError> {
        match &reference {
            Some(r) if !r.bit_eq(&out) => Err(BenchError::Determinism {
                label: kind,
                resolution,
                threads,
                repetition,
            }),
            Some(_) => Ok(()),
            None => {
                reference = Some(out);
                Ok(())
            }
        }
    };

    for _ in 0..suite.warmup {
        let run = run_once(cloud, kind, cfg, resolution, threads)?;
        audit(run.output, 0)?;
    }
    let mut samples = Vec::with_capacity(suite.repetitions);
    let mut phase_sum = PhaseTimes::default();
    for rep in 1..=suite.repetitions {
        let t0 = clock.now();
        let run = run_once(cloud, kind, cfg, resolution, threads)?;
        let t1 = clock.now();
        samples.push((t1 - t0).as_secs_f64() * 1e3);
        if let Some(p) = run.phases {
            phase_sum.normalize += p.normalize;
            phase_sum.table_build += p.table_build;
            phase_sum.marking += p.marking;
            phase_sum.compaction += p.compaction;
        }
        audit(run.output, rep)?;
    }
    let (mean_ms, stddev_ms) = mean_stddev(&samples);
    let is_bucket = kind != ImplKind::VoxelCentroid;
    let reps = suite.repetitions as u32;
    Ok(BenchRecord {
        impl_kind: kind,
        resolution_m: resolution,
        threads,
        repetitions: suite.repetitions,
        mean_ms,
        stddev_ms,
        input_size: cloud.len(),
        output_size: reference.map_or(0, |r| r.len()),
        grid_exponent: is_bucket.then_some(cfg.n),
        phase_means: is_bucket.then(|| PhaseTimes {
            normalize: phase_sum.normalize / reps,
            table_build: phase_sum.table_build / reps,
            marking: phase_sum.marking / reps,
            compaction: phase_sum.compaction / reps,
        }),
    })
}

fn csv_row(r: &BenchRecord) -> [String; 8] {
    [
        r.impl_kind.to_string(),
        r.resolution_m.to_string(),
        r.threads.to_string(),
        r.repetitions.to_string(),
        format!("{:.6}", r.mean_ms),
        format!("{:.6}", r.stddev_ms),
        r.input_size.to_string(),
        r.output_size.to_string(),
    ]
}

fn require_records(records: &[BenchRecord]) -> Result<(), BenchError> {
    if records.is_empty() {
        Err(BenchError::Config("no records to emit".into()))
    } else {
        Ok(())
    }
}

pub fn write_csv(records: &[BenchRecord], mut w: impl Write) -> Result<(), BenchError> {
    require_records(records)?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", csv_row(r).join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<(), BenchError> {
    let file = fs::File::create(path)?;
    write_csv(records, io::BufWriter::new(file))
}

/// Plain-text table with the CSV columns, right-aligned.
pub fn emit_table(records: &[BenchRecord]) -> Result<String, BenchError> {
    require_records(records)?;
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    let rows: Vec<[String; 8]> = records.iter().map(csv_row).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        cells
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    for r in &rows {
        out.push_str(&line(&mut r.iter().map(String::as_str)));
        out.push('\n');
    }
    Ok(out)
}
