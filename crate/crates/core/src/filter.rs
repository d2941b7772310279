//! Iterative density decimation over the bucket grid.
//!
//! Each pass counts, for every surviving point, the survivors inside a metric
//! ball of `radius` around it, looking only at the 27 grid cells around the
//! point's own cell. Points whose count exceeds `threshold` are marked. While
//! more than `batch_size` points are marked, a seeded random batch of them is
//! deleted and another pass runs; once a pass marks `batch_size` points or
//! fewer, all of them are deleted and the loop ends.
//!
//! Counts within one pass are taken against the survivor set as it stood when
//! the pass started, so the marks do not depend on evaluation order or on the
//! number of worker threads.

use std::ops::Range;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{compute_aabb, CloudError, Point, PointCloud};
use crate::grid::{
    bucket_key, compute_keys, for_each_neighbor_span, key_span, normalize, table_from_keys,
    BucketKey, GridError, GridParams, KeyIndex, NormalizationRecord, SubdivTable, MAX_EXPONENT,
    MIN_EXPONENT,
};

pub const DEFAULT_BATCH_SIZE: usize = 1000;
pub const DEFAULT_MAX_PASSES: u32 = 10_000;

/// Fraction of a cell edge the converted radius may not encroach on. Absorbs
/// single-precision rounding in cell assignment so a neighbor within the
/// radius can never sit two cells away.
const CELL_EDGE_MARGIN: f32 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("decimation requires a non-empty cloud")]
    EmptyCloud,
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error(
        "radius covers {converted:.5} normalized units on axis {axis}, more than the cell edge \
         {cell_edge:.5}; the 27-cell neighborhood would miss neighbors{}",
        match .suggested_n { Some(n) => format!(" (try n <= {n})"), None => String::new() }
    )]
    RadiusTooLarge {
        axis: usize,
        converted: f32,
        cell_edge: f32,
        suggested_n: Option<u32>,
    },
    #[error("exceeded {0} passes without converging")]
    MaxPasses(u32),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Grid subdivision exponent.
    pub n: u32,
    /// Neighbor radius in meters.
    pub radius: f32,
    /// A point is marked when its neighbor count is strictly greater than this.
    pub threshold: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub max_passes: u32,
}

impl FilterConfig {
    pub fn new(n: u32, radius: f32, threshold: u32) -> Self {
        Self {
            n,
            radius,
            threshold,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(FilterError::Config(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.batch_size == 0 {
            return Err(FilterError::Config("batch size must be at least 1".into()));
        }
        if self.max_passes == 0 {
            return Err(FilterError::Config("max passes must be at least 1".into()));
        }
        GridParams::new(self.n)?;
        Ok(())
    }
}

/// One flag per point index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointMask(Vec<bool>);

/// `true` marks a surviving point.
pub type AliveMask = PointMask;
/// `true` marks a point flagged for deletion.
pub type MarkMask = PointMask;

impl PointMask {
    pub fn filled(len: usize, value: bool) -> Self {
        Self(vec![value; len])
    }

    pub fn from_vec(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Ascending indices of set flags.
    pub fn indices(&self) -> Vec<u32> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i as u32))
            .collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// The metric neighbor ball expressed in normalized coordinates.
///
/// Normalization scales each axis independently, so a metric sphere of
/// radius `r` becomes an axis-aligned ellipsoid with semi-axes
/// `r / half_extent[c]`. Stored as the reciprocal per-axis scale; zero-extent
/// axes get scale 0 (all their normalized coordinates are 0 anyway).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborBall {
    scale: [f32; 3],
}

impl NeighborBall {
    /// Ball of metric `radius` under `record`, checked against the cell edge
    /// of `grid` so the 27-cell neighborhood is sufficient.
    pub fn from_metric(
        radius: f32,
        record: &NormalizationRecord,
        grid: GridParams,
    ) -> Result<Self, FilterError> {
        let converted = converted_radii(radius, record);
        let limit = grid.cell_edge() * (1.0 - CELL_EDGE_MARGIN);
        if let Some(axis) = (0..3).find(|&c| converted[c] > limit) {
            return Err(FilterError::RadiusTooLarge {
                axis,
                converted: converted[axis],
                cell_edge: grid.cell_edge(),
                suggested_n: largest_sufficient_exponent(&converted),
            });
        }
        let scale = std::array::from_fn(|c| {
            let h = record.half_extent[c];
            if h > 0.0 {
                (h / radius as f64) as f32
            } else {
                0.0
            }
        });
        Ok(Self { scale })
    }

    /// A ball with the given normalized radius on every axis, for callers
    /// that already work in unit-cube coordinates. Not checked against any
    /// cell edge.
    pub fn normalized(radius: f32) -> Self {
        Self {
            scale: [1.0 / radius; 3],
        }
    }

    /// Boundary-inclusive membership test; symmetric in its arguments.
    #[inline]
    pub fn contains(&self, a: Point, b: Point) -> bool {
        let dx = (b.x - a.x) * self.scale[0];
        let dy = (b.y - a.y) * self.scale[1];
        let dz = (b.z - a.z) * self.scale[2];
        dx * dx + dy * dy + dz * dz <= 1.0
    }
}

/// Per-axis radius in normalized units. Zero-extent axes report 0: they
/// collapse onto a single cell row and never need a wider neighborhood.
fn converted_radii(radius: f32, record: &NormalizationRecord) -> [f32; 3] {
    std::array::from_fn(|c| {
        let h = record.half_extent[c];
        if h > 0.0 {
            (radius as f64 / h) as f32
        } else {
            0.0
        }
    })
}

fn largest_sufficient_exponent(converted: &[f32; 3]) -> Option<u32> {
    let widest = converted.iter().copied().fold(0.0f32, f32::max);
    (MIN_EXPONENT..=MAX_EXPONENT)
        .rev()
        .find(|&n| widest <= (2.0 / (1u32 << n) as f32) * (1.0 - CELL_EDGE_MARGIN))
}

/// Derives the per-pass generator: ChaCha8 seeded with `seed ^ pass`.
pub fn pass_rng(seed: u64, pass: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ pass as u64)
}

/// Picks `batch_size` distinct entries of `marked` (ascending point indices)
/// by a partial Fisher-Yates shuffle.
///
/// # Panics
/// If `marked` holds `batch_size` entries or fewer.
pub fn select_random_marked(marked: &[u32], batch_size: usize, rng: &mut impl Rng) -> Vec<u32> {
    assert!(
        marked.len() > batch_size,
        "selection needs more than {batch_size} marked points, got {}",
        marked.len()
    );
    let mut pool = marked.to_vec();
    let len = pool.len() as u64;
    for i in 0..batch_size {
        let j = rng.random_range(i as u64..len) as usize;
        pool.swap(i, j);
    }
    pool.truncate(batch_size);
    pool
}

/// Everything a mark pass reads. All of it is immutable during the pass.
struct Neighborhood<'a> {
    pairs: &'a [KeyIndex],
    /// `columns[c]..columns[c + 1]` is the table range of column `c = key >> n`.
    columns: &'a [u32],
    /// Normalized points permuted into table order, so span scans read
    /// memory in sequence.
    sorted: &'a [Point],
    grid: GridParams,
    ball: NeighborBall,
}

/// Candidates evaluated per rayon task. A chunk covers a compact run of
/// cells, so the neighbor spans of one cell are looked up once for all its
/// points.
const MARK_CHUNK: usize = 2048;

/// Largest `threshold + 1` for which marked points keep their witnesses.
const MAX_WITNESSES: usize = 32;

/// Result of a mark pass: ascending table positions, and for each of them
/// `stride` point indices of neighbors that put it over the threshold
/// (`stride` is 0 when witnesses are not tracked).
struct Marked {
    positions: Vec<u32>,
    witnesses: Vec<u32>,
    stride: usize,
}

impl Marked {
    fn witnesses_of(&self, k: usize) -> &[u32] {
        &self.witnesses[k * self.stride..(k + 1) * self.stride]
    }

    /// Keeps the entries for which `keep(position)` holds.
    fn retain(&mut self, mut keep: impl FnMut(u32) -> bool) {
        let mut kept = 0;
        for k in 0..self.positions.len() {
            if keep(self.positions[k]) {
                self.positions[kept] = self.positions[k];
                self.witnesses
                    .copy_within(k * self.stride..(k + 1) * self.stride, kept * self.stride);
                kept += 1;
            }
        }
        self.positions.truncate(kept);
        self.witnesses.truncate(kept * self.stride);
    }
}

impl Neighborhood<'_> {
    /// Neighbor count of the point at table position `pos` among `alive`
    /// over the given spans, stopping early at `cap`. The point indices of
    /// the counted neighbors are appended to `found`.
    #[inline]
    fn count_at(
        &self,
        pos: usize,
        spans: &[Range<usize>],
        alive: &[bool],
        cap: usize,
        found: &mut Vec<u32>,
    ) -> usize {
        let p = self.sorted[pos];
        let mut count = 0;
        for span in spans {
            let entries = self.pairs[span.clone()]
                .iter()
                .zip(&self.sorted[span.clone()]);
            for (at, (entry, &q)) in (span.start..).zip(entries) {
                if at != pos && self.ball.contains(p, q) && alive[entry.index as usize] {
                    found.push(entry.index);
                    count += 1;
                    if count >= cap {
                        return count;
                    }
                }
            }
        }
        count
    }

    /// Table range of keys `lo..=hi`, both in the same column.
    #[inline]
    fn span(&self, lo: BucketKey, hi: BucketKey) -> Range<usize> {
        let c = (lo.0 >> self.grid.exponent()) as usize;
        let (start, end) = (self.columns[c] as usize, self.columns[c + 1] as usize);
        let span = key_span(&self.pairs[start..end], lo, hi);
        start + span.start..start + span.end
    }

    /// Candidates (ascending positions) whose count exceeds `threshold`.
    ///
    /// A candidate from the previous pass is kept without a recount when
    /// its cell is not in `dirty` (ascending keys of cells near a deletion)
    /// or when all its witnesses in `prior` survive: its count cannot have
    /// dropped to the threshold.
    fn mark(
        &self,
        candidates: &[u32],
        prior: Option<&Marked>,
        alive: &[bool],
        threshold: u32,
        dirty: Option<&[BucketKey]>,
    ) -> Marked {
        debug_assert!(candidates.windows(2).all(|w| w[0] < w[1]));
        let cap = threshold as usize + 1;
        let stride = if cap <= MAX_WITNESSES { cap } else { 0 };
        // witnesses only vouch for a candidate when they are tracked at all
        let prior = prior
            .filter(|m| stride > 0 && m.stride == stride && m.positions.as_slice() == candidates);
        let chunks: Vec<(Vec<u32>, Vec<u32>)> = candidates
            .par_chunks(MARK_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut current: Option<BucketKey> = None;
                let mut current_dirty = true;
                let mut spans: Vec<Range<usize>> = Vec::with_capacity(9);
                let mut positions = Vec::new();
                let mut witnesses = Vec::new();
                let mut found = Vec::with_capacity(cap.min(MAX_WITNESSES));
                for (k, &pos) in (c * MARK_CHUNK..).zip(chunk) {
                    let key = self.pairs[pos as usize].key;
                    if current != Some(key) {
                        current = Some(key);
                        current_dirty = dirty.is_none_or(|d| d.binary_search(&key).is_ok());
                        spans.clear();
                    }
                    let settled = prior.map(|m| m.witnesses_of(k));
                    if let Some(w) =
                        settled.filter(|w| !current_dirty || w.iter().all(|&j| alive[j as usize]))
                    {
                        positions.push(pos);
                        witnesses.extend_from_slice(w);
                        continue;
                    }
                    if !current_dirty {
                        positions.push(pos);
                        continue;
                    }
                    if spans.is_empty() {
                        self.neighbor_spans(key, &mut spans);
                    }
                    found.clear();
                    if self.count_at(pos as usize, &spans, alive, cap, &mut found) >= cap {
                        positions.push(pos);
                        witnesses.extend_from_slice(&found[..stride]);
                    }
                }
                (positions, witnesses)
            })
            .collect();
        let mut marked = Marked {
            positions: Vec::new(),
            witnesses: Vec::new(),
            stride,
        };
        for (p, w) in chunks {
            marked.positions.extend(p);
            marked.witnesses.extend(w);
        }
        marked
    }

    /// Nonempty table spans around cell `key`, own column first: its points
    /// are the likeliest neighbors, so capped counts stop early.
    fn neighbor_spans(&self, key: BucketKey, spans: &mut Vec<Range<usize>>) {
        let n = self.grid.exponent();
        for_each_neighbor_span(key, self.grid, |lo, hi| {
            let span = self.span(lo, hi);
            if span.is_empty() {
                return;
            }
            if lo.0 >> n == key.0 >> n {
                spans.insert(0, span);
            } else {
                spans.push(span);
            }
        });
    }
}

/// Drops dead entries from the working table and its point copy, moving
/// `candidates` (ascending positions of live entries) to their new places.
fn prune(
    pairs: &mut Vec<KeyIndex>,
    sorted: &mut Vec<Point>,
    candidates: &mut [u32],
    alive: &[bool],
) {
    let mut next = candidates.iter_mut().peekable();
    let mut kept = 0usize;
    for old in 0..pairs.len() {
        if !alive[pairs[old].index as usize] {
            continue;
        }
        if next.peek().is_some_and(|c| **c as usize == old) {
            *next.next().expect("peeked") = kept as u32;
        }
        pairs[kept] = pairs[old];
        sorted[kept] = sorted[old];
        kept += 1;
    }
    debug_assert!(next.peek().is_none());
    pairs.truncate(kept);
    sorted.truncate(kept);
}

/// Start of each (x, y) column in `pairs`, plus the end sentinel.
fn column_starts(pairs: &[KeyIndex], grid: GridParams) -> Vec<u32> {
    let n = grid.exponent();
    let mut starts = vec![0u32; (1usize << (2 * n)) + 1];
    for e in pairs {
        starts[(e.key.0 >> n) as usize + 1] += 1;
    }
    for c in 1..starts.len() {
        starts[c] += starts[c - 1];
    }
    starts
}

/// `points` in the order of `pairs`.
fn permute(points: &[Point], pairs: &[KeyIndex]) -> Vec<Point> {
    pairs.par_iter().map(|e| points[e.index as usize]).collect()
}

/// Ascending, deduplicated keys of every cell whose 27-cell neighborhood
/// holds one of `deleted`; only points in those cells can lose a neighbor.
fn touched_cells(deleted: &[u32], keys: &[BucketKey], grid: GridParams) -> Vec<BucketKey> {
    let mut cells = Vec::with_capacity(deleted.len() * 27);
    for &d in deleted {
        for_each_neighbor_span(keys[d as usize], grid, |lo, hi| {
            cells.extend((lo.0..=hi.0).map(BucketKey));
        });
    }
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// Number of survivors in `snapshot` (other than `idx`) within `ball` of
/// point `idx`, scanning only the buckets adjacent to its cell.
pub fn count_neighbors(
    idx: usize,
    cloud_norm: &PointCloud,
    table: &SubdivTable,
    ball: &NeighborBall,
    snapshot: &AliveMask,
) -> usize {
    let grid = table.grid();
    let p = cloud_norm[idx];
    let key = bucket_key(p, grid).expect("normalized cloud");
    let pairs = table.pairs();
    let mut count = 0;
    for_each_neighbor_span(key, grid, |lo, hi| {
        count += pairs[key_span(pairs, lo, hi)]
            .iter()
            .filter(|e| {
                let j = e.index as usize;
                j != idx && snapshot.get(j) && ball.contains(p, cloud_norm[j])
            })
            .count();
    });
    count
}

/// Marks every survivor whose neighbor count exceeds `threshold`, all counts
/// taken against the same `snapshot`.
pub fn mark_pass(
    cloud_norm: &PointCloud,
    table: &SubdivTable,
    ball: &NeighborBall,
    threshold: u32,
    snapshot: &AliveMask,
) -> MarkMask {
    let pairs = table.pairs();
    let sorted = permute(cloud_norm.points(), pairs);
    let columns = column_starts(pairs, table.grid());
    let hood = Neighborhood {
        pairs,
        columns: &columns,
        sorted: &sorted,
        grid: table.grid(),
        ball: *ball,
    };
    let candidates: Vec<u32> = (0..pairs.len() as u32)
        .filter(|&pos| snapshot.get(pairs[pos as usize].index as usize))
        .collect();
    let marked: Vec<u32> = hood
        .mark(&candidates, None, snapshot.as_slice(), threshold, None)
        .positions
        .into_iter()
        .map(|pos| pairs[pos as usize].index)
        .collect();
    let mut mask = PointMask::filled(cloud_norm.len(), false);
    for i in marked {
        mask.set(i as usize, true);
    }
    mask
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub normalize: Duration,
    pub table_build: Duration,
    pub marking: Duration,
    pub compaction: Duration,
}

impl PhaseTimes {
    pub fn sum(&self) -> Duration {
        self.normalize + self.table_build + self.marking + self.compaction
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterStats {
    pub passes: u32,
    pub deleted_total: usize,
    pub input_size: usize,
    pub output_size: usize,
    pub phases: PhaseTimes,
    pub total: Duration,
}

/// Normalization plus the neighbor ball, shared by every decimation route so
/// they reject the same configurations and test the same predicate.
pub(crate) struct Prepared {
    pub grid: GridParams,
    pub cloud_norm: PointCloud,
    pub ball: NeighborBall,
}

pub(crate) fn prepare(cloud: &PointCloud, cfg: &FilterConfig) -> Result<Prepared, FilterError> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(FilterError::EmptyCloud);
    }
    let grid = GridParams::new(cfg.n)?;
    let bounds = compute_aabb(cloud)?;
    let (cloud_norm, record) = normalize(cloud, &bounds)?;
    let ball = NeighborBall::from_metric(cfg.radius, &record, grid)?;
    Ok(Prepared {
        grid,
        cloud_norm,
        ball,
    })
}

/// Survivors of `alive`, original coordinates, original order.
pub(crate) fn compact(cloud: &PointCloud, alive: &[bool]) -> PointCloud {
    let kept = cloud
        .iter()
        .zip(alive)
        .filter_map(|(p, &a)| a.then_some(*p))
        .collect();
    PointCloud::from_finite(kept)
}

/// Runs the bucket-grid decimation on the current rayon pool.
///
/// The input buffer is only borrowed; the returned cloud is the sole new
/// allocation of point data the caller sees, and holds the surviving input
/// points bit-for-bit in their original order.
pub fn decimate(
    cloud: &PointCloud,
    cfg: &FilterConfig,
) -> Result<(PointCloud, FilterStats), FilterError> {
    let start = Instant::now();
    let mut phases = PhaseTimes::default();

    let prep = prepare(cloud, cfg)?;
    phases.normalize = start.elapsed();

    let t = Instant::now();
    let keys = compute_keys(&prep.cloud_norm, prep.grid)?;
    // working copy of the table; dead entries are pruned as deletions pile up
    let mut pairs = table_from_keys(&keys, prep.grid).into_pairs();
    let mut sorted = permute(prep.cloud_norm.points(), &pairs);
    let mut columns = column_starts(&pairs, prep.grid);
    phases.table_build = t.elapsed();

    let t = Instant::now();
    let n = cloud.len();
    let mut alive = vec![true; n];
    // Survivor counts never grow between passes, so a point left unmarked
    // stays unmarked; only the previous pass's marked survivors need a recount.
    // Candidates are positions in the working table.
    let mut candidates: Vec<u32> = (0..n as u32).collect();
    let mut passes = 0u32;
    let mut deleted = 0usize;
    let mut stale = 0usize;
    // cells within one step of a point deleted in the previous pass
    let mut dirty: Option<Vec<BucketKey>> = None;
    // the previous pass's marked survivors with their witnesses
    let mut prior: Option<Marked> = None;
    loop {
        passes += 1;
        if passes > cfg.max_passes {
            return Err(FilterError::MaxPasses(cfg.max_passes));
        }
        let hood = Neighborhood {
            pairs: &pairs,
            columns: &columns,
            sorted: &sorted,
            grid: prep.grid,
            ball: prep.ball,
        };
        let marked_pos = hood.mark(
            &candidates,
            prior.as_ref(),
            &alive,
            cfg.threshold,
            dirty.as_deref(),
        );
        let mut marked: Vec<u32> = marked_pos
            .positions
            .iter()
            .map(|&pos| pairs[pos as usize].index)
            .collect();
        if marked.len() <= cfg.batch_size {
            for &i in &marked {
                alive[i as usize] = false;
            }
            deleted += marked.len();
            break;
        }
        marked.par_sort_unstable();
        let doomed = select_random_marked(&marked, cfg.batch_size, &mut pass_rng(cfg.seed, passes));
        for &i in &doomed {
            alive[i as usize] = false;
        }
        deleted += doomed.len();
        stale += doomed.len();
        dirty = Some(touched_cells(&doomed, &keys, prep.grid));
        let mut survivors = marked_pos;
        survivors.retain(|pos| alive[pairs[pos as usize].index as usize]);
        if stale * 4 > pairs.len() {
            prune(&mut pairs, &mut sorted, &mut survivors.positions, &alive);
            columns = column_starts(&pairs, prep.grid);
            stale = 0;
        }
        candidates = survivors.positions.clone();
        prior = Some(survivors);
    }
    phases.marking = t.elapsed();

    let t = Instant::now();
    let out = compact(cloud, &alive);
    phases.compaction = t.elapsed();

    let stats = FilterStats {
        passes,
        deleted_total: deleted,
        input_size: n,
        output_size: out.len(),
        phases,
        total: start.elapsed(),
    };
    Ok((out, stats))
}

/// Runs `f` on a dedicated rayon pool with `threads` workers.
pub fn with_threads<T: Send>(
    threads: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, FilterError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| FilterError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn decimate_with_threads(
    cloud: &PointCloud,
    cfg: &FilterConfig,
    threads: usize,
) -> Result<(PointCloud, FilterStats), FilterError> {
    with_threads(threads, || decimate(cloud, cfg))?
}
