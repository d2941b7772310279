//! Serial reference implementations: the centroid voxel-grid filter used as
//! the timing baseline, and bucket-free oracles for neighbor counting and
//! decimation.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::cloud::{Point, PointCloud};
use crate::filter::{
    compact, pass_rng, prepare, select_random_marked, AliveMask, FilterConfig, FilterError,
    FilterStats, NeighborBall, PhaseTimes,
};

/// Uniform voxel edge in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafSize(f32);

impl LeafSize {
    pub fn new(edge: f32) -> Result<Self, FilterError> {
        if edge > 0.0 && edge.is_finite() {
            Ok(Self(edge))
        } else {
            Err(FilterError::Config(format!(
                "leaf edge must be positive, got {edge}"
            )))
        }
    }

    pub fn edge(&self) -> f32 {
        self.0
    }
}

/// Voxel of `p` for cubes of `edge` on the lattice through the origin.
///
/// A fixed lattice (rather than one anchored at the cloud's minimum corner)
/// keeps the partition stable when the filter is applied to its own output.
pub fn voxel_cell(p: Point, edge: f32) -> [i64; 3] {
    p.to_array()
        .map(|v| (v as f64 / edge as f64).floor() as i64)
}

/// One centroid per occupied voxel together with its [`voxel_cell`],
/// ascending by cell.
pub fn voxel_centroids(
    cloud: &PointCloud,
    leaf: LeafSize,
) -> Result<Vec<([i64; 3], Point)>, FilterError> {
    if cloud.is_empty() {
        return Err(FilterError::EmptyCloud);
    }
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], u64)> = BTreeMap::new();
    for &p in cloud {
        let acc = cells
            .entry(voxel_cell(p, leaf.edge()))
            .or_insert(([0.0; 3], 0));
        let v = p.to_array();
        for (sum, x) in acc.0.iter_mut().zip(v) {
            *sum += x as f64;
        }
        acc.1 += 1;
    }
    Ok(cells
        .into_iter()
        .map(|(cell, (sum, count))| {
            let mean = sum.map(|s| (s / count as f64) as f32);
            (cell, Point::from_array(mean))
        })
        .collect())
}

/// Replaces the points of each occupied voxel by their centroid.
pub fn voxel_centroid_filter(
    cloud: &PointCloud,
    leaf: LeafSize,
) -> Result<PointCloud, FilterError> {
    let pts = voxel_centroids(cloud, leaf)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    Ok(PointCloud::from_finite(pts))
}

/// Neighbor count by a full scan of the cloud, no buckets.
pub fn brute_force_neighbor_count(
    cloud_norm: &PointCloud,
    idx: usize,
    ball: &NeighborBall,
    snapshot: &AliveMask,
) -> usize {
    let p = cloud_norm[idx];
    cloud_norm
        .iter()
        .enumerate()
        .filter(|&(j, q)| j != idx && snapshot.get(j) && ball.contains(p, *q))
        .count()
}

/// Serial, bucket-free decimation with the same pass semantics and random
/// stream as [`crate::filter::decimate`].
///
/// Neighbor counts for all pairs are computed once, then decremented as
/// points are deleted, so each pass sees exact counts over its survivors.
pub fn brute_force_decimate(
    cloud: &PointCloud,
    cfg: &FilterConfig,
) -> Result<(PointCloud, FilterStats), FilterError> {
    let start = Instant::now();
    let mut phases = PhaseTimes::default();
    let prep = prepare(cloud, cfg)?;
    let pts = prep.cloud_norm.points();
    let ball = prep.ball;
    let n = pts.len();
    phases.normalize = start.elapsed();

    let t = Instant::now();
    let mut counts = vec![0u32; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if ball.contains(pts[i], pts[j]) {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    phases.table_build = t.elapsed();

    let t = Instant::now();
    let mut alive = vec![true; n];
    let mut passes = 0u32;
    let mut deleted = 0usize;
    loop {
        passes += 1;
        if passes > cfg.max_passes {
            return Err(FilterError::MaxPasses(cfg.max_passes));
        }
        let marked: Vec<u32> = (0..n)
            .filter(|&i| alive[i] && counts[i] > cfg.threshold)
            .map(|i| i as u32)
            .collect();
        if marked.len() <= cfg.batch_size {
            for &i in &marked {
                alive[i as usize] = false;
            }
            deleted += marked.len();
            break;
        }
        let doomed = select_random_marked(&marked, cfg.batch_size, &mut pass_rng(cfg.seed, passes));
        for &d in &doomed {
            alive[d as usize] = false;
        }
        for &d in &doomed {
            let p = pts[d as usize];
            for j in 0..n {
                if alive[j] && ball.contains(p, pts[j]) {
                    counts[j] -= 1;
                }
            }
        }
        deleted += doomed.len();
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
