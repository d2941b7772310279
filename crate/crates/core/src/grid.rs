//! Normalization into the unit cube `[-1, 1]^3`, bucket keys over the regular
//! `2^n x 2^n x 2^n` grid, and the radix-sorted subdivision table.
//!
//! Keys are row-major: `key = ix * 2^(2n) + iy * 2^n + iz`. With this layout
//! the three cells `(ix, iy, iz-1..=iz+1)` occupy consecutive keys, so a
//! 27-cell neighborhood is covered by nine contiguous key spans.

use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{Aabb, Point, PointCloud};
use crate::radix::radix_sort_pairs;

pub const MIN_EXPONENT: u32 = 1;
pub const MAX_EXPONENT: u32 = 10;
/// Exponent range exercised by the reference experiments.
pub const NOMINAL_EXPONENTS: std::ops::RangeInclusive<u32> = 4..=9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid exponent {0} outside supported range {MIN_EXPONENT}..={MAX_EXPONENT}")]
    Exponent(u32),
    #[error("point {index} lies outside the normalization box")]
    PointOutsideBox { index: usize },
    #[error("normalized coordinate {value} outside [-1, 1]")]
    CoordinateOutOfRange { value: f32 },
}

/// Subdivision exponent `n` of the `2^n` cells-per-axis grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridParams {
    n: u32,
}

impl GridParams {
    pub fn new(n: u32) -> Result<Self, GridError> {
        if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&n) {
            return Err(GridError::Exponent(n));
        }
        if !NOMINAL_EXPONENTS.contains(&n) {
            log::warn!("grid exponent {n} is outside the usual range 4..=9");
        }
        Ok(Self { n })
    }

    pub fn exponent(&self) -> u32 {
        self.n
    }

    pub fn cells_per_axis(&self) -> u32 {
        1 << self.n
    }

    pub fn bucket_count(&self) -> u64 {
        1u64 << (3 * self.n)
    }

    pub fn key_bits(&self) -> u32 {
        3 * self.n
    }

    /// Edge length of one cell in normalized units.
    pub fn cell_edge(&self) -> f32 {
        2.0 / self.cells_per_axis() as f32
    }

    pub fn key_of_cell(&self, cell: [u32; 3]) -> BucketKey {
        BucketKey((cell[0] << (2 * self.n)) | (cell[1] << self.n) | cell[2])
    }

    pub fn cell_of_key(&self, key: BucketKey) -> [u32; 3] {
        let mask = self.cells_per_axis() - 1;
        [
            (key.0 >> (2 * self.n)) & mask,
            (key.0 >> self.n) & mask,
            key.0 & mask,
        ]
    }

    /// Cell index of one normalized coordinate. Exact: `x * 2^(n-1)` is a
    /// power-of-two scaling, so the floor matches n successive halvings of
    /// `[-1, 1]`. The `+1` boundary clamps into the last cell.
    #[inline]
    pub fn axis_cell(&self, x: f32) -> u32 {
        let half = (1u32 << (self.n - 1)) as f32;
        let idx = (x * half).floor() as i64 + (1i64 << (self.n - 1));
        idx.clamp(0, self.cells_per_axis() as i64 - 1) as u32
    }
}

/// Affine per-axis map from a bounding box onto `[-1, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
}

impl NormalizationRecord {
    pub fn from_aabb(b: &Aabb) -> Self {
        let lo = b.min.to_array();
        let hi = b.max.to_array();
        let center = std::array::from_fn(|c| (lo[c] as f64 + hi[c] as f64) * 0.5);
        let half_extent = std::array::from_fn(|c| (hi[c] as f64 - lo[c] as f64) * 0.5);
        Self {
            center,
            half_extent,
        }
    }

    #[inline]
    pub fn normalize_point(&self, p: Point) -> Point {
        let v = p.to_array();
        Point::from_array(std::array::from_fn(|c| {
            let h = self.half_extent[c];
            if h > 0.0 {
                (((v[c] as f64 - self.center[c]) / h) as f32).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        }))
    }

    pub fn denormalize_point(&self, p: Point) -> Point {
        let v = p.to_array();
        Point::from_array(std::array::from_fn(|c| {
            (self.center[c] + v[c] as f64 * self.half_extent[c]) as f32
        }))
    }
}

/// Maps every point into `[-1, 1]^3` relative to `bounds`.
pub fn normalize(
    cloud: &PointCloud,
    bounds: &Aabb,
) -> Result<(PointCloud, NormalizationRecord), GridError> {
    if let Some(index) = cloud.iter().position(|p| !bounds.contains(p)) {
        return Err(GridError::PointOutsideBox { index });
    }
    let record = NormalizationRecord::from_aabb(bounds);
    let out: Vec<Point> = cloud
        .points()
        .par_iter()
        .map(|&p| record.normalize_point(p))
        .collect();
    Ok((PointCloud::from_finite(out), record))
}

/// Row-major grid cell code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BucketKey(pub u32);

/// One entry of the subdivision table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeyIndex {
    pub key: BucketKey,
    pub index: u32,
}

pub fn bucket_key(p: Point, grid: GridParams) -> Result<BucketKey, GridError> {
    let v = p.to_array();
    for value in v {
        if !(-1.0..=1.0).contains(&value) {
            return Err(GridError::CoordinateOutOfRange { value });
        }
    }
    Ok(grid.key_of_cell(v.map(|x| grid.axis_cell(x))))
}

/// Radix-sorted `(key, point index)` pairs for a normalized cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdivTable {
    pairs: Vec<KeyIndex>,
    grid: GridParams,
}

impl SubdivTable {
    pub fn pairs(&self) -> &[KeyIndex] {
        &self.pairs
    }

    pub fn grid(&self) -> GridParams {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn bucket_range(&self, key: BucketKey) -> (usize, usize) {
        bucket_range(&self.pairs, key)
    }

    pub fn into_pairs(self) -> Vec<KeyIndex> {
        self.pairs
    }
}

/// Per-point keys, computed in parallel.
pub fn compute_keys(
    cloud_norm: &PointCloud,
    grid: GridParams,
) -> Result<Vec<BucketKey>, GridError> {
    cloud_norm
        .points()
        .par_iter()
        .map(|&p| bucket_key(p, grid))
        .collect()
}

pub fn build_subdiv_table(
    cloud_norm: &PointCloud,
    grid: GridParams,
) -> Result<SubdivTable, GridError> {
    let keys = compute_keys(cloud_norm, grid)?;
    Ok(table_from_keys(&keys, grid))
}

pub(crate) fn table_from_keys(keys: &[BucketKey], grid: GridParams) -> SubdivTable {
    let mut pairs: Vec<KeyIndex> = keys
        .par_iter()
        .enumerate()
        .map(|(i, &key)| KeyIndex {
            key,
            index: i as u32,
        })
        .collect();
    radix_sort_pairs(&mut pairs, grid.key_bits());
    SubdivTable { pairs, grid }
}

/// `(start, count)` of the run of pairs holding exactly `key`.
pub fn bucket_range(pairs: &[KeyIndex], key: BucketKey) -> (usize, usize) {
    let r = key_span(pairs, key, key);
    (r.start, r.len())
}

/// Index range of the pairs whose key lies in `lo..=hi`.
#[inline]
pub fn key_span(pairs: &[KeyIndex], lo: BucketKey, hi: BucketKey) -> Range<usize> {
    let start = pairs.partition_point(|p| p.key < lo);
    let end = start + pairs[start..].partition_point(|p| p.key <= hi);
    start..end
}

/// Keys of the up-to-27 cells adjacent to `key` (itself included), clipped at
/// the grid boundary. Ascending order.
pub fn neighbor_buckets(key: BucketKey, grid: GridParams) -> Vec<BucketKey> {
    let mut out = Vec::with_capacity(27);
    for_each_neighbor_span(key, grid, |lo, hi| {
        out.extend((lo.0..=hi.0).map(BucketKey));
    });
    out
}

/// Calls `f(lo, hi)` for each of the (at most nine) contiguous key spans that
/// make up the neighborhood of `key`, in ascending key order. Both ends of a
/// span share the same (x, y) column.
#[inline]
pub fn for_each_neighbor_span(
    key: BucketKey,
    grid: GridParams,
    mut f: impl FnMut(BucketKey, BucketKey),
) {
    let last = grid.cells_per_axis() - 1;
    let [ix, iy, iz] = grid.cell_of_key(key);
    let z_lo = iz.saturating_sub(1);
    let z_hi = (iz + 1).min(last);
    for x in ix.saturating_sub(1)..=(ix + 1).min(last) {
        for y in iy.saturating_sub(1)..=(iy + 1).min(last) {
            f(
                grid.key_of_cell([x, y, z_lo]),
                grid.key_of_cell([x, y, z_hi]),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::compute_aabb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    /// Independent classifier: n successive halvings of `[-1, 1]`, taking the
    /// upper half when `x >= midpoint`.
    fn subdivision_cell(x: f32, n: u32) -> u32 {
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut idx = 0;
        for _ in 0..n {
            let mid = 0.5 * (lo + hi);
            if x as f64 >= mid {
                idx = 2 * idx + 1;
                lo = mid;
            } else {
                idx *= 2;
                hi = mid;
            }
        }
        idx
    }

    fn subdivision_key(p: Point, n: u32) -> u32 {
        let c = p.to_array().map(|x| subdivision_cell(x, n));
        c[0] * (1 << (2 * n)) + c[1] * (1 << n) + c[2]
    }

    fn random_unit_cloud(rng: &mut ChaCha8Rng, len: usize) -> PointCloud {
        PointCloud::new(
            (0..len)
                .map(|_| {
                    Point::new(
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn grid_bounds() {
        assert!(GridParams::new(0).is_err());
        assert!(GridParams::new(11).is_err());
        let g = GridParams::new(4).unwrap();
        assert_eq!(g.cells_per_axis(), 16);
        assert_eq!(g.bucket_count(), 4096);
        assert_eq!(g.cell_edge(), 0.125);
    }

    #[test]
    fn normalize_examples() {
        let b = Aabb::new(Point::new(0., 0., 0.), Point::new(10., 10., 10.)).unwrap();
        let c = PointCloud::new(vec![
            Point::new(5., 5., 5.),
            Point::new(0., 0., 0.),
            Point::new(10., 10., 10.),
        ])
        .unwrap();
        let (n, _) = normalize(&c, &b).unwrap();
        assert_eq!(n[0], Point::new(0., 0., 0.));
        assert_eq!(n[1], Point::new(-1., -1., -1.));
        assert_eq!(n[2], Point::new(1., 1., 1.));

        let flat = Aabb::new(Point::new(0., 0., 3.), Point::new(10., 10., 3.)).unwrap();
        let c = PointCloud::new(vec![Point::new(2., 7., 3.)]).unwrap();
        let (n, rec) = normalize(&c, &flat).unwrap();
        assert_eq!(n[0].z, 0.0);
        assert_eq!(rec.half_extent[2], 0.0);

        let outside =
            PointCloud::new(vec![Point::new(5., 5., 5.), Point::new(11., 0., 0.)]).unwrap();
        assert_eq!(
            normalize(&outside, &b),
            Err(GridError::PointOutsideBox { index: 1 })
        );
    }

    #[test]
    fn bucket_key_examples() {
        let g = GridParams::new(4).unwrap();
        assert_eq!(
            bucket_key(Point::new(-1., -1., -1.), g).unwrap(),
            BucketKey(0)
        );
        assert_eq!(
            bucket_key(Point::new(1., 1., 1.), g).unwrap(),
            BucketKey(4095)
        );
        let origin = bucket_key(Point::new(0., 0., 0.), g).unwrap();
        assert_eq!(
            origin,
            BucketKey(subdivision_key(Point::new(0., 0., 0.), 4))
        );
        assert_eq!(origin, BucketKey(2184));
        assert!(bucket_key(Point::new(1.01, 0., 0.), g).is_err());
        assert!(bucket_key(Point::new(f32::NAN, 0., 0.), g).is_err());
    }

    #[test]
    fn closed_form_matches_subdivision_near_boundaries() {
        // values one ulp either side of every cell boundary, plus tiny magnitudes
        for n in 1..=MAX_EXPONENT {
            let g = GridParams::new(n).unwrap();
            let cells = 1u32 << n;
            for k in 0..=cells {
                let b = -1.0f32 + 2.0 * k as f32 / cells as f32;
                for x in [b, b.next_down(), b.next_up()] {
                    if (-1.0..=1.0).contains(&x) {
                        assert_eq!(g.axis_cell(x), subdivision_cell(x, n), "n={n} x={x:e}");
                    }
                }
            }
            for x in [-f32::MIN_POSITIVE, -1e-40, 1e-40, -0.0, 0.0] {
                assert_eq!(g.axis_cell(x), subdivision_cell(x, n), "n={n} x={x:e}");
            }
        }
    }

    #[test]
    fn closed_form_matches_subdivision_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=5 {
            let g = GridParams::new(n).unwrap();
            let cloud = random_unit_cloud(&mut rng, 20_000);
            for &p in &cloud {
                assert_eq!(bucket_key(p, g).unwrap().0, subdivision_key(p, n));
            }
        }
    }

    #[test]
    fn octant_table() {
        let g = GridParams::new(1).unwrap();
        let pts: Vec<Point> = (0..8)
            .map(|o| {
                let s = |bit: u32| if o & bit != 0 { 0.5 } else { -0.5 };
                Point::new(s(4), s(2), s(1))
            })
            .collect();
        let t = build_subdiv_table(&PointCloud::new(pts).unwrap(), g).unwrap();
        let keys: Vec<u32> = t.pairs().iter().map(|p| p.key.0).collect();
        assert_eq!(keys, (0..8).collect::<Vec<_>>());
        // octant o was placed at index o, and its key is o by construction
        assert!(t.pairs().iter().all(|p| p.key.0 == p.index));
    }

    #[test]
    fn empty_table() {
        let t = build_subdiv_table(&PointCloud::empty(), GridParams::new(4).unwrap()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn table_invariants_and_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 4, 6] {
            let g = GridParams::new(n).unwrap();
            let cloud = random_unit_cloud(&mut rng, 5000);
            let t = build_subdiv_table(&cloud, g).unwrap();

            assert!(t.pairs().windows(2).all(|w| w[0].key <= w[1].key));
            let mut seen = vec![false; cloud.len()];
            for p in t.pairs() {
                assert!(!seen[p.index as usize]);
                seen[p.index as usize] = true;
                assert_eq!(p.key, bucket_key(cloud[p.index as usize], g).unwrap());
            }
            assert!(seen.iter().all(|&s| s));

            let mut hist = BTreeMap::new();
            for &p in &cloud {
                *hist.entry(subdivision_key(p, n)).or_insert(0usize) += 1;
            }
            for (&k, &count) in &hist {
                assert_eq!(t.bucket_range(BucketKey(k)).1, count);
            }
        }
    }

    #[test]
    fn bucket_range_examples() {
        let pairs: Vec<KeyIndex> = [1, 1, 4]
            .iter()
            .enumerate()
            .map(|(i, &k)| KeyIndex {
                key: BucketKey(k),
                index: i as u32,
            })
            .collect();
        assert_eq!(bucket_range(&pairs, BucketKey(1)), (0, 2));
        assert_eq!(bucket_range(&pairs, BucketKey(4)), (2, 1));
        assert_eq!(bucket_range(&pairs, BucketKey(2)).1, 0);
        assert_eq!(bucket_range(&pairs, BucketKey(9)).1, 0);
    }

    #[test]
    fn bucket_range_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = GridParams::new(3).unwrap();
        let t = build_subdiv_table(&random_unit_cloud(&mut rng, 3000), g).unwrap();
        for k in 0..g.bucket_count() as u32 {
            let key = BucketKey(k);
            let first = t.pairs().iter().position(|p| p.key == key);
            let count = t.pairs().iter().filter(|p| p.key == key).count();
            let (start, got) = t.bucket_range(key);
            assert_eq!(got, count);
            if let Some(first) = first {
                assert_eq!(start, first);
            }
        }
    }

    #[test]
    fn neighbor_bucket_counts() {
        let g = GridParams::new(4).unwrap();
        assert_eq!(neighbor_buckets(g.key_of_cell([8, 8, 8]), g).len(), 27);
        assert_eq!(neighbor_buckets(g.key_of_cell([0, 0, 0]), g).len(), 8);
        assert_eq!(neighbor_buckets(g.key_of_cell([15, 15, 15]), g).len(), 8);
    }

    #[test]
    fn neighbor_buckets_match_offset_enumeration() {
        let g = GridParams::new(4).unwrap();
        let last = 15i32;
        for cell in [[0u32, 8, 8], [8, 8, 8], [0, 0, 0], [15, 0, 7], [3, 15, 0]] {
            let mut expected = Vec::new();
            for dx in -1i32..=1 {
                for dy in -1i32..=1 {
                    for dz in -1i32..=1 {
                        let c = [
                            cell[0] as i32 + dx,
                            cell[1] as i32 + dy,
                            cell[2] as i32 + dz,
                        ];
                        if c.iter().all(|&v| (0..=last).contains(&v)) {
                            expected.push(g.key_of_cell(c.map(|v| v as u32)));
                        }
                    }
                }
            }
            expected.sort();
            assert_eq!(neighbor_buckets(g.key_of_cell(cell), g), expected);
        }
        assert_eq!(neighbor_buckets(g.key_of_cell([0, 8, 8]), g).len(), 18);
    }

    proptest! {
        #[test]
        fn normalization_round_trip(
            pts in proptest::collection::vec((-50.0f32..50.0, -50.0f32..50.0, -5.0f32..5.0), 1..50)
        ) {
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Point::new(x, y, z)).collect()).unwrap();
            let b = compute_aabb(&cloud).unwrap();
            let (norm, rec) = normalize(&cloud, &b).unwrap();
            for (orig, n) in cloud.iter().zip(norm.iter()) {
                prop_assert!(n.to_array().iter().all(|v| (-1.0..=1.0).contains(v)));
                let back = rec.denormalize_point(*n);
                for c in 0..3 {
                    prop_assert!((back.to_array()[c] - orig.to_array()[c]).abs() <= 1e-4);
                }
            }
        }

        #[test]
        fn axis_cell_is_monotone(a in -1.0f32..=1.0, b in -1.0f32..=1.0, n in 1u32..=10) {
            let g = GridParams::new(n).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(g.axis_cell(lo) <= g.axis_cell(hi));
        }
    }
}
