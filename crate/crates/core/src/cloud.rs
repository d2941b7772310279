//! Geometric primitives: points, clouds, bounding boxes and the elementary
//! operations on them (distance, bounds, z cropping, rigid transforms).

use std::ops::Index;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("operation requires at least one point")]
    Empty,
    #[error("invalid z range: z_min {z_min} > z_max {z_max}")]
    InvalidRange { z_min: f32, z_max: f32 },
    #[error("rotation is not orthonormal (max |R*R^T - I| = {deviation:e})")]
    NotOrthonormal { deviation: f64 },
}

/// A single-precision 3D point, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[repr(C)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn to_array(self) -> [f32; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [f32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// True when all three coordinates have the same bit pattern.
    pub fn bit_eq(&self, other: &Point) -> bool {
        self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.z.to_bits() == other.z.to_bits()
    }
}

impl From<[f32; 3]> for Point {
    fn from(a: [f32; 3]) -> Self {
        Self::from_array(a)
    }
}

/// Euclidean distance between two points.
#[inline]
pub fn distance(p1: Point, p2: Point) -> f32 {
    let dx = p2.x - p1.x;
    let dy = p2.y - p1.y;
    let dz = p2.z - p1.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// A contiguous buffer of finite points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    /// Takes ownership of `points`, rejecting any non-finite coordinate.
    pub fn new(points: Vec<Point>) -> Result<Self, CloudError> {
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(CloudError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    /// Callers guarantee every point is finite.
    pub(crate) fn from_finite(points: Vec<Point>) -> Self {
        debug_assert!(points.iter().all(Point::is_finite));
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Bitwise comparison of two ordered point lists.
    pub fn bit_eq(&self, other: &PointCloud) -> bool {
        self.len() == other.len() && self.iter().zip(other.iter()).all(|(a, b)| a.bit_eq(b))
    }
}

impl Index<usize> for PointCloud {
    type Output = Point;

    fn index(&self, i: usize) -> &Point {
        &self.points[i]
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point;
    type IntoIter = std::slice::Iter<'a, Point>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Axis-aligned bounding box. `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    /// Returns `None` when `min` exceeds `max` on any axis or a corner is non-finite.
    pub fn new(min: Point, max: Point) -> Option<Self> {
        let ok = min.is_finite()
            && max.is_finite()
            && min.x <= max.x
            && min.y <= max.y
            && min.z <= max.z;
        ok.then_some(Self { min, max })
    }

    pub fn contains(&self, p: &Point) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }

    pub fn extent(&self) -> [f32; 3] {
        [
            self.max.x - self.min.x,
            self.max.y - self.min.y,
            self.max.z - self.min.z,
        ]
    }

    pub fn max_extent(&self) -> f32 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }
}

pub fn compute_aabb(cloud: &PointCloud) -> Result<Aabb, CloudError> {
    let first = *cloud.points().first().ok_or(CloudError::Empty)?;
    let (min, max) = cloud.iter().fold((first, first), |(lo, hi), p| {
        (
            Point::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
            Point::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
        )
    });
    Ok(Aabb { min, max })
}

/// Keeps the points with `z_min <= z <= z_max`, preserving order. Infinite
/// bounds disable the corresponding side.
pub fn crop_z(cloud: &PointCloud, z_min: f32, z_max: f32) -> Result<PointCloud, CloudError> {
    // `!(a <= b)` also rejects NaN bounds.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(z_min <= z_max) {
        return Err(CloudError::InvalidRange { z_min, z_max });
    }
    let kept = cloud
        .iter()
        .filter(|p| p.z >= z_min && p.z <= z_max)
        .copied()
        .collect();
    Ok(PointCloud::from_finite(kept))
}

/// Row-major 3x3 rotation matrix.
pub type Rotation = [[f32; 3]; 3];

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

const ORTHONORMAL_TOL: f64 = 1e-5;

fn orthonormal_deviation(r: &Rotation) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[i][k] as f64 * r[j][k] as f64).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - expected).abs());
        }
    }
    worst
}

/// Applies `p -> R p + t` to every point.
pub fn transform_rigid(
    cloud: &PointCloud,
    rotation: &Rotation,
    translation: Point,
) -> Result<PointCloud, CloudError> {
    let deviation = orthonormal_deviation(rotation);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN deviation fails too
    if !(deviation <= ORTHONORMAL_TOL) {
        return Err(CloudError::NotOrthonormal { deviation });
    }
    let r = rotation.map(|row| row.map(f64::from));
    let t = translation.to_array().map(f64::from);
    let out = cloud
        .iter()
        .map(|p| {
            let v = p.to_array().map(f64::from);
            let row = |i: usize| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2] + t[i];
            Point::new(row(0) as f32, row(1) as f32, row(2) as f32)
        })
        .collect::<Vec<_>>();
    PointCloud::new(out)
}
