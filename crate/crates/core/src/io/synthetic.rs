//! Seeded synthetic scenes for tests and benchmarks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cloud::{Point, PointCloud};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene extents must be positive and finite, got {0:?}")]
    Extents([f32; 3]),
    #[error("noise sigma must be non-negative and finite, got {0}")]
    Noise(f32),
    #[error("unknown scene kind `{0}` (expected corridor, uniform-box or gaussian-clusters)")]
    Kind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Floor, two side walls and a few box obstacles along the x axis.
    Corridor,
    UniformBox,
    GaussianClusters,
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Corridor => "corridor",
            SceneKind::UniformBox => "uniform-box",
            SceneKind::GaussianClusters => "gaussian-clusters",
        })
    }
}

impl FromStr for SceneKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corridor" => Ok(SceneKind::Corridor),
            "uniform-box" => Ok(SceneKind::UniformBox),
            "gaussian-clusters" => Ok(SceneKind::GaussianClusters),
            other => Err(SceneError::Kind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Scene size in meters. For a corridor: length (x), width (y), height (z).
    pub extents: [f32; 3],
    pub point_count: usize,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl SceneSpec {
    pub fn corridor(point_count: usize, seed: u64) -> Self {
        Self {
            kind: SceneKind::Corridor,
            extents: [12.0, 2.5, 2.5],
            point_count,
            noise_sigma: 0.005,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.extents.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(SceneError::Extents(self.extents));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SceneError::Noise(self.noise_sigma));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle: coordinate `fixed_axis` pinned at `fixed`, the
/// other two axes spanning `lo..hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub fixed_axis: usize,
    pub fixed: f32,
    pub lo: [f32; 3],
    pub hi: [f32; 3],
}

impl Rect {
    fn new(fixed_axis: usize, fixed: f32, lo: [f32; 3], hi: [f32; 3]) -> Self {
        let mut lo = lo;
        let mut hi = hi;
        lo[fixed_axis] = fixed;
        hi[fixed_axis] = fixed;
        Self {
            fixed_axis,
            fixed,
            lo,
            hi,
        }
    }

    fn area(&self) -> f64 {
        (0..3)
            .filter(|&a| a != self.fixed_axis)
            .map(|a| (self.hi[a] - self.lo[a]) as f64)
            .product()
    }

    fn sample(&self, rng: &mut impl Rng) -> [f32; 3] {
        std::array::from_fn(|a| {
            if a == self.fixed_axis || self.hi[a] <= self.lo[a] {
                self.lo[a]
            } else {
                rng.random_range(self.lo[a]..self.hi[a])
            }
        })
    }

    /// Inclusive containment with an absolute slack.
    pub fn contains(&self, p: Point, slack: f32) -> bool {
        let v = p.to_array();
        (0..3).all(|a| v[a] >= self.lo[a] - slack && v[a] <= self.hi[a] + slack)
    }
}

const CORRIDOR_OBSTACLES: usize = 4;

/// Surfaces of the corridor scene for `spec`. Obstacle placement consumes
/// the head of the seeded stream, so it is fixed by the seed.
pub fn corridor_surfaces(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<Rect> {
    let [len, width, height] = spec.extents;
    let (y0, y1) = (-0.5 * width, 0.5 * width);
    let mut rects = vec![
        Rect::new(2, 0.0, [0.0, y0, 0.0], [len, y1, 0.0]),
        Rect::new(1, y0, [0.0, y0, 0.0], [len, y0, height]),
        Rect::new(1, y1, [0.0, y1, 0.0], [len, y1, height]),
    ];
    for _ in 0..CORRIDOR_OBSTACLES {
        let sx = rng.random_range(0.1..0.3) * len.min(width * 2.0);
        let sy = rng.random_range(0.15..0.4) * width;
        let sz = rng.random_range(0.2..0.5) * height;
        let x = rng.random_range(0.0..(len - sx).max(f32::MIN_POSITIVE));
        let y = rng.random_range(y0..(y1 - sy).max(y0 + f32::MIN_POSITIVE));
        let (lo, hi) = ([x, y, 0.0], [x + sx, y + sy, sz]);
        // four sides and the top; the bottom face lies on the floor
        rects.push(Rect::new(0, lo[0], lo, hi));
        rects.push(Rect::new(0, hi[0], lo, hi));
        rects.push(Rect::new(1, lo[1], lo, hi));
        rects.push(Rect::new(1, hi[1], lo, hi));
        rects.push(Rect::new(2, hi[2], lo, hi));
    }
    rects
}

const CLUSTERS: usize = 8;

/// Generates the scene described by `spec`; the same spec always yields the
/// same cloud.
pub fn gen_synthetic(spec: &SceneSpec) -> Result<PointCloud, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise =
        Normal::new(0.0f32, spec.noise_sigma).map_err(|_| SceneError::Noise(spec.noise_sigma))?;
    let ext = spec.extents;

    let mut points: Vec<[f32; 3]> = Vec::with_capacity(spec.point_count);
    match spec.kind {
        SceneKind::Corridor => {
            let rects = corridor_surfaces(spec, &mut rng);
            let cumulative: Vec<f64> = rects
                .iter()
                .scan(0.0, |acc, r| {
                    *acc += r.area();
                    Some(*acc)
                })
                .collect();
            let total = *cumulative.last().expect("corridor has surfaces");
            for _ in 0..spec.point_count {
                let u = rng.random_range(0.0..total);
                let k = cumulative.partition_point(|&c| c <= u).min(rects.len() - 1);
                points.push(rects[k].sample(&mut rng));
            }
        }
        SceneKind::UniformBox => {
            for _ in 0..spec.point_count {
                points.push(std::array::from_fn(|a| {
                    rng.random_range(-0.5 * ext[a]..=0.5 * ext[a])
                }));
            }
        }
        SceneKind::GaussianClusters => {
            let centers: Vec<[f32; 3]> = (0..CLUSTERS)
                .map(|_| std::array::from_fn(|a| rng.random_range(-0.5 * ext[a]..=0.5 * ext[a])))
                .collect();
            let spread = 0.05 * ext.iter().copied().fold(f32::INFINITY, f32::min);
            let blob = Normal::new(0.0f32, spread).expect("positive spread");
            for _ in 0..spec.point_count {
                let c = centers[rng.random_range(0..CLUSTERS)];
                points.push(std::array::from_fn(|a| c[a] + blob.sample(&mut rng)));
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for p in &mut points {
            for v in p.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    Ok(PointCloud::from_finite(
        points.into_iter().map(Point::from_array).collect(),
    ))
}
