//! Cloud generators shared by the integration tests.

#![allow(dead_code)]

use bucket_decimate::io::{gen_synthetic, SceneKind, SceneSpec};
use bucket_decimate::{compute_aabb, Point, PointCloud};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn cloud(points: Vec<Point>) -> PointCloud {
    PointCloud::new(points).expect("finite test cloud")
}

/// Uniform points in a box of `extent` with its minimum corner at `origin`.
pub fn uniform(rng: &mut ChaCha8Rng, len: usize, origin: [f32; 3], extent: [f32; 3]) -> PointCloud {
    cloud(
        (0..len)
            .map(|_| {
                Point::from_array(std::array::from_fn(|a| {
                    origin[a] + rng.random::<f32>() * extent[a]
                }))
            })
            .collect(),
    )
}

/// Gaussian blobs around `k` random centers in a box of `extent`.
pub fn clusters(
    rng: &mut ChaCha8Rng,
    len: usize,
    k: usize,
    extent: [f32; 3],
    spread: f32,
) -> PointCloud {
    let centers: Vec<[f32; 3]> = (0..k)
        .map(|_| std::array::from_fn(|a| rng.random::<f32>() * extent[a]))
        .collect();
    let blob = Normal::new(0.0f32, spread).unwrap();
    cloud(
        (0..len)
            .map(|_| {
                let c = centers[rng.random_range(0..k)];
                Point::from_array(std::array::from_fn(|a| c[a] + blob.sample(rng)))
            })
            .collect(),
    )
}

/// Points on a regular lattice of `step`, so many pairs sit exactly one step
/// apart.
pub fn lattice(len: usize, step: f32) -> PointCloud {
    let side = (len as f64).cbrt().ceil() as usize;
    cloud(
        (0..len)
            .map(|i| {
                let (x, y, z) = (i % side, (i / side) % side, i / (side * side));
                Point::new(x as f32 * step, y as f32 * step, z as f32 * step)
            })
            .collect(),
    )
}

/// Uniform points where roughly a third are exact copies of earlier ones.
pub fn with_duplicates(rng: &mut ChaCha8Rng, len: usize, extent: [f32; 3]) -> PointCloud {
    let mut pts: Vec<Point> = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 && rng.random_bool(0.35) {
            pts.push(pts[rng.random_range(0..i)]);
        } else {
            pts.push(Point::from_array(std::array::from_fn(|a| {
                rng.random::<f32>() * extent[a]
            })));
        }
    }
    cloud(pts)
}

/// Uniform points on a horizontal plane (zero z extent).
pub fn flat(rng: &mut ChaCha8Rng, len: usize, extent: [f32; 2]) -> PointCloud {
    cloud(
        (0..len)
            .map(|_| {
                Point::new(
                    rng.random::<f32>() * extent[0],
                    rng.random::<f32>() * extent[1],
                    1.5,
                )
            })
            .collect(),
    )
}

pub fn scene(kind: SceneKind, len: usize, extents: [f32; 3], seed: u64) -> PointCloud {
    gen_synthetic(&SceneSpec {
        kind,
        extents,
        point_count: len,
        noise_sigma: 0.005,
        seed,
    })
    .unwrap()
}

/// A random cloud of one of the shapes above.
pub fn any_cloud(rng: &mut ChaCha8Rng, len: usize) -> PointCloud {
    let extent = [
        rng.random_range(0.5..20.0),
        rng.random_range(0.5..20.0),
        rng.random_range(0.5..5.0),
    ];
    match rng.random_range(0..7) {
        0 => {
            let origin = [rng.random_range(-50.0..50.0), -3.0, 0.0];
            uniform(rng, len, origin, extent)
        }
        1 => {
            let k = rng.random_range(1..10);
            clusters(rng, len, k, extent, 0.02 * extent[2])
        }
        2 => lattice(len, [0.01, 0.05, 0.1][rng.random_range(0..3)]),
        3 => with_duplicates(rng, len, extent),
        4 => flat(rng, len, [extent[0], extent[1]]),
        5 => scene(SceneKind::Corridor, len, extent, rng.random()),
        _ => scene(SceneKind::GaussianClusters, len, extent, rng.random()),
    }
}

/// Metric radius `fraction` of the way to the largest admissible one: the
/// smallest cell edge over the axes with nonzero extent.
pub fn radius_for(cloud: &PointCloud, n: u32, fraction: f32) -> f32 {
    let extent = compute_aabb(cloud).unwrap().extent();
    let edge = extent
        .into_iter()
        .filter(|&e| e > 0.0)
        .map(|e| e / (1u32 << n) as f32)
        .fold(f32::INFINITY, f32::min);
    if edge.is_finite() {
        fraction * edge
    } else {
        // a single repeated point; any radius is admissible
        0.1
    }
}
