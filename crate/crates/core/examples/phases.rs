//! Prints the per-phase timing of one decimation run on a synthetic corridor.

use bucket_decimate::bench::{default_radius, grid_exponent_for};
use bucket_decimate::io::{gen_synthetic, SceneSpec};
use bucket_decimate::{compute_aabb, decimate, FilterConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let points: usize = args
        .get(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1_000_000);
    let resolution: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let threshold: u32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);

    let cloud = gen_synthetic(&SceneSpec::corridor(points, 1)).expect("scene");
    let bounds = compute_aabb(&cloud).expect("bounds");
    let n = grid_exponent_for(&bounds, resolution);
    let cfg = FilterConfig::new(n, default_radius(&bounds, n, resolution), threshold);
    let (out, stats) = decimate(&cloud, &cfg).expect("decimate");
    println!(
        "n={n} radius={} {} -> {} in {} passes",
        cfg.radius,
        cloud.len(),
        out.len(),
        stats.passes
    );
    println!("{:#?}\ntotal {:?}", stats.phases, stats.total);
}
