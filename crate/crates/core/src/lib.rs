//! Point-cloud decimation over a sorted cubic-bucket grid.
//!
//! The cloud is normalized into `[-1, 1]^3`, each point is assigned a cell of
//! a regular `2^n` grid, and the `(cell key, point index)` pairs are radix
//! sorted so every cell's points form one contiguous run. Neighbor counts then
//! only inspect the 27 cells around a point. Dense points are removed in
//! seeded random batches until no more than one batch exceeds the threshold.
//!
//! Serial oracles ([`baseline::brute_force_decimate`],
//! [`baseline::brute_force_neighbor_count`]) and a centroid voxel-grid
//! baseline ship alongside for verification and timing.

pub mod baseline;
pub mod bench;
pub mod cloud;
pub mod filter;
pub mod grid;
pub mod io;
pub mod radix;

pub use baseline::{brute_force_decimate, voxel_centroid_filter, LeafSize};
pub use cloud::{
    compute_aabb, crop_z, distance, transform_rigid, Aabb, CloudError, Point, PointCloud,
};
pub use filter::{decimate, decimate_with_threads, FilterConfig, FilterError, FilterStats};
pub use grid::{
    build_subdiv_table, normalize, BucketKey, GridParams, NormalizationRecord, SubdivTable,
};
