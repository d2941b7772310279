//! On-disk clouds and generated scenes.

pub mod pcd;
pub mod synthetic;

pub use pcd::{read_pcd, read_pcd_with_report, write_pcd, PcdEncoding, PcdError, PcdReport};
pub use synthetic::{gen_synthetic, SceneError, SceneKind, SceneSpec};
