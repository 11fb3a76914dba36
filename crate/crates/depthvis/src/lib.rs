//! Visual quality metrics for depth maps, plus a zero-shot variational
//! depth super-resolver built on the same machinery.
//!
//! The central idea: compare depth maps in *rendering space* rather than in
//! raw depth units. A depth map is converted to a normal map, shaded with a
//! small set of directional lights, and the renderings are compared with
//! image metrics. Smooth low-frequency depth errors (which barely change the
//! shading) score well, while high-frequency surface noise (which ruins the
//! shading) scores badly, matching how reconstructions actually look.
//!
//! The crate is organized as a library first; the best starting points are
//! the runnable examples:
//!
//! ```text
//! cargo run --release --example generate_scenes
//! cargo run --release --example render_lights
//! cargo run --release --example compare_metrics
//! cargo run --release --example super_resolve
//! cargo run --release --example correlation_study
//! ```
//!
//! A thin `depthvis` binary wraps the same entry points for shell pipelines
//! (`gen`, `degrade`, `solve`, `metrics`, `bench`, `correlate`).
//!
//! Module map:
//!
//! * [`depth`] - depth map container, depth kinds, camera intrinsics.
//! * [`io`] - PFM / 16-bit PGM / CSV grid readers and writers, scene manifests.
//! * [`geometry`] - normals from depth, directional-light rendering, light rigs.
//! * [`resample`] - box/nearest downsampling, adjoints, bicubic upsampling.
//! * [`metrics`] - depth-space and rendering-space quality metrics.
//! * [`loss`] - differentiable losses (Laplacian L1 pyramid, visual MSE).
//! * [`superres`] - coarse-to-fine variational super-resolver.
//! * [`scenegen`] - analytic synthetic scenes for benchmarking.
//! * [`harness`] - benchmark sweeps, degradation pools, correlation reports.

pub mod depth;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod resample;
pub mod scenegen;
pub mod superres;

pub use depth::{CameraIntrinsics, DepthKind, DepthMap};
pub use error::{Error, Result};
pub use grid::Grid;
