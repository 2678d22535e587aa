//! Turn labeled voxel volumes ("grain scans") into anisotropic power diagram
//! representations.
//!
//! A grain scan assigns one of `k` labels to every voxel of a box volume. An
//! anisotropic power diagram (APD) describes the same partition with three
//! parameters per cell: a symmetric positive definite shape matrix `A_i`, a
//! site `s_i`, and a size offset `gamma_i`; a point belongs to the cell whose
//! value `h_i(x) = (x - s_i)^T A_i (x - s_i) + gamma_i` is smallest. This
//! crate provides two fitting routes plus the machinery around them:
//!
//! - **Balanced transport** ([`transport`]): with shapes and sites fixed
//!   (typically inverse covariances and centroids measured from the scan),
//!   the sizes are the dual variables of a weight-constrained assignment LP.
//!   Sparse *image supports* ([`support`]) — pencil coresets, resolution
//!   coresets, and interior removal — shrink the LP by orders of magnitude.
//! - **Direct separation** ([`dilpm`]): all parameters of all cells are
//!   decision variables of one LP over lifted (quadric) coordinates, with
//!   per-point slack for misclassified volume near the grain boundaries.
//!
//! [`metrics`] quantifies how well a fitted diagram reproduces the input
//! scan; [`volume`] and [`diagram`] define the on-disk formats; [`synth`]
//! generates ground-truth instances for end-to-end verification.
//!
//! The `book/` directory of the repository walks through the concepts with
//! runnable examples; its code blocks compile and run as doc-tests of this
//! crate.

pub mod diagram;
pub mod dilpm;
pub mod linalg;
pub mod metrics;
pub mod simplex;
pub mod stats;
pub mod support;
pub mod synth;
pub mod transport;
pub mod volume;

pub use diagram::{ClassificationResult, DiagramParams};
pub use metrics::FitReport;
pub use support::ImageSupport;
pub use transport::{Clustering, DualSolution, TargetWeights};
pub use stats::{BoundaryDistanceField, GrainStats, NeighborGraph};
pub use volume::GrainScan;

// Every code block in the guide compiles and runs under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(grain_scans, "../../../book/src/grain-scans.md");
    chapter!(scan_statistics, "../../../book/src/scan-statistics.md");
    chapter!(power_diagrams, "../../../book/src/power-diagrams.md");
    chapter!(balanced_transport, "../../../book/src/balanced-transport.md");
    chapter!(sparse_supports, "../../../book/src/sparse-supports.md");
    chapter!(direct_model, "../../../book/src/direct-model.md");
    chapter!(fit_metrics, "../../../book/src/fit-metrics.md");
    chapter!(command_line, "../../../book/src/command-line.md");
}
