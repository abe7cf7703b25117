//! Profiling city areas by the human activities their points of interest
//! support, clustering the areas spectrally, and reading mobile-phone call
//! volumes through those clusters.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`activity`]: POIs are mapped to ten activity categories, counted on a
//!    square grid and weighted by TF-IDF.
//! 2. [`spectral`]: a cosine KNN graph over cell profiles is clustered via
//!    the normalized Laplacian, with `k` chosen by the eigengap.
//! 3. [`cdr`]: tower call counts are spread over cells through Voronoi
//!    coverage ([`geo`]), summed per cluster, and summarised as per-slot
//!    `μ ± α·σ` envelopes whose violations are reported.
//!
//! [`evaluation`] scores clusterings with silhouettes, and [`synth`]
//! generates cities and call records with planted structure.

pub mod activity;
pub mod cdr;
mod error;
pub mod evaluation;
pub mod geo;
pub mod kmeans;
pub mod report;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
