//! Filling-mass estimation at desk scale.
//!
//! The library estimates the mass of a container's content from three
//! independently solved sub-tasks:
//!
//! 1. **Filling type** (empty / pasta / rice / water) — audio classifiers:
//!    a random forest on "classical" 136-d long-term features and a GRU on
//!    precomputed embedding sequences.
//! 2. **Filling level** (0 / 50 / 90 %) — the two audio models plus a GRU
//!    on per-camera video embedding sequences whose logits are summed.
//! 3. **Container capacity** (mL) — mask centroids from two calibrated
//!    views, midpoint triangulation, iterative cylindrical silhouette
//!    fitting, and `C = r̄²·h·π`.
//!
//! Per-model probabilities are averaged (late fusion) and the three
//! sub-task outputs are composed into grams via per-type densities.
//! The [`synth`] module generates labeled synthetic datasets with exact
//! ground truth for every stage, which the test suites use as oracles.

pub mod audio;
pub mod forest;
pub mod fusion;
pub mod geometry;
pub mod gru;
pub mod media;
pub mod pipeline;
pub mod synth;
