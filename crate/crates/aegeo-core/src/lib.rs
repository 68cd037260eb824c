//! Numerical toolkit for asymptotically Euclidean 3-manifolds.
//!
//! Implements curvature and Cotton-tensor evaluation, weighted-decay
//! analysis, Kelvin-transform conformal compactification and
//! decompactification, conformal-Laplacian normalization, harmonic and
//! normal coordinates, first-order Schwarzschildian expansion extraction,
//! and ADM energy / center-of-mass evaluation with convergence diagnostics.

pub mod asymptotics;
pub mod catalog;
pub mod charges;
pub mod chart;
pub mod curvature;
pub mod elliptic;
pub mod error;
pub mod field;
pub mod jet;
pub mod linalg;
pub mod map;
pub mod pipeline;

pub use catalog::{make_catalog_metric, MetricFamily};
pub use chart::{Chart, ChartDomain, ChartKind, SphereRule};
pub use curvature::{
    cotton, curvature_bundle, christoffel, conformal_scalar, schur_residual, CurvatureBundle,
    DerivativeSource,
};
pub use error::{AeError, Result};
pub use field::{evaluate_metric, MetricClosure, MetricField, ScalarClosure, TensorField};
pub use jet::Jet3;
pub use map::{pullback_metric, CoordinateMap, KelvinInversion, MapClassification};
pub use charges::{adm_com, adm_energy, com_convergence_diag, AdmCharges, ComDiagnostics};
pub use pipeline::{
    compactify, decompactify, fit_conformal_factor, mass_constant, run_main_expansion,
    CompactificationResult, ConformalExpansion, ExpansionReport, MassConstant, PipelineConfig,
};
