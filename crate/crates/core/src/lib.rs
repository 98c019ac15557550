//! Package type selection: rank-monotone damage probabilities, calibration,
//! and the shipment-cost versus damage-cost assignment problem.
//!
//! Package types are indexed from 0 (least robust) in this crate; file
//! formats use 1-based indices.

pub mod calibration;
pub mod catalog;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod lab;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod search;
pub mod solver;
pub mod synth;

pub use catalog::{
    build_cost_matrices, build_mask, compute_delta_bound, CostMatrices, MaskRuleSet, PackageCatalog, ProductFlags,
    ProductRecord, ShipCost,
};
pub use error::{Error, Result};
pub use model::{MonotoneLogisticModel, ShipmentRecord, TrainConfig};
pub use search::{determine_lambda, Budget, LambdaSearch, LambdaSearchConfig};
pub use solver::{evaluate, recommend_new_product, solve_tikhonov, solve_tikhonov_par, Assignment, SolveOutcome};
