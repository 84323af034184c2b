//! Isogeometric Kirchhoff-Love shell solver built on two H1-conforming mixed
//! formulations: the bending moment is decomposed as M = p I + symCurl phi so
//! every unknown lives in H1, and an optional Hybrid-Stress membrane force
//! field N removes membrane locking.
//!
//! Pipeline: exact NURBS benchmark geometry -> B-spline field spaces with C0
//! multi-patch gluing -> saddle-point assembly with boundary coupling
//! multipliers -> sparse direct solve -> field evaluation and reports.

pub mod assembly;
pub mod bench;
pub mod discretization;
pub mod error;
pub mod geometry;
pub mod linsolve;
pub mod postprocess;
pub mod shell_model;
pub mod splines;

pub use error::{KlError, Result};
