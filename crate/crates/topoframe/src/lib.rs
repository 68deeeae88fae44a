//! topoframe: from a 2D continuum design problem to a manufacturable steel frame.
//!
//! The pipeline in order:
//!
//! 1. [`topopt`] — SIMP topology optimization of a structured grid ([`fem2d`]
//!    supplies the plane-stress analysis).
//! 2. [`raster`] — threshold the density field to a tagged binary image and
//!    thin it to a one-pixel-wide skeleton.
//! 3. [`graph`] — extract a compact frame graph from the skeleton; prune,
//!    contract short edges, straighten near-collinear runs.
//! 4. [`frame_opt`] — sequential size and layout optimization of the frame
//!    ([`frame`] is the rigid-frame solver, [`mma`] the optimizer).
//! 5. [`eurocode`] — assign catalog sections ([`catalog`]) and verify every
//!    member against EN 1993-1-1 strength/stability/deflection checks.
//! 6. [`cadgen`] — emit the CSG model and tessellated mesh (binary STL / OBJ).
//!
//! [`pipeline`] chains the stages and writes one artifact set per stage; the
//! `topoframe` binary and the runnable examples are thin wrappers over it.

pub mod cadgen;
pub mod catalog;
pub mod eurocode;
pub mod fem2d;
pub mod frame;
pub mod frame_opt;
pub mod graph;
pub mod mma;
pub mod pipeline;
pub mod problem;
pub mod raster;
pub mod svg;
pub mod topopt;





pub use problem::{DesignProblem, Dof, ThresholdMode};


