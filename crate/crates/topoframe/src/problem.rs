//! Design-problem document shared by every pipeline stage.
//!
//! A problem is a single JSON file. All lengths are millimetres, forces
//! Newtons, stresses N/mm²; the file carries a `units` header that is
//! validated on load so a fixture in the wrong unit system fails loudly.
//!
//! Pixel indexing is row-major with the origin at the top-left corner,
//! `x` (columns) rightward and `y` (rows) downward — the image convention
//! used by the thinning stage. Coordinates are converted to Cartesian
//! (y upward, mm) when the frame graph is built.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// A pixel address in image convention (row 0 = top).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Pixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(row {}, col {})", self.row, self.col)
    }
}

/// Constrainable degrees of freedom at a support pixel.
///
/// `Rot` only becomes meaningful once the problem is reduced to a frame;
/// the continuum stage has no rotational unknowns and ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dof {
    Ux,
    Uy,
    Rot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Support {
    pub pixel: Pixel,
    pub dofs: Vec<Dof>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Load {
    pub pixel: Pixel,
    /// Horizontal force component (N), positive rightward.
    pub fx: f64,
    /// Vertical force component (N), positive upward (Cartesian).
    pub fy: f64,
}

/// How the density field is binarized before thinning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Fixed cut level in (0,1).
    Fixed { eta: f64 },
    /// Maximize inter-class variance over a 256-bin histogram.
    Otsu,
    /// Bisect the cut level until the set-pixel fraction matches the
    /// volume fraction. Expensive; opt-in only.
    Volume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTolerances {
    pub eps_size: f64,
    pub eps_layout: f64,
    pub eps_frame: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaBounds {
    /// Smallest admissible member area (mm²).
    pub min: f64,
    /// Largest admissible member area (mm²).
    pub max: f64,
}

/// Unit header; the only accepted value is mm/N/N per mm².
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub force: String,
    pub stress: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "mm".into(),
            force: "N".into(),
            stress: "N/mm^2".into(),
        }
    }
}

/// The full design-problem specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignProblem {
    #[serde(default)]
    pub units: Units,
    /// Grid element count in x (columns).
    pub nx: usize,
    /// Grid element count in y (rows).
    pub ny: usize,
    /// Element edge length (mm); elements are square.
    pub h: f64,
    /// Out-of-plane thickness (mm).
    pub thickness: f64,
    /// Young's modulus of solid material (N/mm²).
    pub youngs_solid: f64,
    /// Young's modulus assigned to void (N/mm²), prevents singularity.
    pub youngs_void: f64,
    /// Poisson's ratio.
    pub poisson: f64,
    /// Steel yield strength (N/mm²).
    pub yield_fy: f64,
    /// Prescribed volume fraction in (0,1].
    pub volume_fraction: f64,
    /// SIMP penalization power.
    pub penalization: f64,
    /// Density filter radius in element units.
    pub filter_radius: f64,
    pub supports: Vec<Support>,
    pub loads: Vec<Load>,
    /// Iteration cap for the topology stage.
    pub max_iter_top: usize,
    pub threshold_mode: ThresholdMode,
    /// Merge ratio ζ for short-edge contraction.
    pub merge_ratio: f64,
    /// Angle limit θ_c (degrees) for straightening near-collinear runs.
    pub angle_limit: f64,
    pub frame_tolerances: FrameTolerances,
    pub area_bounds: AreaBounds,
    /// Ultimate-limit-state load factor; SLS loads = loads / this factor.
    pub load_factor_uls: f64,
    /// Deflection limit = span / this divisor (180 cantilever, 200 beam,
    /// 360 brittle finishes).
    pub deflection_limit_divisor: f64,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("validation error: {0}")]
    Invalid(String),
}

impl DesignProblem {
    /// Defaults shared by the worked fixtures: p = 3, tolerances 1e-4,
    /// ζ = 0.1, θ_c = 10°, A ∈ [78.5, 31416] mm² (solid circles of radius
    /// 5–100 mm), ULS factor 1.35, 20 MMA iterations per stage.
    ///
    /// Geometry, material, loads and supports still have to be filled in;
    /// the returned fragment is not a valid problem by itself.
    pub fn default_parameters() -> DesignProblem {
        DesignProblem {
            units: Units::default(),
            nx: 0,
            ny: 0,
            h: 10.0,
            thickness: 10.0,
            youngs_solid: 2.1e5,
            youngs_void: 1e-9,
            poisson: 0.3,
            yield_fy: 355.0,
            volume_fraction: 0.5,
            penalization: 3.0,
            filter_radius: 1.2,
            supports: Vec::new(),
            loads: Vec::new(),
            max_iter_top: 200,
            threshold_mode: ThresholdMode::Fixed { eta: 0.5 },
            merge_ratio: 0.1,
            angle_limit: 10.0,
            frame_tolerances: FrameTolerances {
                eps_size: 1e-4,
                eps_layout: 1e-4,
                eps_frame: 1e-4,
            },
            area_bounds: AreaBounds {
                min: 78.5,
                max: 31416.0,
            },
            load_factor_uls: 1.35,
            deflection_limit_divisor: 180.0,
        }
    }

    /// Maximum MMA iterations per size or layout stage.
    pub const MMA_ITERS_PER_STAGE: usize = 20;

    pub fn load(path: impl AsRef<Path>) -> Result<DesignProblem, ProblemError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let problem: DesignProblem =
            serde_json::from_str(&text).map_err(|source| ProblemError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        problem.validate()?;
        Ok(problem)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProblemError> {
        let path = path.as_ref();
        let text = self.to_json();
        std::fs::write(path, text).map_err(|source| ProblemError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("problem serializes");
        text.push('\n');
        text
    }

    /// Check every structural invariant; violations are errors, never
    /// silently clamped values.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let fail = |msg: String| Err(ProblemError::Invalid(msg));
        if self.units.length != "mm" || self.units.force != "N" || self.units.stress != "N/mm^2" {
            return fail(format!(
                "units must be mm/N/N per mm^2, got {}/{}/{}",
                self.units.length, self.units.force, self.units.stress
            ));
        }
        if self.nx < 2 || self.ny < 2 {
            return fail(format!("grid must be at least 2x2, got {}x{}", self.nx, self.ny));
        }
        if !(self.h > 0.0) {
            return fail(format!("element size h must be positive, got {}", self.h));
        }
        if !(self.thickness > 0.0) {
            return fail(format!("thickness must be positive, got {}", self.thickness));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return fail(format!(
                "volume_fraction out of range (0,1]: {}",
                self.volume_fraction
            ));
        }
        if !(self.penalization >= 1.0) {
            return fail(format!("penalization must be >= 1, got {}", self.penalization));
        }
        if !(self.filter_radius > 0.0) {
            return fail(format!(
                "filter_radius must be positive, got {}",
                self.filter_radius
            ));
        }
        if !(self.merge_ratio >= 0.0 && self.merge_ratio < 0.5) {
            return fail(format!("merge_ratio out of range [0,0.5): {}", self.merge_ratio));
        }
        if !(self.angle_limit >= 0.0) {
            return fail(format!("angle_limit must be >= 0, got {}", self.angle_limit));
        }
        if !(self.area_bounds.min < self.area_bounds.max) {
            return fail(format!(
                "area_bounds must satisfy min < max, got [{}, {}]",
                self.area_bounds.min, self.area_bounds.max
            ));
        }
        if !(self.area_bounds.min > 0.0) {
            return fail(format!(
                "area_bounds.min must be positive, got {}",
                self.area_bounds.min
            ));
        }
        if !(self.youngs_void < self.youngs_solid) {
            return fail(format!(
                "youngs_void must be below youngs_solid, got {} >= {}",
                self.youngs_void, self.youngs_solid
            ));
        }
        if !(self.youngs_void > 0.0) {
            return fail(format!("youngs_void must be positive, got {}", self.youngs_void));
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return fail(format!("poisson out of range (0,0.5): {}", self.poisson));
        }
        if !(self.yield_fy > 0.0) {
            return fail(format!("yield_fy must be positive, got {}", self.yield_fy));
        }
        if !(self.load_factor_uls >= 1.0) {
            return fail(format!(
                "load_factor_uls must be >= 1, got {}",
                self.load_factor_uls
            ));
        }
        if !(self.deflection_limit_divisor > 0.0) {
            return fail(format!(
                "deflection_limit_divisor must be positive, got {}",
                self.deflection_limit_divisor
            ));
        }
        if let ThresholdMode::Fixed { eta } = self.threshold_mode {
            if !(eta > 0.0 && eta < 1.0) {
                return fail(format!("threshold eta out of range (0,1): {eta}"));
            }
        }
        let tol = self.frame_tolerances;
        if !(tol.eps_size > 0.0 && tol.eps_layout > 0.0 && tol.eps_frame > 0.0) {
            return fail("frame tolerances must be positive".into());
        }
        if self.supports.is_empty() {
            return fail("at least one support is required".into());
        }
        if self.loads.is_empty() {
            return fail("at least one load is required".into());
        }
        for support in &self.supports {
            if support.pixel.row >= self.ny || support.pixel.col >= self.nx {
                return fail(format!(
                    "support pixel {} outside {}x{} grid",
                    support.pixel, self.nx, self.ny
                ));
            }
            if support.dofs.is_empty() {
                return fail(format!("support {} constrains no DOFs", support.pixel));
            }
        }
        for load in &self.loads {
            if load.pixel.row >= self.ny || load.pixel.col >= self.nx {
                return fail(format!(
                    "load pixel {} outside {}x{} grid",
                    load.pixel, self.nx, self.ny
                ));
            }
            if load.fx == 0.0 && load.fy == 0.0 {
                return fail(format!("load at {} has zero magnitude", load.pixel));
            }
        }
        Ok(())
    }

    /// Design-domain volume V̄ (mm³).
    pub fn domain_volume(&self) -> f64 {
        self.nx as f64 * self.ny as f64 * self.h * self.h * self.thickness
    }

    /// Material budget V_f · V̄ (mm³) enforced by every optimization stage.
    pub fn volume_budget(&self) -> f64 {
        self.volume_fraction * self.domain_volume()
    }

    /// All tagged pixels (supports and loads) in image coordinates.
    pub fn tagged_pixels(&self) -> Vec<Pixel> {
        let mut tags: Vec<Pixel> = self
            .supports
            .iter()
            .map(|s| s.pixel)
            .chain(self.loads.iter().map(|l| l.pixel))
            .collect();
        tags.sort_by_key(|p| (p.row, p.col));
        tags.dedup();
        tags
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cantilever_like() -> DesignProblem {
        let mut p = DesignProblem::default_parameters();
        p.nx = 150;
        p.ny = 52;
        p.supports = vec![
            Support {
                pixel: Pixel::new(0, 0),
                dofs: vec![Dof::Ux, Dof::Uy, Dof::Rot],
            },
            Support {
                pixel: Pixel::new(51, 0),
                dofs: vec![Dof::Ux, Dof::Uy, Dof::Rot],
            },
        ];
        p.loads = vec![Load {
            pixel: Pixel::new(17, 149),
            fx: 0.0,
            fy: -1.0e5,
        }];
        p
    }

    #[test]
    fn defaults_match_worked_parameters() {
        let d = DesignProblem::default_parameters();
        assert_eq!(d.merge_ratio, 0.1);
        assert_eq!(d.area_bounds.min, 78.5);
        assert_eq!(d.area_bounds.max, 31416.0);
        assert_eq!(d.load_factor_uls, 1.35);
        assert_eq!(d.penalization, 3.0);
        assert_eq!(d.frame_tolerances.eps_size, 1e-4);
        assert_eq!(d.frame_tolerances.eps_frame, 1e-4);
        assert_eq!(DesignProblem::MMA_ITERS_PER_STAGE, 20);
    }

    #[test]
    fn round_trip_is_identity() {
        let p = cantilever_like();
        let text = p.to_json();
        let q: DesignProblem = serde_json::from_str(&text).unwrap();
        q.validate().unwrap();
        assert_eq!(p.to_json(), q.to_json());
    }

    #[test]
    fn volume_fraction_out_of_range_rejected() {
        let mut p = cantilever_like();
        p.volume_fraction = 1.2;
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("volume_fraction out of range"));
    }

    #[test]
    fn out_of_grid_pixels_rejected() {
        let mut p = cantilever_like();
        p.loads[0].pixel = Pixel::new(17, 150);
        assert!(p.validate().is_err());
        let mut p = cantilever_like();
        p.supports[0].pixel = Pixel::new(52, 0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn unit_header_is_enforced() {
        let mut p = cantilever_like();
        p.units.length = "cm".into();
        assert!(p.validate().is_err());
    }

    #[test]
    fn budget_matches_domain_arithmetic() {
        let p = cantilever_like();
        // 150 * 52 cells of 10mm * 10mm * 10mm thickness, half full.
        assert_eq!(p.domain_volume(), 7.8e6);
        assert_eq!(p.volume_budget(), 3.9e6);
    }

    #[test]
    fn load_problem_reports_parse_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        let err = DesignProblem::load(&path).unwrap_err();
        assert!(err.to_string().contains("broken.json"));
    }
}
