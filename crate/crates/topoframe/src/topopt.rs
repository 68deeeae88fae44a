//! SIMP topology optimization with density filtering and analytic
//! sensitivities.
//!
//! Densities live on the pixel grid (row-major). Each iteration filters the
//! design densities, solves the penalized equilibrium, forms the compliance
//! and volume sensitivities through the filter chain rule, and updates the
//! design with an optimality-criteria step whose Lagrange multiplier is
//! found by bisection on the filtered volume constraint.

use crate::fem2d::{self, FemError, GridMesh};
use crate::problem::DesignProblem;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Per-element relative densities (row-major, nx*ny).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub nx: usize,
    pub ny: usize,
    /// Design densities ρ.
    pub values: Vec<f64>,
    /// Filtered (physical) densities ρ̂.
    pub filtered: Vec<f64>,
}

impl DensityField {
    pub fn uniform(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            values: vec![value; nx * ny],
            filtered: vec![value; nx * ny],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Write ρ̂ as CSV, one grid row per line.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        for row in 0..self.ny {
            let line: Vec<String> = (0..self.nx)
                .map(|col| format!("{:.6}", self.filtered[row * self.nx + col]))
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Write ρ̂ as an ASCII PGM (white = void, black = solid).
    pub fn write_pgm(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "P2")?;
        writeln!(w, "{} {}", self.nx, self.ny)?;
        writeln!(w, "255")?;
        for row in 0..self.ny {
            let line: Vec<String> = (0..self.nx)
                .map(|col| {
                    let rho = self.filtered[row * self.nx + col].clamp(0.0, 1.0);
                    format!("{}", 255 - (rho * 255.0).round() as u32)
                })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Linear hat-kernel density filter, weights H(i,j) = R - dist(i,j) for
/// dist < R, with center-to-center distances in element units.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    pub radius: f64,
    offsets: Vec<usize>,
    neighbors: Vec<(u32, f64)>,
    /// Row sums Σ_k H(i,k) v_k.
    row_sums: Vec<f64>,
    /// Element volume (uniform grid).
    pub element_volume: f64,
    nx: usize,
    ny: usize,
}

/// Hat-kernel weight: R - dist when dist < R, else 0.
pub fn filter_weight(dist: f64, radius: f64) -> f64 {
    if dist < radius {
        radius - dist
    } else {
        0.0
    }
}

/// Build the filter for an nx x ny grid of square elements with volume
/// h²·t each.
pub fn build_filter(nx: usize, ny: usize, radius: f64, element_volume: f64) -> DensityFilter {
    assert!(radius > 0.0, "filter radius must be positive");
    let reach = radius.ceil() as isize;
    let mut offsets = Vec::with_capacity(nx * ny + 1);
    let mut neighbors = Vec::new();
    let mut row_sums = Vec::with_capacity(nx * ny);
    offsets.push(0);
    for row in 0..ny as isize {
        for col in 0..nx as isize {
            let mut sum = 0.0;
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let r = row + dr;
                    let c = col + dc;
                    if r < 0 || c < 0 || r >= ny as isize || c >= nx as isize {
                        continue;
                    }
                    let dist = ((dr * dr + dc * dc) as f64).sqrt();
                    let w = filter_weight(dist, radius);
                    if w > 0.0 {
                        let j = (r as usize) * nx + c as usize;
                        neighbors.push((j as u32, w));
                        sum += w * element_volume;
                    }
                }
            }
            row_sums.push(sum);
            offsets.push(neighbors.len());
        }
    }
    DensityFilter {
        radius,
        offsets,
        neighbors,
        row_sums,
        element_volume,
        nx,
        ny,
    }
}

impl DensityFilter {
    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// ρ̂_i = Σ_j H(i,j) v_j ρ_j / Σ_j H(i,j) v_j.
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        assert_eq!(rho.len(), self.element_count());
        let v = self.element_volume;
        (0..rho.len())
            .map(|i| {
                let s: f64 = self.row(i).iter().map(|&(j, w)| w * v * rho[j as usize]).sum();
                s / self.row_sums[i]
            })
            .collect()
    }

    /// Chain rule through the filter: out_i = Σ_j inner_j H(i,j) v_i / Σ_k H(j,k) v_k.
    pub fn back_propagate(&self, inner: &[f64]) -> Vec<f64> {
        assert_eq!(inner.len(), self.element_count());
        let v = self.element_volume;
        let mut out = vec![0.0; inner.len()];
        for j in 0..inner.len() {
            let scale = inner[j] / self.row_sums[j];
            for &(i, w) in self.row(j) {
                out[i as usize] += scale * w * v;
            }
        }
        out
    }

    /// Total material volume of the filtered field, Σ ρ̂_j v_j.
    pub fn filtered_volume(&self, rho: &[f64]) -> f64 {
        self.apply(rho)
            .iter()
            .map(|r| r * self.element_volume)
            .sum()
    }
}

/// SIMP interpolation E(ρ) = E_min + ρ^p (Ē - E_min).
pub fn penalized_modulus(rho: f64, p: f64, e_solid: f64, e_min: f64) -> f64 {
    e_min + rho.powf(p) * (e_solid - e_min)
}

/// ∂C/∂ρ (through the filter); every component is non-positive.
///
/// `energies` are the unit-modulus element energies u_jᵀ K̄_j u_j from the
/// displacement state solved at the filtered, penalized densities.
pub fn compliance_sensitivity(
    filtered: &[f64],
    energies: &[f64],
    filter: &DensityFilter,
    p: f64,
    e_solid: f64,
    e_min: f64,
) -> Vec<f64> {
    let inner: Vec<f64> = filtered
        .iter()
        .zip(energies)
        .map(|(&rho, &energy)| -p * rho.powf(p - 1.0) * (e_solid - e_min) * energy)
        .collect();
    filter.back_propagate(&inner)
}

/// ∂V/∂ρ; strictly positive, and the components sum to the domain volume.
pub fn volume_sensitivity(filter: &DensityFilter) -> Vec<f64> {
    let inner = vec![filter.element_volume; filter.element_count()];
    filter.back_propagate(&inner)
}

/// Per-iteration history of the topology stage.
#[derive(Debug, Clone, Default)]
pub struct TopOptTrace {
    pub compliance: Vec<f64>,
    pub volume_fraction: Vec<f64>,
    pub max_change: Vec<f64>,
}

impl TopOptTrace {
    pub fn iterations(&self) -> usize {
        self.compliance.len()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,compliance,volume_fraction,max_change")?;
        for i in 0..self.iterations() {
            writeln!(
                w,
                "{},{:.9e},{:.9},{:.9}",
                i + 1,
                self.compliance[i],
                self.volume_fraction[i],
                self.max_change[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TopOptError {
    #[error("FEM solve failed at topology iteration {iteration}: {source}")]
    Solve {
        iteration: usize,
        source: FemError,
    },
}

const OC_MOVE_LIMIT: f64 = 0.2;
const OC_DAMPING: f64 = 0.5;
const CONVERGENCE_CHANGE: f64 = 0.01;

/// Optimality-criteria update. The multiplier is bisected until the
/// filtered volume meets the budget; the filtered volume is linear in the
/// design densities with coefficients ∂V/∂ρ, so each trial is a dot product.
fn oc_update(rho: &[f64], dc: &[f64], dv: &[f64], target_volume: f64) -> Vec<f64> {
    let mut l1 = 0.0;
    let mut l2 = 1e9;
    let mut xnew = vec![0.0; rho.len()];
    let vol_at = |x: &[f64]| -> f64 { x.iter().zip(dv).map(|(a, b)| a * b).sum() };
    loop {
        let lmid = 0.5 * (l1 + l2);
        for i in 0..rho.len() {
            let ratio = if dc[i] <= 0.0 {
                -dc[i] / (lmid * dv[i])
            } else {
                0.0
            };
            let candidate = rho[i] * ratio.powf(OC_DAMPING);
            xnew[i] = candidate
                .min(rho[i] + OC_MOVE_LIMIT)
                .min(1.0)
                .max(rho[i] - OC_MOVE_LIMIT)
                .max(0.0);
        }
        if vol_at(&xnew) > target_volume {
            l1 = lmid;
        } else {
            l2 = lmid;
        }
        if (l2 - l1) / (l1 + l2) < 1e-12 {
            break;
        }
    }
    xnew
}

/// Run the SIMP loop. Stops when the max density change drops below 0.01
/// or the iteration cap is reached.
pub fn run_topopt(problem: &DesignProblem) -> Result<(DensityField, TopOptTrace), TopOptError> {
    let mesh = GridMesh::from_problem(problem);
    let element_volume = problem.h * problem.h * problem.thickness;
    let filter = build_filter(problem.nx, problem.ny, problem.filter_radius, element_volume);
    let dv = volume_sensitivity(&filter);
    let target_volume = problem.volume_budget();
    let domain_volume = problem.domain_volume();
    let p = problem.penalization;
    let (e_solid, e_min) = (problem.youngs_solid, problem.youngs_void);

    let mut rho = vec![problem.volume_fraction; problem.nx * problem.ny];
    let mut trace = TopOptTrace::default();
    let mut filtered = filter.apply(&rho);

    for iteration in 1..=problem.max_iter_top {
        let moduli: Vec<f64> = filtered
            .iter()
            .map(|&r| penalized_modulus(r, p, e_solid, e_min))
            .collect();
        let u = fem2d::assemble_and_solve(&mesh, &moduli)
            .map_err(|source| TopOptError::Solve { iteration, source })?;
        let c = fem2d::compliance(&u, &mesh.loads);
        let energies = fem2d::element_energies(&mesh, &u);
        let dc = compliance_sensitivity(&filtered, &energies, &filter, p, e_solid, e_min);

        let change;
        if problem.volume_fraction >= 1.0 {
            // Fully solid budget: ρ = 1 is feasible and optimal.
            change = rho.iter().map(|r| (1.0 - r).abs()).fold(0.0, f64::max);
            rho.iter_mut().for_each(|r| *r = 1.0);
        } else {
            let xnew = oc_update(&rho, &dc, &dv, target_volume);
            change = xnew
                .iter()
                .zip(&rho)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            rho = xnew;
        }
        filtered = filter.apply(&rho);
        let volume: f64 = filtered.iter().map(|r| r * element_volume).sum();
        trace.compliance.push(c);
        trace.volume_fraction.push(volume / domain_volume);
        trace.max_change.push(change);

        if change < CONVERGENCE_CHANGE {
            break;
        }
    }

    let field = DensityField {
        nx: problem.nx,
        ny: problem.ny,
        values: rho,
        filtered,
    };
    Ok((field, trace))
}

/// Write the density CSV to a file path.
pub fn save_density_csv(field: &DensityField, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    field.write_csv(&mut file)
}

/// Write the density PGM to a file path.
pub fn save_density_pgm(field: &DensityField, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    field.write_pgm(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Dof, Load, Pixel, Support};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_function_matches_hat_kernel() {
        assert_relative_eq!(filter_weight(0.6, 1.2), 0.6, max_relative = 1e-15);
        assert_eq!(filter_weight(1.2, 1.2), 0.0);
        assert_eq!(filter_weight(2.0, 1.2), 0.0);
        assert_eq!(filter_weight(0.0, 1.2), 1.2);
    }

    #[test]
    fn small_radius_filter_is_identity() {
        let filter = build_filter(5, 4, 0.5, 1.0);
        for i in 0..filter.element_count() {
            assert_eq!(filter.row(i).len(), 1);
            assert_eq!(filter.row(i)[0].0 as usize, i);
        }
        let rho: Vec<f64> = (0..20).map(|i| (i as f64) / 20.0).collect();
        let out = filter.apply(&rho);
        for (a, b) in rho.iter().zip(&out) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn filter_preserves_uniform_fields() {
        let filter = build_filter(9, 7, 2.4, 1000.0);
        let rho = vec![0.37; 63];
        let out = filter.apply(&rho);
        for v in out {
            assert_relative_eq!(v, 0.37, max_relative = 1e-13);
        }
    }

    #[test]
    fn filter_rows_are_convex_combinations() {
        let filter = build_filter(8, 6, 2.2, 500.0);
        for i in 0..filter.element_count() {
            let sum: f64 = filter
                .row(i)
                .iter()
                .map(|&(_, w)| w * filter.element_volume)
                .sum();
            assert_relative_eq!(sum, filter.row_sums[i], max_relative = 1e-13);
            assert!(filter.row(i).iter().all(|&(_, w)| w > 0.0));
        }
    }

    #[test]
    fn penalization_endpoints_and_midpoint() {
        assert_relative_eq!(penalized_modulus(1.0, 3.0, 2.1e5, 1e-9), 2.1e5);
        assert_relative_eq!(penalized_modulus(0.0, 3.0, 2.1e5, 1e-9), 1e-9);
        // 0.5^3 * 2.1e5 = 2.625e4 for E_min ~ 0.
        assert_relative_eq!(
            penalized_modulus(0.5, 3.0, 2.1e5, 1e-9),
            2.625e4,
            max_relative = 1e-9
        );
    }

    fn small_problem(nx: usize, ny: usize, radius: f64) -> DesignProblem {
        let mut p = DesignProblem::default_parameters();
        p.nx = nx;
        p.ny = ny;
        p.filter_radius = radius;
        p.supports = (0..ny)
            .map(|row| Support {
                pixel: Pixel::new(row, 0),
                dofs: vec![Dof::Ux, Dof::Uy],
            })
            .collect();
        p.loads = vec![Load {
            pixel: Pixel::new(ny - 1, nx - 1),
            fx: 0.0,
            fy: -1.0e4,
        }];
        p
    }

    fn compliance_of(problem: &DesignProblem, filter: &DensityFilter, rho: &[f64]) -> f64 {
        let mesh = GridMesh::from_problem(problem);
        let filtered = filter.apply(rho);
        let moduli: Vec<f64> = filtered
            .iter()
            .map(|&r| {
                penalized_modulus(r, problem.penalization, problem.youngs_solid, problem.youngs_void)
            })
            .collect();
        let u = fem2d::assemble_and_solve(&mesh, &moduli).unwrap();
        fem2d::compliance(&u, &mesh.loads)
    }

    #[test]
    fn compliance_sensitivity_matches_finite_differences() {
        let problem = small_problem(6, 4, 1.5);
        let element_volume = problem.h * problem.h * problem.thickness;
        let filter = build_filter(6, 4, 1.5, element_volume);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rho: Vec<f64> = (0..24).map(|_| rng.gen_range(0.25..0.85)).collect();

        let mesh = GridMesh::from_problem(&problem);
        let filtered = filter.apply(&rho);
        let moduli: Vec<f64> = filtered
            .iter()
            .map(|&r| {
                penalized_modulus(r, problem.penalization, problem.youngs_solid, problem.youngs_void)
            })
            .collect();
        let u = fem2d::assemble_and_solve(&mesh, &moduli).unwrap();
        let energies = fem2d::element_energies(&mesh, &u);
        let dc = compliance_sensitivity(
            &filtered,
            &energies,
            &filter,
            problem.penalization,
            problem.youngs_solid,
            problem.youngs_void,
        );
        assert!(dc.iter().all(|&v| v <= 0.0));

        let step = 1e-6;
        for i in 0..rho.len() {
            let mut plus = rho.clone();
            plus[i] += step;
            let mut minus = rho.clone();
            minus[i] -= step;
            let fd = (compliance_of(&problem, &filter, &plus)
                - compliance_of(&problem, &filter, &minus))
                / (2.0 * step);
            let denom = fd.abs().max(dc[i].abs()).max(1e-12);
            assert!(
                (fd - dc[i]).abs() / denom < 1e-4,
                "element {i}: fd {fd:e} vs analytic {:e}",
                dc[i]
            );
        }
    }

    #[test]
    fn zero_load_gives_zero_sensitivity() {
        let problem = small_problem(5, 3, 1.5);
        let element_volume = problem.h * problem.h * problem.thickness;
        let filter = build_filter(5, 3, 1.5, element_volume);
        let mut mesh = GridMesh::from_problem(&problem);
        mesh.loads.iter_mut().for_each(|v| *v = 0.0);
        let rho = vec![0.5; 15];
        let filtered = filter.apply(&rho);
        let moduli: Vec<f64> = filtered
            .iter()
            .map(|&r| {
                penalized_modulus(r, problem.penalization, problem.youngs_solid, problem.youngs_void)
            })
            .collect();
        let u = fem2d::assemble_and_solve(&mesh, &moduli).unwrap();
        let energies = fem2d::element_energies(&mesh, &u);
        let dc = compliance_sensitivity(
            &filtered,
            &energies,
            &filter,
            problem.penalization,
            problem.youngs_solid,
            problem.youngs_void,
        );
        assert!(dc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_filter_sensitivity_is_unfiltered_term() {
        let problem = small_problem(5, 3, 0.5);
        let element_volume = problem.h * problem.h * problem.thickness;
        let filter = build_filter(5, 3, 0.5, element_volume);
        let rho = vec![0.5; 15];
        let mesh = GridMesh::from_problem(&problem);
        let filtered = filter.apply(&rho);
        let moduli: Vec<f64> = filtered
            .iter()
            .map(|&r| {
                penalized_modulus(r, problem.penalization, problem.youngs_solid, problem.youngs_void)
            })
            .collect();
        let u = fem2d::assemble_and_solve(&mesh, &moduli).unwrap();
        let energies = fem2d::element_energies(&mesh, &u);
        let dc = compliance_sensitivity(
            &filtered,
            &energies,
            &filter,
            problem.penalization,
            problem.youngs_solid,
            problem.youngs_void,
        );
        for (i, &v) in dc.iter().enumerate() {
            let expected = -problem.penalization
                * filtered[i].powf(problem.penalization - 1.0)
                * (problem.youngs_solid - problem.youngs_void)
                * energies[i];
            assert_relative_eq!(v, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn volume_sensitivity_identity_filter_unit_volumes() {
        let filter = build_filter(4, 3, 0.5, 1.0);
        let dv = volume_sensitivity(&filter);
        for v in &dv {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn volume_sensitivity_matches_finite_differences_and_partitions() {
        let filter = build_filter(7, 5, 2.1, 250.0);
        let dv = volume_sensitivity(&filter);
        assert!(dv.iter().all(|&v| v > 0.0));
        let total: f64 = dv.iter().sum();
        assert_relative_eq!(total, 35.0 * 250.0, max_relative = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho: Vec<f64> = (0..35).map(|_| rng.gen_range(0.1..0.9)).collect();
        let step = 1e-6;
        for i in (0..35).step_by(3) {
            let mut plus = rho.clone();
            plus[i] += step;
            let mut minus = rho.clone();
            minus[i] -= step;
            let fd =
                (filter.filtered_volume(&plus) - filter.filtered_volume(&minus)) / (2.0 * step);
            assert_relative_eq!(fd, dv[i], max_relative = 1e-8);
        }
    }

    #[test]
    fn full_volume_fraction_converges_immediately() {
        let mut problem = small_problem(8, 4, 1.2);
        problem.volume_fraction = 1.0;
        let (field, trace) = run_topopt(&problem).unwrap();
        assert!(field.filtered.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let filter = build_filter(8, 4, 1.2, problem.h * problem.h * problem.thickness);
        let solid = compliance_of(&problem, &filter, &vec![1.0; 32]);
        let last = *trace.compliance.last().unwrap();
        assert_relative_eq!(last, solid, max_relative = 1e-10);
    }

    #[test]
    fn small_cantilever_respects_volume_and_descends() {
        let mut problem = small_problem(20, 10, 1.4);
        problem.max_iter_top = 60;
        let (field, trace) = run_topopt(&problem).unwrap();
        let vf = trace.volume_fraction.last().unwrap();
        assert!(
            (vf - problem.volume_fraction).abs() < 1e-3,
            "volume fraction {vf}"
        );
        assert!(field
            .values
            .iter()
            .all(|&r| (-1e-12..=1.0 + 1e-12).contains(&r)));
        let filter = build_filter(20, 10, 1.4, problem.h * problem.h * problem.thickness);
        let start = compliance_of(&problem, &filter, &vec![0.5; 200]);
        let last = *trace.compliance.last().unwrap();
        assert!(last < start, "no descent: {last} vs {start}");
        assert_eq!(trace.compliance.len(), trace.volume_fraction.len());
        assert_eq!(trace.compliance.len(), trace.max_change.len());
        assert!(trace.iterations() <= problem.max_iter_top);
    }

    #[test]
    fn run_is_deterministic() {
        let mut problem = small_problem(12, 6, 1.3);
        problem.max_iter_top = 25;
        let (a, _) = run_topopt(&problem).unwrap();
        let (b, _) = run_topopt(&problem).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.filtered, b.filtered);
    }
}
