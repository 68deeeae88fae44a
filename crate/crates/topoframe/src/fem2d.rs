//! Plane-stress finite-element analysis on the structured grid.
//!
//! Four-node bilinear quadrilaterals on square cells, 2x2 Gauss quadrature.
//! The global system is symmetric positive definite after boundary-condition
//! elimination and is solved by a banded LDLᵀ factorization; node numbering
//! runs down each column so the half-bandwidth stays O(ny).

use crate::problem::{DesignProblem, Dof, Pixel};
use thiserror::Error;

/// 8x8 stiffness of one square element for unit Young's modulus (N/mm per
/// unit E). Element DOF order: (ux,uy) at bottom-left, bottom-right,
/// top-right, top-left corners, counterclockwise in Cartesian axes.
#[derive(Debug, Clone)]
pub struct ElementStiffness(pub [[f64; 8]; 8]);

#[derive(Debug, Error)]
pub enum FemError {
    #[error("singular system: insufficient supports (non-positive pivot at reduced dof {dof})")]
    Singular { dof: usize },
    #[error("solver did not meet the residual contract: relative residual {residual:e}")]
    Residual { residual: f64 },
    #[error("density field has {got} values, expected {expected}")]
    FieldSize { got: usize, expected: usize },
}

/// Unit-modulus element stiffness, plane stress, thickness `t`.
///
/// Exact for constant-strain states (patch test); for a square element the
/// entries depend on ν and t only.
pub fn element_stiffness(nu: f64, h: f64, t: f64) -> ElementStiffness {
    assert!(nu > 0.0 && nu < 0.5, "poisson ratio out of range");
    assert!(h > 0.0 && t > 0.0);
    // Plane-stress constitutive matrix for E = 1.
    let c = 1.0 / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];

    let mut k = [[0.0; 8]; 8];
    let gp = 1.0 / 3.0_f64.sqrt();
    for &xi in &[-gp, gp] {
        for &eta in &[-gp, gp] {
            // Shape-function derivatives wrt natural coordinates; corner
            // order LL, LR, UR, UL.
            let dn_dxi = [
                -(1.0 - eta) / 4.0,
                (1.0 - eta) / 4.0,
                (1.0 + eta) / 4.0,
                -(1.0 + eta) / 4.0,
            ];
            let dn_deta = [
                -(1.0 - xi) / 4.0,
                -(1.0 + xi) / 4.0,
                (1.0 + xi) / 4.0,
                (1.0 - xi) / 4.0,
            ];
            // Square element: x = h(1+xi)/2, so d/dx = (2/h) d/dxi.
            let scale = 2.0 / h;
            let det_j = h * h / 4.0;
            let mut b = [[0.0; 8]; 3];
            for n in 0..4 {
                let dnx = dn_dxi[n] * scale;
                let dny = dn_deta[n] * scale;
                b[0][2 * n] = dnx;
                b[1][2 * n + 1] = dny;
                b[2][2 * n] = dny;
                b[2][2 * n + 1] = dnx;
            }
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for bb in 0..3 {
                            s += b[a][i] * d[a][bb] * b[bb][j];
                        }
                    }
                    k[i][j] += s * det_j * t;
                }
            }
        }
    }
    ElementStiffness(k)
}

/// Structured grid mesh with boundary conditions resolved to node DOFs.
#[derive(Debug, Clone)]
pub struct GridMesh {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub thickness: f64,
    pub poisson: f64,
    /// Global load vector, 2 DOFs per node (ux, uy with y upward).
    pub loads: Vec<f64>,
    /// Sorted fixed DOF indices.
    pub fixed_dofs: Vec<usize>,
    pub unit_stiffness: ElementStiffness,
}

impl GridMesh {
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn dof_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Node id for grid node (ix, iy); iy counts rows from the top edge.
    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nx && iy <= self.ny);
        ix * (self.ny + 1) + iy
    }

    /// The four corner node ids of element (ex, ey) in element DOF order
    /// (bottom-left, bottom-right, top-right, top-left in Cartesian axes).
    pub fn element_nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        [
            self.node_id(ex, ey + 1),
            self.node_id(ex + 1, ey + 1),
            self.node_id(ex + 1, ey),
            self.node_id(ex, ey),
        ]
    }

    /// Cartesian coordinates (mm, y upward) of node (ix, iy).
    pub fn node_xy(&self, ix: usize, iy: usize) -> (f64, f64) {
        (ix as f64 * self.h, (self.ny - iy) as f64 * self.h)
    }

    fn boundary_contacts(&self, ix: usize, iy: usize) -> usize {
        (ix == 0) as usize
            + (ix == self.nx) as usize
            + (iy == 0) as usize
            + (iy == self.ny) as usize
    }

    /// Corner nodes of a support pixel that receive its constraints: the
    /// corners on the domain boundary, or all four for an interior pixel.
    pub fn support_nodes(&self, pixel: Pixel) -> Vec<(usize, usize)> {
        let corners = [
            (pixel.col, pixel.row),
            (pixel.col + 1, pixel.row),
            (pixel.col, pixel.row + 1),
            (pixel.col + 1, pixel.row + 1),
        ];
        let on_boundary: Vec<(usize, usize)> = corners
            .iter()
            .copied()
            .filter(|&(ix, iy)| self.boundary_contacts(ix, iy) > 0)
            .collect();
        if on_boundary.is_empty() {
            corners.to_vec()
        } else {
            on_boundary
        }
    }

    /// The single corner node a load pixel acts on: the corner with the most
    /// domain-boundary contacts, ties broken toward larger row then larger
    /// column. For the worked fixtures this lands the load exactly on the
    /// stated boundary position.
    pub fn load_node(&self, pixel: Pixel) -> (usize, usize) {
        let corners = [
            (pixel.col, pixel.row),
            (pixel.col + 1, pixel.row),
            (pixel.col, pixel.row + 1),
            (pixel.col + 1, pixel.row + 1),
        ];
        *corners
            .iter()
            .max_by_key(|&&(ix, iy)| (self.boundary_contacts(ix, iy), iy, ix))
            .expect("four corners")
    }

    /// Build the mesh for a validated problem: resolves support and load
    /// pixels to node DOFs and precomputes the unit element stiffness.
    pub fn from_problem(problem: &DesignProblem) -> GridMesh {
        let mut mesh = GridMesh {
            nx: problem.nx,
            ny: problem.ny,
            h: problem.h,
            thickness: problem.thickness,
            poisson: problem.poisson,
            loads: vec![0.0; 2 * (problem.nx + 1) * (problem.ny + 1)],
            fixed_dofs: Vec::new(),
            unit_stiffness: element_stiffness(problem.poisson, problem.h, problem.thickness),
        };
        let mut fixed = Vec::new();
        for support in &problem.supports {
            for (ix, iy) in mesh.support_nodes(support.pixel) {
                let node = mesh.node_id(ix, iy);
                for dof in &support.dofs {
                    match dof {
                        Dof::Ux => fixed.push(2 * node),
                        Dof::Uy => fixed.push(2 * node + 1),
                        Dof::Rot => {} // no rotational DOF in the continuum
                    }
                }
            }
        }
        fixed.sort_unstable();
        fixed.dedup();
        mesh.fixed_dofs = fixed;
        for load in &problem.loads {
            let (ix, iy) = mesh.load_node(load.pixel);
            let node = mesh.node_id(ix, iy);
            mesh.loads[2 * node] += load.fx;
            mesh.loads[2 * node + 1] += load.fy;
        }
        mesh
    }
}

/// Symmetric banded matrix in lower-band storage: `band[i][d]` holds
/// A[i+d][i] for d in 0..=half_bandwidth.
struct BandedMatrix {
    n: usize,
    hb: usize,
    band: Vec<f64>,
}

impl BandedMatrix {
    fn zeros(n: usize, hb: usize) -> Self {
        Self {
            n,
            hb,
            band: vec![0.0; n * (hb + 1)],
        }
    }

    #[inline]
    fn add(&mut self, row: usize, col: usize, value: f64) {
        // Symmetric: store lower triangle only.
        let (hi, lo) = if row >= col { (row, col) } else { (col, row) };
        debug_assert!(hi - lo <= self.hb);
        self.band[lo * (self.hb + 1) + (hi - lo)] += value;
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let diag = self.band[i * (self.hb + 1)];
            y[i] += diag * x[i];
            let top = (self.hb).min(self.n - 1 - i);
            for d in 1..=top {
                let a = self.band[i * (self.hb + 1) + d];
                y[i + d] += a * x[i];
                y[i] += a * x[i + d];
            }
        }
    }

    /// In-place LDLᵀ; returns the factor. Fails on a non-positive pivot.
    fn ldlt(mut self) -> Result<BandedLdlt, FemError> {
        let hb = self.hb;
        let n = self.n;
        for j in 0..n {
            let mut djj = self.band[j * (hb + 1)];
            let start = j.saturating_sub(hb);
            for k in start..j {
                let ljk = self.band[k * (hb + 1) + (j - k)];
                djj -= ljk * ljk * self.band[k * (hb + 1)];
            }
            if !(djj > 0.0) || !djj.is_finite() {
                return Err(FemError::Singular { dof: j });
            }
            self.band[j * (hb + 1)] = djj;
            let top = hb.min(n - 1 - j);
            for d in 1..=top {
                let i = j + d;
                let mut lij = self.band[j * (hb + 1) + d];
                let start = i.saturating_sub(hb);
                for k in start..j {
                    let lik = self.band[k * (hb + 1) + (i - k)];
                    let ljk = self.band[k * (hb + 1) + (j - k)];
                    lij -= lik * ljk * self.band[k * (hb + 1)];
                }
                self.band[j * (hb + 1) + d] = lij / djj;
            }
        }
        Ok(BandedLdlt {
            n,
            hb,
            band: self.band,
        })
    }
}

struct BandedLdlt {
    n: usize,
    hb: usize,
    band: Vec<f64>,
}

impl BandedLdlt {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let hb = self.hb;
        let mut x = b.to_vec();
        // Forward substitution L y = b.
        for j in 0..self.n {
            let xj = x[j];
            let top = hb.min(self.n - 1 - j);
            for d in 1..=top {
                x[j + d] -= self.band[j * (hb + 1) + d] * xj;
            }
        }
        // Diagonal scaling.
        for j in 0..self.n {
            x[j] /= self.band[j * (hb + 1)];
        }
        // Backward substitution Lᵀ x = y.
        for j in (0..self.n).rev() {
            let top = hb.min(self.n - 1 - j);
            let mut s = x[j];
            for d in 1..=top {
                s -= self.band[j * (hb + 1) + d] * x[j + d];
            }
            x[j] = s;
        }
        x
    }
}

/// Assemble the penalized global stiffness and solve K u = f.
///
/// `moduli` holds one Young's modulus per element (row-major over pixels).
/// Returns the full displacement vector with fixed DOFs equal to zero.
/// The relative residual of the reduced system is checked against 1e-8.
pub fn assemble_and_solve(mesh: &GridMesh, moduli: &[f64]) -> Result<Vec<f64>, FemError> {
    if moduli.len() != mesh.element_count() {
        return Err(FemError::FieldSize {
            got: moduli.len(),
            expected: mesh.element_count(),
        });
    }
    let n_dofs = mesh.dof_count();
    // Map full DOFs to reduced (free) DOFs.
    let mut free_index = vec![usize::MAX; n_dofs];
    let mut is_fixed = vec![false; n_dofs];
    for &d in &mesh.fixed_dofs {
        is_fixed[d] = true;
    }
    let mut n_free = 0;
    for d in 0..n_dofs {
        if !is_fixed[d] {
            free_index[d] = n_free;
            n_free += 1;
        }
    }

    // Node ids within one element differ by at most (ny+1)+1.
    let hb = 2 * (mesh.ny + 2) + 1;
    let mut k = BandedMatrix::zeros(n_free, hb.min(n_free.saturating_sub(1)));
    let ke = &mesh.unit_stiffness.0;
    for ey in 0..mesh.ny {
        for ex in 0..mesh.nx {
            let e = ey * mesh.nx + ex; // row-major pixel index
            let nodes = mesh.element_nodes(ex, ey);
            let mut dofs = [0usize; 8];
            for (a, node) in nodes.iter().enumerate() {
                dofs[2 * a] = 2 * node;
                dofs[2 * a + 1] = 2 * node + 1;
            }
            let e_mod = moduli[e];
            for i in 0..8 {
                let gi = dofs[i];
                if is_fixed[gi] {
                    continue;
                }
                for j in 0..=i {
                    let gj = dofs[j];
                    if is_fixed[gj] {
                        continue;
                    }
                    k.add(free_index[gi], free_index[gj], e_mod * ke[i][j]);
                }
            }
        }
    }

    let f_reduced: Vec<f64> = (0..n_dofs)
        .filter(|d| !is_fixed[*d])
        .map(|d| mesh.loads[d])
        .collect();

    let matvec_copy = {
        // Keep an unfactorized copy for refinement and the residual check.
        BandedMatrix {
            n: k.n,
            hb: k.hb,
            band: k.band.clone(),
        }
    };
    let factor = k.ldlt()?;
    let mut u_reduced = factor.solve(&f_reduced);

    let f_norm = f_reduced.iter().map(|v| v * v).sum::<f64>().sqrt();
    if f_norm > 0.0 {
        // A few steps of iterative refinement keep the residual at rounding
        // level even for the near-void modulus ratios SIMP produces.
        let mut r = vec![0.0; u_reduced.len()];
        let mut rel = f64::INFINITY;
        for _ in 0..4 {
            matvec_copy.matvec(&u_reduced, &mut r);
            for (ri, fi) in r.iter_mut().zip(&f_reduced) {
                *ri = fi - *ri;
            }
            let res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            rel = res_norm / f_norm;
            if rel < 1e-12 {
                break;
            }
            let correction = factor.solve(&r);
            for (ui, ci) in u_reduced.iter_mut().zip(&correction) {
                *ui += ci;
            }
        }
        if rel > 1e-8 {
            return Err(FemError::Residual { residual: rel });
        }
    }

    let mut u = vec![0.0; n_dofs];
    for d in 0..n_dofs {
        if !is_fixed[d] {
            u[d] = u_reduced[free_index[d]];
        }
    }
    Ok(u)
}

/// Work of the external loads, C = fᵀu (N·mm).
pub fn compliance(u: &[f64], f: &[f64]) -> f64 {
    u.iter().zip(f).map(|(a, b)| a * b).sum()
}

/// Per-element strain energy density term uᵀ K̄ u for the unit-modulus
/// element stiffness; the SIMP sensitivity consumes this.
pub fn element_energies(mesh: &GridMesh, u: &[f64]) -> Vec<f64> {
    let ke = &mesh.unit_stiffness.0;
    let mut energies = vec![0.0; mesh.element_count()];
    for ey in 0..mesh.ny {
        for ex in 0..mesh.nx {
            let e = ey * mesh.nx + ex;
            let nodes = mesh.element_nodes(ex, ey);
            let mut ue = [0.0; 8];
            for (a, node) in nodes.iter().enumerate() {
                ue[2 * a] = u[2 * node];
                ue[2 * a + 1] = u[2 * node + 1];
            }
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    s += ue[i] * ke[i][j] * ue[j];
                }
            }
            energies[e] = s;
        }
    }
    energies
}
