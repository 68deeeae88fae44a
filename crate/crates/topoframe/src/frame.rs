//! 2D rigid-frame analysis: axial plus Euler-Bernoulli bending elements,
//! three DOFs per node (ux, uy, rotation).
//!
//! Supports come from the graph's node tags; `Rot` in a support's DOF list
//! clamps the nodal rotation. Loads are the tagged nodal forces scaled by a
//! caller-supplied factor (1 for ULS, 1/γ for SLS). Internal member forces
//! are recovered in local axes with tension positive.

use crate::graph::{FrameGraph, NodeTag};
use crate::problem::Dof;
use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

pub type Matrix6 = SMatrix<f64, 6, 6>;

/// Cross-section data a frame element needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberProps {
    /// Area (mm²).
    pub area: f64,
    /// Second moment of area (mm⁴).
    pub inertia: f64,
}

/// Solid circular section law used during optimization: I = A²/(4π).
pub fn solid_circular_props(area: f64) -> MemberProps {
    MemberProps {
        area,
        inertia: area * area / (4.0 * PI),
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("mechanism: free rigid-body motion at node {node}, {dof} (pivot {pivot:e})")]
    Mechanism { node: usize, dof: String, pivot: f64 },
    #[error("no supports: every DOF is free")]
    NoSupports,
    #[error("member {edge} has zero length")]
    ZeroLength { edge: usize },
    #[error("member {edge} has non-positive area {area}")]
    BadArea { edge: usize, area: f64 },
    #[error("props list has {got} entries, graph has {expected} members")]
    PropsMismatch { got: usize, expected: usize },
    #[error("solver residual {residual:e} above contract")]
    Residual { residual: f64 },
}

/// Local 6x6 stiffness: axial EA/L terms and bending 12EI/L³, 6EI/L²,
/// 4EI/L, 2EI/L terms. DOF order: (u, v, θ) at end 1, then end 2.
pub fn local_stiffness(e_mod: f64, area: f64, inertia: f64, length: f64) -> Matrix6 {
    let ea = e_mod * area / length;
    let l = length;
    let b1 = 12.0 * e_mod * inertia / (l * l * l);
    let b2 = 6.0 * e_mod * inertia / (l * l);
    let b3 = 4.0 * e_mod * inertia / l;
    let b4 = 2.0 * e_mod * inertia / l;
    Matrix6::from_row_slice(&[
        ea, 0.0, 0.0, -ea, 0.0, 0.0, //
        0.0, b1, b2, 0.0, -b1, b2, //
        0.0, b2, b3, 0.0, -b2, b4, //
        -ea, 0.0, 0.0, ea, 0.0, 0.0, //
        0.0, -b1, -b2, 0.0, b1, -b2, //
        0.0, b2, b4, 0.0, -b2, b3,
    ])
}

/// Rotation from global to local axes: two 3x3 blocks acting on the
/// translations, identity on the rotations. Orthogonal.
pub fn transformation(c: f64, s: f64) -> Matrix6 {
    let mut t = Matrix6::zeros();
    for block in 0..2 {
        let o = 3 * block;
        t[(o, o)] = c;
        t[(o, o + 1)] = s;
        t[(o + 1, o)] = -s;
        t[(o + 1, o + 1)] = c;
        t[(o + 2, o + 2)] = 1.0;
    }
    t
}

/// Local end forces of one member, tension positive for the axial term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberEndForces {
    pub edge: usize,
    /// Axial force N (N), tension positive.
    pub axial: f64,
    /// Shear at end 1 and end 2 (N).
    pub shear: [f64; 2],
    /// Bending moment at end 1 and end 2 (N·mm).
    pub moment: [f64; 2],
}

impl MemberEndForces {
    /// Design values: extreme absolute shear and moment over both ends.
    pub fn design_shear(&self) -> f64 {
        self.shear[0].abs().max(self.shear[1].abs())
    }

    pub fn design_moment(&self) -> f64 {
        self.moment[0].abs().max(self.moment[1].abs())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDisplacement {
    pub node: usize,
    pub ux: f64,
    pub uy: f64,
    pub rot: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reaction {
    pub node: usize,
    pub fx: f64,
    pub fy: f64,
    pub moment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameResult {
    pub displacements: Vec<NodeDisplacement>,
    pub reactions: Vec<Reaction>,
    pub member_forces: Vec<MemberEndForces>,
    /// fᵀu (N·mm).
    pub compliance: f64,
}

impl FrameResult {
    pub fn displacement_of(&self, node: usize) -> &NodeDisplacement {
        self.displacements
            .iter()
            .find(|d| d.node == node)
            .expect("node displacement")
    }

    /// Largest translational displacement magnitude over all nodes (mm).
    pub fn max_translation(&self) -> f64 {
        self.displacements
            .iter()
            .map(|d| (d.ux * d.ux + d.uy * d.uy).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("result serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

fn dof_name(local: usize) -> &'static str {
    match local {
        0 => "ux",
        1 => "uy",
        _ => "rotation",
    }
}

/// Assemble and solve the frame. `props` pairs with `graph.edges` by
/// position; `load_scale` multiplies every tagged nodal load.
pub fn solve_frame(
    graph: &FrameGraph,
    props: &[MemberProps],
    e_mod: f64,
    load_scale: f64,
) -> Result<FrameResult, FrameError> {
    if props.len() != graph.edges.len() {
        return Err(FrameError::PropsMismatch {
            got: props.len(),
            expected: graph.edges.len(),
        });
    }
    let n_nodes = graph.nodes.len();
    let index_of: HashMap<usize, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id, i))
        .collect();
    let n_dofs = 3 * n_nodes;

    let mut fixed = vec![false; n_dofs];
    let mut f = DVector::zeros(n_dofs);
    for (i, node) in graph.nodes.iter().enumerate() {
        match &node.tag {
            NodeTag::Support { dofs } => {
                for d in dofs {
                    let local = match d {
                        Dof::Ux => 0,
                        Dof::Uy => 1,
                        Dof::Rot => 2,
                    };
                    fixed[3 * i + local] = true;
                }
            }
            NodeTag::Load { fx, fy } => {
                f[3 * i] += fx * load_scale;
                f[3 * i + 1] += fy * load_scale;
            }
            NodeTag::Free => {}
        }
    }
    if !fixed.iter().any(|&b| b) {
        return Err(FrameError::NoSupports);
    }

    // Element matrices in global axes.
    let mut k_full = DMatrix::zeros(n_dofs, n_dofs);
    let mut element_data = Vec::with_capacity(graph.edges.len());
    for (e, edge) in graph.edges.iter().enumerate() {
        let a = graph.node(edge.n1);
        let b = graph.node(edge.n2);
        let length = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        if !(length > 0.0) {
            return Err(FrameError::ZeroLength { edge: edge.id });
        }
        if !(props[e].area > 0.0) {
            return Err(FrameError::BadArea {
                edge: edge.id,
                area: props[e].area,
            });
        }
        let (c, s) = ((b.x - a.x) / length, (b.y - a.y) / length);
        let k_local = local_stiffness(e_mod, props[e].area, props[e].inertia, length);
        let t = transformation(c, s);
        let k_global = t.transpose() * k_local * t;
        let (i1, i2) = (index_of[&edge.n1], index_of[&edge.n2]);
        let map = [3 * i1, 3 * i1 + 1, 3 * i1 + 2, 3 * i2, 3 * i2 + 1, 3 * i2 + 2];
        for r in 0..6 {
            for cc in 0..6 {
                k_full[(map[r], map[cc])] += k_global[(r, cc)];
            }
        }
        element_data.push((k_local, t, map));
    }

    // Reduce out the fixed DOFs.
    let free: Vec<usize> = (0..n_dofs).filter(|&d| !fixed[d]).collect();
    let nf = free.len();
    let mut k_red = DMatrix::zeros(nf, nf);
    let mut f_red = DVector::zeros(nf);
    for (ri, &di) in free.iter().enumerate() {
        f_red[ri] = f[di];
        for (ci, &dj) in free.iter().enumerate() {
            k_red[(ri, ci)] = k_full[(di, dj)];
        }
    }

    let chol = match k_red.clone().cholesky() {
        Some(c) => c,
        None => {
            // Identify the softest mode to name the mechanism.
            let eig: nalgebra::SymmetricEigen<f64, nalgebra::Dyn> =
                nalgebra::SymmetricEigen::new(k_red.clone());
            let (mut softest, mut value) = (0, f64::INFINITY);
            for (i, &ev) in eig.eigenvalues.iter().enumerate() {
                if ev < value {
                    value = ev;
                    softest = i;
                }
            }
            let mode = eig.eigenvectors.column(softest);
            let mut worst = 0;
            let mut worst_mag = 0.0;
            for (i, &v) in mode.iter().enumerate() {
                if v.abs() > worst_mag {
                    worst_mag = v.abs();
                    worst = i;
                }
            }
            let full_dof = free[worst];
            return Err(FrameError::Mechanism {
                node: graph.nodes[full_dof / 3].id,
                dof: dof_name(full_dof % 3).to_string(),
                pivot: value,
            });
        }
    };
    let mut u_red = chol.solve(&f_red);

    let f_norm = f_red.norm();
    if f_norm > 0.0 {
        let mut rel = f64::INFINITY;
        for _ in 0..4 {
            let r = &f_red - &k_red * &u_red;
            rel = r.norm() / f_norm;
            if rel < 1e-13 {
                break;
            }
            u_red += chol.solve(&r);
        }
        if rel > 1e-10 {
            return Err(FrameError::Residual { residual: rel });
        }
    }

    let mut u = DVector::zeros(n_dofs);
    for (ri, &di) in free.iter().enumerate() {
        u[di] = u_red[ri];
    }

    // Reactions: R = K u - f at constrained DOFs.
    let ku = &k_full * &u;
    let mut reactions = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if (0..3).any(|l| fixed[3 * i + l]) {
            reactions.push(Reaction {
                node: node.id,
                fx: if fixed[3 * i] { ku[3 * i] - f[3 * i] } else { 0.0 },
                fy: if fixed[3 * i + 1] {
                    ku[3 * i + 1] - f[3 * i + 1]
                } else {
                    0.0
                },
                moment: if fixed[3 * i + 2] {
                    ku[3 * i + 2] - f[3 * i + 2]
                } else {
                    0.0
                },
            });
        }
    }

    // Local member end forces f_l = K_l T u_e.
    let mut member_forces = Vec::with_capacity(graph.edges.len());
    for (e, edge) in graph.edges.iter().enumerate() {
        let (k_local, t, map) = &element_data[e];
        let mut u_e = SMatrix::<f64, 6, 1>::zeros();
        for r in 0..6 {
            u_e[r] = u[map[r]];
        }
        let f_local = k_local * (t * u_e);
        member_forces.push(MemberEndForces {
            edge: edge.id,
            axial: f_local[3],
            shear: [f_local[1], f_local[4]],
            moment: [f_local[2], f_local[5]],
        });
    }

    let compliance = f.dot(&u);
    let displacements = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| NodeDisplacement {
            node: n.id,
            ux: u[3 * i],
            uy: u[3 * i + 1],
            rot: u[3 * i + 2],
        })
        .collect();

    Ok(FrameResult {
        displacements,
        reactions,
        member_forces,
        compliance,
    })
}

/// Global equilibrium residual: applied loads plus reactions, as force sums
/// and moments about the origin, relative to the applied load magnitude.
pub fn equilibrium_residual(graph: &FrameGraph, result: &FrameResult, load_scale: f64) -> f64 {
    let mut fx = 0.0;
    let mut fy = 0.0;
    let mut m = 0.0;
    let mut scale: f64 = 0.0;
    for node in &graph.nodes {
        if let NodeTag::Load { fx: lx, fy: ly } = node.tag {
            let (lx, ly) = (lx * load_scale, ly * load_scale);
            fx += lx;
            fy += ly;
            m += node.x * ly - node.y * lx;
            scale = scale.max(lx.abs()).max(ly.abs());
        }
    }
    let mut arm: f64 = 1.0;
    for node in &graph.nodes {
        arm = arm.max(node.x.abs()).max(node.y.abs());
    }
    for r in &result.reactions {
        let node = graph.node(r.node);
        fx += r.fx;
        fy += r.fy;
        m += node.x * r.fy - node.y * r.fx + r.moment;
    }
    if scale == 0.0 {
        return 0.0;
    }
    (fx.abs().max(fy.abs()) / scale).max(m.abs() / (scale * arm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphEdge, GraphNode};
    use approx::assert_relative_eq;

    #[test]
    fn axial_entry_is_ea_over_l() {
        let k = local_stiffness(2.1e5, 100.0, 1.0, 1000.0);
        assert_relative_eq!(k[(0, 0)], 2.1e4, max_relative = 1e-14);
    }

    #[test]
    fn local_stiffness_symmetric_with_rigid_modes() {
        let l = 700.0;
        let k = local_stiffness(2.1e5, 350.0, 9000.0, l);
        for i in 0..6 {
            for j in 0..6 {
                assert_relative_eq!(k[(i, j)], k[(j, i)], max_relative = 1e-14);
            }
        }
        let modes = [
            [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, l, 1.0], // rotation about end 1
        ];
        for mode in modes {
            let v = SMatrix::<f64, 6, 1>::from_column_slice(&mode);
            let r = k * v;
            let scale = k[(1, 1)] * l;
            for i in 0..6 {
                assert!(r[i].abs() < 1e-9 * scale, "mode leaks {:.3e}", r[i]);
            }
        }
    }

    #[test]
    fn transformation_is_orthogonal() {
        for (c, s) in [(1.0, 0.0), (0.0, 1.0), (0.5f64.sqrt(), 0.5f64.sqrt())] {
            let t = transformation(c, s);
            let should_be_identity = t.transpose() * t;
            for i in 0..6 {
                for j in 0..6 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(
                        should_be_identity[(i, j)],
                        expected,
                        epsilon = 1e-14
                    );
                }
            }
        }
        assert_eq!(transformation(1.0, 0.0), Matrix6::identity());
        let t45 = transformation(0.5f64.sqrt(), 0.5f64.sqrt());
        assert_relative_eq!(t45[(0, 0)], 0.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(t45[(0, 1)], 0.5f64.sqrt(), max_relative = 1e-15);
    }

    fn cantilever_member(length: f64) -> (FrameGraph, Vec<MemberProps>) {
        let graph = FrameGraph {
            nodes: vec![
                GraphNode {
                    id: 0,
                    x: 0.0,
                    y: 0.0,
                    tag: NodeTag::Support {
                        dofs: vec![Dof::Ux, Dof::Uy, Dof::Rot],
                    },
                },
                GraphNode {
                    id: 1,
                    x: length,
                    y: 0.0,
                    tag: NodeTag::Load { fx: 0.0, fy: -1.0e4 },
                },
            ],
            edges: vec![GraphEdge {
                id: 0,
                n1: 0,
                n2: 1,
                area: 700.0,
                chain_pixels: 0,
            }],
            merge_ratio: 0.1,
            angle_limit: 10.0,
        };
        let props = vec![solid_circular_props(700.0)];
        (graph, props)
    }

    #[test]
    fn tip_deflection_matches_euler_bernoulli_exactly() {
        let l = 1500.0;
        let (graph, props) = cantilever_member(l);
        let result = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap();
        let expected = 1.0e4 * l * l * l / (3.0 * 2.1e5 * props[0].inertia);
        let tip = result.displacement_of(1).uy.abs();
        assert_relative_eq!(tip, expected, max_relative = 1e-10);
        // Compliance definition check: collocated load and deflection.
        assert_relative_eq!(result.compliance, 1.0e4 * tip, max_relative = 1e-10);
    }

    #[test]
    fn member_forces_are_self_equilibrated() {
        let (graph, props) = cantilever_member(1200.0);
        let result = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap();
        let m = &result.member_forces[0];
        // Per-element equilibrium: shear pair cancels, moments balance the
        // shear couple.
        assert_relative_eq!(m.shear[0], -m.shear[1], max_relative = 1e-9);
        assert_relative_eq!(
            m.moment[0] + m.moment[1] + m.shear[1] * 1200.0,
            0.0,
            epsilon = 1e-6 * m.moment[0].abs().max(1.0)
        );
        assert_relative_eq!(m.design_shear(), 1.0e4, max_relative = 1e-9);
        assert_relative_eq!(m.design_moment(), 1.0e4 * 1200.0, max_relative = 1e-9);
    }

    #[test]
    fn equilibrium_of_reactions_and_loads() {
        let (graph, props) = cantilever_member(1500.0);
        let result = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap();
        assert!(equilibrium_residual(&graph, &result, 1.0) < 1e-8);
        let r = &result.reactions[0];
        assert_relative_eq!(r.fy, 1.0e4, max_relative = 1e-10);
        assert_relative_eq!(r.moment, 1.0e4 * 1500.0, max_relative = 1e-10);
    }

    #[test]
    fn pin_only_single_member_is_a_mechanism() {
        let (mut graph, props) = cantilever_member(1000.0);
        graph.nodes[0].tag = NodeTag::Support {
            dofs: vec![Dof::Ux, Dof::Uy],
        };
        let err = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap_err();
        assert!(matches!(err, FrameError::Mechanism { .. }), "{err}");
    }

    #[test]
    fn zero_length_member_is_rejected() {
        let (mut graph, props) = cantilever_member(1000.0);
        graph.nodes[1].x = 0.0;
        let err = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap_err();
        assert!(matches!(err, FrameError::ZeroLength { .. }));
    }

    /// Splitting a member into two collinear halves must not change nodal
    /// results.
    #[test]
    fn collinear_split_is_consistent() {
        let (graph, props) = cantilever_member(1400.0);
        let whole = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap();

        let split = FrameGraph {
            nodes: vec![
                graph.nodes[0].clone(),
                GraphNode {
                    id: 2,
                    x: 700.0,
                    y: 0.0,
                    tag: NodeTag::Free,
                },
                graph.nodes[1].clone(),
            ],
            edges: vec![
                GraphEdge { id: 0, n1: 0, n2: 2, area: 700.0, chain_pixels: 0 },
                GraphEdge { id: 1, n1: 2, n2: 1, area: 700.0, chain_pixels: 0 },
            ],
            merge_ratio: 0.1,
            angle_limit: 10.0,
        };
        let props2 = vec![props[0], props[0]];
        let halves = solve_frame(&split, &props2, 2.1e5, 1.0).unwrap();
        let a = whole.displacement_of(1);
        let b = halves.displacement_of(1);
        assert_relative_eq!(a.uy, b.uy, max_relative = 1e-8);
        assert_relative_eq!(a.rot, b.rot, max_relative = 1e-8);
    }

    /// A 45-degree two-member truss-like frame under a symmetric load keeps
    /// the apex centered: transformation handling is direction correct.
    #[test]
    fn symmetric_two_bar_frame_stays_symmetric() {
        let graph = FrameGraph {
            nodes: vec![
                GraphNode {
                    id: 0,
                    x: 0.0,
                    y: 0.0,
                    tag: NodeTag::Support { dofs: vec![Dof::Ux, Dof::Uy] },
                },
                GraphNode {
                    id: 1,
                    x: 2000.0,
                    y: 0.0,
                    tag: NodeTag::Support { dofs: vec![Dof::Ux, Dof::Uy] },
                },
                GraphNode {
                    id: 2,
                    x: 1000.0,
                    y: 800.0,
                    tag: NodeTag::Load { fx: 0.0, fy: -5.0e4 },
                },
            ],
            edges: vec![
                GraphEdge { id: 0, n1: 0, n2: 2, area: 500.0, chain_pixels: 0 },
                GraphEdge { id: 1, n1: 1, n2: 2, area: 500.0, chain_pixels: 0 },
            ],
            merge_ratio: 0.1,
            angle_limit: 10.0,
        };
        let props = vec![solid_circular_props(500.0); 2];
        let result = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap();
        let apex = result.displacement_of(2);
        assert!(apex.ux.abs() < 1e-10 * apex.uy.abs());
        // Both members carry the same compression.
        let (m0, m1) = (&result.member_forces[0], &result.member_forces[1]);
        assert_relative_eq!(m0.axial, m1.axial, max_relative = 1e-10);
        assert!(m0.axial < 0.0, "apex load compresses both members");
        assert!(equilibrium_residual(&graph, &result, 1.0) < 1e-8);
    }

    #[test]
    fn load_scale_is_linear() {
        let (graph, props) = cantilever_member(900.0);
        let uls = solve_frame(&graph, &props, 2.1e5, 1.0).unwrap();
        let sls = solve_frame(&graph, &props, 2.1e5, 1.0 / 1.35).unwrap();
        assert_relative_eq!(
            sls.displacement_of(1).uy * 1.35,
            uls.displacement_of(1).uy,
            max_relative = 1e-12
        );
    }
}
