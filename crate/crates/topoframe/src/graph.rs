//! Frame-graph extraction from a classified skeleton, plus the graph
//! simplification passes: pruning, short-edge contraction and angle
//! straightening.
//!
//! Nodes carry Cartesian coordinates in mm (y upward); the conversion from
//! image rows happens here and nowhere else. Node and edge ids are stable
//! across the simplification passes so a member keeps its identity from
//! extraction through design checking.

use crate::problem::{DesignProblem, Dof, Pixel};
use crate::raster::{PixelClass, Skeleton};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeTag {
    Free,
    Support { dofs: Vec<Dof> },
    Load { fx: f64, fy: f64 },
}

impl NodeTag {
    pub fn is_tagged(&self) -> bool {
        !matches!(self, NodeTag::Free)
    }

    pub fn is_support(&self) -> bool {
        matches!(self, NodeTag::Support { .. })
    }

    pub fn is_load(&self) -> bool {
        matches!(self, NodeTag::Load { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    /// mm, Cartesian x (rightward).
    pub x: f64,
    /// mm, Cartesian y (upward).
    pub y: f64,
    pub tag: NodeTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub id: usize,
    pub n1: usize,
    pub n2: usize,
    /// Cross-section area (mm²); zero until the sizing stage assigns one.
    pub area: f64,
    /// Number of regular pixels on the skeleton chain this edge replaced.
    #[serde(default)]
    pub chain_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub merge_ratio: f64,
    pub angle_limit: f64,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no structure: skeleton has no featured pixels")]
    NoStructure,
    #[error("graph is disconnected: {0} components remain after pruning")]
    Disconnected(usize),
    #[error("load node {0} is not connected to any support")]
    LoadDetached(usize),
    #[error("unknown node id {0} referenced by an edge")]
    UnknownNode(usize),
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
}

impl FrameGraph {
    pub fn node_index(&self, id: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: usize) -> &GraphNode {
        &self.nodes[self.node_index(id).expect("node id")]
    }

    pub fn edge_length(&self, edge: &GraphEdge) -> f64 {
        let a = self.node(edge.n1);
        let b = self.node(edge.n2);
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| self.edge_length(e)).sum()
    }

    /// Material volume Σ A_i L_i (mm³).
    pub fn member_volume(&self) -> f64 {
        self.edges.iter().map(|e| e.area * self.edge_length(e)).sum()
    }

    pub fn degree(&self, node_id: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.n1 == node_id || e.n2 == node_id)
            .count()
    }

    fn degrees(&self) -> HashMap<usize, usize> {
        let mut deg: HashMap<usize, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for e in &self.edges {
            *deg.entry(e.n1).or_insert(0) += 1;
            *deg.entry(e.n2).or_insert(0) += 1;
        }
        deg
    }

    fn adjacency(&self) -> HashMap<usize, Vec<usize>> {
        let mut adj: HashMap<usize, Vec<usize>> =
            self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for e in &self.edges {
            adj.get_mut(&e.n1).unwrap().push(e.n2);
            adj.get_mut(&e.n2).unwrap().push(e.n1);
        }
        adj
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut components = Vec::new();
        for node in &self.nodes {
            if seen.contains(&node.id) {
                continue;
            }
            let mut stack = vec![node.id];
            let mut comp = Vec::new();
            seen.insert(node.id);
            while let Some(i) = stack.pop() {
                comp.push(i);
                for &j in &adj[&i] {
                    if seen.insert(j) {
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    /// Structural sanity: simple graph, connected, loads reach supports.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::NoStructure);
        }
        let ids: HashSet<usize> = self.nodes.iter().map(|n| n.id).collect();
        let mut seen_pairs = HashSet::new();
        for e in &self.edges {
            if !ids.contains(&e.n1) {
                return Err(GraphError::UnknownNode(e.n1));
            }
            if !ids.contains(&e.n2) {
                return Err(GraphError::UnknownNode(e.n2));
            }
            assert!(e.n1 != e.n2, "self-loop on node {}", e.n1);
            let key = (e.n1.min(e.n2), e.n1.max(e.n2));
            assert!(seen_pairs.insert(key), "duplicate edge {:?}", key);
        }
        let comps = self.components();
        if comps.len() > 1 {
            return Err(GraphError::Disconnected(comps.len()));
        }
        // One component: loads reach supports as long as a support exists.
        let has_support = self.nodes.iter().any(|n| n.tag.is_support());
        if let Some(load) = self.nodes.iter().find(|n| n.tag.is_load()) {
            if !has_support {
                return Err(GraphError::LoadDetached(load.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("graph serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FrameGraph, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| GraphError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Node tags keyed by pixel, derived from the problem's supports and loads.
pub fn node_tags_from_problem(problem: &DesignProblem) -> HashMap<Pixel, NodeTag> {
    let mut tags: HashMap<Pixel, NodeTag> = HashMap::new();
    for s in &problem.supports {
        if let NodeTag::Support { dofs } = tags
            .entry(s.pixel)
            .or_insert(NodeTag::Support { dofs: Vec::new() })
        {
            for d in &s.dofs {
                if !dofs.contains(d) {
                    dofs.push(*d);
                }
            }
        }
    }
    for l in &problem.loads {
        // A pixel that is both support and load keeps the support tag; such
        // a load would flow straight into the reaction.
        if let NodeTag::Load { fx, fy } = tags
            .entry(l.pixel)
            .or_insert(NodeTag::Load { fx: 0.0, fy: 0.0 })
        {
            *fx += l.fx;
            *fy += l.fy;
        }
    }
    tags
}

const DIRECTIONS: [(i64, i64); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

/// Build the compact graph: one node per featured pixel (end, joint or
/// tagged), one edge per regular-pixel chain between two featured pixels.
///
/// `h` is the pixel pitch in mm. Isolated all-regular pixel cycles carry no
/// feature to anchor a node and are dropped.
pub fn build_graph(
    skel: &Skeleton,
    h: f64,
    tags: &HashMap<Pixel, NodeTag>,
    merge_ratio: f64,
    angle_limit: f64,
) -> Result<FrameGraph, GraphError> {
    let raster = &skel.raster;
    let (w, ht) = (raster.width, raster.height);
    let featured = |row: usize, col: usize| -> bool {
        raster.get(row, col)
            && (matches!(skel.class(row, col), PixelClass::End | PixelClass::Joint)
                || raster.is_tagged(row, col))
    };

    // Assign node ids in scan order.
    let mut node_of_pixel: HashMap<(usize, usize), usize> = HashMap::new();
    let mut nodes = Vec::new();
    for row in 0..ht {
        for col in 0..w {
            if featured(row, col) {
                let id = nodes.len();
                node_of_pixel.insert((row, col), id);
                let tag = tags
                    .get(&Pixel::new(row, col))
                    .cloned()
                    .unwrap_or(NodeTag::Free);
                nodes.push(GraphNode {
                    id,
                    x: (col as f64 + 0.5) * h,
                    y: (ht as f64 - row as f64 - 0.5) * h,
                    tag,
                });
            }
        }
    }
    if nodes.is_empty() {
        return Err(GraphError::NoStructure);
    }

    let neighbors8 = |row: usize, col: usize| -> Vec<(usize, usize)> {
        DIRECTIONS
            .iter()
            .filter_map(|&(dr, dc)| {
                let (r, c) = (row as i64 + dr, col as i64 + dc);
                if r >= 0 && c >= 0 && (r as usize) < ht && (c as usize) < w {
                    let (r, c) = (r as usize, c as usize);
                    raster.get(r, c).then_some((r, c))
                } else {
                    None
                }
            })
            .collect()
    };

    // Best edge per unordered node pair: fewest chain pixels wins.
    let mut best: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut visited: HashSet<(usize, usize)> = HashSet::new();
    let record =
        |a: usize, b: usize, chain: usize, best: &mut BTreeMap<(usize, usize), usize>| {
            if a == b {
                return; // petal cycle back to the same feature: not a member
            }
            let key = (a.min(b), a.max(b));
            match best.get_mut(&key) {
                Some(existing) => {
                    if chain < *existing {
                        *existing = chain;
                    }
                }
                None => {
                    best.insert(key, chain);
                }
            }
        };

    let mut featured_pixels: Vec<(usize, usize)> = node_of_pixel.keys().copied().collect();
    featured_pixels.sort_unstable();
    for &(frow, fcol) in &featured_pixels {
        let a = node_of_pixel[&(frow, fcol)];
        for (nrow, ncol) in neighbors8(frow, fcol) {
            if let Some(&b) = node_of_pixel.get(&(nrow, ncol)) {
                record(a, b, 0, &mut best);
                continue;
            }
            if visited.contains(&(nrow, ncol)) {
                continue;
            }
            // Walk the regular chain until another featured pixel appears.
            let mut prev = (frow, fcol);
            let mut cur = (nrow, ncol);
            visited.insert(cur);
            let mut chain = 1usize;
            loop {
                let next_featured = neighbors8(cur.0, cur.1)
                    .into_iter()
                    .find(|&p| p != prev && node_of_pixel.contains_key(&p));
                if let Some(f) = next_featured {
                    record(a, node_of_pixel[&f], chain, &mut best);
                    break;
                }
                let next_regular = neighbors8(cur.0, cur.1)
                    .into_iter()
                    .find(|p| *p != prev && !visited.contains(p));
                match next_regular {
                    Some(p) => {
                        visited.insert(p);
                        prev = cur;
                        cur = p;
                        chain += 1;
                    }
                    None => break, // dead chain (revisit); drop it
                }
            }
        }
    }

    let edges = best
        .into_iter()
        .enumerate()
        .map(|(id, ((n1, n2), chain_pixels))| GraphEdge {
            id,
            n1,
            n2,
            area: 0.0,
            chain_pixels,
        })
        .collect();

    Ok(FrameGraph {
        nodes,
        edges,
        merge_ratio,
        angle_limit,
    })
}

/// Remove leaf edges whose degree-1 endpoint is untagged, repeatedly, then
/// drop the nodes that end up isolated and untagged. The fixpoint does not
/// depend on removal order.
pub fn prune(graph: &FrameGraph) -> FrameGraph {
    let mut g = graph.clone();
    loop {
        let deg = g.degrees();
        let tagged: HashSet<usize> = g
            .nodes
            .iter()
            .filter(|n| n.tag.is_tagged())
            .map(|n| n.id)
            .collect();
        let removable: Vec<usize> = g
            .edges
            .iter()
            .filter(|e| {
                (deg[&e.n1] == 1 && !tagged.contains(&e.n1))
                    || (deg[&e.n2] == 1 && !tagged.contains(&e.n2))
            })
            .map(|e| e.id)
            .collect();
        if removable.is_empty() {
            break;
        }
        g.edges.retain(|e| !removable.contains(&e.id));
    }
    let deg = g.degrees();
    g.nodes.retain(|n| deg[&n.id] > 0 || n.tag.is_tagged());
    g
}

/// Drop connected components that contain no tagged node. Pruning removes
/// untagged trees already; this clears untagged cycles (thresholding debris)
/// that cannot carry load.
pub fn drop_untagged_components(graph: &FrameGraph) -> FrameGraph {
    let mut g = graph.clone();
    let comps = g.components();
    let mut keep: HashSet<usize> = HashSet::new();
    for comp in comps {
        let has_tag = comp.iter().any(|id| g.node(*id).tag.is_tagged());
        if has_tag {
            keep.extend(comp);
        }
    }
    g.edges.retain(|e| keep.contains(&e.n1) && keep.contains(&e.n2));
    g.nodes.retain(|n| keep.contains(&n.id));
    g
}

/// Outcome of a contraction pass: the simplified graph plus any warnings
/// about short edges that could not be merged (both endpoints tagged).
#[derive(Debug, Clone)]
pub struct ContractionOutcome {
    pub graph: FrameGraph,
    pub warnings: Vec<String>,
}

/// Contract edges shorter than ζ times the total length of all edges
/// incident to either endpoint, until none qualify. The tagged endpoint of
/// a contracted edge survives; otherwise the higher-degree endpoint; equal
/// degrees merge at the edge midpoint. Tagged nodes never move.
pub fn contract_short_edges(graph: &FrameGraph, zeta: f64) -> ContractionOutcome {
    assert!((0.0..0.5).contains(&zeta), "merge ratio out of [0,0.5)");
    let mut g = graph.clone();
    let mut warnings = Vec::new();
    let mut blocked: HashSet<usize> = HashSet::new();
    if zeta == 0.0 {
        return ContractionOutcome { graph: g, warnings };
    }
    loop {
        let deg = g.degrees();
        // Shortest qualifying edge first; edge id breaks ties.
        let mut candidate: Option<(f64, usize)> = None;
        for e in &g.edges {
            if blocked.contains(&e.id) {
                continue;
            }
            let len = g.edge_length(e);
            let incident: f64 = g
                .edges
                .iter()
                .filter(|o| o.n1 == e.n1 || o.n2 == e.n1 || o.n1 == e.n2 || o.n2 == e.n2)
                .map(|o| g.edge_length(o))
                .sum();
            if len < zeta * incident {
                let better = match candidate {
                    None => true,
                    Some((best_len, best_id)) => {
                        len < best_len || (len == best_len && e.id < best_id)
                    }
                };
                if better {
                    candidate = Some((len, e.id));
                }
            }
        }
        let Some((_, edge_id)) = candidate else { break };
        let edge = g.edges.iter().find(|e| e.id == edge_id).unwrap().clone();
        let (t1, t2) = (
            g.node(edge.n1).tag.is_tagged(),
            g.node(edge.n2).tag.is_tagged(),
        );
        if t1 && t2 {
            warnings.push(format!(
                "edge {} joins two tagged nodes ({}, {}) and cannot be merged",
                edge.id, edge.n1, edge.n2
            ));
            blocked.insert(edge.id);
            continue;
        }
        let (survivor, removed) = if t1 {
            (edge.n1, edge.n2)
        } else if t2 {
            (edge.n2, edge.n1)
        } else {
            let (d1, d2) = (deg[&edge.n1], deg[&edge.n2]);
            if d1 > d2 {
                (edge.n1, edge.n2)
            } else if d2 > d1 {
                (edge.n2, edge.n1)
            } else {
                let s = edge.n1.min(edge.n2);
                let r = edge.n1.max(edge.n2);
                // Equal degree, both free: survivor moves to the midpoint.
                let (ax, ay) = (g.node(s).x, g.node(s).y);
                let (bx, by) = (g.node(r).x, g.node(r).y);
                let si = g.node_index(s).unwrap();
                g.nodes[si].x = 0.5 * (ax + bx);
                g.nodes[si].y = 0.5 * (ay + by);
                (s, r)
            }
        };
        g.edges.retain(|e| e.id != edge.id);
        for e in &mut g.edges {
            if e.n1 == removed {
                e.n1 = survivor;
            }
            if e.n2 == removed {
                e.n2 = survivor;
            }
        }
        // Contraction can produce self-loops and parallel edges; keep the
        // widest of any parallel pair.
        g.edges.retain(|e| e.n1 != e.n2);
        let mut kept: BTreeMap<(usize, usize), GraphEdge> = BTreeMap::new();
        for e in g.edges.drain(..) {
            let key = (e.n1.min(e.n2), e.n1.max(e.n2));
            match kept.get_mut(&key) {
                Some(existing) => {
                    if e.area > existing.area || (e.area == existing.area && e.id < existing.id) {
                        *existing = e;
                    }
                }
                None => {
                    kept.insert(key, e);
                }
            }
        }
        g.edges = kept.into_values().collect();
        g.edges.sort_by_key(|e| e.id);
        g.nodes.retain(|n| n.id != removed);
    }
    ContractionOutcome { graph: g, warnings }
}

/// Straighten runs of untagged degree-2 nodes whose edges all deviate from
/// the run's end-to-end line by less than `angle_limit` degrees: the interior
/// nodes are projected onto that line. Topology is unchanged.
pub fn snap_angles(graph: &FrameGraph, angle_limit: f64) -> FrameGraph {
    assert!(angle_limit >= 0.0);
    let mut g = graph.clone();
    if angle_limit == 0.0 {
        return g;
    }
    let deg = g.degrees();
    let adj = g.adjacency();
    let interior = |id: usize| -> bool { deg[&id] == 2 && !g.node(id).tag.is_tagged() };

    let mut in_chain: HashSet<usize> = HashSet::new();
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let node_ids: Vec<usize> = g.nodes.iter().map(|n| n.id).collect();
    for &start in &node_ids {
        if !interior(start) || in_chain.contains(&start) {
            continue;
        }
        // Expand in both directions until a non-interior anchor.
        let mut chain = vec![start];
        let mut is_cycle = false;
        for dir in 0..2 {
            let mut prev = start;
            let mut cur = adj[&start][dir];
            loop {
                if cur == start {
                    is_cycle = true;
                    break;
                }
                if dir == 0 {
                    chain.insert(0, cur);
                } else {
                    chain.push(cur);
                }
                if !interior(cur) {
                    break;
                }
                let next = *adj[&cur].iter().find(|&&n| n != prev).unwrap();
                prev = cur;
                cur = next;
            }
            if is_cycle {
                break;
            }
        }
        if is_cycle {
            continue;
        }
        let a = *chain.first().unwrap();
        let b = *chain.last().unwrap();
        if a == b {
            continue;
        }
        for &n in &chain[1..chain.len() - 1] {
            in_chain.insert(n);
        }
        chains.push(chain);
    }

    for chain in chains {
        let a = g.node(chain[0]);
        let b = g.node(*chain.last().unwrap());
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let line_len = (dx * dx + dy * dy).sqrt();
        if line_len == 0.0 {
            continue;
        }
        let (ux, uy) = (dx / line_len, dy / line_len);
        let mut all_below = true;
        for pair in chain.windows(2) {
            let p = g.node(pair[0]);
            let q = g.node(pair[1]);
            let (ex, ey) = (q.x - p.x, q.y - p.y);
            let el = (ex * ex + ey * ey).sqrt();
            if el == 0.0 {
                continue;
            }
            let cosang = ((ex * ux + ey * uy) / el).clamp(-1.0, 1.0);
            let deviation = cosang.abs().acos().to_degrees();
            if deviation >= angle_limit {
                all_below = false;
                break;
            }
        }
        if !all_below {
            continue;
        }
        let (ax, ay) = (g.node(chain[0]).x, g.node(chain[0]).y);
        for &nid in &chain[1..chain.len() - 1] {
            let idx = g.node_index(nid).unwrap();
            let (px, py) = (g.nodes[idx].x, g.nodes[idx].y);
            let t = (px - ax) * ux + (py - ay) * uy;
            g.nodes[idx].x = ax + t * ux;
            g.nodes[idx].y = ay + t * uy;
        }
    }
    g
}
