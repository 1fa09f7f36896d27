//! Mesh-graph representation: nodes, undirected edges, counter-clockwise
//! triangular elements, per-node boundary conditions, and the raw input
//! features derived from them.

pub mod io;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::vec2::{triangle_signed_area, Vec2};

/// One resolution level of a triangular mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    /// Node coordinates in mm.
    pub nodes: Vec<Vec2>,
    /// Undirected edges stored as (i, j) with i < j.
    pub edges: Vec<(usize, usize)>,
    /// Triangles in counter-clockwise vertex order.
    pub elements: Vec<[usize; 3]>,
    pub level_id: usize,
}

impl MeshGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn element_vertices(&self, element: usize) -> [Vec2; 3] {
        let [a, b, c] = self.elements[element];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn element_signed_area(&self, element: usize) -> f64 {
        let [a, b, c] = self.element_vertices(element);
        triangle_signed_area(a, b, c)
    }

    pub fn element_centroid(&self, element: usize) -> Vec2 {
        let [a, b, c] = self.element_vertices(element);
        (a + b + c) / 3.0
    }

    /// Shift every node by `delta`. Derived quantities (directed edges,
    /// locators, features) must be recomputed afterwards.
    pub fn translated(&self, delta: Vec2) -> MeshGraph {
        MeshGraph {
            nodes: self.nodes.iter().map(|&p| p + delta).collect(),
            edges: self.edges.clone(),
            elements: self.elements.clone(),
            level_id: self.level_id,
        }
    }
}

/// Per-node boundary conditions on one mesh level.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeConditions {
    /// 1 if the node lies on any boundary (outer contour or hole contour).
    pub boundary: Vec<u8>,
    /// 1 if both displacement components of the node are constrained to zero.
    pub fixed: Vec<u8>,
    /// Applied nodal force in N; must be zero wherever `fixed` is 1.
    pub force: Vec<Vec2>,
}

impl NodeConditions {
    pub fn unloaded(node_count: usize) -> NodeConditions {
        NodeConditions {
            boundary: vec![0; node_count],
            fixed: vec![0; node_count],
            force: vec![Vec2::ZERO; node_count],
        }
    }

    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }
}

/// One direction of an undirected mesh edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectedEdge {
    pub src: usize,
    pub dst: usize,
    /// dst coordinate minus src coordinate (mm).
    pub displacement: Vec2,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshViolation {
    #[error("edge {edge} references node {node} out of range")]
    EdgeIndexOutOfRange { edge: usize, node: usize },
    #[error("element {element} references node {node} out of range")]
    ElementIndexOutOfRange { element: usize, node: usize },
    #[error("self-loop, edge {edge}")]
    SelfLoop { edge: usize },
    #[error("duplicate edge, edge {edge}")]
    DuplicateEdge { edge: usize },
    #[error("element {element} side ({a}, {b}) missing from edge list")]
    MissingElementSide { element: usize, a: usize, b: usize },
    #[error("non-positive area, element {element}")]
    NonPositiveArea { element: usize },
    #[error("condition flag out of range at node {node}")]
    BadConditionFlag { node: usize },
    #[error("nonzero force on fixed node {node}")]
    ForceOnFixedNode { node: usize },
    #[error("condition arrays have {got} entries, mesh has {expected} nodes")]
    ConditionLengthMismatch { expected: usize, got: usize },
}

/// Outcome of `validate_mesh`: violations are data, not failures.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<MeshViolation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            write!(f, "ok")
        } else {
            for v in &self.violations {
                writeln!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate edge {edge}: endpoints coincide")]
    DegenerateEdge { edge: usize },
}

/// Check every structural invariant of a mesh graph and report all
/// violations with the index of the offending entity.
pub fn validate_mesh(graph: &MeshGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = graph.node_count();

    let mut seen = HashSet::new();
    for (idx, &(i, j)) in graph.edges.iter().enumerate() {
        if i >= n || j >= n {
            let node = if i >= n { i } else { j };
            report
                .violations
                .push(MeshViolation::EdgeIndexOutOfRange { edge: idx, node });
            continue;
        }
        if i == j {
            report.violations.push(MeshViolation::SelfLoop { edge: idx });
            continue;
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            report
                .violations
                .push(MeshViolation::DuplicateEdge { edge: idx });
        }
    }

    for (idx, elem) in graph.elements.iter().enumerate() {
        if let Some(&node) = elem.iter().find(|&&v| v >= n) {
            report
                .violations
                .push(MeshViolation::ElementIndexOutOfRange { element: idx, node });
            continue;
        }
        for side in 0..3 {
            let a = elem[side];
            let b = elem[(side + 1) % 3];
            if !seen.contains(&(a.min(b), a.max(b))) {
                report
                    .violations
                    .push(MeshViolation::MissingElementSide { element: idx, a, b });
            }
        }
        if graph.element_signed_area(idx) <= 0.0 {
            report
                .violations
                .push(MeshViolation::NonPositiveArea { element: idx });
        }
    }

    report
}

/// Check the per-node condition invariants against a mesh.
pub fn validate_conditions(conditions: &NodeConditions, graph: &MeshGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = graph.node_count();
    if conditions.boundary.len() != n || conditions.fixed.len() != n || conditions.force.len() != n
    {
        report
            .violations
            .push(MeshViolation::ConditionLengthMismatch {
                expected: n,
                got: conditions.boundary.len(),
            });
        return report;
    }
    for node in 0..n {
        if conditions.boundary[node] > 1 || conditions.fixed[node] > 1 {
            report
                .violations
                .push(MeshViolation::BadConditionFlag { node });
        }
        if conditions.fixed[node] == 1 && conditions.force[node] != Vec2::ZERO {
            report
                .violations
                .push(MeshViolation::ForceOnFixedNode { node });
        }
    }
    report
}

/// Expand every undirected edge {i, j} into the two directed edges
/// (i -> j) and (j -> i). Output order: edge m yields entries 2m and 2m+1.
pub fn directed_edges(graph: &MeshGraph) -> Result<Vec<DirectedEdge>, MeshError> {
    let mut out = Vec::with_capacity(2 * graph.edges.len());
    for (idx, &(i, j)) in graph.edges.iter().enumerate() {
        let d = graph.nodes[j] - graph.nodes[i];
        let len = d.norm();
        if len == 0.0 {
            return Err(MeshError::DegenerateEdge { edge: idx });
        }
        out.push(DirectedEdge {
            src: i,
            dst: j,
            displacement: d,
            length: len,
        });
        out.push(DirectedEdge {
            src: j,
            dst: i,
            displacement: -d,
            length: len,
        });
    }
    Ok(out)
}

/// Raw edge features: [dx, dy, |d|]; a function of relative coordinates only.
pub fn edge_input_features(e: &DirectedEdge) -> [f64; 3] {
    [e.displacement.x, e.displacement.y, e.length]
}

/// Raw node features: [boundary_flag, fixed_flag, fx, fy].
pub fn node_input_features(conditions: &NodeConditions, node: usize) -> [f64; 4] {
    [
        conditions.boundary[node] as f64,
        conditions.fixed[node] as f64,
        conditions.force[node].x,
        conditions.force[node].y,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle() -> MeshGraph {
        MeshGraph {
            nodes: vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            edges: vec![(0, 1), (1, 2), (0, 2)],
            elements: vec![[0, 1, 2]],
            level_id: 1,
        }
    }

    #[test]
    fn minimal_valid_mesh_passes() {
        assert!(validate_mesh(&unit_triangle()).ok());
    }

    #[test]
    fn clockwise_element_reports_non_positive_area() {
        let mut g = unit_triangle();
        g.elements[0] = [0, 2, 1];
        let report = validate_mesh(&g);
        assert_eq!(
            report.violations,
            vec![MeshViolation::NonPositiveArea { element: 0 }]
        );
    }

    #[test]
    fn self_loop_is_reported() {
        let mut g = unit_triangle();
        g.edges[0] = (0, 0);
        let report = validate_mesh(&g);
        assert!(report
            .violations
            .contains(&MeshViolation::SelfLoop { edge: 0 }));
    }

    #[test]
    fn missing_element_side_is_reported() {
        let mut g = unit_triangle();
        g.edges.remove(1);
        let report = validate_mesh(&g);
        assert!(report
            .violations
            .contains(&MeshViolation::MissingElementSide { element: 0, a: 1, b: 2 }));
    }

    #[test]
    fn directed_edges_doubles_each_edge() {
        let g = unit_triangle();
        let de = directed_edges(&g).unwrap();
        assert_eq!(de.len(), 2 * g.edge_count());
        assert_eq!(de[0].src, 0);
        assert_eq!(de[0].dst, 1);
        assert_eq!(de[1].src, 1);
        assert_eq!(de[1].dst, 0);
    }

    #[test]
    fn directed_edge_three_four_five() {
        let g = MeshGraph {
            nodes: vec![Vec2::new(0.0, 0.0), Vec2::new(3.0, 4.0)],
            edges: vec![(0, 1)],
            elements: vec![],
            level_id: 1,
        };
        let de = directed_edges(&g).unwrap();
        assert_eq!(de[0].displacement, Vec2::new(3.0, 4.0));
        assert_eq!(de[0].length, 5.0);
        assert_eq!(edge_input_features(&de[0]), [3.0, 4.0, 5.0]);
        assert_eq!(edge_input_features(&de[1]), [-3.0, -4.0, 5.0]);
    }

    #[test]
    fn coincident_endpoints_are_rejected() {
        let g = MeshGraph {
            nodes: vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)],
            edges: vec![(0, 1)],
            elements: vec![],
            level_id: 1,
        };
        assert!(matches!(
            directed_edges(&g),
            Err(MeshError::DegenerateEdge { edge: 0 })
        ));
    }

    #[test]
    fn edge_features_match_recomputed_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            if d.norm() == 0.0 {
                continue;
            }
            let e = DirectedEdge {
                src: 0,
                dst: 1,
                displacement: d,
                length: d.norm(),
            };
            let f = edge_input_features(&e);
            assert_eq!(f[0], d.x);
            assert_eq!(f[1], d.y);
            let recomputed = (d.x * d.x + d.y * d.y).sqrt();
            assert!((f[2] - recomputed).abs() <= 1e-15 * recomputed.max(1.0));
        }
    }

    #[test]
    fn edge_features_are_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let b = Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            if (b - a).norm() == 0.0 {
                continue;
            }
            let shift = Vec2::new(10.0, -7.0);
            let base = MeshGraph {
                nodes: vec![a, b],
                edges: vec![(0, 1)],
                elements: vec![],
                level_id: 1,
            };
            let moved = base.translated(shift);
            let f0 = edge_input_features(&directed_edges(&base).unwrap()[0]);
            let f1 = edge_input_features(&directed_edges(&moved).unwrap()[0]);
            for (x, y) in f0.iter().zip(f1.iter()) {
                assert!((x - y).abs() < 1e-9, "{f0:?} vs {f1:?}");
            }
        }
    }

    #[test]
    fn node_features_expose_flags_and_force() {
        let mut c = NodeConditions::unloaded(3);
        c.boundary[1] = 1;
        c.force[1] = Vec2::new(60.0, 0.0);
        c.boundary[2] = 1;
        c.fixed[2] = 1;
        assert_eq!(node_input_features(&c, 0), [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(node_input_features(&c, 1), [1.0, 0.0, 60.0, 0.0]);
        assert_eq!(node_input_features(&c, 2), [1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn force_on_fixed_node_violates_conditions() {
        let g = unit_triangle();
        let mut c = NodeConditions::unloaded(3);
        c.fixed[0] = 1;
        c.force[0] = Vec2::new(1.0, 0.0);
        let report = validate_conditions(&c, &g);
        assert!(report
            .violations
            .contains(&MeshViolation::ForceOnFixedNode { node: 0 }));
    }
}
