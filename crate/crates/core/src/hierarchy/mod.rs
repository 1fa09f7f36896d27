//! Multi-level mesh construction: coarsen a plate geometry by re-meshing at
//! growing target edge lengths, interpolate node conditions onto the coarse
//! levels, and build the cross-level up-sampling edges.

pub mod io;
mod locate;
mod triangulate;

pub use locate::{
    barycentric_weights, locate_element, locate_element_brute_force, ElementLocator, LocateError,
};
pub use triangulate::{triangulate, triangulate_relaxed, TriangulateError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshGraph, NodeConditions};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleShape {
    Circle,
    Square,
    Hexagon,
}

/// A hole cut out of the plate. `diameter` is the circle diameter, the side
/// length of the square, or the across-corners width of the regular hexagon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub shape: HoleShape,
    pub center: Vec2,
    pub diameter: f64,
}

impl Hole {
    fn circumradius(&self) -> f64 {
        match self.shape {
            HoleShape::Circle | HoleShape::Hexagon => self.diameter / 2.0,
            HoleShape::Square => self.diameter / 2.0 * std::f64::consts::SQRT_2,
        }
    }

    /// Vertices of the polygonal shapes, counter-clockwise.
    fn polygon(&self) -> Vec<Vec2> {
        let r = self.diameter / 2.0;
        match self.shape {
            HoleShape::Circle => Vec::new(),
            HoleShape::Square => vec![
                self.center + Vec2::new(-r, -r),
                self.center + Vec2::new(r, -r),
                self.center + Vec2::new(r, r),
                self.center + Vec2::new(-r, r),
            ],
            HoleShape::Hexagon => (0..6)
                .map(|i| {
                    let a = std::f64::consts::PI / 3.0 * i as f64;
                    self.center + Vec2::new(r * a.cos(), r * a.sin())
                })
                .collect(),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match self.shape {
            HoleShape::Circle => (p - self.center).norm() < self.diameter / 2.0,
            HoleShape::Square => {
                let d = p - self.center;
                d.x.abs().max(d.y.abs()) < self.diameter / 2.0
            }
            HoleShape::Hexagon => {
                let poly = self.polygon();
                (0..poly.len()).all(|i| {
                    let a = poly[i];
                    let b = poly[(i + 1) % poly.len()];
                    (b - a).cross(p - a) > 0.0
                })
            }
        }
    }

    /// Distance from the hole boundary, negative inside. Exact for circles,
    /// slightly conservative near polygon corners.
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        match self.shape {
            HoleShape::Circle => (p - self.center).norm() - self.diameter / 2.0,
            HoleShape::Square | HoleShape::Hexagon => {
                let poly = self.polygon();
                let mut d = f64::NEG_INFINITY;
                for i in 0..poly.len() {
                    let a = poly[i];
                    let b = poly[(i + 1) % poly.len()];
                    let n = Vec2::new(b.y - a.y, a.x - b.x).normalized(); // outward
                    d = d.max((p - a).dot(n));
                }
                d
            }
        }
    }

    /// Closed-form area of the hole.
    pub fn area(&self) -> f64 {
        let r = self.diameter / 2.0;
        match self.shape {
            HoleShape::Circle => std::f64::consts::PI * r * r,
            HoleShape::Square => self.diameter * self.diameter,
            HoleShape::Hexagon => 1.5 * 3.0_f64.sqrt() * r * r,
        }
    }

    fn bbox(&self) -> (Vec2, Vec2) {
        let r = self.diameter / 2.0;
        match self.shape {
            HoleShape::Circle | HoleShape::Square => {
                (self.center - Vec2::new(r, r), self.center + Vec2::new(r, r))
            }
            HoleShape::Hexagon => {
                let h = r * 3.0_f64.sqrt() / 2.0;
                (self.center - Vec2::new(r, h), self.center + Vec2::new(r, h))
            }
        }
    }
}

/// Rectangular plate with up to two holes; the rectangle spans
/// (0, 0) .. (width, height).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub holes: Vec<Hole>,
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rectangle sides must be positive")]
    BadRectangle,
    #[error("hole {0} does not lie strictly inside the rectangle")]
    HoleOutsideRectangle(usize),
    #[error("holes {0} and {1} overlap")]
    HolesOverlap(usize, usize),
    #[error("at most two holes are supported, got {0}")]
    TooManyHoles(usize),
}

impl GeometrySpec {
    pub fn rectangle(width: f64, height: f64) -> GeometrySpec {
        GeometrySpec {
            width,
            height,
            holes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(GeometryError::BadRectangle);
        }
        if self.holes.len() > 2 {
            return Err(GeometryError::TooManyHoles(self.holes.len()));
        }
        for (i, hole) in self.holes.iter().enumerate() {
            let (lo, hi) = hole.bbox();
            if !(lo.x > 0.0 && lo.y > 0.0 && hi.x < self.width && hi.y < self.height) {
                return Err(GeometryError::HoleOutsideRectangle(i));
            }
        }
        if self.holes.len() == 2 {
            let gap = (self.holes[0].center - self.holes[1].center).norm();
            if gap <= self.holes[0].circumradius() + self.holes[1].circumradius() {
                return Err(GeometryError::HolesOverlap(0, 1));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width * self.height - self.holes.iter().map(Hole::area).sum::<f64>()
    }

    pub fn in_hole(&self, p: Vec2) -> bool {
        self.holes.iter().any(|h| h.contains(p))
    }
}

/// Directed cross-level edge from a coarse-element vertex to the fine node it
/// contains. Zero displacement is allowed (fine node on a coarse vertex).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEdge {
    pub src: usize,
    pub dst: usize,
    pub displacement: Vec2,
    pub length: f64,
}

/// R stacked mesh graphs plus the auxiliary extra-coarse graph used only for
/// tuning the top level's message-passing schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelMesh {
    /// `levels[0]` is the coarsest graph (level 1); `levels[R-1]` is the
    /// finest graph, identical to the input graph.
    pub levels: Vec<MeshGraph>,
    pub auxiliary: MeshGraph,
    /// `cross_edges[i]` connects `levels[i]` (coarse) to `levels[i+1]` (fine).
    pub cross_edges: Vec<Vec<CrossEdge>>,
    /// Interpolated conditions per level; the last entry is the input's.
    pub conditions: Vec<NodeConditions>,
    pub finest_target: f64,
    pub coarsening_factor: f64,
    pub seed: u64,
}

impl MultiLevelMesh {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &MeshGraph {
        self.levels.last().expect("at least one level")
    }

    pub fn finest_conditions(&self) -> &NodeConditions {
        self.conditions.last().expect("at least one level")
    }

    /// Translate all levels rigidly and recompute cross-edge displacements.
    pub fn translated(&self, delta: Vec2) -> MultiLevelMesh {
        let levels: Vec<MeshGraph> = self.levels.iter().map(|g| g.translated(delta)).collect();
        let cross_edges = self
            .cross_edges
            .iter()
            .enumerate()
            .map(|(i, edges)| {
                edges
                    .iter()
                    .map(|e| {
                        let d = levels[i + 1].nodes[e.dst] - levels[i].nodes[e.src];
                        CrossEdge {
                            src: e.src,
                            dst: e.dst,
                            displacement: d,
                            length: d.norm(),
                        }
                    })
                    .collect()
            })
            .collect();
        MultiLevelMesh {
            levels,
            auxiliary: self.auxiliary.translated(delta),
            cross_edges,
            conditions: self.conditions.clone(),
            finest_target: self.finest_target,
            coarsening_factor: self.coarsening_factor,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Triangulate(#[from] TriangulateError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error("mesh fragment at level {level}: coarsening produced {elements} elements, need fewer than the finer level's {finer_elements}")]
    MeshFragment {
        level: usize,
        elements: usize,
        finer_elements: usize,
    },
    #[error("levels must be >= 1 and coarsening factor > 1")]
    BadParameters,
}

fn level_seed(seed: u64, level: usize) -> u64 {
    crate::seed::mix(seed, level as u64)
}

/// Build the R-level mesh stack over `finest` (which becomes level R).
///
/// Level r is re-meshed at `finest_target * factor^(R - r)`; the auxiliary
/// graph takes one more factor step. Coarse levels keep at least an 8-point
/// contour per hole so that very coarse targets still resolve the holes.
pub fn build_multilevel(
    spec: &GeometrySpec,
    finest: MeshGraph,
    finest_conditions: NodeConditions,
    finest_target: f64,
    levels: usize,
    coarsening_factor: f64,
    seed: u64,
) -> Result<MultiLevelMesh, HierarchyError> {
    spec.validate()?;
    if levels < 1 || !(coarsening_factor > 1.0) {
        return Err(HierarchyError::BadParameters);
    }
    let r_count = levels;

    // Generate coarse graphs top-down: index 0 = coarsest.
    let mut stack: Vec<MeshGraph> = Vec::with_capacity(r_count);
    for r in 1..r_count {
        let target = finest_target * coarsening_factor.powi((r_count - r) as i32);
        let mut graph = triangulate_relaxed(spec, target, level_seed(seed, r))?;
        graph.level_id = r;
        stack.push(graph);
    }
    stack.push(MeshGraph {
        level_id: r_count,
        ..finest
    });

    let aux_target = finest_target * coarsening_factor.powi(r_count as i32);
    let mut auxiliary = triangulate_relaxed(spec, aux_target, level_seed(seed, 0))?;
    auxiliary.level_id = 0;

    // Element counts must strictly decrease from the finest level down to the
    // auxiliary graph; a tie or an empty level is the mesh-fragment failure.
    let mut prev = stack[r_count - 1].element_count();
    for r in (0..r_count.saturating_sub(1)).rev() {
        let count = stack[r].element_count();
        if count == 0 || count >= prev {
            return Err(HierarchyError::MeshFragment {
                level: r + 1,
                elements: count,
                finer_elements: prev,
            });
        }
        prev = count;
    }
    if auxiliary.element_count() == 0 || auxiliary.element_count() >= prev {
        return Err(HierarchyError::MeshFragment {
            level: 0,
            elements: auxiliary.element_count(),
            finer_elements: prev,
        });
    }

    // Conditions: interpolate from the finest graph onto every coarse level.
    let finest_locator = ElementLocator::build(&stack[r_count - 1])?;
    let mut conditions = Vec::with_capacity(r_count);
    for r in 0..r_count - 1 {
        conditions.push(interpolate_conditions(
            &stack[r_count - 1],
            &finest_conditions,
            &stack[r],
            &finest_locator,
        )?);
    }
    conditions.push(finest_conditions);

    // Up-sampling edges for each adjacent pair.
    let mut cross_edges = Vec::with_capacity(r_count.saturating_sub(1));
    for i in 0..r_count - 1 {
        let locator = ElementLocator::build(&stack[i])?;
        cross_edges.push(build_upsampling_edges(&stack[i], &stack[i + 1], &locator)?);
    }

    Ok(MultiLevelMesh {
        levels: stack,
        auxiliary,
        cross_edges,
        conditions,
        finest_target,
        coarsening_factor,
        seed,
    })
}

/// Interpolate per-node conditions from a fine graph onto the nodes of a
/// coarse graph by clamped barycentric weights in the containing fine element.
/// Flags are interpolated then re-binarized at 0.5; fixed nodes carry no force.
pub fn interpolate_conditions(
    fine: &MeshGraph,
    fine_conditions: &NodeConditions,
    coarse: &MeshGraph,
    fine_locator: &ElementLocator,
) -> Result<NodeConditions, LocateError> {
    let n = coarse.node_count();
    let mut out = NodeConditions::unloaded(n);
    for (idx, &p) in coarse.nodes.iter().enumerate() {
        let elem = locate_element(p, fine, fine_locator)?;
        let verts = fine.elements[elem];
        let weights = clamped_weights(p, fine, elem)?;
        let mut boundary = 0.0;
        let mut fixed = 0.0;
        let mut force = Vec2::ZERO;
        for (w, &v) in weights.iter().zip(verts.iter()) {
            boundary += w * fine_conditions.boundary[v] as f64;
            fixed += w * fine_conditions.fixed[v] as f64;
            force += fine_conditions.force[v] * *w;
        }
        out.boundary[idx] = (boundary >= 0.5) as u8;
        out.fixed[idx] = (fixed >= 0.5) as u8;
        out.force[idx] = if out.fixed[idx] == 1 { Vec2::ZERO } else { force };
    }
    Ok(out)
}

/// Raw barycentric weights clamped to [0, 1] and renormalized to sum 1.
fn clamped_weights(p: Vec2, graph: &MeshGraph, elem: usize) -> Result<[f64; 3], LocateError> {
    let raw = barycentric_weights(p, graph.element_vertices(elem))?;
    let mut w = raw.map(|x| x.clamp(0.0, 1.0));
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    Ok(w)
}

/// Build the directed cross-level edges: each fine node receives exactly one
/// edge from each vertex of its containing coarse element.
pub fn build_upsampling_edges(
    coarse: &MeshGraph,
    fine: &MeshGraph,
    coarse_locator: &ElementLocator,
) -> Result<Vec<CrossEdge>, LocateError> {
    let mut out = Vec::with_capacity(3 * fine.node_count());
    for (j, &p) in fine.nodes.iter().enumerate() {
        let elem = locate_element(p, coarse, coarse_locator)?;
        for &v in &coarse.elements[elem] {
            let d = p - coarse.nodes[v];
            out.push(CrossEdge {
                src: v,
                dst: j,
                displacement: d,
                length: d.norm(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
