//! Point-in-element location with a uniform background grid accelerator.

use thiserror::Error;

use crate::mesh::MeshGraph;
use crate::vec2::Vec2;

/// Containment slack: a point counts as inside when all barycentric weights
/// are at least this (covers points exactly on edges and vertices).
const INSIDE_TOLERANCE: f64 = -1e-12;

#[derive(Debug, Error)]
pub enum LocateError {
    #[error("mesh has no elements")]
    EmptyMesh,
    #[error("degenerate (zero-area) triangle")]
    DegenerateTriangle,
}

/// Uniform grid over the mesh bounding box; each cell lists every element
/// whose bounding box overlaps it.
#[derive(Debug, Clone)]
pub struct ElementLocator {
    origin: Vec2,
    cell_size: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl ElementLocator {
    /// Build the grid with cell size twice the median edge length.
    pub fn build(graph: &MeshGraph) -> Result<ElementLocator, LocateError> {
        if graph.elements.is_empty() {
            return Err(LocateError::EmptyMesh);
        }
        let mut lengths: Vec<f64> = graph
            .edges
            .iter()
            .map(|&(i, j)| (graph.nodes[j] - graph.nodes[i]).norm())
            .collect();
        lengths.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if lengths.is_empty() {
            1.0
        } else {
            lengths[lengths.len() / 2]
        };
        let cell_size = (2.0 * median).max(f64::MIN_POSITIVE);

        let mut lo = graph.nodes[0];
        let mut hi = graph.nodes[0];
        for &p in &graph.nodes {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let nx = (((hi.x - lo.x) / cell_size).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell_size).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        let clamp_cell = |v: f64, lo: f64, n: usize| -> usize {
            (((v - lo) / cell_size).floor() as isize).clamp(0, n as isize - 1) as usize
        };
        for (idx, _) in graph.elements.iter().enumerate() {
            let [a, b, c] = graph.element_vertices(idx);
            let exmin = a.x.min(b.x).min(c.x);
            let exmax = a.x.max(b.x).max(c.x);
            let eymin = a.y.min(b.y).min(c.y);
            let eymax = a.y.max(b.y).max(c.y);
            let cx0 = clamp_cell(exmin, lo.x, nx);
            let cx1 = clamp_cell(exmax, lo.x, nx);
            let cy0 = clamp_cell(eymin, lo.y, ny);
            let cy1 = clamp_cell(eymax, lo.y, ny);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[cy * nx + cx].push(idx);
                }
            }
        }
        Ok(ElementLocator {
            origin: lo,
            cell_size,
            nx,
            ny,
            cells,
        })
    }

    fn candidates(&self, p: Vec2) -> &[usize] {
        let cx = (((p.x - self.origin.x) / self.cell_size).floor() as isize)
            .clamp(0, self.nx as isize - 1) as usize;
        let cy = (((p.y - self.origin.y) / self.cell_size).floor() as isize)
            .clamp(0, self.ny as isize - 1) as usize;
        &self.cells[cy * self.nx + cx]
    }
}

/// Barycentric weights of `point` in the triangle; they always sum to 1 and
/// may be negative for points outside.
pub fn barycentric_weights(point: Vec2, triangle: [Vec2; 3]) -> Result<[f64; 3], LocateError> {
    let [a, b, c] = triangle;
    let denom = (b - a).cross(c - a);
    if denom == 0.0 {
        return Err(LocateError::DegenerateTriangle);
    }
    let wb = (point - a).cross(c - a) / denom;
    let wc = (b - a).cross(point - a) / denom;
    Ok([1.0 - wb - wc, wb, wc])
}

/// Distance between `point` and its clamped-barycentric reconstruction.
fn clamped_distance(point: Vec2, triangle: [Vec2; 3]) -> Result<f64, LocateError> {
    let raw = barycentric_weights(point, triangle)?;
    let mut w = raw.map(|x| x.clamp(0.0, 1.0));
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    let q = triangle[0] * w[0] + triangle[1] * w[1] + triangle[2] * w[2];
    Ok((point - q).norm())
}

/// Find the element containing `point` (lowest index on ties). Points outside
/// every element fall back to the element minimizing the clamped-barycentric
/// distance; this happens when a fine node lies marginally outside a coarse
/// level's polygonal hole contour.
pub fn locate_element(
    point: Vec2,
    graph: &MeshGraph,
    locator: &ElementLocator,
) -> Result<usize, LocateError> {
    if graph.elements.is_empty() {
        return Err(LocateError::EmptyMesh);
    }
    // Candidate lists hold every element overlapping the cell, so a containing
    // element is always among them; ascending order gives the tie rule.
    for &idx in locator.candidates(point) {
        let w = barycentric_weights(point, graph.element_vertices(idx))?;
        if w.iter().all(|&x| x >= INSIDE_TOLERANCE) {
            return Ok(idx);
        }
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for idx in 0..graph.elements.len() {
        let d = clamped_distance(point, graph.element_vertices(idx))?;
        if d < best_dist {
            best_dist = d;
            best = idx;
        }
    }
    Ok(best)
}

/// Brute-force reference used by tests: scan all elements in index order.
pub fn locate_element_brute_force(point: Vec2, graph: &MeshGraph) -> Result<usize, LocateError> {
    if graph.elements.is_empty() {
        return Err(LocateError::EmptyMesh);
    }
    for idx in 0..graph.elements.len() {
        let w = barycentric_weights(point, graph.element_vertices(idx))?;
        if w.iter().all(|&x| x >= INSIDE_TOLERANCE) {
            return Ok(idx);
        }
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for idx in 0..graph.elements.len() {
        let d = clamped_distance(point, graph.element_vertices(idx))?;
        if d < best_dist {
            best_dist = d;
            best = idx;
        }
    }
    Ok(best)
}
