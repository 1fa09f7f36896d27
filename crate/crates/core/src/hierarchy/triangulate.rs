//! Conforming triangulation of a plate geometry: contour sampling at the
//! target spacing, a jittered interior point grid, Delaunay triangulation,
//! and removal of triangles whose centroid falls inside a hole.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade::{DelaunayTriangulation, Point2, Triangulation};
use thiserror::Error;

use super::{GeometryError, GeometrySpec, Hole, HoleShape};
use crate::mesh::{validate_mesh, MeshGraph, ValidationReport};
use crate::vec2::Vec2;

/// Minimum number of contour samples needed to resolve a hole.
const MIN_HOLE_SAMPLES: usize = 8;
/// Interior points closer than this fraction of the spacing to any contour
/// are dropped to avoid slivers.
const CLEARANCE: f64 = 0.4;
/// Tangential jitter of boundary samples, as a fraction of the local spacing.
const BOUNDARY_JITTER: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TriangulateError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("target edge length {target} out of range (0, {max})")]
    TargetOutOfRange { target: f64, max: f64 },
    #[error("target {target} too coarse for hole {hole}: {samples} contour samples, need {MIN_HOLE_SAMPLES}")]
    ContourResolution {
        hole: usize,
        target: f64,
        samples: usize,
    },
    #[error("point insertion failed: {0:?}")]
    Insertion(spade::InsertionError),
    #[error("triangulation produced no elements")]
    Empty,
    #[error("triangulation violates mesh invariants:\n{0}")]
    Invalid(ValidationReport),
}

/// Triangulate with the strict contract: the target must resolve the
/// geometry (documented preconditions are enforced as errors).
pub fn triangulate(
    spec: &GeometrySpec,
    target_edge_length: f64,
    seed: u64,
) -> Result<MeshGraph, TriangulateError> {
    triangulate_impl(spec, target_edge_length, seed, false)
}

/// Triangulation variant used for coarse hierarchy levels: hole contours are
/// floored at the minimum sample count instead of failing, so that coarse
/// targets still produce a usable (if crude) mesh.
pub fn triangulate_relaxed(
    spec: &GeometrySpec,
    target_edge_length: f64,
    seed: u64,
) -> Result<MeshGraph, TriangulateError> {
    triangulate_impl(spec, target_edge_length, seed, true)
}

fn hole_contour(
    hole: &Hole,
    index: usize,
    target: f64,
    relaxed: bool,
) -> Result<Vec<Vec2>, TriangulateError> {
    match hole.shape {
        HoleShape::Circle => {
            let r = hole.diameter / 2.0;
            let perimeter = 2.0 * std::f64::consts::PI * r;
            let n = (perimeter / target).round() as usize;
            let n = if n >= MIN_HOLE_SAMPLES {
                n
            } else if relaxed {
                MIN_HOLE_SAMPLES
            } else {
                return Err(TriangulateError::ContourResolution {
                    hole: index,
                    target,
                    samples: n,
                });
            };
            Ok((0..n)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    hole.center + Vec2::new(r * a.cos(), r * a.sin())
                })
                .collect())
        }
        HoleShape::Square | HoleShape::Hexagon => {
            let poly = hole_polygon(hole);
            let side = (poly[1] - poly[0]).norm();
            let mut per_side = ((side / target).ceil() as usize).max(1);
            if poly.len() * per_side < MIN_HOLE_SAMPLES {
                if relaxed {
                    while poly.len() * per_side < MIN_HOLE_SAMPLES {
                        per_side += 1;
                    }
                } else {
                    return Err(TriangulateError::ContourResolution {
                        hole: index,
                        target,
                        samples: poly.len() * per_side,
                    });
                }
            }
            let mut points = Vec::with_capacity(poly.len() * per_side);
            for i in 0..poly.len() {
                let a = poly[i];
                let b = poly[(i + 1) % poly.len()];
                for s in 0..per_side {
                    let t = s as f64 / per_side as f64;
                    points.push(a + (b - a) * t);
                }
            }
            Ok(points)
        }
    }
}

fn hole_polygon(hole: &Hole) -> Vec<Vec2> {
    let r = hole.diameter / 2.0;
    match hole.shape {
        HoleShape::Circle => Vec::new(),
        HoleShape::Square => vec![
            hole.center + Vec2::new(-r, -r),
            hole.center + Vec2::new(r, -r),
            hole.center + Vec2::new(r, r),
            hole.center + Vec2::new(-r, r),
        ],
        HoleShape::Hexagon => (0..6)
            .map(|i| {
                let a = std::f64::consts::PI / 3.0 * i as f64;
                hole.center + Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect(),
    }
}

/// Rectangle boundary samples: corners fixed, interior side samples jittered
/// tangentially so that opposite sides do not produce exactly cocircular sets.
fn rectangle_contour(spec: &GeometrySpec, target: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let corners = [
        Vec2::new(0.0, 0.0),
        Vec2::new(spec.width, 0.0),
        Vec2::new(spec.width, spec.height),
        Vec2::new(0.0, spec.height),
    ];
    let mut points = Vec::new();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let len = (b - a).norm();
        let segments = ((len / target).ceil() as usize).max(1);
        let step = 1.0 / segments as f64;
        points.push(a);
        for s in 1..segments {
            let jitter = rng.gen_range(-BOUNDARY_JITTER..BOUNDARY_JITTER) * step;
            let t = s as f64 * step + jitter;
            points.push(a + (b - a) * t);
        }
    }
    points
}

fn interior_points(spec: &GeometrySpec, target: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let mut points = Vec::new();
    let nx = (spec.width / target).floor() as usize;
    let ny = (spec.height / target).floor() as usize;
    for j in 0..ny {
        for i in 0..nx {
            // Draw jitter unconditionally to keep the stream aligned across
            // filter decisions.
            let jx = rng.gen_range(-0.25..0.25) * target;
            let jy = rng.gen_range(-0.25..0.25) * target;
            let base = Vec2::new(
                (i as f64 + 0.5) * spec.width / nx as f64,
                (j as f64 + 0.5) * spec.height / ny as f64,
            );
            let p = base + Vec2::new(jx, jy);
            let margin = CLEARANCE * target;
            if p.x < margin || p.x > spec.width - margin || p.y < margin || p.y > spec.height - margin
            {
                continue;
            }
            if spec.holes.iter().any(|h| h.signed_distance(p) < margin) {
                continue;
            }
            points.push(p);
        }
    }
    points
}

fn triangulate_impl(
    spec: &GeometrySpec,
    target: f64,
    seed: u64,
    relaxed: bool,
) -> Result<MeshGraph, TriangulateError> {
    spec.validate()?;
    let max_target = spec.width.min(spec.height) / 2.0;
    if !relaxed && !(target > 0.0 && target < max_target) {
        return Err(TriangulateError::TargetOutOfRange {
            target,
            max: max_target,
        });
    }
    if relaxed && !(target > 0.0) {
        return Err(TriangulateError::TargetOutOfRange {
            target,
            max: max_target,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = rectangle_contour(spec, target, &mut rng);
    for (i, hole) in spec.holes.iter().enumerate() {
        points.extend(hole_contour(hole, i, target, relaxed)?);
    }
    points.extend(interior_points(spec, target, &mut rng));

    // Exact duplicates would be merged by the triangulation and break the
    // vertex-index mapping; drop them up front.
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut unique = Vec::with_capacity(points.len());
    for p in points {
        if seen.insert((p.x.to_bits(), p.y.to_bits()), unique.len()).is_none() {
            unique.push(p);
        }
    }

    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handle_to_node = vec![usize::MAX; unique.len()];
    for (i, p) in unique.iter().enumerate() {
        let handle = tri
            .insert(Point2::new(p.x, p.y))
            .map_err(TriangulateError::Insertion)?;
        handle_to_node[handle.index()] = i;
    }

    let mut elements: Vec<[usize; 3]> = Vec::new();
    for face in tri.inner_faces() {
        let [a, b, c] = face.vertices().map(|v| handle_to_node[v.index()]);
        let centroid = (unique[a] + unique[b] + unique[c]) / 3.0;
        if spec.in_hole(centroid) {
            continue;
        }
        // Inner Delaunay faces come out counter-clockwise already; guard
        // against degenerate orientation anyway.
        let signed =
            crate::vec2::triangle_signed_area(unique[a], unique[b], unique[c]);
        if signed > 0.0 {
            elements.push([a, b, c]);
        } else {
            elements.push([a, c, b]);
        }
    }
    if elements.is_empty() {
        return Err(TriangulateError::Empty);
    }

    // Compact to nodes actually referenced by elements.
    let mut remap = vec![usize::MAX; unique.len()];
    let mut nodes = Vec::new();
    for elem in &elements {
        for &v in elem {
            if remap[v] == usize::MAX {
                remap[v] = nodes.len();
                nodes.push(unique[v]);
            }
        }
    }
    for elem in &mut elements {
        for v in elem.iter_mut() {
            *v = remap[*v];
        }
    }

    // Canonical ordering: rotate each element so the smallest index leads
    // (preserves orientation), sort elements and edges lexicographically.
    for elem in &mut elements {
        let lead = (0..3).min_by_key(|&i| elem[i]).unwrap();
        elem.rotate_left(lead);
    }
    elements.sort_unstable();

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for elem in &elements {
        for side in 0..3 {
            let a = elem[side];
            let b = elem[(side + 1) % 3];
            edges.insert((a.min(b), a.max(b)));
        }
    }

    let graph = MeshGraph {
        nodes,
        edges: edges.into_iter().collect(),
        elements,
        level_id: 0,
    };
    let report = validate_mesh(&graph);
    if !report.ok() {
        return Err(TriangulateError::Invalid(report));
    }
    Ok(graph)
}
