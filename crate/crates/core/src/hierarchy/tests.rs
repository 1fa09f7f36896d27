use super::locate::locate_element_brute_force;
use super::*;
use crate::mesh::{directed_edges, validate_mesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn beam_spec() -> GeometrySpec {
    GeometrySpec {
        width: 15.0,
        height: 100.0,
        holes: vec![Hole {
            shape: HoleShape::Circle,
            center: Vec2::new(5.0, 5.0),
            diameter: 5.0,
        }],
    }
}

#[test]
fn beam_node_count_in_band() {
    let g = triangulate(&beam_spec(), 2.0, 42).unwrap();
    assert!(validate_mesh(&g).ok());
    assert!(
        (350..=750).contains(&g.node_count()),
        "node count {}",
        g.node_count()
    );
}

#[test]
fn beam_median_edge_length_near_target() {
    let g = triangulate(&beam_spec(), 2.0, 7).unwrap();
    let mut lengths: Vec<f64> = g
        .edges
        .iter()
        .map(|&(i, j)| (g.nodes[j] - g.nodes[i]).norm())
        .collect();
    lengths.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let median = lengths[lengths.len() / 2];
    assert!(
        (median - 2.0).abs() <= 0.35 * 2.0,
        "median edge length {median}"
    );
}

#[test]
fn unit_square_tiles_exactly() {
    let spec = GeometrySpec::rectangle(1.0, 1.0);
    let g = triangulate(&spec, 0.49, 1).unwrap();
    assert!(g.element_count() >= 2);
    let total: f64 = (0..g.element_count())
        .map(|e| g.element_signed_area(e))
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "area {total}");
}

#[test]
fn hexagon_hole_area_matches_closed_form() {
    let mut spec = beam_spec();
    spec.holes[0].shape = HoleShape::Hexagon;
    let g = triangulate(&spec, 1.0, 3).unwrap();
    let total: f64 = (0..g.element_count())
        .map(|e| g.element_signed_area(e))
        .sum();
    let expected = 15.0 * 100.0 - spec.holes[0].area();
    assert!(
        (total - expected).abs() <= 0.01 * expected,
        "area {total} vs {expected}"
    );
}

#[test]
fn signed_area_sum_matches_contour_polygon() {
    // The kept triangles tile the rectangle minus the sampled hole polygon,
    // so against the polygon area the match is near machine precision.
    let spec = beam_spec();
    let target = 2.0;
    let g = triangulate(&spec, target, 9).unwrap();
    let total: f64 = (0..g.element_count())
        .map(|e| g.element_signed_area(e))
        .sum();
    let hole = &spec.holes[0];
    let r = hole.diameter / 2.0;
    let perimeter = 2.0 * std::f64::consts::PI * r;
    let n = (perimeter / target).round() as usize;
    let polygon_area = 0.5 * n as f64 * r * r * (2.0 * std::f64::consts::PI / n as f64).sin();
    let expected = 15.0 * 100.0 - polygon_area;
    assert!(
        ((total - expected) / expected).abs() < 1e-9,
        "area {total} vs {expected}"
    );
}

#[test]
fn coarse_target_fails_hole_resolution() {
    let err = triangulate(&beam_spec(), 4.0, 1).unwrap_err();
    assert!(matches!(err, TriangulateError::ContourResolution { .. }));
    // The relaxed variant floors the contour at 8 samples instead.
    let g = triangulate_relaxed(&beam_spec(), 4.0, 1).unwrap();
    assert!(validate_mesh(&g).ok());
}

#[test]
fn triangulate_is_deterministic() {
    let a = triangulate(&beam_spec(), 2.0, 5).unwrap();
    let b = triangulate(&beam_spec(), 2.0, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn barycentric_vertex_and_centroid() {
    let tri = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 2.0)];
    assert_eq!(barycentric_weights(tri[0], tri).unwrap(), [1.0, 0.0, 0.0]);
    let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
    let w = barycentric_weights(centroid, tri).unwrap();
    for x in w {
        assert!((x - 1.0 / 3.0).abs() < 1e-14);
    }
}

#[test]
fn barycentric_reconstructs_random_points() {
    let tri = [Vec2::new(0.3, 0.1), Vec2::new(2.7, 0.9), Vec2::new(1.1, 3.2)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let mut a = rng.gen_range(0.0..1.0);
        let mut b = rng.gen_range(0.0..1.0);
        if a + b > 1.0 {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        let p = tri[0] * (1.0 - a - b) + tri[1] * a + tri[2] * b;
        let w = barycentric_weights(p, tri).unwrap();
        assert!((w[0] + w[1] + w[2] - 1.0).abs() < 1e-12);
        let q = tri[0] * w[0] + tri[1] * w[1] + tri[2] * w[2];
        assert!((p - q).norm() < 1e-12);
    }
}

#[test]
fn degenerate_triangle_is_an_error() {
    let tri = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)];
    assert!(matches!(
        barycentric_weights(Vec2::new(0.5, 0.5), tri),
        Err(LocateError::DegenerateTriangle)
    ));
}

#[test]
fn locate_element_returns_containing_element() {
    let g = triangulate(&beam_spec(), 2.0, 11).unwrap();
    let locator = ElementLocator::build(&g).unwrap();
    let centroid = g.element_centroid(7);
    assert_eq!(locate_element(centroid, &g, &locator).unwrap(), 7);
}

#[test]
fn locate_vertex_tie_breaks_to_lowest_incident_element() {
    let g = triangulate(&beam_spec(), 2.0, 13).unwrap();
    let locator = ElementLocator::build(&g).unwrap();
    // Pick a node shared by several elements.
    let node = g.elements[10][0];
    let expected = (0..g.element_count())
        .find(|&e| {
            let w = barycentric_weights(g.nodes[node], g.element_vertices(e)).unwrap();
            w.iter().all(|&x| x >= -1e-12)
        })
        .unwrap();
    assert_eq!(locate_element(g.nodes[node], &g, &locator).unwrap(), expected);
}

#[test]
fn locator_agrees_with_brute_force_on_random_points() {
    let g = triangulate(&beam_spec(), 2.0, 17).unwrap();
    let locator = ElementLocator::build(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tested = 0;
    while tested < 1000 {
        let p = Vec2::new(rng.gen_range(0.0..15.0), rng.gen_range(0.0..100.0));
        let fast = locate_element(p, &g, &locator).unwrap();
        let brute = locate_element_brute_force(p, &g).unwrap();
        assert_eq!(fast, brute, "point {p:?}");
        tested += 1;
    }
}

#[test]
fn build_multilevel_r1_is_degenerate() {
    let spec = beam_spec();
    let finest = triangulate(&spec, 2.0, 21).unwrap();
    let conditions = crate::mesh::NodeConditions::unloaded(finest.node_count());
    let mlm = build_multilevel(&spec, finest.clone(), conditions, 2.0, 1, 2.0, 21).unwrap();
    assert_eq!(mlm.level_count(), 1);
    assert!(mlm.cross_edges.is_empty());
    assert_eq!(mlm.finest().nodes, finest.nodes);
    assert!(mlm.auxiliary.element_count() < finest.element_count());
}

fn desk_multilevel(seed: u64) -> MultiLevelMesh {
    let spec = beam_spec();
    let finest = triangulate(&spec, 2.0, seed).unwrap();
    let mut conditions = crate::mesh::NodeConditions::unloaded(finest.node_count());
    // Load the top edge, fix the bottom edge.
    for (i, p) in finest.nodes.iter().enumerate() {
        if p.y == 100.0 {
            conditions.boundary[i] = 1;
            conditions.force[i] = Vec2::new(10.0, 0.0);
        }
        if p.y == 0.0 {
            conditions.boundary[i] = 1;
            conditions.fixed[i] = 1;
        }
    }
    build_multilevel(&spec, finest, conditions, 2.0, 3, 2.0, seed).unwrap()
}

#[test]
fn multilevel_element_counts_shrink_per_step() {
    let mlm = desk_multilevel(23);
    let counts: Vec<usize> = mlm.levels.iter().map(|g| g.element_count()).collect();
    for r in 1..counts.len() {
        let ratio = counts[r] as f64 / counts[r - 1] as f64;
        assert!(
            (2.5..=6.0).contains(&ratio),
            "counts {counts:?}, ratio {ratio}"
        );
    }
    assert!(mlm.auxiliary.element_count() < counts[0]);
}

#[test]
fn multilevel_is_deterministic() {
    let a = desk_multilevel(31);
    let b = desk_multilevel(31);
    assert_eq!(a, b);
}

#[test]
fn cross_edges_give_every_fine_node_in_degree_three() {
    let mlm = desk_multilevel(37);
    for (i, edges) in mlm.cross_edges.iter().enumerate() {
        let fine = &mlm.levels[i + 1];
        assert_eq!(edges.len(), 3 * fine.node_count());
        let mut in_degree = vec![0usize; fine.node_count()];
        for e in edges {
            assert!(e.src < mlm.levels[i].node_count());
            in_degree[e.dst] += 1;
        }
        assert!(in_degree.iter().all(|&d| d == 3));
    }
}

#[test]
fn fine_node_on_coarse_vertex_yields_zero_length_cross_edge() {
    // The rectangle corners exist at every level, so at least one cross edge
    // must have zero displacement.
    let mlm = desk_multilevel(41);
    assert!(mlm.cross_edges[0].iter().any(|e| e.length == 0.0));
}

#[test]
fn interpolation_on_identical_mesh_is_exact() {
    let spec = beam_spec();
    let g = triangulate(&spec, 2.0, 43).unwrap();
    let mut conditions = crate::mesh::NodeConditions::unloaded(g.node_count());
    for (i, p) in g.nodes.iter().enumerate() {
        if p.y == 100.0 {
            conditions.boundary[i] = 1;
            conditions.force[i] = Vec2::new(3.0, -1.5);
        }
        if p.y == 0.0 {
            conditions.boundary[i] = 1;
            conditions.fixed[i] = 1;
        }
    }
    let locator = ElementLocator::build(&g).unwrap();
    let out = interpolate_conditions(&g, &conditions, &g, &locator).unwrap();
    assert_eq!(out, conditions);
}

#[test]
fn interpolation_is_exact_for_affine_fields() {
    // Place f(x, y) = 2x - 3y + 1 into a force component: barycentric
    // interpolation must reproduce it at every coarse node.
    let spec = beam_spec();
    let fine = triangulate(&spec, 2.0, 47).unwrap();
    let coarse = triangulate_relaxed(&spec, 4.0, 48).unwrap();
    let mut conditions = crate::mesh::NodeConditions::unloaded(fine.node_count());
    for (i, p) in fine.nodes.iter().enumerate() {
        conditions.force[i] = Vec2::new(2.0 * p.x - 3.0 * p.y + 1.0, 0.0);
    }
    let locator = ElementLocator::build(&fine).unwrap();
    let out = interpolate_conditions(&fine, &conditions, &coarse, &locator).unwrap();
    for (i, p) in coarse.nodes.iter().enumerate() {
        let expected = 2.0 * p.x - 3.0 * p.y + 1.0;
        // Coarse hole-contour nodes can fall outside the fine mesh; clamped
        // weights make those extrapolations approximate, so skip them.
        let elem = locate_element(*p, &fine, &locator).unwrap();
        let w = barycentric_weights(*p, fine.element_vertices(elem)).unwrap();
        if w.iter().any(|&x| x < -1e-12) {
            continue;
        }
        assert!(
            (out.force[i].x - expected).abs() < 1e-9,
            "node {i}: {} vs {expected}",
            out.force[i].x
        );
    }
}

#[test]
fn interpolated_loaded_element_is_convex_combination() {
    // One fine element with hand-set forces; a coarse probe node inside it.
    let fine = MeshGraph {
        nodes: vec![Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0), Vec2::new(0.0, 4.0)],
        edges: vec![(0, 1), (1, 2), (0, 2)],
        elements: vec![[0, 1, 2]],
        level_id: 2,
    };
    let mut conditions = crate::mesh::NodeConditions::unloaded(3);
    conditions.force[0] = Vec2::new(12.0, 0.0);
    conditions.force[1] = Vec2::new(0.0, 8.0);
    conditions.force[2] = Vec2::new(-4.0, 4.0);
    let coarse = MeshGraph {
        nodes: vec![Vec2::new(1.0, 1.0), Vec2::new(2.0, 1.0), Vec2::new(1.0, 2.0)],
        edges: vec![(0, 1), (1, 2), (0, 2)],
        elements: vec![[0, 1, 2]],
        level_id: 1,
    };
    let locator = ElementLocator::build(&fine).unwrap();
    let out = interpolate_conditions(&fine, &conditions, &coarse, &locator).unwrap();
    // Node (1, 1): weights (1/2, 1/4, 1/4) by hand.
    let expected = conditions.force[0] * 0.5 + conditions.force[1] * 0.25 + conditions.force[2] * 0.25;
    assert!((out.force[0] - expected).norm() < 1e-12);
}

#[test]
fn hierarchy_round_trips_through_directory() {
    let mlm = desk_multilevel(53);
    let dir = tempfile::tempdir().unwrap();
    io::write_multilevel(dir.path(), &mlm, None).unwrap();
    let (back, response) = io::read_multilevel(dir.path()).unwrap();
    assert_eq!(back, mlm);
    assert!(response.is_none());
}

#[test]
fn directed_edges_work_on_all_levels() {
    let mlm = desk_multilevel(59);
    for g in mlm.levels.iter().chain(std::iter::once(&mlm.auxiliary)) {
        let de = directed_edges(g).unwrap();
        assert_eq!(de.len(), 2 * g.edge_count());
    }
}

#[test]
fn overlapping_holes_are_rejected() {
    let spec = GeometrySpec {
        width: 20.0,
        height: 20.0,
        holes: vec![
            Hole {
                shape: HoleShape::Circle,
                center: Vec2::new(8.0, 10.0),
                diameter: 6.0,
            },
            Hole {
                shape: HoleShape::Circle,
                center: Vec2::new(12.0, 10.0),
                diameter: 6.0,
            },
        ],
    };
    assert!(matches!(
        spec.validate(),
        Err(GeometryError::HolesOverlap(0, 1))
    ));
}

#[test]
fn mesh_fragment_surfaces_as_error() {
    // A huge coarsening factor drives the coarse level to a handful of
    // elements and the auxiliary graph cannot shrink further.
    let spec = GeometrySpec::rectangle(10.0, 10.0);
    let finest = triangulate(&spec, 1.0, 3).unwrap();
    let conditions = crate::mesh::NodeConditions::unloaded(finest.node_count());
    let err = build_multilevel(&spec, finest, conditions, 1.0, 3, 40.0, 3).unwrap_err();
    assert!(matches!(err, HierarchyError::MeshFragment { .. }));
}
