//! Direction-based edge partitioning and message-passing step tuning.
//!
//! Directed edges are clustered into K groups by angular distance between
//! edge directions (Lloyd iterations over the unit circle). The number of
//! steps to run per (level, group) is then the largest hop-count diameter of
//! any connected component that a group induces inside the projection of a
//! coarse element onto the finer level.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{ElementLocator, LocateError, MultiLevelMesh};
use crate::mesh::{directed_edges, DirectedEdge, MeshError, MeshGraph};
use crate::vec2::Vec2;

/// Default group count; the edge-direction split that worked best.
pub const DEFAULT_GROUPS: usize = 4;
/// Steps are floored at 1 (a group still needs one step to touch its edges)
/// and capped to bound the cost on pathological meshes.
pub const DEFAULT_STEP_CAP: u32 = 16;
const MAX_ITERATIONS: usize = 100;
/// Two directions closer than this are considered identical when seeding.
const DISTINCT_SEED_ANGLE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("need at least {k} directed edges, got {edges}")]
    NotEnoughEdges { k: usize, edges: usize },
    #[error("group count must be at least 1")]
    ZeroGroups,
    #[error("zero direction vector")]
    ZeroVector,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Locate(#[from] LocateError),
}

/// Angular distance in radians, in [0, pi]. Scale-free in both arguments.
pub fn angle_distance(u: Vec2, mu: Vec2) -> Result<f64, AdaptiveError> {
    let nu = u.norm();
    let nmu = mu.norm();
    if nu == 0.0 || nmu == 0.0 {
        return Err(AdaptiveError::ZeroVector);
    }
    let cos = (u.dot(mu) / (nu * nmu)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Assignment of every directed edge of one mesh level to a direction group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphPartition {
    pub level_id: usize,
    pub groups: usize,
    /// Group index per directed edge (indexed like `directed_edges` output).
    pub assignment: Vec<usize>,
    /// Unit direction per group.
    pub centroids: Vec<Vec2>,
    pub iterations_used: usize,
    /// Angle evaluations spent in assignment phases; bounded by
    /// iterations * groups * directed-edge count.
    pub distance_evals: u64,
    /// Clustering objective after each assignment phase: the sum of
    /// 1 - cos(angle to assigned centroid). Non-increasing across iterations
    /// (the plain angle sum is not, since the mean update optimizes cosines).
    pub objective_history: Vec<f64>,
}

impl SubgraphPartition {
    /// Directed-edge indices of one group, ascending.
    pub fn group_edges(&self, group: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == group)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Draw K pairwise-distinct edge directions as initial centroids, consuming
/// draws from `rng`. Falls back to accepting duplicates when the mesh does
/// not have K distinct directions.
pub fn initial_centroids_from(
    rng: &mut ChaCha8Rng,
    edges: &[DirectedEdge],
    k: usize,
) -> Result<Vec<Vec2>, AdaptiveError> {
    if k == 0 {
        return Err(AdaptiveError::ZeroGroups);
    }
    if edges.len() < k {
        return Err(AdaptiveError::NotEnoughEdges {
            k,
            edges: edges.len(),
        });
    }
    let mut centroids: Vec<Vec2> = Vec::with_capacity(k);
    let mut attempts = 0usize;
    let max_attempts = 50 * k * edges.len();
    while centroids.len() < k {
        let idx = rng.gen_range(0..edges.len());
        let dir = edges[idx].displacement.normalized();
        let distinct = centroids
            .iter()
            .all(|&c| angle_distance(dir, c).unwrap_or(0.0) > DISTINCT_SEED_ANGLE);
        if distinct || attempts >= max_attempts {
            centroids.push(dir);
        }
        attempts += 1;
    }
    Ok(centroids)
}

/// Lloyd-style clustering of directed edges by direction (lowest group wins
/// ties). Stops when assignments no longer change or after 100 iterations.
/// A group whose member mean vanishes is re-seeded from a random member; a
/// group empty at convergence steals the farthest edge from the largest group.
pub fn divide_directed_edges(
    edges: &[DirectedEdge],
    level_id: usize,
    k: usize,
    seed: u64,
) -> Result<SubgraphPartition, AdaptiveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = initial_centroids_from(&mut rng, edges, k)?;
    let n = edges.len();
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0usize;
    let mut distance_evals = 0u64;
    let mut objective_history = Vec::new();

    loop {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for (i, e) in edges.iter().enumerate() {
            let mut best = 0usize;
            let mut best_angle = f64::INFINITY;
            for (g, &c) in centroids.iter().enumerate() {
                let a = angle_distance(e.displacement, c)?;
                distance_evals += 1;
                if a < best_angle {
                    best_angle = a;
                    best = g;
                }
            }
            objective += 1.0 - best_angle.cos();
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        objective_history.push(objective);
        if !changed || iterations >= MAX_ITERATIONS {
            break;
        }
        update_centroids(edges, &assignment, &mut centroids, &mut rng);
    }

    repair_empty_groups(edges, &mut assignment, &mut centroids, &mut rng);

    Ok(SubgraphPartition {
        level_id,
        groups: k,
        assignment,
        centroids,
        iterations_used: iterations,
        distance_evals,
        objective_history,
    })
}

fn update_centroids(
    edges: &[DirectedEdge],
    assignment: &[usize],
    centroids: &mut [Vec2],
    rng: &mut ChaCha8Rng,
) {
    let k = centroids.len();
    let mut sums = vec![Vec2::ZERO; k];
    let mut member_of: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in edges.iter().enumerate() {
        // Mean over unit directions: edge length must not weight the angle.
        sums[assignment[i]] += e.displacement.normalized();
        member_of[assignment[i]].push(i);
    }
    for g in 0..k {
        if member_of[g].is_empty() {
            continue; // handled at convergence
        }
        if sums[g].norm() == 0.0 {
            // Opposite members cancelled out; re-seed from a random member.
            let pick = member_of[g][rng.gen_range(0..member_of[g].len())];
            centroids[g] = edges[pick].displacement.normalized();
        } else {
            centroids[g] = sums[g].normalized();
        }
    }
}

fn repair_empty_groups(
    edges: &[DirectedEdge],
    assignment: &mut [usize],
    centroids: &mut [Vec2],
    rng: &mut ChaCha8Rng,
) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &g in assignment.iter() {
            counts[g] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&g| counts[g]).unwrap();
        // Farthest member of the largest group (lowest index on ties).
        let mut steal = usize::MAX;
        let mut steal_angle = f64::NEG_INFINITY;
        for (i, e) in edges.iter().enumerate() {
            if assignment[i] != largest {
                continue;
            }
            let a = angle_distance(e.displacement, centroids[largest]).unwrap_or(0.0);
            if a > steal_angle {
                steal_angle = a;
                steal = i;
            }
        }
        assignment[steal] = empty;
        centroids[empty] = edges[steal].displacement.normalized();
        // Refresh the donor centroid over its remaining members.
        let donor_members: Vec<usize> = assignment
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == largest)
            .map(|(i, _)| i)
            .collect();
        if !donor_members.is_empty() {
            let sum = donor_members
                .iter()
                .fold(Vec2::ZERO, |acc, &i| acc + edges[i].displacement.normalized());
            if sum.norm() == 0.0 {
                let pick = donor_members[rng.gen_range(0..donor_members.len())];
                centroids[largest] = edges[pick].displacement.normalized();
            } else {
                centroids[largest] = sum.normalized();
            }
        }
    }
}

/// Partition a mesh graph's directed edges into K direction groups.
pub fn divide_mesh_graph(
    graph: &MeshGraph,
    k: usize,
    seed: u64,
) -> Result<SubgraphPartition, AdaptiveError> {
    let edges = directed_edges(graph)?;
    divide_directed_edges(&edges, graph.level_id, k, seed)
}

/// Per-(level, group) message-passing step counts, level 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPSchedule {
    pub cap: u32,
    /// `steps[r - 1][k]` is the step count of group k on level r.
    pub steps: Vec<Vec<u32>>,
}

impl MPSchedule {
    pub fn total_intra_steps(&self) -> u32 {
        self.steps.iter().flatten().sum()
    }

    /// Equal split of `intra_budget` over all (level, group) cells, floored
    /// division with the remainder assigned to the finest level's groups.
    pub fn uniform(levels: usize, groups: usize, intra_budget: u32) -> MPSchedule {
        let cells = (levels * groups) as u32;
        let base = intra_budget / cells;
        let mut remainder = intra_budget % cells;
        let mut steps = vec![vec![base.max(1); groups]; levels];
        let mut k = 0usize;
        while remainder > 0 {
            steps[levels - 1][k % groups] += 1;
            remainder -= 1;
            k += 1;
        }
        MPSchedule {
            cap: u32::MAX,
            steps,
        }
    }

    /// Rescale step counts to a new intra-level total, removing from the
    /// largest cells first and adding to the smallest, keeping every cell
    /// at least 1.
    pub fn rescaled_to(&self, intra_budget: u32) -> MPSchedule {
        let mut steps = self.steps.clone();
        let cells = steps.iter().map(|g| g.len()).sum::<usize>() as u32;
        let target = intra_budget.max(cells);
        loop {
            let total: u32 = steps.iter().flatten().sum();
            if total == target {
                break;
            }
            if total > target {
                // first maximum in (level, group) scan order
                let (mut br, mut bk, mut best) = (0usize, 0usize, 0u32);
                for (r, row) in steps.iter().enumerate() {
                    for (k, &v) in row.iter().enumerate() {
                        if v > best {
                            best = v;
                            br = r;
                            bk = k;
                        }
                    }
                }
                if best <= 1 {
                    break;
                }
                steps[br][bk] -= 1;
            } else {
                let (mut br, mut bk, mut best) = (0usize, 0usize, u32::MAX);
                for (r, row) in steps.iter().enumerate() {
                    for (k, &v) in row.iter().enumerate() {
                        if v < best {
                            best = v;
                            br = r;
                            bk = k;
                        }
                    }
                }
                steps[br][bk] += 1;
                let _ = best;
            }
        }
        MPSchedule {
            cap: self.cap,
            steps,
        }
    }
}

/// Group fine nodes by the coarse element containing them. The returned lists
/// partition the fine node set; empty lists are coarse elements that contain
/// no fine node.
pub fn project_areas(
    coarse: &MeshGraph,
    fine: &MeshGraph,
    coarse_locator: &ElementLocator,
) -> Result<Vec<Vec<usize>>, AdaptiveError> {
    let mut areas = vec![Vec::new(); coarse.element_count()];
    for (node, &p) in fine.nodes.iter().enumerate() {
        let elem = crate::hierarchy::locate_element(p, coarse, coarse_locator)?;
        areas[elem].push(node);
    }
    Ok(areas)
}

/// Fine nodes located inside one coarse element.
pub fn project_area(
    coarse_element: usize,
    coarse: &MeshGraph,
    fine: &MeshGraph,
    coarse_locator: &ElementLocator,
) -> Result<Vec<usize>, AdaptiveError> {
    Ok(project_areas(coarse, fine, coarse_locator)?[coarse_element].clone())
}

/// Hop-count diameter of every connected component induced by `pairs` over
/// `node_set` (global node ids). Isolated nodes contribute diameter 0.
pub fn component_diameters(node_set: &[usize], pairs: &[(usize, usize)]) -> Vec<u32> {
    if node_set.is_empty() {
        return Vec::new();
    }
    let mut local = std::collections::HashMap::with_capacity(node_set.len());
    for (li, &n) in node_set.iter().enumerate() {
        local.insert(n, li);
    }
    let n = node_set.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in pairs {
        let (Some(&la), Some(&lb)) = (local.get(&a), local.get(&b)) else {
            continue;
        };
        if la == lb {
            continue;
        }
        adj[la].push(lb);
        adj[lb].push(la);
    }

    // Label components by BFS flood fill.
    let mut component = vec![usize::MAX; n];
    let mut n_components = 0usize;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let label = n_components;
        n_components += 1;
        let mut queue = VecDeque::from([start]);
        component[start] = label;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if component[v] == usize::MAX {
                    component[v] = label;
                    queue.push_back(v);
                }
            }
        }
    }

    // Diameter = max eccentricity; BFS from every node.
    let mut diameters = vec![0u32; n_components];
    let mut dist = vec![u32::MAX; n];
    for start in 0..n {
        for d in dist.iter_mut() {
            *d = u32::MAX;
        }
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        let mut ecc = 0u32;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    ecc = ecc.max(dist[v]);
                    queue.push_back(v);
                }
            }
        }
        let c = component[start];
        diameters[c] = diameters[c].max(ecc);
    }
    diameters
}

/// Tune the per-group step counts for one (coarse, fine) level pair.
pub fn tune_level(
    coarse: &MeshGraph,
    fine: &MeshGraph,
    partition: &SubgraphPartition,
    cap: u32,
) -> Result<Vec<u32>, AdaptiveError> {
    let k = partition.groups;
    let fine_edges = directed_edges(fine)?;
    debug_assert_eq!(fine_edges.len(), partition.assignment.len());
    let locator = ElementLocator::build(coarse)?;
    let areas = project_areas(coarse, fine, &locator)?;

    // Fine node -> containing coarse element, for in-area edge bucketing.
    let mut located = vec![usize::MAX; fine.node_count()];
    for (a, nodes) in areas.iter().enumerate() {
        for &nd in nodes {
            located[nd] = a;
        }
    }

    // Bucket intra-area edges by (area, group) in one pass.
    let mut buckets: Vec<Vec<Vec<(usize, usize)>>> =
        vec![vec![Vec::new(); k]; coarse.element_count()];
    for (idx, e) in fine_edges.iter().enumerate() {
        if located[e.src] == located[e.dst] {
            buckets[located[e.src]][partition.assignment[idx]].push((e.src, e.dst));
        }
    }

    let mut max_diameter = vec![0u32; k];
    for (a, nodes) in areas.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        for g in 0..k {
            for d in component_diameters(nodes, &buckets[a][g]) {
                max_diameter[g] = max_diameter[g].max(d);
            }
        }
    }
    Ok(max_diameter
        .into_iter()
        .map(|d| d.clamp(1, cap))
        .collect())
}

/// Tune the full schedule: level 1 projects from the auxiliary graph, every
/// other level from the next-coarser level.
pub fn tune_mp_steps(
    multilevel: &MultiLevelMesh,
    partitions: &[SubgraphPartition],
    cap: u32,
) -> Result<MPSchedule, AdaptiveError> {
    assert_eq!(partitions.len(), multilevel.level_count());
    let mut steps = Vec::with_capacity(multilevel.level_count());
    for r in 0..multilevel.level_count() {
        let coarse = if r == 0 {
            &multilevel.auxiliary
        } else {
            &multilevel.levels[r - 1]
        };
        steps.push(tune_level(
            coarse,
            &multilevel.levels[r],
            &partitions[r],
            cap,
        )?);
    }
    Ok(MPSchedule { cap, steps })
}
