//! Plane-stress linear elasticity on triangular meshes with constant-strain
//! elements. Serves as the ground-truth generator: per-node displacements and
//! von Mises stress for a loaded, partially fixed plate.

mod solver;

pub use solver::{BandCholesky, PcgResult};

use thiserror::Error;

use crate::mesh::{MeshGraph, NodeConditions};
use crate::vec2::Vec2;

/// Nodes at or above this count switch from the banded direct factorization
/// to preconditioned conjugate gradients.
pub const DIRECT_SOLVE_NODE_LIMIT: usize = 5000;
const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    /// Young's modulus (MPa).
    pub youngs_modulus: f64,
    /// Poisson ratio.
    pub poisson_ratio: f64,
    /// Plate thickness (mm).
    pub thickness: f64,
}

impl Material {
    /// Structural-steel-like defaults.
    pub fn structural_steel() -> Material {
        Material {
            youngs_modulus: 210_000.0,
            poisson_ratio: 0.3,
            thickness: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if self.youngs_modulus > 0.0
            && (0.0..0.5).contains(&self.poisson_ratio)
            && self.thickness > 0.0
        {
            Ok(())
        } else {
            Err(FemError::BadMaterial)
        }
    }

    /// Plane-stress constitutive matrix D.
    pub fn constitutive(&self) -> [[f64; 3]; 3] {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let f = e / (1.0 - nu * nu);
        [
            [f, f * nu, 0.0],
            [f * nu, f, 0.0],
            [0.0, 0.0, f * (1.0 - nu) / 2.0],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemSolution {
    /// Per-node displacement (mm).
    pub displacement: Vec<Vec2>,
    /// Per-node von Mises stress (MPa), area-weighted element average.
    pub von_mises: Vec<f64>,
    pub iterations: usize,
    /// Relative residual of the constrained system.
    pub residual: f64,
}

#[derive(Debug, Error)]
pub enum FemError {
    #[error("material constants out of range")]
    BadMaterial,
    #[error("degenerate element {element}")]
    DegenerateElement { element: usize },
    #[error("fewer than 3 constrained degrees of freedom: rigid-body mode")]
    RigidBodyMode,
    #[error("stiffness matrix is singular (insufficient constraints)")]
    Singular,
    #[error("conjugate gradient did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("loads/constraints have wrong length: expected {expected} dofs, got {got}")]
    DofMismatch { expected: usize, got: usize },
}

/// Symmetric sparse matrix in row maps; both triangles stored.
#[derive(Debug, Clone)]
pub struct SparseSym {
    rows: Vec<std::collections::BTreeMap<usize, f64>>,
}

impl SparseSym {
    pub fn zeros(n: usize) -> SparseSym {
        SparseSym {
            rows: vec![std::collections::BTreeMap::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        *self.rows[i].entry(j).or_insert(0.0) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].get(&j).copied().unwrap_or(0.0)
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[i].iter().map(|(&j, &v)| (j, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(&j, &v)| v * x[j]).sum())
            .collect()
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.values().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Strain-displacement matrix of the constant-strain triangle and twice the
/// signed area.
fn strain_displacement(coords: [Vec2; 3]) -> ([[f64; 6]; 3], f64) {
    let [p1, p2, p3] = coords;
    let two_a = (p2 - p1).cross(p3 - p1);
    let b = [p2.y - p3.y, p3.y - p1.y, p1.y - p2.y];
    let c = [p3.x - p2.x, p1.x - p3.x, p2.x - p1.x];
    let mut bm = [[0.0; 6]; 3];
    for i in 0..3 {
        bm[0][2 * i] = b[i] / two_a;
        bm[1][2 * i + 1] = c[i] / two_a;
        bm[2][2 * i] = c[i] / two_a;
        bm[2][2 * i + 1] = b[i] / two_a;
    }
    (bm, two_a)
}

/// 6x6 element stiffness t * A * B^T D B.
pub fn element_stiffness(
    coords: [Vec2; 3],
    material: &Material,
) -> Result<[[f64; 6]; 6], FemError> {
    let (b, two_a) = strain_displacement(coords);
    if two_a <= 0.0 {
        return Err(FemError::DegenerateElement { element: usize::MAX });
    }
    let d = material.constitutive();
    let scale = material.thickness * two_a / 2.0;
    // db = D * B
    let mut db = [[0.0; 6]; 3];
    for r in 0..3 {
        for col in 0..6 {
            for k in 0..3 {
                db[r][col] += d[r][k] * b[k][col];
            }
        }
    }
    let mut ke = [[0.0; 6]; 6];
    for r in 0..6 {
        for col in 0..6 {
            let mut sum = 0.0;
            for k in 0..3 {
                sum += b[k][r] * db[k][col];
            }
            ke[r][col] = scale * sum;
        }
    }
    Ok(ke)
}

/// Assemble the global stiffness matrix (2|V| x 2|V|), symmetric positive
/// semidefinite before constraints.
pub fn assemble(graph: &MeshGraph, material: &Material) -> Result<SparseSym, FemError> {
    material.validate()?;
    let n = graph.node_count();
    let mut k = SparseSym::zeros(2 * n);
    for (idx, elem) in graph.elements.iter().enumerate() {
        let coords = graph.element_vertices(idx);
        let ke = element_stiffness(coords, material)
            .map_err(|_| FemError::DegenerateElement { element: idx })?;
        let dofs = [
            2 * elem[0],
            2 * elem[0] + 1,
            2 * elem[1],
            2 * elem[1] + 1,
            2 * elem[2],
            2 * elem[2] + 1,
        ];
        for r in 0..6 {
            for c in 0..6 {
                if ke[r][c] != 0.0 {
                    k.add(dofs[r], dofs[c], ke[r][c]);
                }
            }
        }
    }
    Ok(k)
}

/// Solve with per-node conditions: fixed nodes pin both displacement
/// components; applied forces load the nodal entries directly.
pub fn solve(
    graph: &MeshGraph,
    conditions: &NodeConditions,
    material: &Material,
) -> Result<FemSolution, FemError> {
    let n = graph.node_count();
    let mut constrained = vec![false; 2 * n];
    let mut loads = vec![0.0; 2 * n];
    for i in 0..n {
        if conditions.fixed[i] == 1 {
            constrained[2 * i] = true;
            constrained[2 * i + 1] = true;
        }
        loads[2 * i] = conditions.force[i].x;
        loads[2 * i + 1] = conditions.force[i].y;
    }
    solve_constrained(graph, material, &constrained, &loads)
}

/// Lower-level entry with per-dof constraints (also used by the patch test
/// style verifications that pin single components).
pub fn solve_constrained(
    graph: &MeshGraph,
    material: &Material,
    constrained: &[bool],
    loads: &[f64],
) -> Result<FemSolution, FemError> {
    let n = graph.node_count();
    if constrained.len() != 2 * n || loads.len() != 2 * n {
        return Err(FemError::DofMismatch {
            expected: 2 * n,
            got: constrained.len().min(loads.len()),
        });
    }
    if constrained.iter().filter(|&&c| c).count() < 3 {
        return Err(FemError::RigidBodyMode);
    }
    let stiffness = assemble(graph, material)?;

    // Reduce to free dofs; fixed displacements are zero so the right-hand
    // side needs no correction.
    let free: Vec<usize> = (0..2 * n).filter(|&d| !constrained[d]).collect();
    let mut index_of = vec![usize::MAX; 2 * n];
    for (fi, &d) in free.iter().enumerate() {
        index_of[d] = fi;
    }
    let mut reduced = SparseSym::zeros(free.len());
    for (fi, &d) in free.iter().enumerate() {
        for (j, v) in stiffness.row(d) {
            if index_of[j] != usize::MAX {
                reduced.add(fi, index_of[j], v);
            }
        }
    }
    let rhs: Vec<f64> = free.iter().map(|&d| loads[d]).collect();

    let (solution_free, iterations) = if n <= DIRECT_SOLVE_NODE_LIMIT {
        let chol = BandCholesky::factor(&reduced).ok_or(FemError::Singular)?;
        (chol.solve(&rhs), 1)
    } else {
        let result = solver::pcg_jacobi(&reduced, &rhs, RESIDUAL_TOLERANCE, 10 * reduced.dim());
        match result {
            PcgResult::Converged { x, iterations } => (x, iterations),
            PcgResult::MaxIterations { iterations } => {
                return Err(FemError::NonConvergence { iterations })
            }
        }
    };

    let mut displacement_flat = vec![0.0; 2 * n];
    for (fi, &d) in free.iter().enumerate() {
        displacement_flat[d] = solution_free[fi];
    }

    // Relative residual over the free equations.
    let product = reduced.mul_vec(&solution_free);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let res_norm = product
        .iter()
        .zip(rhs.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let residual = if rhs_norm == 0.0 {
        res_norm
    } else {
        res_norm / rhs_norm
    };

    let displacement: Vec<Vec2> = (0..n)
        .map(|i| Vec2::new(displacement_flat[2 * i], displacement_flat[2 * i + 1]))
        .collect();
    let von_mises = recover_von_mises(graph, material, &displacement_flat)?;
    Ok(FemSolution {
        displacement,
        von_mises,
        iterations,
        residual,
    })
}

/// Element stresses sigma = D B u_e; nodal values are area-weighted averages
/// of incident element stresses.
pub fn element_stresses(
    graph: &MeshGraph,
    material: &Material,
    displacement_flat: &[f64],
) -> Result<Vec<[f64; 3]>, FemError> {
    let d = material.constitutive();
    let mut out = Vec::with_capacity(graph.element_count());
    for (idx, elem) in graph.elements.iter().enumerate() {
        let coords = graph.element_vertices(idx);
        let (b, two_a) = strain_displacement(coords);
        if two_a <= 0.0 {
            return Err(FemError::DegenerateElement { element: idx });
        }
        let ue = [
            displacement_flat[2 * elem[0]],
            displacement_flat[2 * elem[0] + 1],
            displacement_flat[2 * elem[1]],
            displacement_flat[2 * elem[1] + 1],
            displacement_flat[2 * elem[2]],
            displacement_flat[2 * elem[2] + 1],
        ];
        let mut strain = [0.0; 3];
        for r in 0..3 {
            for c in 0..6 {
                strain[r] += b[r][c] * ue[c];
            }
        }
        let mut sigma = [0.0; 3];
        for r in 0..3 {
            for k in 0..3 {
                sigma[r] += d[r][k] * strain[k];
            }
        }
        out.push(sigma);
    }
    Ok(out)
}

pub fn von_mises_stress(sigma: [f64; 3]) -> f64 {
    let [sxx, syy, txy] = sigma;
    (sxx * sxx - sxx * syy + syy * syy + 3.0 * txy * txy).sqrt()
}

fn recover_von_mises(
    graph: &MeshGraph,
    material: &Material,
    displacement_flat: &[f64],
) -> Result<Vec<f64>, FemError> {
    let stresses = element_stresses(graph, material, displacement_flat)?;
    let n = graph.node_count();
    let mut weighted = vec![[0.0f64; 3]; n];
    let mut weight = vec![0.0f64; n];
    for (idx, elem) in graph.elements.iter().enumerate() {
        let area = graph.element_signed_area(idx);
        for &v in elem {
            for c in 0..3 {
                weighted[v][c] += stresses[idx][c] * area;
            }
            weight[v] += area;
        }
    }
    Ok((0..n)
        .map(|v| {
            if weight[v] == 0.0 {
                0.0
            } else {
                von_mises_stress([
                    weighted[v][0] / weight[v],
                    weighted[v][1] / weight[v],
                    weighted[v][2] / weight[v],
                ])
            }
        })
        .collect())
}
