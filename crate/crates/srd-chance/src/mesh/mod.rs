//! Uniform grids on the unit square, discrete elliptic operators and their
//! direct factorizations.
//!
//! Two discretizations are supported: a five-point finite-difference
//! Laplacian with a mixed Dirichlet/Neumann boundary (the Neumann edge is
//! `x1 = 0`, closed with a second-order ghost node and half-cell row
//! scaling so the reduced matrix stays symmetric), and piecewise-linear
//! finite elements on the structured two-triangles-per-cell mesh with a
//! pure Dirichlet boundary.

mod factor;
pub(crate) mod operator;

pub use factor::{factorize, Factorization};
pub use operator::{
    assemble_control_mass, assemble_fem, assemble_laplacian_mixed, boundary_injection,
    identity_scaled, DiscreteOperator, FemOperators, MassLumping, OperatorKind,
};

use crate::error::{Error, Result};

/// Boundary-condition layout of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Neumann data on the edge `x1 = 0` (corners excluded), Dirichlet on
    /// the rest of the boundary. Used by the finite-difference problem.
    LinearNeumann,
    /// Homogeneous Dirichlet data on the whole boundary. Used by the
    /// finite-element problem.
    BilinearDirichlet,
}

/// Per-node boundary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeTag {
    Interior,
    Dirichlet,
    Neumann,
}

/// Uniform tensor grid on the closed unit square.
///
/// Nodes are indexed lexicographically, `node = i1 + i2 * n`, with
/// coordinates `(i1 * h, i2 * h)` and `h = 1 / (n - 1)`. Degrees of freedom
/// ("free" nodes) are the non-Dirichlet nodes; Dirichlet rows are
/// eliminated from all assembled operators.
#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    h: f64,
    kind: ProblemKind,
    tags: Vec<NodeTag>,
    /// node index -> free dof index (None for Dirichlet nodes)
    free_of_node: Vec<Option<usize>>,
    /// free dof index -> node index
    node_of_free: Vec<usize>,
    /// constraint points as free dof indices, lexicographic node order;
    /// only interior nodes qualify (the constraint holds on the open
    /// domain, and boundary values are either pinned or carry the flux
    /// closure rather than a state sample)
    constraint_points: Vec<usize>,
    /// per-dof quadrature/control weight: 1 in the interior, 1/2 on the
    /// Neumann edge (half cells)
    rhs_weights: Vec<f64>,
}

impl Grid {
    /// Nodes per side.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh width `1 / (n - 1)`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Total node count `n^2`.
    pub fn num_nodes(&self) -> usize {
        self.n * self.n
    }

    /// Number of free (non-Dirichlet) dofs.
    pub fn num_free(&self) -> usize {
        self.node_of_free.len()
    }

    pub fn tag(&self, node: usize) -> NodeTag {
        self.tags[node]
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let i1 = node % self.n;
        let i2 = node / self.n;
        (i1 as f64 * self.h, i2 as f64 * self.h)
    }

    pub fn node_index(&self, i1: usize, i2: usize) -> usize {
        debug_assert!(i1 < self.n && i2 < self.n);
        i1 + i2 * self.n
    }

    pub fn free_of_node(&self, node: usize) -> Option<usize> {
        self.free_of_node[node]
    }

    pub fn node_of_free(&self, dof: usize) -> usize {
        self.node_of_free[dof]
    }

    /// Constraint points as free dof indices, in lexicographic node order.
    pub fn constraint_points(&self) -> &[usize] {
        &self.constraint_points
    }

    /// Per-dof right-hand-side weight (1 interior, 1/2 on the Neumann edge).
    pub fn rhs_weights(&self) -> &[f64] {
        &self.rhs_weights
    }

    /// Free dof indices of the Neumann-edge nodes ordered by `x2`, together
    /// with their `x2` coordinates. Empty for Dirichlet-only grids.
    pub fn neumann_dofs(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for i2 in 0..self.n {
            let node = self.node_index(0, i2);
            if self.tags[node] == NodeTag::Neumann {
                let dof = self.free_of_node[node].expect("neumann nodes are free");
                out.push((dof, i2 as f64 * self.h));
            }
        }
        out
    }

    /// Evaluate a scalar function on all nodes.
    pub fn node_field(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|node| {
                let (x1, x2) = self.coords(node);
                f(x1, x2)
            })
            .collect()
    }

    /// Evaluate a scalar function on the free dofs.
    pub fn free_field(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.node_of_free
            .iter()
            .map(|&node| {
                let (x1, x2) = self.coords(node);
                f(x1, x2)
            })
            .collect()
    }

    /// Restrict a full node field to the free dofs.
    pub fn restrict(&self, node_field: &[f64]) -> Vec<f64> {
        assert_eq!(node_field.len(), self.num_nodes());
        self.node_of_free.iter().map(|&n| node_field[n]).collect()
    }

    /// Extend a free-dof field to all nodes, zero on Dirichlet nodes.
    pub fn extend(&self, free_field: &[f64]) -> Vec<f64> {
        assert_eq!(free_field.len(), self.num_free());
        let mut out = vec![0.0; self.num_nodes()];
        for (dof, &node) in self.node_of_free.iter().enumerate() {
            out[node] = free_field[dof];
        }
        out
    }

    /// Discrete L2 inner product on free dofs: `h^2 * sum(w_i a_i b_i)`
    /// with half weights on the Neumann edge.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let h2 = self.h * self.h;
        let mut s = 0.0;
        for i in 0..a.len() {
            s += self.rhs_weights[i] * a[i] * b[i];
        }
        h2 * s
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}

/// Build a uniform grid with the boundary layout of `problem` and every
/// `constraint_stride`-th interior node (lexicographic order) marked as a
/// constraint point.
pub fn build_grid(n: usize, problem: ProblemKind, constraint_stride: usize) -> Result<Grid> {
    if n < 3 {
        return Err(Error::InvalidGrid(format!("need n >= 3, got {n}")));
    }
    if constraint_stride < 1 {
        return Err(Error::InvalidGrid("constraint_stride must be >= 1".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let mut tags = vec![NodeTag::Interior; n * n];
    for i2 in 0..n {
        for i1 in 0..n {
            let node = i1 + i2 * n;
            let on_boundary = i1 == 0 || i1 == n - 1 || i2 == 0 || i2 == n - 1;
            if !on_boundary {
                continue;
            }
            tags[node] = match problem {
                ProblemKind::BilinearDirichlet => NodeTag::Dirichlet,
                ProblemKind::LinearNeumann => {
                    // Neumann edge x1 = 0; Dirichlet wins at the two shared
                    // corners (0,0) and (0,1).
                    if i1 == 0 && i2 != 0 && i2 != n - 1 {
                        NodeTag::Neumann
                    } else {
                        NodeTag::Dirichlet
                    }
                }
            };
        }
    }

    let mut free_of_node = vec![None; n * n];
    let mut node_of_free = Vec::new();
    let mut rhs_weights = Vec::new();
    for node in 0..n * n {
        if tags[node] != NodeTag::Dirichlet {
            free_of_node[node] = Some(node_of_free.len());
            node_of_free.push(node);
            rhs_weights.push(if tags[node] == NodeTag::Neumann {
                0.5
            } else {
                1.0
            });
        }
    }

    let interior: Vec<usize> = (0..node_of_free.len())
        .filter(|&dof| tags[node_of_free[dof]] == NodeTag::Interior)
        .collect();
    let constraint_points: Vec<usize> =
        interior.into_iter().step_by(constraint_stride).collect();

    Ok(Grid {
        n,
        h,
        kind: problem,
        tags,
        free_of_node,
        node_of_free,
        constraint_points,
        rhs_weights,
    })
}
