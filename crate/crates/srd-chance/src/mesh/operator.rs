use super::{Grid, NodeTag, ProblemKind};
use crate::error::{Error, Result};

/// What an assembled operator represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Five-point Laplacian with mixed boundary, Dirichlet rows eliminated.
    LaplacianMixed,
    /// P1 stiffness matrix, Dirichlet rows eliminated.
    Stiffness,
    /// P1 mass matrix (consistent or lumped).
    Mass,
    /// P1 weighted mass `(u y, v)` for a nodal field `u`.
    ControlMass,
    /// `c * I`.
    IdentityScaled,
}

/// Sparse symmetric operator on the free dofs of a grid, CSR storage.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl DiscreteOperator {
    pub(crate) fn from_triplets(
        kind: OperatorKind,
        dim: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut counts = vec![0usize; dim];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; dim + 1];
        for r in 0..dim {
            row_ptr[r + 1] = row_ptr[r] + counts[r];
        }
        DiscreteOperator {
            kind,
            dim,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            y[r] = s;
        }
    }

    /// `max |A - A^T|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(*c, r)).abs());
            }
        }
        worst
    }

    /// Entrywise linear combination `self + s * other` (patterns may differ).
    pub fn add_scaled(&self, other: &DiscreteOperator, s: f64, kind: OperatorKind) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((r, *c, *v));
            }
            let (cols, vals) = other.row(r);
            for (c, v) in cols.iter().zip(vals) {
                triplets.push((r, *c, s * *v));
            }
        }
        DiscreteOperator::from_triplets(kind, self.dim, triplets)
    }

    /// Dump as coordinate-format text lines `row col value`.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                out.push_str(&format!("{} {} {:e}\n", r, c, v));
            }
        }
        out
    }

    /// Dense copy, for small test oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[(r, *c)] = *v;
            }
        }
        m
    }
}

/// `c * I` on `dim` dofs.
pub fn identity_scaled(dim: usize, c: f64) -> DiscreteOperator {
    let triplets = (0..dim).map(|i| (i, i, c)).collect();
    DiscreteOperator::from_triplets(OperatorKind::IdentityScaled, dim, triplets)
}

/// Five-point Laplacian with ghost-node Neumann closure on `x1 = 0`.
///
/// Rows on the Neumann edge are scaled by 1/2 (half cells) which keeps the
/// reduced matrix symmetric: diagonal `2/h^2`, east neighbor `-1/h^2`,
/// north/south neighbors `-1/(2 h^2)`. Interior rows carry the usual
/// `(4, -1, -1, -1, -1)/h^2` stencil. Dirichlet rows and columns are
/// eliminated.
pub fn assemble_laplacian_mixed(grid: &Grid) -> Result<DiscreteOperator> {
    if grid.kind() != ProblemKind::LinearNeumann {
        return Err(Error::Mismatch(
            "assemble_laplacian_mixed needs a linear_neumann grid".into(),
        ));
    }
    Ok(assemble_five_point(grid))
}

pub(crate) fn assemble_five_point(grid: &Grid) -> DiscreteOperator {
    let n = grid.n();
    let h2inv = 1.0 / (grid.h() * grid.h());
    let dim = grid.num_free();
    let mut triplets = Vec::with_capacity(5 * dim);
    for dof in 0..dim {
        let node = grid.node_of_free(dof);
        let i1 = node % n;
        let i2 = node / n;
        let scale = if grid.tag(node) == NodeTag::Neumann {
            0.5
        } else {
            1.0
        };
        let mut push = |j1: i64, j2: i64, coeff: f64| {
            if j1 < 0 || j2 < 0 || j1 >= n as i64 || j2 >= n as i64 {
                return;
            }
            let nb = grid.node_index(j1 as usize, j2 as usize);
            if let Some(nb_dof) = grid.free_of_node(nb) {
                triplets.push((dof, nb_dof, coeff * scale * h2inv));
            }
        };
        push(i1 as i64, i2 as i64, 4.0);
        if grid.tag(node) == NodeTag::Neumann {
            // ghost node eliminated: double weight on the east neighbor
            push(i1 as i64 + 1, i2 as i64, -2.0);
        } else {
            push(i1 as i64 + 1, i2 as i64, -1.0);
            push(i1 as i64 - 1, i2 as i64, -1.0);
        }
        push(i1 as i64, i2 as i64 + 1, -1.0);
        push(i1 as i64, i2 as i64 - 1, -1.0);
    }
    DiscreteOperator::from_triplets(OperatorKind::LaplacianMixed, dim, triplets)
}

/// Neumann-data injection `B`: boundary flux values (ordered by `x2`, one
/// per Neumann node) become `xi / h` contributions on the Neumann-edge
/// rows of the scaled system.
pub fn boundary_injection(grid: &Grid, boundary_field: &[f64]) -> Result<Vec<f64>> {
    if grid.kind() != ProblemKind::LinearNeumann {
        return Err(Error::Mismatch("boundary_injection needs a linear_neumann grid".into()));
    }
    let dofs = grid.neumann_dofs();
    assert_eq!(
        boundary_field.len(),
        dofs.len(),
        "boundary field must have one value per Neumann node"
    );
    let mut rhs = vec![0.0; grid.num_free()];
    let hinv = 1.0 / grid.h();
    for ((dof, _), &xi) in dofs.iter().zip(boundary_field) {
        rhs[*dof] = xi * hinv;
    }
    Ok(rhs)
}

/// Mass treatment for the P1 mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassLumping {
    #[default]
    Consistent,
    Lumped,
}

/// Stiffness and mass matrices of the P1 discretization, plus a lower
/// Cholesky factor of the mass matrix.
pub struct FemOperators {
    pub stiffness: DiscreteOperator,
    pub mass: DiscreteOperator,
    pub mass_chol: super::Factorization,
}

/// Visit the two triangles of every grid cell. Each triangle is passed as
/// three node indices (counterclockwise) together with its area.
pub(crate) fn for_each_triangle(grid: &Grid, mut visit: impl FnMut([usize; 3], f64)) {
    let n = grid.n();
    let area = 0.5 * grid.h() * grid.h();
    for i2 in 0..n - 1 {
        for i1 in 0..n - 1 {
            let a = grid.node_index(i1, i2);
            let b = grid.node_index(i1 + 1, i2);
            let c = grid.node_index(i1, i2 + 1);
            let d = grid.node_index(i1 + 1, i2 + 1);
            visit([a, b, d], area);
            visit([a, d, c], area);
        }
    }
}

/// Local P1 stiffness for a triangle given node coordinates.
fn local_stiffness(grid: &Grid, tri: [usize; 3], area: f64) -> [[f64; 3]; 3] {
    let p: Vec<(f64, f64)> = tri.iter().map(|&n| grid.coords(n)).collect();
    let b = [p[1].1 - p[2].1, p[2].1 - p[0].1, p[0].1 - p[1].1];
    let c = [p[2].0 - p[1].0, p[0].0 - p[2].0, p[1].0 - p[0].0];
    let mut k = [[0.0; 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            k[r][s] = (b[r] * b[s] + c[r] * c[s]) / (4.0 * area);
        }
    }
    k
}

/// Assemble P1 stiffness and mass on a Dirichlet grid; `L L^T = mass`.
pub fn assemble_fem(grid: &Grid, lumping: MassLumping) -> Result<FemOperators> {
    if grid.kind() != ProblemKind::BilinearDirichlet {
        return Err(Error::Mismatch("assemble_fem needs a bilinear_dirichlet grid".into()));
    }
    let dim = grid.num_free();
    let mut stiff = Vec::new();
    let mut mass = Vec::new();
    for_each_triangle(grid, |tri, area| {
        let k = local_stiffness(grid, tri, area);
        for r in 0..3 {
            let Some(rd) = grid.free_of_node(tri[r]) else {
                continue;
            };
            for s in 0..3 {
                let Some(sd) = grid.free_of_node(tri[s]) else {
                    continue;
                };
                stiff.push((rd, sd, k[r][s]));
                let m = if r == s { area / 6.0 } else { area / 12.0 };
                match lumping {
                    MassLumping::Consistent => mass.push((rd, sd, m)),
                    MassLumping::Lumped => mass.push((rd, rd, m)),
                }
            }
        }
    });
    let stiffness = DiscreteOperator::from_triplets(OperatorKind::Stiffness, dim, stiff);
    let mass = DiscreteOperator::from_triplets(OperatorKind::Mass, dim, mass);
    let mass_chol = super::factorize(&mass)?;
    Ok(FemOperators {
        stiffness,
        mass,
        mass_chol,
    })
}

/// Weighted mass `(M(u) y, v) = \int u y v` for a nodal field `u` given on
/// all nodes. Exact for P1 `u` via the triangle formula
/// `\int phi_a phi_b phi_c = 2A a! b! c! / (a+b+c+2)!`.
pub fn assemble_control_mass(grid: &Grid, u_nodes: &[f64]) -> Result<DiscreteOperator> {
    if grid.kind() != ProblemKind::BilinearDirichlet {
        return Err(Error::Mismatch("assemble_control_mass needs a bilinear_dirichlet grid".into()));
    }
    assert_eq!(u_nodes.len(), grid.num_nodes(), "u must be a full node field");
    let dim = grid.num_free();
    let mut triplets = Vec::new();
    for_each_triangle(grid, |tri, area| {
        for r in 0..3 {
            let Some(rd) = grid.free_of_node(tri[r]) else {
                continue;
            };
            for s in 0..3 {
                let Some(sd) = grid.free_of_node(tri[s]) else {
                    continue;
                };
                let mut v = 0.0;
                for c in 0..3 {
                    // \int phi_r phi_s phi_c over the triangle
                    let w = if r == s && s == c {
                        area / 10.0
                    } else if r == s || s == c || r == c {
                        area / 30.0
                    } else {
                        area / 60.0
                    };
                    v += w * u_nodes[tri[c]];
                }
                triplets.push((rd, sd, v));
            }
        }
    });
    Ok(DiscreteOperator::from_triplets(
        OperatorKind::ControlMass,
        dim,
        triplets,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, factorize};

    fn dirichlet_grid(n: usize) -> Grid {
        build_grid(n, ProblemKind::BilinearDirichlet, 1).unwrap()
    }

    #[test]
    fn wrong_grid_kind_is_rejected() {
        let g = dirichlet_grid(5);
        assert!(assemble_laplacian_mixed(&g).is_err());
        let g2 = build_grid(5, ProblemKind::LinearNeumann, 1).unwrap();
        assert!(assemble_fem(&g2, MassLumping::Consistent).is_err());
    }

    #[test]
    fn stencil_annihilates_constants_in_the_interior() {
        // center node of a 5x5 Dirichlet grid has only free neighbors, so
        // the row applies the full stencil: (4 - 4)/h^2 = 0 on constants
        let g = dirichlet_grid(5);
        let a = assemble_five_point(&g);
        let ones = vec![1.0; g.num_free()];
        let ay = a.apply(&ones);
        let center = g.free_of_node(g.node_index(2, 2)).unwrap();
        assert_eq!(ay[center], 0.0);
    }

    #[test]
    fn five_point_symmetry_is_exact() {
        let g = build_grid(17, ProblemKind::LinearNeumann, 1).unwrap();
        let a = assemble_laplacian_mixed(&g).unwrap();
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        // all-Dirichlet grid, y* = sin(pi x1) sin(pi x2), f = 2 pi^2 y*
        let mut errors = Vec::new();
        for n in [9, 17, 33, 65] {
            let g = dirichlet_grid(n);
            let a = assemble_five_point(&g);
            let fac = factorize(&a).unwrap();
            let exact = g.free_field(|x1, x2| (std::f64::consts::PI * x1).sin()
                * (std::f64::consts::PI * x2).sin());
            let f = g.free_field(|x1, x2| {
                2.0 * std::f64::consts::PI.powi(2)
                    * (std::f64::consts::PI * x1).sin()
                    * (std::f64::consts::PI * x2).sin()
            });
            let y = fac.solve(&f);
            let err = y
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (1.8..=2.2).contains(&order),
                "observed order {order} outside [1.8, 2.2]: {errors:?}"
            );
        }
    }

    #[test]
    fn mixed_problem_converges_with_neumann_data() {
        // y* = (1 - x1) sin(pi x2) satisfies y* = 0 on the three Dirichlet
        // edges and grad(y*).n = sin(pi x2) on x1 = 0
        let pi = std::f64::consts::PI;
        let mut errors = Vec::new();
        for n in [9, 17, 33, 65] {
            let g = build_grid(n, ProblemKind::LinearNeumann, 1).unwrap();
            let a = assemble_laplacian_mixed(&g).unwrap();
            let fac = factorize(&a).unwrap();
            let exact = g.free_field(|x1, x2| (1.0 - x1) * (pi * x2).sin());
            // f = -lap y* = pi^2 (1-x1) sin(pi x2), with half-cell weights
            let w = g.rhs_weights().to_vec();
            let mut rhs: Vec<f64> = g
                .free_field(|x1, x2| pi * pi * (1.0 - x1) * (pi * x2).sin())
                .iter()
                .zip(&w)
                .map(|(f, w)| f * w)
                .collect();
            let flux: Vec<f64> = g
                .neumann_dofs()
                .iter()
                .map(|&(_, x2)| (pi * x2).sin())
                .collect();
            let b = boundary_injection(&g, &flux).unwrap();
            for i in 0..rhs.len() {
                rhs[i] += b[i];
            }
            let y = fac.solve(&rhs);
            let err = y
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (1.8..=2.2).contains(&order),
                "observed order {order} outside [1.8, 2.2]: {errors:?}"
            );
        }
    }

    #[test]
    fn injection_is_linear_and_zero_on_zero() {
        let g = build_grid(9, ProblemKind::LinearNeumann, 1).unwrap();
        let m = g.neumann_dofs().len();
        let zero = boundary_injection(&g, &vec![0.0; m]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let xa: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
        let xb: Vec<f64> = (0..m).map(|i| (i as f64 * 1.1).cos()).collect();
        let sum: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| a + b).collect();
        let ba = boundary_injection(&g, &xa).unwrap();
        let bb = boundary_injection(&g, &xb).unwrap();
        let bsum = boundary_injection(&g, &sum).unwrap();
        for i in 0..ba.len() {
            assert_eq!(bsum[i], ba[i] + bb[i]);
        }
    }

    #[test]
    fn stiffness_row_sums_vanish_away_from_boundary() {
        let g = dirichlet_grid(7);
        let ops = assemble_fem(&g, MassLumping::Consistent).unwrap();
        let ones = vec![1.0; g.num_free()];
        let ay = ops.stiffness.apply(&ones);
        // rows whose stencil does not touch eliminated Dirichlet columns
        for i1 in 2..5 {
            for i2 in 2..5 {
                let dof = g.free_of_node(g.node_index(i1, i2)).unwrap();
                assert!(ay[dof].abs() < 1e-14, "row sum {} at interior node", ay[dof]);
            }
        }
    }

    #[test]
    fn mass_total_approaches_domain_area() {
        // oracle: sum of element integrals of (sum of free phi)^2 computed
        // independently from 1^T M 1; both must agree, and tend to 1
        let mut prev_gap = f64::INFINITY;
        for n in [9, 17, 33] {
            let g = dirichlet_grid(n);
            let ops = assemble_fem(&g, MassLumping::Consistent).unwrap();
            let ones = vec![1.0; g.num_free()];
            let total: f64 = ops.mass.apply(&ones).iter().sum();

            let mut oracle = 0.0;
            for_each_triangle(&g, |tri, area| {
                for r in 0..3 {
                    if g.free_of_node(tri[r]).is_none() {
                        continue;
                    }
                    for s in 0..3 {
                        if g.free_of_node(tri[s]).is_none() {
                            continue;
                        }
                        oracle += if r == s { area / 6.0 } else { area / 12.0 };
                    }
                }
            });
            assert!((total - oracle).abs() <= 1e-12);
            let gap = (1.0 - total).abs();
            assert!(gap < prev_gap, "free-node mass must approach the unit area");
            prev_gap = gap;
        }
    }

    #[test]
    fn mass_factor_reproduces_mass() {
        let g = dirichlet_grid(9);
        let ops = assemble_fem(&g, MassLumping::Consistent).unwrap();
        let dim = g.num_free();
        let mut max_mass = 0.0f64;
        for r in 0..dim {
            let (_, vals) = ops.mass.row(r);
            for v in vals {
                max_mass = max_mass.max(v.abs());
            }
        }
        // check L L^T = M columnwise via unit vectors
        let mut worst = 0.0f64;
        for j in 0..dim {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            let lt_e = ops.mass_chol.factor_transpose_apply(&e);
            let llt_e = ops.mass_chol.factor_apply(&lt_e);
            let m_e = ops.mass.apply(&e);
            for i in 0..dim {
                worst = worst.max((llt_e[i] - m_e[i]).abs());
            }
        }
        assert!(worst <= 1e-12 * max_mass, "|LL^T - M| = {worst:e}");
    }

    #[test]
    fn control_mass_is_linear_and_matches_mass_at_one() {
        let g = dirichlet_grid(6);
        let ops = assemble_fem(&g, MassLumping::Consistent).unwrap();
        let zeros = vec![0.0; g.num_nodes()];
        let z = assemble_control_mass(&g, &zeros).unwrap();
        assert!(z.vals.iter().all(|&v| v == 0.0));

        let ones = vec![1.0; g.num_nodes()];
        let m1 = assemble_control_mass(&g, &ones).unwrap();
        let mut worst = 0.0f64;
        for r in 0..g.num_free() {
            let (cols, vals) = m1.row(r);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - ops.mass.get(r, *c)).abs());
            }
        }
        assert!(worst <= 1e-12);

        // linearity in u
        let u = g.node_field(|x1, x2| x1 + 0.3 * x2);
        let m_u = assemble_control_mass(&g, &u).unwrap();
        let u2: Vec<f64> = u.iter().map(|v| 2.5 * v).collect();
        let m_u2 = assemble_control_mass(&g, &u2).unwrap();
        for r in 0..g.num_free() {
            let (cols, vals) = m_u.row(r);
            let (_, vals2) = m_u2.row(r);
            for (k, _) in cols.iter().enumerate() {
                assert!((2.5 * vals[k] - vals2[k]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn control_mass_matches_quadrature_oracle() {
        // u = x1 on a 4x4 grid; oracle integrates phi_r phi_s u with a
        // 7-point Gauss rule (exact for cubics) per triangle
        let g = dirichlet_grid(4);
        let u = g.node_field(|x1, _| x1);
        let m = assemble_control_mass(&g, &u).unwrap();

        // Gauss points (barycentric) and weights, degree 5 rule
        let gw = [
            ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
            ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
            ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
            ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
            ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
            ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
            ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
        ];
        let dim = g.num_free();
        let mut oracle = vec![vec![0.0; dim]; dim];
        for_each_triangle(&g, |tri, area| {
            for r in 0..3 {
                let Some(rd) = g.free_of_node(tri[r]) else { continue };
                for s in 0..3 {
                    let Some(sd) = g.free_of_node(tri[s]) else { continue };
                    let mut v = 0.0;
                    for (bary, w) in gw {
                        let uval: f64 = (0..3).map(|c| bary[c] * u[tri[c]]).sum();
                        v += w * bary[r] * bary[s] * uval;
                    }
                    oracle[rd][sd] += v * area;
                }
            }
        });
        for r in 0..dim {
            for c in 0..dim {
                assert!(
                    (m.get(r, c) - oracle[r][c]).abs() <= 1e-14,
                    "entry ({r},{c}): {} vs {}",
                    m.get(r, c),
                    oracle[r][c]
                );
            }
        }
    }
}
