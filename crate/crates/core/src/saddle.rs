//! The coupled oxide/channel saddle-point system, solved either monolithically
//! with a sparse LU or through the Schur complement on the channel unknowns.
//!
//! Unknown ordering of the monolithic system is `(u_1, u_2, lambda_1,
//! lambda_2, u_gamma)`, each restricted to free (non-Dirichlet) entries:
//!
//! ```text
//! [ A_1              -B_1^T                          ] [u_1]   [r_u1]
//! [       A_2                  -B_2^T                ] [u_2]   [r_u2]
//! [ B_1         aC_1                   -B^1_g        ] [l_1] = [r_l1]
//! [       B_2           aC_2           -B^2_g        ] [l_2]   [r_l2]
//! [            B^1_g^T  B^2_g^T         A_g          ] [u_g]   [r_g ]
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt as SparseLlt, Lu as SparseLu, SymbolicLu};
use faer::sparse::SparseColMat;
use faer::{Mat, Side};

use crate::assembly::{
    assemble_cross_coupling, assemble_interface_stiffness, assemble_multiplier_mass, assemble_stiffness_2d,
    assemble_trace_coupling, build_multiplier_space, dirichlet_values, eliminate_dirichlet, DirichletData, DofMap,
    FullBlocks, InterfaceUpdate, MultiplierSpace, ReducedBlocks, SubdomainBlocks,
};
use crate::config::{CouplingMode, DeviceConfig};
use crate::error::{Error, Result};
use crate::mesh::{build_interface_grid, build_subdomain_mesh, trace_partition, InterfaceGrid, Mesh2D, Subdomain};
use crate::sparse::{norm2, CsrMatrix, Triplets};

/// Meshes, spaces and (reduced) operators of one device configuration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub cfg: DeviceConfig,
    pub meshes: [Mesh2D; 2],
    pub grid: InterfaceGrid,
    pub multipliers: [MultiplierSpace; 2],
    pub blocks: FullBlocks,
    pub dirichlet: DirichletData,
    pub reduced: ReducedBlocks,
}

impl Discretization {
    pub fn new(cfg: &DeviceConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = build_interface_grid(cfg)?;
        let meshes = [
            build_subdomain_mesh(cfg, Subdomain::Upper)?,
            build_subdomain_mesh(cfg, Subdomain::Lower)?,
        ];
        let multipliers = [
            build_multiplier_space(trace_partition(&meshes[0]))?,
            build_multiplier_space(trace_partition(&meshes[1]))?,
        ];
        let mut sub = Vec::with_capacity(2);
        for i in 0..2 {
            sub.push(SubdomainBlocks {
                stiffness: assemble_stiffness_2d(&meshes[i], cfg.eps_ox)?,
                trace: assemble_trace_coupling(&meshes[i], &multipliers[i])?,
                cross: assemble_cross_coupling(&multipliers[i], &grid)?,
                mass: assemble_multiplier_mass(&multipliers[i])?,
            });
        }
        let s1 = sub.pop().unwrap();
        let s0 = sub.pop().unwrap();
        let blocks = FullBlocks {
            sub: [s0, s1],
            interface_stiffness: assemble_interface_stiffness(&grid, cfg.thickness, cfg.channel_permittivity())?,
        };
        let mut interface = vec![None; grid.n_nodes()];
        interface[0] = Some(cfg.v_source);
        interface[grid.n_intervals()] = Some(cfg.v_drain);
        let dirichlet = DirichletData {
            sub: [dirichlet_values(&meshes[0], cfg)?, dirichlet_values(&meshes[1], cfg)?],
            interface,
        };
        let reduced = eliminate_dirichlet(&blocks, &dirichlet)?;
        Ok(Self { cfg: cfg.clone(), meshes, grid, multipliers, blocks, dirichlet, reduced })
    }

    /// Robin coefficient of the configuration, zero in Dirichlet mode.
    pub fn alpha(&self) -> f64 {
        match self.cfg.coupling {
            CouplingMode::Dirichlet => 0.0,
            CouplingMode::Robin => self.cfg.robin_alpha(),
        }
    }

    /// Channel update from a load given on all channel nodes.
    pub fn load_update(&self, load: &[f64]) -> Result<InterfaceUpdate> {
        self.reduced.interface_update(None, load)
    }
}

/// Potentials and multipliers of one solve, on all nodes (Dirichlet values
/// reinserted).
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFields {
    pub u: [Vec<f64>; 2],
    pub lambda: [Vec<f64>; 2],
    pub u_gamma: Vec<f64>,
}

/// Positions of the five blocks in the monolithic unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub offsets: [usize; 6],
}

impl BlockLayout {
    fn of(reduced: &ReducedBlocks) -> Self {
        let sizes = [
            reduced.sub[0].dofs.n_free(),
            reduced.sub[1].dofs.n_free(),
            reduced.n_multipliers(0),
            reduced.n_multipliers(1),
            reduced.interface_dofs.n_free(),
        ];
        let mut offsets = [0; 6];
        for k in 0..5 {
            offsets[k + 1] = offsets[k] + sizes[k];
        }
        Self { offsets }
    }

    pub fn dim(&self) -> usize {
        self.offsets[5]
    }

    pub fn block(&self, k: usize) -> core::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }
}

/// Assembled monolithic operator and right-hand side.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub mode: CouplingMode,
    pub alpha: f64,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub layout: BlockLayout,
    dofs: [DofMap; 2],
    interface_dofs: DofMap,
}

fn check_alpha(mode: CouplingMode, alpha: f64) -> Result<f64> {
    match mode {
        CouplingMode::Dirichlet => Ok(0.0),
        CouplingMode::Robin if alpha >= 0.0 && alpha.is_finite() => Ok(alpha),
        CouplingMode::Robin => Err(Error::InvalidConfig(format!("Robin coefficient must be >= 0, got {alpha}"))),
    }
}

fn check_update(reduced: &ReducedBlocks, update: &InterfaceUpdate) -> Result<()> {
    let n = reduced.interface_dofs.n_free();
    if update.rhs.len() != n {
        return Err(Error::DimensionMismatch(format!("channel rhs has {} entries, expected {n}", update.rhs.len())));
    }
    if let Some(m) = &update.matrix {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch("channel update matrix".into()));
        }
    }
    Ok(())
}

/// Builds the monolithic operator. In Dirichlet mode `alpha` is ignored and
/// the multiplier diagonal blocks are absent.
pub fn assemble_block_system(
    reduced: &ReducedBlocks,
    mode: CouplingMode,
    alpha: f64,
    update: &InterfaceUpdate,
) -> Result<BlockSystem> {
    let alpha = check_alpha(mode, alpha)?;
    check_update(reduced, update)?;
    let layout = BlockLayout::of(reduced);
    let [o_u1, o_u2, o_l1, o_l2, o_g, _] = layout.offsets;
    let ou = [o_u1, o_u2];
    let ol = [o_l1, o_l2];
    let n = layout.dim();
    let mut trip = Triplets::new(n, n);
    let mut rhs = vec![0.0; n];
    for i in 0..2 {
        let s = &reduced.sub[i];
        for (r, c, v) in s.a.iter() {
            trip.push(ou[i] + r, ou[i] + c, v);
        }
        for (m, c, v) in s.b.iter() {
            trip.push(ou[i] + c, ol[i] + m, -v);
            trip.push(ol[i] + m, ou[i] + c, v);
        }
        if mode == CouplingMode::Robin {
            for (r, c, v) in s.c.iter() {
                trip.push(ol[i] + r, ol[i] + c, alpha * v);
            }
        }
        for (m, j, v) in s.b_gamma.iter() {
            trip.push(ol[i] + m, o_g + j, -v);
            trip.push(o_g + j, ol[i] + m, v);
        }
        rhs[ou[i]..ou[i] + s.rhs_u.len()].copy_from_slice(&s.rhs_u);
        rhs[ol[i]..ol[i] + s.rhs_lambda.len()].copy_from_slice(&s.rhs_lambda);
    }
    for (r, c, v) in reduced.a_gamma.iter() {
        trip.push(o_g + r, o_g + c, v);
    }
    if let Some(m) = &update.matrix {
        for (r, c, v) in m.iter() {
            trip.push(o_g + r, o_g + c, v);
        }
    }
    for (k, (a, b)) in reduced.rhs_gamma.iter().zip(&update.rhs).enumerate() {
        rhs[o_g + k] = a + b;
    }
    Ok(BlockSystem {
        mode,
        alpha,
        matrix: trip.into_csr(),
        rhs,
        layout,
        dofs: [reduced.sub[0].dofs.clone(), reduced.sub[1].dofs.clone()],
        interface_dofs: reduced.interface_dofs.clone(),
    })
}

impl BlockSystem {
    /// Splits a monolithic vector into full fields.
    pub fn fields(&self, x: &[f64]) -> SolutionFields {
        let l = &self.layout;
        SolutionFields {
            u: [self.dofs[0].scatter(&x[l.block(0)]), self.dofs[1].scatter(&x[l.block(1)])],
            lambda: [x[l.block(2)].to_vec(), x[l.block(3)].to_vec()],
            u_gamma: self.interface_dofs.scatter(&x[l.block(4)]),
        }
    }

    /// Monolithic vector of the free entries of `fields`.
    pub fn unknowns(&self, fields: &SolutionFields) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout.dim());
        x.extend(self.dofs[0].gather(&fields.u[0]));
        x.extend(self.dofs[1].gather(&fields.u[1]));
        x.extend_from_slice(&fields.lambda[0]);
        x.extend_from_slice(&fields.lambda[1]);
        x.extend(self.interface_dofs.gather(&fields.u_gamma));
        x
    }
}

/// Euclidean norms of the five block rows of `b - M x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub blocks: [f64; 5],
    pub rhs_norm: f64,
}

impl ResidualReport {
    pub fn total(&self) -> f64 {
        libm::sqrt(self.blocks.iter().map(|v| v * v).sum())
    }

    /// Total residual relative to the right-hand side (absolute if `b = 0`).
    pub fn relative(&self) -> f64 {
        if self.rhs_norm > 0.0 {
            self.total() / self.rhs_norm
        } else {
            self.total()
        }
    }
}

pub fn residual_report(system: &BlockSystem, fields: &SolutionFields) -> ResidualReport {
    let x = system.unknowns(fields);
    let mut r = system.rhs.clone();
    system.matrix.mul_vec_acc(&x, -1.0, &mut r);
    let blocks = [0, 1, 2, 3, 4].map(|k| norm2(&r[system.layout.block(k)]));
    ResidualReport { blocks, rhs_norm: norm2(&system.rhs) }
}

fn solver_err(what: &str, e: impl core::fmt::Debug) -> Error {
    Error::Solver(format!("{what}: {e:?}"))
}

fn faer_lu(mat: &SparseColMat<usize, f64>, symbolic: &SymbolicLu<usize>) -> Result<SparseLu<usize, f64>> {
    SparseLu::try_new_with_symbolic(symbolic.clone(), mat.as_ref()).map_err(|e| solver_err("sparse LU failed", e))
}

fn lu_solve(lu: &SparseLu<usize, f64>, b: &[f64]) -> Vec<f64> {
    let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    lu.solve_in_place(x.as_mut());
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

/// Direct sparse solve of the monolithic system with one step of iterative
/// refinement.
pub fn solve_block(system: &BlockSystem) -> Result<SolutionFields> {
    let mat = system.matrix.to_faer()?;
    let symbolic = SymbolicLu::try_new(mat.symbolic()).map_err(|e| solver_err("symbolic LU failed", e))?;
    let lu = faer_lu(&mat, &symbolic)?;
    let x = refine(&system.matrix, &lu, &system.rhs)?;
    Ok(system.fields(&x))
}

fn refine(matrix: &CsrMatrix, lu: &SparseLu<usize, f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let mut x = lu_solve(lu, rhs);
    for _ in 0..2 {
        let mut r = rhs.to_vec();
        matrix.mul_vec_acc(&x, -1.0, &mut r);
        if norm2(&r) <= 1e-14 * norm2(rhs) {
            break;
        }
        let dx = lu_solve(lu, &r);
        for (a, d) in x.iter_mut().zip(&dx) {
            *a += d;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("monolithic solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Monolithic solver that keeps the symbolic factorization across solves
/// whose channel updates share a sparsity pattern.
pub struct MonolithicSolver<'a> {
    reduced: &'a ReducedBlocks,
    mode: CouplingMode,
    alpha: f64,
    symbolic: Option<(SymbolicLu<usize>, Vec<usize>, Vec<usize>)>,
}

impl<'a> MonolithicSolver<'a> {
    pub fn new(reduced: &'a ReducedBlocks, mode: CouplingMode, alpha: f64) -> Result<Self> {
        let alpha = check_alpha(mode, alpha)?;
        Ok(Self { reduced, mode, alpha, symbolic: None })
    }

    pub fn system(&self, update: &InterfaceUpdate) -> Result<BlockSystem> {
        assemble_block_system(self.reduced, self.mode, self.alpha, update)
    }

    pub fn solve(&mut self, update: &InterfaceUpdate) -> Result<SolutionFields> {
        let system = self.system(update)?;
        let mat = system.matrix.to_faer()?;
        let pattern_matches = match &self.symbolic {
            Some((_, ptr, idx)) => ptr.as_slice() == mat.symbolic().col_ptr() && idx.as_slice() == mat.symbolic().row_idx(),
            None => false,
        };
        if !pattern_matches {
            let sym = SymbolicLu::try_new(mat.symbolic()).map_err(|e| solver_err("symbolic LU failed", e))?;
            self.symbolic = Some((sym, mat.symbolic().col_ptr().to_vec(), mat.symbolic().row_idx().to_vec()));
        }
        let lu = faer_lu(&mat, &self.symbolic.as_ref().unwrap().0)?;
        let x = refine(&system.matrix, &lu, &system.rhs)?;
        Ok(system.fields(&x))
    }
}

fn dense_from_csr(m: &CsrMatrix) -> Mat<f64> {
    let mut d = Mat::zeros(m.nrows(), m.ncols());
    for (i, j, v) in m.iter() {
        d[(i, j)] += v;
    }
    d
}

fn mat_col(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

struct SchurPart {
    a_llt: SparseLlt<usize, f64>,
    g_llt: faer::linalg::solvers::Llt<f64>,
}

/// Schur-complement solver. The bulk factorizations, the dense inner
/// complements `G_i = B_i A_i^-1 B_i^T + alpha C_i` and the interface operator
/// `sum_i B^i_g^T G_i^-1 B^i_g` are computed once; each solve only refactors
/// the dense channel matrix.
pub struct SchurSolver<'a> {
    reduced: &'a ReducedBlocks,
    parts: [SchurPart; 2],
    interface_operator: Mat<f64>,
    interface_shift: Vec<f64>,
    /// Robin coefficient, zero in Dirichlet mode.
    alpha: f64,
}

const COLUMN_CHUNK: usize = 64;

impl<'a> SchurSolver<'a> {
    pub fn new(reduced: &'a ReducedBlocks, mode: CouplingMode, alpha: f64) -> Result<Self> {
        let alpha = check_alpha(mode, alpha)?;
        let ng = reduced.interface_dofs.n_free();
        let mut interface_operator = Mat::<f64>::zeros(ng, ng);
        let mut interface_shift = vec![0.0; ng];
        let mut parts = Vec::with_capacity(2);
        for s in &reduced.sub {
            let a = s.a.to_faer()?;
            let a_llt = a.sp_cholesky(Side::Lower).map_err(|e| solver_err("bulk Cholesky failed", e))?;
            let nm = s.b.nrows();
            let nf = s.a.nrows();
            let bt = s.b.transpose();
            let mut g = Mat::<f64>::zeros(nm, nm);
            let mut start = 0;
            while start < nm {
                let end = (start + COLUMN_CHUNK).min(nm);
                let mut x = Mat::<f64>::zeros(nf, end - start);
                for (r, m, v) in bt.iter() {
                    if m >= start && m < end {
                        x[(r, m - start)] += v;
                    }
                }
                a_llt.solve_in_place(x.as_mut());
                for (row, c, v) in s.b.iter() {
                    for k in 0..end - start {
                        g[(row, start + k)] += v * x[(c, k)];
                    }
                }
                start = end;
            }
            if mode == CouplingMode::Robin {
                for (r, c, v) in s.c.iter() {
                    g[(r, c)] += alpha * v;
                }
            }
            // symmetrize the round-off of the inner products
            for r in 0..nm {
                for c in 0..r {
                    let avg = 0.5 * (g[(r, c)] + g[(c, r)]);
                    g[(r, c)] = avg;
                    g[(c, r)] = avg;
                }
            }
            let g_llt = g.as_ref().llt(Side::Lower).map_err(|e| solver_err("inner Schur block is not SPD", e))?;
            let mut ainv_ru = Mat::from_fn(nf, 1, |i, _| s.rhs_u[i]);
            a_llt.solve_in_place(ainv_ru.as_mut());
            let mut w = s.rhs_lambda.clone();
            s.b.mul_vec_acc(&mat_col(&ainv_ru, 0), -1.0, &mut w);

            let bg = dense_from_csr(&s.b_gamma);
            let mut y = bg.clone();
            g_llt.solve_in_place(y.as_mut());
            interface_operator += bg.transpose() * &y;
            let mut gw = Mat::from_fn(nm, 1, |i, _| w[i]);
            g_llt.solve_in_place(gw.as_mut());
            s.b_gamma.mul_transpose_vec_acc(&mat_col(&gw, 0), 1.0, &mut interface_shift);
            parts.push(SchurPart { a_llt, g_llt });
        }
        let p1 = parts.pop().unwrap();
        let p0 = parts.pop().unwrap();
        Ok(Self { reduced, parts: [p0, p1], interface_operator, interface_shift, alpha })
    }

    /// Dense interface Schur operator for the given channel update.
    pub fn interface_matrix(&self, update: &InterfaceUpdate) -> Result<Mat<f64>> {
        check_update(self.reduced, update)?;
        let mut s = self.interface_operator.clone();
        for (r, c, v) in self.reduced.a_gamma.iter() {
            s[(r, c)] += v;
        }
        if let Some(m) = &update.matrix {
            for (r, c, v) in m.iter() {
                s[(r, c)] += v;
            }
        }
        for r in 0..s.nrows() {
            for c in 0..r {
                let avg = 0.5 * (s[(r, c)] + s[(c, r)]);
                s[(r, c)] = avg;
                s[(c, r)] = avg;
            }
        }
        Ok(s)
    }

    /// Free channel unknowns only.
    pub fn solve_interface(&self, update: &InterfaceUpdate) -> Result<Vec<f64>> {
        let s = self.interface_matrix(update)?;
        let llt = s.as_ref().llt(Side::Lower).map_err(|e| solver_err("interface Schur operator is not SPD", e))?;
        let n = s.nrows();
        let mut rhs = Mat::from_fn(n, 1, |i, _| self.reduced.rhs_gamma[i] + update.rhs[i] - self.interface_shift[i]);
        llt.solve_in_place(rhs.as_mut());
        let x = mat_col(&rhs, 0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("interface solve produced non-finite values".into()));
        }
        Ok(x)
    }

    /// Channel potential on all channel nodes.
    pub fn solve_channel(&self, update: &InterfaceUpdate) -> Result<Vec<f64>> {
        Ok(self.reduced.interface_dofs.scatter(&self.solve_interface(update)?))
    }

    /// Multipliers and bulk potentials from the free channel unknowns.
    ///
    /// `G_i` is badly conditioned, so the local saddle solve is followed by
    /// one step of iterative refinement.
    pub fn recover(&self, u_gamma_free: &[f64]) -> SolutionFields {
        let mut u = [Vec::new(), Vec::new()];
        let mut lambda = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let s = &self.reduced.sub[i];
            let mut r_lambda = s.rhs_lambda.clone();
            s.b_gamma.mul_vec_acc(u_gamma_free, 1.0, &mut r_lambda);
            let (mut x, mut l) = self.local_solve(i, &s.rhs_u, &r_lambda);
            let mut ru = s.rhs_u.clone();
            s.a.mul_vec_acc(&x, -1.0, &mut ru);
            s.b.mul_transpose_vec_acc(&l, 1.0, &mut ru);
            let mut rl = r_lambda;
            s.b.mul_vec_acc(&x, -1.0, &mut rl);
            if self.alpha != 0.0 {
                s.c.mul_vec_acc(&l, -self.alpha, &mut rl);
            }
            let (dx, dl) = self.local_solve(i, &ru, &rl);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            l.iter_mut().zip(&dl).for_each(|(a, b)| *a += b);
            u[i] = s.dofs.scatter(&x);
            lambda[i] = l;
        }
        SolutionFields { u, lambda, u_gamma: self.reduced.interface_dofs.scatter(u_gamma_free) }
    }

    /// Solves `A u - B^T l = f`, `B u + alpha C l = g` on subdomain `i`.
    fn local_solve(&self, i: usize, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = &self.reduced.sub[i];
        let p = &self.parts[i];
        let mut ainv_f = Mat::from_fn(f.len(), 1, |k, _| f[k]);
        p.a_llt.solve_in_place(ainv_f.as_mut());
        let mut t = g.to_vec();
        s.b.mul_vec_acc(&mat_col(&ainv_f, 0), -1.0, &mut t);
        let mut l = Mat::from_fn(t.len(), 1, |k, _| t[k]);
        p.g_llt.solve_in_place(l.as_mut());
        let l = mat_col(&l, 0);
        let mut ru = f.to_vec();
        s.b.mul_transpose_vec_acc(&l, 1.0, &mut ru);
        let mut x = Mat::from_fn(ru.len(), 1, |k, _| ru[k]);
        p.a_llt.solve_in_place(x.as_mut());
        (mat_col(&x, 0), l)
    }

    pub fn solve(&self, update: &InterfaceUpdate) -> Result<SolutionFields> {
        let ug = self.solve_interface(update)?;
        Ok(self.recover(&ug))
    }
}

/// Solver of the coupled system for a sequence of channel updates.
pub trait InterfaceSolver {
    /// Channel potential on all channel nodes.
    fn solve_channel(&mut self, update: &InterfaceUpdate) -> Result<Vec<f64>>;
    fn solve_fields(&mut self, update: &InterfaceUpdate) -> Result<SolutionFields>;
}

impl InterfaceSolver for SchurSolver<'_> {
    fn solve_channel(&mut self, update: &InterfaceUpdate) -> Result<Vec<f64>> {
        SchurSolver::solve_channel(self, update)
    }

    fn solve_fields(&mut self, update: &InterfaceUpdate) -> Result<SolutionFields> {
        self.solve(update)
    }
}

impl InterfaceSolver for MonolithicSolver<'_> {
    fn solve_channel(&mut self, update: &InterfaceUpdate) -> Result<Vec<f64>> {
        Ok(self.solve(update)?.u_gamma)
    }

    fn solve_fields(&mut self, update: &InterfaceUpdate) -> Result<SolutionFields> {
        self.solve(update)
    }
}

/// Which factorization path to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Monolithic,
    Schur,
}

/// One-shot Schur-complement solve.
pub fn schur_solve(
    reduced: &ReducedBlocks,
    mode: CouplingMode,
    alpha: f64,
    update: &InterfaceUpdate,
) -> Result<SolutionFields> {
    SchurSolver::new(reduced, mode, alpha)?.solve(update)
}

/// Largest entrywise difference of two solutions relative to the largest
/// entry of `reference`, over all five fields.
pub fn relative_sup_difference(a: &SolutionFields, reference: &SolutionFields) -> f64 {
    let pairs = [
        (&a.u[0], &reference.u[0]),
        (&a.u[1], &reference.u[1]),
        (&a.lambda[0], &reference.lambda[0]),
        (&a.lambda[1], &reference.lambda[1]),
        (&a.u_gamma, &reference.u_gamma),
    ];
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in pairs {
        for (p, q) in x.iter().zip(y.iter()) {
            diff = diff.max((p - q).abs());
            scale = scale.max(q.abs());
        }
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_interface_load;

    fn small(mode: CouplingMode) -> DeviceConfig {
        let mut cfg = DeviceConfig::default().with_grid(12, 4, 18);
        cfg.coupling = mode;
        cfg
    }

    fn source_update(d: &Discretization) -> InterfaceUpdate {
        let cfg = &d.cfg;
        let load = assemble_interface_load(
            &d.grid,
            |x| cfg.source_scale() * (cfg.scaled_doping(x) - 1.0),
            3,
            &[cfg.junctions.0, cfg.junctions.1],
        )
        .unwrap();
        d.load_update(&load).unwrap()
    }

    #[test]
    fn dimension_bookkeeping() {
        let d = Discretization::new(&small(CouplingMode::Dirichlet)).unwrap();
        let up = d.load_update(&vec![0.0; d.grid.n_nodes()]).unwrap();
        let sys = assemble_block_system(&d.reduced, CouplingMode::Dirichlet, 0.0, &up).unwrap();
        let expected = d.reduced.sub[0].dofs.n_free() + d.reduced.sub[1].dofs.n_free() + 2 * 11 + 17;
        assert_eq!(sys.layout.dim(), expected);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let d = Discretization::new(&small(CouplingMode::Robin)).unwrap();
        let up = d.load_update(&vec![0.0; d.grid.n_nodes()]).unwrap();
        let sys = assemble_block_system(&d.reduced, CouplingMode::Robin, d.alpha(), &up).unwrap();
        let f = solve_block(&sys).unwrap();
        assert!(f.u_gamma.iter().chain(&f.u[0]).chain(&f.lambda[1]).all(|v| *v == 0.0));
    }

    #[test]
    fn robin_with_zero_alpha_is_dirichlet() {
        let d = Discretization::new(&small(CouplingMode::Dirichlet)).unwrap();
        let up = source_update(&d);
        let a = assemble_block_system(&d.reduced, CouplingMode::Dirichlet, 0.0, &up).unwrap();
        let b = assemble_block_system(&d.reduced, CouplingMode::Robin, 0.0, &up).unwrap();
        assert_eq!(a.matrix.to_dense(), b.matrix.to_dense());
    }

    #[test]
    fn constant_contacts_give_constant_field() {
        for mode in [CouplingMode::Dirichlet, CouplingMode::Robin] {
            let mut cfg = small(mode);
            cfg.v_source = 0.25;
            cfg.v_drain = 0.25;
            cfg.v_gate = 0.25;
            let d = Discretization::new(&cfg).unwrap();
            let up = d.load_update(&vec![0.0; d.grid.n_nodes()]).unwrap();
            let sys = assemble_block_system(&d.reduced, mode, d.alpha(), &up).unwrap();
            for f in [solve_block(&sys).unwrap(), schur_solve(&d.reduced, mode, d.alpha(), &up).unwrap()] {
                for v in f.u[0].iter().chain(&f.u[1]).chain(&f.u_gamma) {
                    assert!((v - 0.25).abs() < 1e-12);
                }
                assert!(f.lambda[0].iter().chain(&f.lambda[1]).all(|l| l.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn schur_matches_monolithic_and_residuals_vanish() {
        for mode in [CouplingMode::Dirichlet, CouplingMode::Robin] {
            let mut cfg = small(mode);
            cfg.v_drain = 0.04;
            cfg.v_gate = -0.1;
            let d = Discretization::new(&cfg).unwrap();
            let up = source_update(&d);
            let sys = assemble_block_system(&d.reduced, mode, d.alpha(), &up).unwrap();
            let mono = solve_block(&sys).unwrap();
            let schur = schur_solve(&d.reduced, mode, d.alpha(), &up).unwrap();
            assert!(relative_sup_difference(&schur, &mono) < 1e-10);
            assert!(residual_report(&sys, &mono).relative() < 1e-10);
            assert!(residual_report(&sys, &schur).relative() < 1e-10);
        }
    }

    #[test]
    fn monolithic_solver_reuses_pattern() {
        let d = Discretization::new(&small(CouplingMode::Dirichlet)).unwrap();
        let mut solver = MonolithicSolver::new(&d.reduced, CouplingMode::Dirichlet, 0.0).unwrap();
        let up = source_update(&d);
        let a = solver.solve(&up).unwrap();
        let b = solver.solve(&up).unwrap();
        assert!(relative_sup_difference(&a, &b) < 1e-14);
    }

    #[test]
    fn residual_of_zero_fields_is_load() {
        let d = Discretization::new(&small(CouplingMode::Dirichlet)).unwrap();
        let up = source_update(&d);
        let sys = assemble_block_system(&d.reduced, CouplingMode::Dirichlet, 0.0, &up).unwrap();
        let zero = sys.fields(&vec![0.0; sys.layout.dim()]);
        let rep = residual_report(&sys, &zero);
        assert!((rep.total() - rep.rhs_norm).abs() < 1e-12 * rep.rhs_norm);
    }

    #[test]
    fn decoupled_channel_solves_alone() {
        let d = Discretization::new(&small(CouplingMode::Dirichlet)).unwrap();
        let mut reduced = d.reduced.clone();
        for s in reduced.sub.iter_mut() {
            s.b_gamma = CsrMatrix::zeros(s.b_gamma.nrows(), s.b_gamma.ncols());
        }
        let up = source_update(&d);
        let f = schur_solve(&reduced, CouplingMode::Dirichlet, 0.0, &up).unwrap();
        let ug = reduced.interface_dofs.gather(&f.u_gamma);
        let r = reduced.a_gamma.mul_vec(&ug);
        for (a, b) in r.iter().zip(&up.rhs) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn interface_operator_is_spd() {
        let d = Discretization::new(&small(CouplingMode::Robin)).unwrap();
        let solver = SchurSolver::new(&d.reduced, CouplingMode::Robin, d.alpha()).unwrap();
        let up = d.load_update(&vec![0.0; d.grid.n_nodes()]).unwrap();
        let s = solver.interface_matrix(&up).unwrap();
        let mut seed = 7u64;
        for _ in 0..20 {
            let x: Vec<f64> = (0..s.nrows())
                .map(|_| {
                    seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let mut q = 0.0;
            for r in 0..s.nrows() {
                for c in 0..s.ncols() {
                    q += x[r] * s[(r, c)] * x[c];
                }
            }
            assert!(q > 0.0);
        }
    }
}
