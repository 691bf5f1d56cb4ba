//! Discrete operators: oxide and channel stiffness, trace and cross-grid
//! couplings with the multiplier spaces, multiplier masses, channel loads and
//! Dirichlet elimination.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::DeviceConfig;
use crate::error::{Error, Result};
use crate::mesh::{trace_partition, BoundaryTag, InterfaceGrid, Mesh2D};
use crate::quadrature::{gauss_legendre_unit, triangle_rule};
use crate::sparse::{CsrMatrix, Triplets};

/// Gradients of the three barycentric coordinates and the (positive) area.
fn p1_gradients(p: [[f64; 2]; 3], index: usize) -> Result<([[f64; 2]; 3], f64)> {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let scale = (p[1][0] - p[0][0]).abs().max((p[2][1] - p[0][1]).abs()).max((p[2][0] - p[0][0]).abs());
    if !(det.abs() > 1e-14 * scale * scale) {
        return Err(Error::DegenerateTriangle { index, area: 0.5 * det });
    }
    let g = [
        [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
        [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
        [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
    ];
    Ok((g, 0.5 * det.abs()))
}

/// P1 stiffness of `int eps grad u . grad v` with a diagonal permittivity
/// tensor `[eps_xx, eps_yy]` that is constant per triangle.
pub fn assemble_anisotropic_stiffness(
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    permittivity: impl Fn(usize) -> [f64; 2],
) -> Result<CsrMatrix> {
    let n = vertices.len();
    let mut trip = Triplets::with_capacity(n, n, 9 * triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let (g, area) = p1_gradients(p, t)?;
        let [exx, eyy] = permittivity(t);
        for a in 0..3 {
            for b in 0..3 {
                let k = area * (exx * g[a][0] * g[b][0] + eyy * g[a][1] * g[b][1]);
                trip.push(tri[a], tri[b], k);
            }
        }
    }
    Ok(trip.into_csr())
}

/// P1 stiffness `A_i` of `int eps grad u . grad v` on an oxide mesh.
pub fn assemble_stiffness_2d(mesh: &Mesh2D, eps: f64) -> Result<CsrMatrix> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("permittivity must be positive, got {eps}")));
    }
    assemble_anisotropic_stiffness(&mesh.vertices, &mesh.triangles, |_| [eps, eps])
}

/// Load vector `int f phi_i` on a triangulation using a collapsed Gauss rule
/// with `points` points per direction.
pub fn assemble_load_2d(
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    points: usize,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>> {
    let rule = triangle_rule(points);
    let mut load = vec![0.0; vertices.len()];
    for (t, tri) in triangles.iter().enumerate() {
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let (_, area) = p1_gradients(p, t)?;
        for &(s, r, w) in &rule {
            let l = [1.0 - s - r, s, r];
            let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
            let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
            let fv = f(x, y);
            if !fv.is_finite() {
                return Err(Error::NonFinite { x });
            }
            for a in 0..3 {
                load[tri[a]] += 2.0 * area * w * fv * l[a];
            }
        }
    }
    Ok(load)
}

/// P1 stiffness `d eps_par int u' v'` on the channel partition (all nodes).
pub fn assemble_interface_stiffness(grid: &InterfaceGrid, thickness: f64, eps_par: f64) -> Result<CsrMatrix> {
    if !(thickness > 0.0 && eps_par > 0.0) {
        return Err(Error::InvalidConfig("d and eps_par must be positive".into()));
    }
    let n = grid.n_nodes();
    let mut trip = Triplets::with_capacity(n, n, 4 * grid.n_intervals());
    for k in 0..grid.n_intervals() {
        let (a, b) = grid.interval(k);
        let s = thickness * eps_par / (b - a);
        trip.push(k, k, s);
        trip.push(k, k + 1, -s);
        trip.push(k + 1, k, -s);
        trip.push(k + 1, k + 1, s);
    }
    Ok(trip.into_csr())
}

/// Mass matrix `int w phi_i phi_j` on the channel partition, for a weight
/// given by nodal values and interpolated linearly (integrated exactly).
pub fn assemble_weighted_interface_mass(grid: &InterfaceGrid, weight: &[f64]) -> Result<CsrMatrix> {
    let n = grid.n_nodes();
    if weight.len() != n {
        return Err(Error::DimensionMismatch(format!("weight has {} entries for {n} nodes", weight.len())));
    }
    let rule = gauss_legendre_unit(3);
    let mut trip = Triplets::with_capacity(n, n, 4 * grid.n_intervals());
    for k in 0..grid.n_intervals() {
        let (a, b) = grid.interval(k);
        let h = b - a;
        let mut m = [[0.0; 2]; 2];
        for &(t, w) in rule {
            let phi = [1.0 - t, t];
            let wt = weight[k] * phi[0] + weight[k + 1] * phi[1];
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += h * w * wt * phi[r] * phi[c];
                }
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                trip.push(k + r, k + c, m[r][c]);
            }
        }
    }
    Ok(trip.into_csr())
}

/// A space of continuous piecewise-linear functions on a partition of `[0, L]`,
/// described interval by interval.
pub trait PiecewiseLinearSpace {
    fn partition(&self) -> &InterfaceGrid;
    fn dim(&self) -> usize;
    /// Basis functions active on interval `k`, as `(dof, value at left end,
    /// value at right end)`.
    fn local_basis(&self, k: usize) -> [Option<(usize, f64, f64)>; 2];
}

/// Standard nodal hat functions (one per node, endpoints included).
#[derive(Debug, Clone, Copy)]
pub struct NodalHats<'a> {
    pub grid: &'a InterfaceGrid,
}

impl PiecewiseLinearSpace for NodalHats<'_> {
    fn partition(&self) -> &InterfaceGrid {
        self.grid
    }

    fn dim(&self) -> usize {
        self.grid.n_nodes()
    }

    fn local_basis(&self, k: usize) -> [Option<(usize, f64, f64)>; 2] {
        [Some((k, 1.0, 0.0)), Some((k + 1, 0.0, 1.0))]
    }
}

/// Lagrange multiplier space on the trace partition of an oxide mesh:
/// continuous, piecewise linear, constant on the first and last interval.
///
/// Degree of freedom `m` (`0 <= m < #intervals - 1`) is attached to interior
/// node `m + 1`; the first (last) basis function extends with value 1 over
/// the first (last) interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSpace {
    partition: InterfaceGrid,
}

impl MultiplierSpace {
    pub fn dof_count(&self) -> usize {
        self.partition.n_intervals() - 1
    }

    pub fn partition_nodes(&self) -> &[f64] {
        self.partition.nodes()
    }

    /// Value of basis function `m` at `x`.
    pub fn eval_basis(&self, m: usize, x: f64) -> f64 {
        let k = self.partition.locate(x);
        let (a, b) = self.partition.interval(k);
        let t = (x - a) / (b - a);
        self.local_basis(k)
            .iter()
            .flatten()
            .filter(|(dof, _, _)| *dof == m)
            .map(|&(_, l, r)| l * (1.0 - t) + r * t)
            .sum()
    }
}

impl PiecewiseLinearSpace for MultiplierSpace {
    fn partition(&self) -> &InterfaceGrid {
        &self.partition
    }

    fn dim(&self) -> usize {
        self.dof_count()
    }

    fn local_basis(&self, k: usize) -> [Option<(usize, f64, f64)>; 2] {
        let n = self.partition.n_intervals();
        if k == 0 {
            [Some((0, 1.0, 1.0)), None]
        } else if k == n - 1 {
            [Some((n - 2, 1.0, 1.0)), None]
        } else {
            [Some((k - 1, 1.0, 0.0)), Some((k, 0.0, 1.0))]
        }
    }
}

/// Multiplier space on `partition`; needs at least two intervals.
pub fn build_multiplier_space(partition: InterfaceGrid) -> Result<MultiplierSpace> {
    if partition.n_intervals() < 2 {
        return Err(Error::InvalidConfig("multiplier space needs at least two intervals".into()));
    }
    Ok(MultiplierSpace { partition })
}

/// Exact `int_gamma phi_r psi_c dx` for two piecewise-linear spaces on
/// possibly different partitions of the same segment.
///
/// Integration runs over the merged breakpoints, where both factors are
/// linear, with the 2-point Gauss rule (exact for the quadratic product).
pub fn coupling_matrix(rows: &dyn PiecewiseLinearSpace, cols: &dyn PiecewiseLinearSpace) -> Result<CsrMatrix> {
    let p = rows.partition().nodes();
    let q = cols.partition().nodes();
    let span = p[p.len() - 1] - p[0];
    let tol = 1e-12 * span.abs().max(1.0);
    if (p[0] - q[0]).abs() > tol || (p[p.len() - 1] - q[q.len() - 1]).abs() > tol {
        return Err(Error::PartitionMismatch("partitions cover different segments".into()));
    }
    let rule = gauss_legendre_unit(2);
    let mut trip = Triplets::new(rows.dim(), cols.dim());
    let (mut i, mut j) = (0usize, 0usize);
    let mut a = p[0];
    while i + 1 < p.len() && j + 1 < q.len() {
        let b = p[i + 1].min(q[j + 1]);
        if b - a > tol {
            let (pa, pb) = (p[i], p[i + 1]);
            let (qa, qb) = (q[j], q[j + 1]);
            for r in rows.local_basis(i).iter().flatten() {
                for c in cols.local_basis(j).iter().flatten() {
                    let mut acc = 0.0;
                    for &(t, w) in rule {
                        let x = a + t * (b - a);
                        let sr = (x - pa) / (pb - pa);
                        let sc = (x - qa) / (qb - qa);
                        let vr = r.1 * (1.0 - sr) + r.2 * sr;
                        let vc = c.1 * (1.0 - sc) + c.2 * sc;
                        acc += w * vr * vc;
                    }
                    trip.push(r.0, c.0, acc * (b - a));
                }
            }
        }
        if p[i + 1] <= b + tol {
            i += 1;
        }
        if q[j + 1] <= b + tol {
            j += 1;
        }
        a = b;
    }
    Ok(trip.into_csr())
}

fn same_partition(a: &InterfaceGrid, b: &InterfaceGrid) -> bool {
    a.n_nodes() == b.n_nodes()
        && a.nodes().iter().zip(b.nodes()).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0))
}

/// Trace coupling `B_i`: rows are multiplier dofs, columns all mesh vertices.
pub fn assemble_trace_coupling(mesh: &Mesh2D, mult: &MultiplierSpace) -> Result<CsrMatrix> {
    let trace = trace_partition(mesh);
    if !same_partition(&trace, mult.partition()) {
        return Err(Error::PartitionMismatch("multiplier partition differs from the mesh trace".into()));
    }
    let local = coupling_matrix(mult, &NodalHats { grid: &trace })?;
    let entries = local.iter().map(|(m, k, v)| (m, mesh.interface_nodes[k], v)).collect();
    Ok(CsrMatrix::from_triplets(mult.dof_count(), mesh.n_vertices(), entries))
}

/// Cross-grid coupling `B^i_gamma`: rows are multiplier dofs, columns all
/// channel-grid nodes. The partitions need not match.
pub fn assemble_cross_coupling(mult: &MultiplierSpace, grid: &InterfaceGrid) -> Result<CsrMatrix> {
    coupling_matrix(mult, &NodalHats { grid })
}

/// Multiplier Gram matrix `C_i`.
pub fn assemble_multiplier_mass(mult: &MultiplierSpace) -> Result<CsrMatrix> {
    coupling_matrix(mult, mult)
}

/// Channel load `int f phi_j` with a `points`-point Gauss rule per interval.
/// Intervals are split at every abscissa in `breaks` lying strictly inside
/// them, so piecewise-smooth densities are integrated piece by piece.
pub fn assemble_interface_load(
    grid: &InterfaceGrid,
    f: impl Fn(f64) -> f64,
    points: usize,
    breaks: &[f64],
) -> Result<Vec<f64>> {
    let rule = gauss_legendre_unit(points);
    let mut load = vec![0.0; grid.n_nodes()];
    let mut pieces: Vec<f64> = Vec::new();
    for k in 0..grid.n_intervals() {
        let (a, b) = grid.interval(k);
        let tol = 1e-12 * (b - a);
        pieces.clear();
        pieces.push(a);
        for &x in breaks {
            if x > a + tol && x < b - tol {
                pieces.push(x);
            }
        }
        pieces.push(b);
        pieces.sort_by(|u, v| u.partial_cmp(v).unwrap());
        for w in pieces.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            for &(t, wt) in rule {
                let x = s0 + t * (s1 - s0);
                let fv = f(x);
                if !fv.is_finite() {
                    return Err(Error::NonFinite { x });
                }
                let r = (x - a) / (b - a);
                load[k] += wt * (s1 - s0) * fv * (1.0 - r);
                load[k + 1] += wt * (s1 - s0) * fv * r;
            }
        }
    }
    Ok(load)
}

/// Dirichlet values of the oxide vertices from the boundary tags.
///
/// A node touching several Dirichlet segments must receive the same value
/// from each of them.
pub fn dirichlet_values(mesh: &Mesh2D, cfg: &DeviceConfig) -> Result<Vec<Option<f64>>> {
    let mut values: Vec<Option<f64>> = vec![None; mesh.n_vertices()];
    for &(edge, tag) in &mesh.boundary_edges {
        let v = match tag {
            BoundaryTag::DirichletSource => cfg.v_source,
            BoundaryTag::DirichletDrain => cfg.v_drain,
            BoundaryTag::DirichletGate => cfg.v_gate,
            BoundaryTag::Neumann | BoundaryTag::Interface => continue,
        };
        for node in edge {
            match values[node] {
                Some(old) if old != v => {
                    return Err(Error::DirichletConflict { node, first: old, second: v });
                }
                _ => values[node] = Some(v),
            }
        }
    }
    Ok(values)
}

/// Numbering of the free (non-Dirichlet) entries of a nodal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    map: Vec<Option<usize>>,
    free: Vec<usize>,
    values: Vec<Option<f64>>,
}

impl DofMap {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        let mut map = vec![None; values.len()];
        let mut free = Vec::new();
        for (k, v) in values.iter().enumerate() {
            if v.is_none() {
                map[k] = Some(free.len());
                free.push(k);
            }
        }
        Self { map, free, values }
    }

    pub fn n_full(&self) -> usize {
        self.map.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn map(&self) -> &[Option<usize>] {
        &self.map
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    /// Dirichlet values as a full vector (zero at free nodes).
    pub fn lifting(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_or(0.0)).collect()
    }

    pub fn is_constrained(&self, k: usize) -> bool {
        self.values[k].is_some()
    }

    /// Reinserts Dirichlet values around a free-dof vector.
    pub fn scatter(&self, free_values: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.map)
            .map(|(v, m)| match (v, m) {
                (Some(g), _) => *g,
                (None, Some(k)) => free_values[*k],
                (None, None) => unreachable!(),
            })
            .collect()
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&k| full[k]).collect()
    }
}

/// Unreduced operators of one oxide subdomain.
#[derive(Debug, Clone)]
pub struct SubdomainBlocks {
    /// `A_i`
    pub stiffness: CsrMatrix,
    /// `B_i`
    pub trace: CsrMatrix,
    /// `B^i_gamma`
    pub cross: CsrMatrix,
    /// `C_i`
    pub mass: CsrMatrix,
}

/// All unreduced blocks of the coupled problem.
#[derive(Debug, Clone)]
pub struct FullBlocks {
    pub sub: [SubdomainBlocks; 2],
    /// `A_gamma` over all channel nodes.
    pub interface_stiffness: CsrMatrix,
}

/// Dirichlet data for the oxide vertices and the channel nodes.
#[derive(Debug, Clone)]
pub struct DirichletData {
    pub sub: [Vec<Option<f64>>; 2],
    pub interface: Vec<Option<f64>>,
}

/// Subdomain blocks restricted to free vertices, with the Dirichlet
/// contributions moved to the right-hand side.
#[derive(Debug, Clone)]
pub struct ReducedSubdomain {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub b_gamma: CsrMatrix,
    pub c: CsrMatrix,
    /// `-A_i(F, D) g_i`
    pub rhs_u: Vec<f64>,
    /// `-B_i(:, D) g_i + B^i_gamma(:, D) g_gamma`
    pub rhs_lambda: Vec<f64>,
    pub dofs: DofMap,
}

/// Blocks after Dirichlet elimination. Multiplier dofs are never eliminated.
#[derive(Debug, Clone)]
pub struct ReducedBlocks {
    pub sub: [ReducedSubdomain; 2],
    pub a_gamma: CsrMatrix,
    /// `-A_gamma(F, D) g_gamma`
    pub rhs_gamma: Vec<f64>,
    pub interface_dofs: DofMap,
}

/// Channel-row additions of one solve: extra matrix on the free interface
/// unknowns and the full right-hand side of the channel row.
#[derive(Debug, Clone)]
pub struct InterfaceUpdate {
    pub matrix: Option<CsrMatrix>,
    pub rhs: Vec<f64>,
}

/// Removes Dirichlet rows and columns from every block.
pub fn eliminate_dirichlet(blocks: &FullBlocks, data: &DirichletData) -> Result<ReducedBlocks> {
    let iface = DofMap::new(data.interface.clone());
    if iface.n_full() != blocks.interface_stiffness.nrows() {
        return Err(Error::DimensionMismatch("interface Dirichlet data length".into()));
    }
    let g_gamma = iface.lifting();
    let sub = [0, 1].map(|i| -> Result<ReducedSubdomain> {
        let sb = &blocks.sub[i];
        let dofs = DofMap::new(data.sub[i].clone());
        if dofs.n_full() != sb.stiffness.nrows() {
            return Err(Error::DimensionMismatch(format!("subdomain {i} Dirichlet data length")));
        }
        let g = dofs.lifting();
        let nf = dofs.n_free();
        let nm = sb.trace.nrows();
        let all_m: Vec<Option<usize>> = (0..nm).map(Some).collect();
        let a = sb.stiffness.submatrix(dofs.map(), nf, dofs.map(), nf);
        let b = sb.trace.submatrix(&all_m, nm, dofs.map(), nf);
        let b_gamma = sb.cross.submatrix(&all_m, nm, iface.map(), iface.n_free());
        let rhs_u = dofs.gather(&sb.stiffness.mul_vec(&g)).into_iter().map(|v| -v).collect();
        let mut rhs_lambda = vec![0.0; nm];
        sb.trace.mul_vec_acc(&g, -1.0, &mut rhs_lambda);
        sb.cross.mul_vec_acc(&g_gamma, 1.0, &mut rhs_lambda);
        Ok(ReducedSubdomain { a, b, b_gamma, c: sb.mass.clone(), rhs_u, rhs_lambda, dofs })
    });
    let [s0, s1] = sub;
    let nfg = iface.n_free();
    let a_gamma = blocks.interface_stiffness.submatrix(iface.map(), nfg, iface.map(), nfg);
    let rhs_gamma = iface
        .gather(&blocks.interface_stiffness.mul_vec(&g_gamma))
        .into_iter()
        .map(|v| -v)
        .collect();
    Ok(ReducedBlocks { sub: [s0?, s1?], a_gamma, rhs_gamma, interface_dofs: iface })
}

impl ReducedBlocks {
    /// Reduces a channel-row addition given on all channel nodes: an extra
    /// operator `extra` (e.g. the Gummel mass term) and a load vector.
    pub fn interface_update(&self, extra: Option<&CsrMatrix>, load: &[f64]) -> Result<InterfaceUpdate> {
        let map = &self.interface_dofs;
        if load.len() != map.n_full() {
            return Err(Error::DimensionMismatch("interface load length".into()));
        }
        let mut rhs_full = load.to_vec();
        let matrix = match extra {
            Some(m) => {
                m.mul_vec_acc(&map.lifting(), -1.0, &mut rhs_full);
                Some(m.submatrix(map.map(), map.n_free(), map.map(), map.n_free()))
            }
            None => None,
        };
        Ok(InterfaceUpdate { matrix, rhs: map.gather(&rhs_full) })
    }

    pub fn n_multipliers(&self, i: usize) -> usize {
        self.sub[i].b.nrows()
    }
}
