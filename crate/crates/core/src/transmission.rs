//! Resolved transmission-problem reference solver.
//!
//! The strip `|y| < d/2` is meshed explicitly with a diagonal permittivity
//! tensor and the Dirac source on `y = 0` is replaced by the Gaussian
//! `g_a(y) = e^{-(y/a)^2} / (a sqrt(pi))`. The same contacts, gates, doping
//! and density law as the interface model are used; transport is driven by
//! the trace `u(x, 0)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::{Mat, Side};

use crate::assembly::{assemble_anisotropic_stiffness, DofMap};
use crate::config::DeviceConfig;
use crate::error::{Error, Result};
use crate::mesh::InterfaceGrid;
use crate::quadrature::triangle_rule;
use crate::sparse::{CsrMatrix, Triplets};
use crate::transport::{equilibrium_density, is_equilibrium, solve_dd, solve_sg, DopingProfile};

/// Geometric growth factor of the graded `y` spacings.
pub const GRADING_RATIO: f64 = 1.3;

/// The Gaussian replacing the Dirac distribution, `nm^-1`.
pub fn smoothed_delta(y: f64, a: f64) -> f64 {
    let t = y / a;
    libm::exp(-t * t) / (a * libm::sqrt(core::f64::consts::PI))
}

/// Spacings growing geometrically from `first` by [`GRADING_RATIO`], capped at
/// `cap`, and shrunk uniformly so that they add up to `span` exactly.
fn graded_spacings(first: f64, cap: f64, span: f64) -> Vec<f64> {
    let mut h = Vec::new();
    let mut step = first.min(cap);
    let mut total = 0.0;
    while total < span * (1.0 - 1e-12) {
        h.push(step);
        total += step;
        step = (step * GRADING_RATIO).min(cap);
    }
    let scale = span / total;
    h.iter().map(|s| s * scale).collect()
}

/// Ascending `y` levels on `[-l/2, l/2]`, symmetric about 0, with exact lines
/// at `0` and `+-d/2`. Spacing is `a/2` for `|y| <= 3a`, then grows by at most
/// [`GRADING_RATIO`] and is capped at `l / (2 ny_outer)`.
pub fn graded_levels(a: f64, d: f64, l: f64, ny_outer: usize) -> Result<Vec<f64>> {
    if !(a > 0.0 && d > 0.0 && l > d && ny_outer > 0) {
        return Err(Error::InvalidConfig(format!(
            "strip grading needs 0 < a, 0 < d < l and ny_outer > 0 (a={a}, d={d}, l={l})"
        )));
    }
    let cap = 0.5 * l / ny_outer as f64;
    let half_d = 0.5 * d;
    let fine = (0.5 * a).min(cap);
    let core_steps = (libm::ceil(3.0 * a / fine) as usize).max(1);
    let mut upper = vec![0.0];
    for k in 1..=core_steps {
        let y = k as f64 * fine;
        if y >= half_d * (1.0 - 1e-12) {
            break;
        }
        upper.push(y);
    }
    let start = *upper.last().unwrap_or(&0.0);
    let first = if start > 0.0 { fine * GRADING_RATIO } else { fine };
    let push_segment = |upper: &mut Vec<f64>, from: f64, to: f64, first: f64| {
        let h = graded_spacings(first, cap, to - from);
        let mut y = from;
        for (k, s) in h.iter().enumerate() {
            y += s;
            upper.push(if k + 1 == h.len() { to } else { y });
        }
        h.last().copied().unwrap_or(first)
    };
    let last = push_segment(&mut upper, start, half_d, first);
    push_segment(&mut upper, half_d, 0.5 * l, last * GRADING_RATIO);
    let mut levels: Vec<f64> = upper.iter().rev().map(|v| -v).collect();
    levels.pop();
    levels.extend_from_slice(&upper);
    Ok(levels)
}

/// Conforming structured triangulation of the whole device including the
/// channel strip.
#[derive(Debug, Clone, PartialEq)]
pub struct StripMesh {
    pub xs: Vec<f64>,
    /// Ascending, from `-l/2` to `l/2`.
    pub ys: Vec<f64>,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// `[eps_xx, eps_yy]` per triangle.
    pub permittivity: Vec<[f64; 2]>,
    midline: usize,
}

impl StripMesh {
    /// Uniform in `x` with `nx_ref` cells, graded in `y`.
    pub fn new(cfg: &DeviceConfig, nx_ref: usize, ny_outer: usize) -> Result<Self> {
        cfg.validate()?;
        if nx_ref == 0 {
            return Err(Error::InvalidConfig("nx_ref must be positive".into()));
        }
        let xs = InterfaceGrid::uniform(cfg.length, nx_ref)?.nodes().to_vec();
        let ys = graded_levels(cfg.smoothing_width, cfg.thickness, cfg.height, ny_outer)?;
        Self::from_lines(cfg, xs, ys)
    }

    /// Mesh on given node lines. The lower half mirrors the upper half.
    pub fn from_lines(cfg: &DeviceConfig, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        InterfaceGrid::new(xs.clone())?;
        InterfaceGrid::new(ys.clone())?;
        let half_d = 0.5 * cfg.thickness;
        let find = |v: f64| ys.iter().position(|y| (y - v).abs() <= 1e-12 * cfg.height);
        let midline = find(0.0).ok_or_else(|| Error::InvalidConfig("strip mesh has no line at y = 0".into()))?;
        if find(half_d).is_none() || find(-half_d).is_none() {
            return Err(Error::InvalidConfig("strip mesh lacks the lines y = +-d/2".into()));
        }
        let (nx, ny) = (xs.len() - 1, ys.len() - 1);
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for &y in &ys {
            for &x in &xs {
                vertices.push([x, y]);
            }
        }
        let v = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        let mut permittivity = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            let strip = (0.5 * (ys[j] + ys[j + 1])).abs() < half_d;
            let eps = if strip { [cfg.eps_par, cfg.eps_perp] } else { [cfg.eps_ox, cfg.eps_ox] };
            for i in 0..nx {
                if j >= midline {
                    triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                    triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
                } else {
                    triangles.push([v(i, j), v(i + 1, j), v(i, j + 1)]);
                    triangles.push([v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)]);
                }
                permittivity.push(eps);
                permittivity.push(eps);
            }
        }
        Ok(Self { xs, ys, vertices, triangles, permittivity, midline })
    }

    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.xs.len()) + i
    }

    /// Row index of the line `y = 0`.
    pub fn midline_row(&self) -> usize {
        self.midline
    }

    pub fn midline_nodes(&self) -> Vec<usize> {
        (0..self.xs.len()).map(|i| self.vertex_index(i, self.midline)).collect()
    }

    /// The `x` lines as a channel partition.
    pub fn midline_grid(&self) -> Result<InterfaceGrid> {
        InterfaceGrid::new(self.xs.clone())
    }

    /// Mesh with every spacing halved.
    pub fn refined(&self, cfg: &DeviceConfig) -> Result<Self> {
        let halve = |v: &[f64]| {
            let mut out = Vec::with_capacity(2 * v.len());
            for w in v.windows(2) {
                out.push(w[0]);
                out.push(0.5 * (w[0] + w[1]));
            }
            out.push(v[v.len() - 1]);
            out
        };
        Self::from_lines(cfg, halve(&self.xs), halve(&self.ys))
    }

    /// Fixed potentials: source and drain on the vertical edges, gates on
    /// the horizontal edges over `[x_G, L - x_G]`.
    pub fn dirichlet_values(&self, cfg: &DeviceConfig) -> Vec<Option<f64>> {
        let (nx, ny) = (self.xs.len() - 1, self.ys.len() - 1);
        let tol = 1e-9 * cfg.length;
        let mut values = vec![None; self.n_vertices()];
        for j in [0, ny] {
            for i in 0..=nx {
                let x = self.xs[i];
                if x >= cfg.gate_inset - tol && x <= cfg.length - cfg.gate_inset + tol {
                    values[self.vertex_index(i, j)] = Some(cfg.v_gate);
                }
            }
        }
        for j in 0..=ny {
            values[self.vertex_index(0, j)] = Some(cfg.v_source);
            values[self.vertex_index(nx, j)] = Some(cfg.v_drain);
        }
        values
    }
}

/// Trapezoid integral of the smoothed delta over the mesh `y` levels.
pub fn discrete_delta_mass(mesh: &StripMesh, a: f64) -> f64 {
    mesh.ys.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (smoothed_delta(w[0], a) + smoothed_delta(w[1], a))).sum()
}

/// Load `int f(x) g_a(y) phi` for a line density `f`. Triangles farther than
/// `12 a` from the midline carry no weight in double precision.
pub fn smeared_line_load(mesh: &StripMesh, a: f64, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let rule = triangle_rule(10);
    let mut load = vec![0.0; mesh.n_vertices()];
    for tri in &mesh.triangles {
        let p = [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]];
        let ymin = p.iter().map(|q| q[1].abs()).fold(f64::INFINITY, f64::min);
        let crosses = p.iter().any(|q| q[1] > 0.0) && p.iter().any(|q| q[1] < 0.0);
        if ymin > 12.0 * a && !crosses {
            continue;
        }
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        for &(s, r, w) in &rule {
            let l = [1.0 - s - r, s, r];
            let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
            let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
            let fv = f(x);
            if !fv.is_finite() {
                return Err(Error::NonFinite { x });
            }
            let val = 2.0 * area * w * fv * smoothed_delta(y, a);
            for k in 0..3 {
                load[tri[k]] += val * l[k];
            }
        }
    }
    Ok(load)
}

/// Matrix of `rho -> int rho_h(x) g_a(y) phi` where `rho_h` interpolates
/// midline nodal values linearly; one column per midline node.
pub fn line_load_operator(mesh: &StripMesh, a: f64, grid: &InterfaceGrid) -> CsrMatrix {
    let rule = triangle_rule(10);
    let mut trip = Triplets::with_capacity(mesh.n_vertices(), grid.n_nodes(), 0);
    for tri in &mesh.triangles {
        let p = [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]];
        let ymin = p.iter().map(|q| q[1].abs()).fold(f64::INFINITY, f64::min);
        let crosses = p.iter().any(|q| q[1] > 0.0) && p.iter().any(|q| q[1] < 0.0);
        if ymin > 12.0 * a && !crosses {
            continue;
        }
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        // every triangle lies in one column of cells, hence in one grid interval
        let k = grid.locate((p[0][0] + p[1][0] + p[2][0]) / 3.0);
        let (x0, x1) = grid.interval(k);
        let mut local = [[0.0; 2]; 3];
        for &(s, r, w) in &rule {
            let l = [1.0 - s - r, s, r];
            let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
            let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
            let t = (x - x0) / (x1 - x0);
            let val = 2.0 * area * w * smoothed_delta(y, a);
            for m in 0..3 {
                local[m][0] += val * l[m] * (1.0 - t);
                local[m][1] += val * l[m] * t;
            }
        }
        for m in 0..3 {
            trip.push(tri[m], k, local[m][0]);
            trip.push(tri[m], k + 1, local[m][1]);
        }
    }
    trip.into_csr()
}

/// Line density `s (N_dop - rho)` for a density given on the midline nodes.
pub fn source_density<'a>(cfg: &DeviceConfig, grid: &'a InterfaceGrid, rho: &'a [f64]) -> impl Fn(f64) -> f64 + 'a {
    let s = cfg.source_scale();
    let doping = DopingProfile::from_config(cfg);
    move |x| s * (doping.scaled(x) - grid.interpolate(rho, x))
}

/// Columns of the midline response solved together.
const RESPONSE_BLOCK: usize = 32;

/// Stiffness, Dirichlet data and factorization of one strip mesh.
///
/// The load for a midline density `rho` is `b_dop - s L rho`, so the midline
/// trace of the solution is affine in `rho`: `t = t_0 + R rho`. The matrix `R`
/// depends on the mesh only and is kept across bias points.
pub struct TransmissionSystem {
    pub cfg: DeviceConfig,
    pub mesh: StripMesh,
    pub grid: InterfaceGrid,
    pub stiffness: CsrMatrix,
    pub dofs: DofMap,
    stiffness_free: CsrMatrix,
    lifting_rhs: Vec<f64>,
    /// `L`, see [`line_load_operator`].
    pub line_load: CsrMatrix,
    doping_load: Vec<f64>,
    factor: Option<Llt<usize, f64>>,
    response: Option<Mat<f64>>,
}

impl TransmissionSystem {
    pub fn new(cfg: &DeviceConfig, mesh: StripMesh) -> Result<Self> {
        let stiffness = assemble_anisotropic_stiffness(&mesh.vertices, &mesh.triangles, |t| mesh.permittivity[t])?;
        let dofs = DofMap::new(mesh.dirichlet_values(cfg));
        let map = dofs.map().to_vec();
        let nf = dofs.n_free();
        let stiffness_free = stiffness.submatrix(&map, nf, &map, nf);
        let grid = mesh.midline_grid()?;
        let line_load = line_load_operator(&mesh, cfg.smoothing_width, &grid);
        let mut sys = Self {
            cfg: cfg.clone(),
            mesh,
            grid,
            stiffness,
            dofs,
            stiffness_free,
            lifting_rhs: Vec::new(),
            line_load,
            doping_load: Vec::new(),
            factor: None,
            response: None,
        };
        sys.refresh_data()?;
        Ok(sys)
    }

    fn refresh_data(&mut self) -> Result<()> {
        let mut lifting_rhs = vec![0.0; self.mesh.n_vertices()];
        self.stiffness.mul_vec_acc(&self.dofs.lifting(), -1.0, &mut lifting_rhs);
        self.lifting_rhs = self.dofs.gather(&lifting_rhs);
        let s = self.cfg.source_scale();
        let doping = DopingProfile::from_config(&self.cfg);
        self.doping_load = smeared_line_load(&self.mesh, self.cfg.smoothing_width, |x| s * doping.scaled(x))?;
        Ok(())
    }

    /// Switches to new contact voltages, keeping the factorization and `R`.
    pub fn set_bias(&mut self, cfg: &DeviceConfig) -> Result<()> {
        let dofs = DofMap::new(self.mesh.dirichlet_values(cfg));
        if dofs.map() != self.dofs.map() {
            return Err(Error::InvalidConfig("new contact data constrains different nodes".into()));
        }
        let same_medium = cfg.eps_ox == self.cfg.eps_ox
            && cfg.eps_par == self.cfg.eps_par
            && cfg.eps_perp == self.cfg.eps_perp
            && cfg.smoothing_width == self.cfg.smoothing_width
            && cfg.source_scale() == self.cfg.source_scale();
        if !same_medium {
            return Err(Error::InvalidConfig("set_bias cannot change permittivities or source scaling".into()));
        }
        self.cfg = cfg.clone();
        self.dofs = dofs;
        self.refresh_data()
    }

    fn factorize(&mut self) -> Result<&Llt<usize, f64>> {
        if self.factor.is_none() {
            let solver_err = |e: &dyn core::fmt::Debug| Error::Solver(format!("transmission Cholesky failed: {e:?}"));
            let a = self.stiffness_free.to_faer()?;
            let symbolic = SymbolicLlt::try_new(a.symbolic(), Side::Lower).map_err(|e| solver_err(&e))?;
            let llt = Llt::try_new_with_symbolic(symbolic, a.as_ref(), Side::Lower).map_err(|e| solver_err(&e))?;
            self.factor = Some(llt);
        }
        Ok(self.factor.as_ref().unwrap())
    }

    /// Solves `K u = load` on the free nodes; returns the potential on all
    /// nodes.
    pub fn solve(&mut self, load: &[f64]) -> Result<Vec<f64>> {
        if load.len() != self.mesh.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "load has {} entries for {} nodes",
                load.len(),
                self.mesh.n_vertices()
            )));
        }
        let mut rhs = self.dofs.gather(load);
        for (r, l) in rhs.iter_mut().zip(&self.lifting_rhs) {
            *r += l;
        }
        let nf = rhs.len();
        let mut x = Mat::from_fn(nf, 1, |i, _| rhs[i]);
        self.factorize()?.solve_in_place(x.as_mut());
        let free: Vec<f64> = (0..nf).map(|i| x[(i, 0)]).collect();
        let u = self.dofs.scatter(&free);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("transmission solve produced non-finite values".into()));
        }
        Ok(u)
    }

    /// `b_dop - s L rho`.
    pub fn load_for(&self, rho: &[f64]) -> Result<Vec<f64>> {
        if rho.len() != self.grid.n_nodes() {
            return Err(Error::DimensionMismatch("density does not match the midline".into()));
        }
        let mut load = self.doping_load.clone();
        self.line_load.mul_vec_acc(rho, -self.cfg.source_scale(), &mut load);
        Ok(load)
    }

    /// Potential for a frozen midline density (scaled by `N+`).
    pub fn solve_linear(&mut self, rho: &[f64]) -> Result<Vec<f64>> {
        let load = self.load_for(rho)?;
        self.solve(&load)
    }

    /// Trace on `y = 0`.
    pub fn midline_trace(&self, u: &[f64]) -> Vec<f64> {
        self.mesh.midline_nodes().iter().map(|&n| u[n]).collect()
    }

    /// Midline trace for zero density, `t_0`.
    pub fn base_trace(&mut self) -> Result<Vec<f64>> {
        let load = self.doping_load.clone();
        let u = self.solve(&load)?;
        Ok(self.midline_trace(&u))
    }

    /// `R`: midline trace per unit nodal density, without the contact data.
    pub fn response(&mut self) -> Result<&Mat<f64>> {
        if self.response.is_none() {
            let n = self.grid.n_nodes();
            let nf = self.dofs.n_free();
            let map = self.dofs.map().to_vec();
            let rows: Vec<Option<usize>> = self.mesh.midline_nodes().iter().map(|&v| map[v]).collect();
            let columns = self.line_load.transpose();
            let s = self.cfg.source_scale();
            self.factorize()?;
            let llt = self.factor.as_ref().unwrap();
            let mut r = Mat::<f64>::zeros(n, n);
            for first in (0..n).step_by(RESPONSE_BLOCK) {
                let width = RESPONSE_BLOCK.min(n - first);
                let mut b = Mat::<f64>::zeros(nf, width);
                for c in 0..width {
                    let (idx, vals) = columns.row(first + c);
                    for (v, w) in idx.iter().zip(vals) {
                        if let Some(k) = map[*v] {
                            b[(k, c)] = -s * w;
                        }
                    }
                }
                llt.solve_in_place(b.as_mut());
                for (i, row) in rows.iter().enumerate() {
                    if let Some(k) = row {
                        for c in 0..width {
                            r[(i, first + c)] = b[(*k, c)];
                        }
                    }
                }
            }
            self.response = Some(r);
        }
        Ok(self.response.as_ref().unwrap())
    }

    /// `u_F^T K_FF u_F - u_F^T (b_F - K_FD g)`, relative to `u_F^T K_FF u_F`.
    pub fn energy_defect(&self, u: &[f64], load: &[f64]) -> f64 {
        let uf = self.dofs.gather(u);
        let ku = self.stiffness_free.mul_vec(&uf);
        let a: f64 = uf.iter().zip(&ku).map(|(x, y)| x * y).sum();
        let b = self.dofs.gather(load);
        let l: f64 = uf.iter().zip(b.iter().zip(&self.lifting_rhs)).map(|(x, (p, q))| x * (p + q)).sum();
        (a - l).abs() / a.abs().max(f64::MIN_POSITIVE)
    }
}

/// Self-consistent transmission solution.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSolution {
    pub u: Vec<f64>,
    /// Density on the midline nodes, scaled by `N+`.
    pub rho: Vec<f64>,
    /// Current per unit width (A/m).
    pub current: f64,
    pub iterations: usize,
    /// Sup norm of every accepted update of the midline trace.
    pub history: Vec<f64>,
}

/// Largest midline update of one Newton step, in units of `U_T`.
const NEWTON_STEP_LIMIT: f64 = 10.0;
const MAX_HALVINGS: usize = 40;
/// Difference step of the density Jacobian, in units of `U_T`.
const JACOBIAN_STEP: f64 = 1e-4;

fn midline_density(cfg: &DeviceConfig, grid: &InterfaceGrid, trace: &[f64]) -> Result<Vec<f64>> {
    let u_t = cfg.thermal_voltage();
    if is_equilibrium(cfg) {
        equilibrium_density(trace, 1.0, u_t)
    } else {
        solve_sg(grid, trace, u_t, (1.0, 1.0))
    }
}

/// `d rho / d t`, exact at equilibrium and by central differences otherwise.
fn density_jacobian(cfg: &DeviceConfig, grid: &InterfaceGrid, trace: &[f64], rho: &[f64]) -> Result<Mat<f64>> {
    let n = trace.len();
    let u_t = cfg.thermal_voltage();
    if is_equilibrium(cfg) {
        return Ok(Mat::from_fn(n, n, |i, j| if i == j { rho[i] / u_t } else { 0.0 }));
    }
    let h = JACOBIAN_STEP * u_t;
    let mut jac = Mat::<f64>::zeros(n, n);
    let mut probe = trace.to_vec();
    for k in 0..n {
        probe[k] = trace[k] + h;
        let up = midline_density(cfg, grid, &probe)?;
        probe[k] = trace[k] - h;
        let down = midline_density(cfg, grid, &probe)?;
        probe[k] = trace[k];
        for i in 0..n {
            jac[(i, k)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Self-consistent solve on the resolved model.
///
/// With the density law `rho(t)` of the midline trace (Boltzmann at
/// equilibrium, Scharfetter-Gummel otherwise) the problem reduces to
/// `t = t_0 + R rho(t)` on the midline nodes, solved by damped Newton with
/// backtracking on the residual norm.
pub fn solve_transmission(
    system: &mut TransmissionSystem,
    warm: Option<&TransmissionSolution>,
) -> Result<TransmissionSolution> {
    let cfg = system.cfg.clone();
    let n = system.grid.n_nodes();
    let u_t = cfg.thermal_voltage();
    let base = system.base_trace()?;
    let grid = system.grid.clone();
    let warm_trace = match warm {
        Some(w) if w.u.len() == system.mesh.n_vertices() => Some(system.midline_trace(&w.u)),
        _ => None,
    };
    let r = system.response()?;
    let residual = |t: &[f64], rho: &[f64]| -> Vec<f64> {
        (0..n).map(|i| t[i] - base[i] - (0..n).map(|j| r[(i, j)] * rho[j]).sum::<f64>()).collect()
    };
    let norm = |f: &[f64]| libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());
    let mut t = match warm_trace {
        Some(t) => t,
        None => (0..n).map(|i| base[i] + (0..n).map(|j| r[(i, j)]).sum::<f64>()).collect(),
    };
    let mut rho = midline_density(&cfg, &grid, &t)?;
    let mut f = residual(&t, &rho);
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.gummel_max_iter {
        let d = density_jacobian(&cfg, &grid, &t, &rho)?;
        let rd = r * &d;
        let jac = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - rd[(i, j)]);
        let mut step = Mat::from_fn(n, 1, |i, _| -f[i]);
        jac.as_ref().partial_piv_lu().solve_in_place(step.as_mut());
        let step: Vec<f64> = (0..n).map(|i| step[(i, 0)]).collect();
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("singular Newton matrix in the transmission solve".into()));
        }
        let size = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut theta = if size > NEWTON_STEP_LIMIT * u_t { NEWTON_STEP_LIMIT * u_t / size } else { 1.0 };
        let f_norm = norm(&f);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = t.iter().zip(&step).map(|(a, b)| a + theta * b).collect();
            if let Ok(trial_rho) = midline_density(&cfg, &grid, &trial) {
                let trial_f = residual(&trial, &trial_rho);
                if norm(&trial_f) <= (1.0 - 1e-4 * theta) * f_norm || theta * size < cfg.gummel_tol {
                    accepted = Some((trial, trial_rho, trial_f));
                    break;
                }
            }
            theta *= 0.5;
        }
        let Some((trial, trial_rho, trial_f)) = accepted else {
            break;
        };
        t = trial;
        rho = trial_rho;
        f = trial_f;
        history.push(theta * size);
        if theta * size < cfg.gummel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let last = history.last().copied().unwrap_or(f64::INFINITY);
        return Err(Error::NotConverged { iterations: history.len(), last_update: last, history });
    }
    let current = if is_equilibrium(&cfg) { 0.0 } else { solve_dd(&grid, &t, &cfg)?.current };
    let u = system.solve_linear(&rho)?;
    Ok(TransmissionSolution { u, rho, current, iterations: history.len(), history })
}

/// One bias point of a transmission sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionPoint {
    pub v_ds: f64,
    pub solution: TransmissionSolution,
}

/// Bias sweep `0, dV, ..., v_max` on one strip mesh, each point warm-started
/// from the previous one.
pub fn transmission_sweep(cfg: &DeviceConfig, mesh: &StripMesh, v_max: f64) -> Result<Vec<TransmissionPoint>> {
    let steps = libm::round(v_max / cfg.dv_step);
    if !(steps >= 0.0) || (steps * cfg.dv_step - v_max).abs() > 1e-9 * cfg.dv_step.max(v_max.abs()) {
        return Err(Error::InvalidConfig(format!("V_max = {v_max} is not a multiple of dV = {}", cfg.dv_step)));
    }
    let steps = steps as usize;
    let mut system = TransmissionSystem::new(&cfg.with_bias(0.0), mesh.clone())?;
    let mut out: Vec<TransmissionPoint> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let v = if k == steps { v_max } else { k as f64 * cfg.dv_step };
        system.set_bias(&cfg.with_bias(v))?;
        let warm = out.last().map(|p| &p.solution);
        let solution = solve_transmission(&mut system, warm)
            .map_err(|e| Error::Sweep { bias: v, source: alloc::boxed::Box::new(e) })?;
        out.push(TransmissionPoint { v_ds: v, solution });
    }
    Ok(out)
}

/// Values along the vertical line at `x`, one per mesh `y` level.
pub fn vertical_slice(mesh: &StripMesh, u: &[f64], x: f64) -> Vec<(f64, f64)> {
    let n = mesh.xs.len() - 1;
    let i = mesh.xs.partition_point(|v| *v <= x).saturating_sub(1).min(n - 1);
    let (a, b) = (mesh.xs[i], mesh.xs[i + 1]);
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    (0..mesh.ys.len())
        .map(|j| {
            let v0 = u[mesh.vertex_index(i, j)];
            let v1 = u[mesh.vertex_index(i + 1, j)];
            (mesh.ys[j], v0 * (1.0 - t) + v1 * t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_load_2d;

    fn small_cfg() -> DeviceConfig {
        DeviceConfig::default()
    }

    #[test]
    fn delta_peak_symmetry_and_mass() {
        let a = 0.008;
        assert!((smoothed_delta(0.0, a) - 70.5236).abs() < 1e-3);
        assert_eq!(smoothed_delta(0.013, a), smoothed_delta(-0.013, a));
        let cfg = small_cfg();
        let mesh = StripMesh::new(&cfg, 60, 16).unwrap();
        let m = discrete_delta_mass(&mesh, a);
        assert!(m > 0.999 && m < 1.001, "{m}");
    }

    #[test]
    fn line_operator_matches_direct_quadrature() {
        let cfg = small_cfg();
        let mesh = StripMesh::new(&cfg, 30, 8).unwrap();
        let sys = TransmissionSystem::new(&cfg, mesh).unwrap();
        let rho: Vec<f64> = sys.grid.nodes().iter().map(|x| 0.3 + libm::sin(x / 9.0).powi(2)).collect();
        let direct = smeared_line_load(&sys.mesh, cfg.smoothing_width, source_density(&cfg, &sys.grid, &rho)).unwrap();
        let fast = sys.load_for(&rho).unwrap();
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = direct.iter().zip(&fast).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12 * scale, "{diff}");
    }

    #[test]
    fn levels_contain_mandatory_lines_and_grade() {
        let cfg = small_cfg();
        let ys = graded_levels(cfg.smoothing_width, cfg.thickness, cfg.height, 16).unwrap();
        for v in [0.0, 0.1, -0.1, 2.0, -2.0] {
            assert!(ys.iter().any(|y| *y == v), "{v}");
        }
        let h: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(h.iter().all(|s| *s > 0.0 && *s <= 0.125 + 1e-12));
        for w in h.windows(2) {
            let r = w[1] / w[0];
            assert!(r <= 1.3 + 1e-9 && r >= 1.0 / 1.3 - 1e-9, "{r}");
        }
        let inside = ys.windows(2).filter(|w| w[0].abs() <= 0.024 && w[1].abs() <= 0.024);
        assert!(inside.map(|w| w[1] - w[0]).fold(0.0, f64::max) <= 0.004 + 1e-15);
        assert!(ys.iter().any(|y| (y - 0.024).abs() < 1e-15));
        // symmetric
        for (p, q) in ys.iter().zip(ys.iter().rev()) {
            assert_eq!(*p, -*q);
        }
        assert!(graded_levels(0.0, 0.2, 4.0, 16).is_err());
    }

    #[test]
    fn permittivity_by_centroid() {
        let mut cfg = small_cfg();
        cfg.eps_perp = 0.1;
        let mesh = StripMesh::new(&cfg, 6, 4).unwrap();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let yc = tri.iter().map(|&v| mesh.vertices[v][1]).sum::<f64>() / 3.0;
            let want = if yc.abs() < 0.1 { [13.9, 0.1] } else { [3.9, 3.9] };
            assert_eq!(mesh.permittivity[t], want);
        }
        assert!(StripMesh::from_lines(&cfg, vec![0.0, 60.0], vec![-2.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn constant_contacts_give_constant_field() {
        let mut cfg = small_cfg();
        cfg.v_source = 0.3;
        cfg.v_drain = 0.3;
        cfg.v_gate = 0.3;
        let mesh = StripMesh::new(&cfg, 30, 4).unwrap();
        let mut sys = TransmissionSystem::new(&cfg, mesh).unwrap();
        let u = sys.solve(&vec![0.0; sys.mesh.n_vertices()]).unwrap();
        assert!(u.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn isotropic_case_matches_plain_poisson() {
        let mut cfg = small_cfg();
        cfg.eps_par = cfg.eps_ox;
        cfg.eps_perp = cfg.eps_ox;
        cfg.v_drain = 0.05;
        let mesh = StripMesh::new(&cfg, 30, 4).unwrap();
        let f = |x: f64, y: f64| libm::sin(x / 7.0) * libm::cos(y);
        let load = assemble_load_2d(&mesh.vertices, &mesh.triangles, 4, f).unwrap();
        let mut sys = TransmissionSystem::new(&cfg, mesh.clone()).unwrap();
        let u = sys.solve(&load).unwrap();
        // plain scalar-permittivity assembly, dense solve
        let k = assemble_anisotropic_stiffness(&mesh.vertices, &mesh.triangles, |_| [3.9, 3.9]).unwrap();
        let dofs = DofMap::new(mesh.dirichlet_values(&cfg));
        let map = dofs.map().to_vec();
        let nf = dofs.n_free();
        let kff = k.submatrix(&map, nf, &map, nf);
        let mut rhs = load.clone();
        k.mul_vec_acc(&dofs.lifting(), -1.0, &mut rhs);
        let rhs = dofs.gather(&rhs);
        let dense = kff.to_dense();
        let a = Mat::from_fn(nf, nf, |i, j| dense[i][j]);
        let mut x = Mat::from_fn(nf, 1, |i, _| rhs[i]);
        a.as_ref().partial_piv_lu().solve_in_place(x.as_mut());
        let plain = dofs.scatter(&(0..nf).map(|i| x[(i, 0)]).collect::<Vec<_>>());
        let scale = plain.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = u.iter().zip(&plain).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10 * scale, "{diff}");
    }

    #[test]
    fn energy_identity_and_mirror_symmetry() {
        let cfg = small_cfg();
        let mesh = StripMesh::new(&cfg, 60, 8).unwrap();
        let mut sys = TransmissionSystem::new(&cfg, mesh).unwrap();
        let rho = vec![0.5; sys.grid.n_nodes()];
        let f = source_density(&cfg, &sys.grid, &rho);
        let load = smeared_line_load(&sys.mesh, cfg.smoothing_width, f).unwrap();
        let u = sys.solve(&load).unwrap();
        assert!(sys.energy_defect(&u, &load) < 1e-10);
        let ny = sys.mesh.ys.len() - 1;
        let mut worst = 0.0f64;
        for j in 0..=ny {
            for i in 0..=sys.mesh.nx() {
                let a = u[sys.mesh.vertex_index(i, j)];
                let b = u[sys.mesh.vertex_index(i, ny - j)];
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn slices_of_simple_fields() {
        let cfg = small_cfg();
        let mesh = StripMesh::new(&cfg, 12, 4).unwrap();
        let u: Vec<f64> = mesh.vertices.iter().map(|p| p[1]).collect();
        for (y, v) in vertical_slice(&mesh, &u, 31.3) {
            assert!((y - v).abs() < 1e-15);
        }
        let c = vec![2.5; mesh.n_vertices()];
        assert!(vertical_slice(&mesh, &c, 30.0).iter().all(|(_, v)| *v == 2.5));
    }

    #[test]
    fn equilibrium_self_consistent_run_converges() {
        let cfg = small_cfg();
        let mesh = StripMesh::new(&cfg, 120, 8).unwrap();
        let mut sys = TransmissionSystem::new(&cfg, mesh).unwrap();
        let sol = solve_transmission(&mut sys, None).unwrap();
        assert!(sol.iterations < 60);
        assert!(sol.rho.iter().all(|r| *r > 0.0));
        // fixed point of density law and linear solve
        let relinear = sys.solve_linear(&sol.rho).unwrap();
        let again = sys.midline_trace(&relinear);
        let rho = equilibrium_density(&again, 1.0, cfg.thermal_voltage()).unwrap();
        let gap = rho.iter().zip(&sol.rho).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        assert!(gap < 1e-6, "{gap}");
        let mid = sys.midline_trace(&sol.u)[60];
        assert!(mid < -0.01 && mid > -0.03, "{mid}");
    }
}
