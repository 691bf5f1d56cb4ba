//! Structured P1 triangulations of the two oxide slabs and 1D partitions of
//! the channel line.

use alloc::format;
use alloc::vec::Vec;

use crate::config::DeviceConfig;
use crate::error::{Error, Result};

/// Oxide subdomain: `Upper` is `(0,L) x (0,l/2)`, `Lower` is `(0,L) x (-l/2,0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subdomain {
    Upper,
    Lower,
}

impl Subdomain {
    pub const BOTH: [Subdomain; 2] = [Subdomain::Upper, Subdomain::Lower];

    /// Sign of `y` inside the subdomain.
    pub fn sign(self) -> f64 {
        match self {
            Subdomain::Upper => 1.0,
            Subdomain::Lower => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Subdomain::Upper => 0,
            Subdomain::Lower => 1,
        }
    }
}

/// Boundary segment classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    DirichletSource,
    DirichletDrain,
    DirichletGate,
    Neumann,
    Interface,
}

/// Ordered 1D partition of `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceGrid {
    nodes: Vec<f64>,
}

impl InterfaceGrid {
    /// Wraps a node list after checking it is strictly increasing with at
    /// least one interval.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidConfig("a partition needs at least one interval".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("partition nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// `n` equal intervals on `[0, length]`; the last node is exactly `length`.
    pub fn uniform(length: f64, n: usize) -> Result<Self> {
        if n == 0 || !(length > 0.0) {
            return Err(Error::InvalidConfig(format!("uniform grid needs n >= 1 and L > 0, got n={n}")));
        }
        let mut nodes: Vec<f64> = (0..=n).map(|k| length * k as f64 / n as f64).collect();
        nodes[n] = length;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Distance between the first and last node.
    pub fn length(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }

    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.nodes[k], self.nodes[k + 1])
    }

    /// Index of the interval containing `x` (the last one for `x = L`).
    pub fn locate(&self, x: f64) -> usize {
        let n = self.n_intervals();
        match self.nodes.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(n - 1),
            Err(0) => 0,
            Err(k) => (k - 1).min(n - 1),
        }
    }

    /// Piecewise-linear interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let k = self.locate(x);
        let (a, b) = self.interval(k);
        let t = (x - a) / (b - a);
        values[k] * (1.0 - t) + values[k + 1] * t
    }

    /// True when every node of `self` is (to rounding) a node of `finer`.
    pub fn is_nested_in(&self, finer: &InterfaceGrid) -> bool {
        let tol = 1e-9 * (self.nodes[self.nodes.len() - 1] - self.nodes[0]).abs().max(1.0);
        self.nodes.iter().all(|&x| {
            let k = finer.locate(x);
            (finer.nodes[k] - x).abs() <= tol || (finer.nodes[k + 1] - x).abs() <= tol
        })
    }
}

/// Structured triangulation of one oxide rectangle.
///
/// Vertex `(i, j)` has index `j * (nx + 1) + i` and sits at
/// `(i * L/nx, sign * j * (l/2)/ny)`, so row `j = 0` is the interface `y = 0`
/// in both subdomains. The lower mesh is the mirror image of the upper one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    pub subdomain: Subdomain,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<([usize; 2], BoundaryTag)>,
    pub interface_nodes: Vec<usize>,
    nx: usize,
    ny: usize,
    length: f64,
    half_height: f64,
}

impl Mesh2D {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Extent of the slab along the channel.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Signed area of triangle `t` (positive for counter-clockwise order).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// The two triangles of cell `(i, j)` are `2 * (j * nx + i)` and the next one.
    pub fn cell_triangles(&self, i: usize, j: usize) -> [usize; 2] {
        let c = 2 * (j * self.nx + i);
        [c, c + 1]
    }

    /// Triangle containing point `p` (clamped to the rectangle).
    pub fn locate(&self, p: [f64; 2]) -> usize {
        let hx = self.length / self.nx as f64;
        let hy = self.half_height / self.ny as f64;
        let s = self.subdomain.sign();
        let xi = (p[0] / hx).clamp(0.0, self.nx as f64);
        let eta = (s * p[1] / hy).clamp(0.0, self.ny as f64);
        let i = (libm::floor(xi) as usize).min(self.nx - 1);
        let j = (libm::floor(eta) as usize).min(self.ny - 1);
        let (fx, fy) = (xi - i as f64, eta - j as f64);
        // diagonal from local (0,0) to (1,1); first triangle lies below it
        let [t0, t1] = self.cell_triangles(i, j);
        if fy <= fx {
            t0
        } else {
            t1
        }
    }

    /// Evaluates the P1 field with nodal `values` at `p`.
    pub fn evaluate(&self, values: &[f64], p: [f64; 2]) -> f64 {
        let t = self.locate(p);
        let (coef, _) = self.linear_coefficients(t, values);
        coef[0] + coef[1] * p[0] + coef[2] * p[1]
    }

    /// Coefficients `(c0, cx, cy)` of the affine function interpolating
    /// `values` on triangle `t`, plus its signed area.
    pub fn linear_coefficients(&self, t: usize, values: &[f64]) -> ([f64; 3], f64) {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let (va, vb, vc) = (values[a], values[b], values[c]);
        let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        let gx = ((vb - va) * (pc[1] - pa[1]) - (vc - va) * (pb[1] - pa[1])) / det;
        let gy = ((vc - va) * (pb[0] - pa[0]) - (vb - va) * (pc[0] - pa[0])) / det;
        ([va - gx * pa[0] - gy * pa[1], gx, gy], 0.5 * det)
    }
}

fn tag_outer_edge(cfg: &DeviceConfig, midpoint_x: f64) -> BoundaryTag {
    if midpoint_x > cfg.gate_inset && midpoint_x < cfg.length - cfg.gate_inset {
        BoundaryTag::DirichletGate
    } else {
        BoundaryTag::Neumann
    }
}

/// Builds the `Nx x Ny` structured triangulation of one oxide slab.
///
/// Each cell is cut by its diagonal through the interface-side corner nearest
/// to the source (bottom-left to top-right in the upper slab, mirrored in the
/// lower one).
pub fn build_subdomain_mesh(cfg: &DeviceConfig, subdomain: Subdomain) -> Result<Mesh2D> {
    let (nx, ny) = (cfg.nx, cfg.ny);
    if nx < 1 || ny < 1 {
        return Err(Error::InvalidConfig(format!("grid counts Nx = {nx}, Ny = {ny} must be >= 1")));
    }
    if !(cfg.length > 0.0 && cfg.height > 0.0) {
        return Err(Error::InvalidConfig("device dimensions must be positive".into()));
    }
    let s = subdomain.sign();
    let half = 0.5 * cfg.height;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny { s * half } else { s * half * j as f64 / ny as f64 };
        for i in 0..=nx {
            let x = if i == nx { cfg.length } else { cfg.length * i as f64 / nx as f64 };
            vertices.push([x, y]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (p00, p10, p01, p11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            match subdomain {
                Subdomain::Upper => {
                    triangles.push([p00, p10, p11]);
                    triangles.push([p00, p11, p01]);
                }
                Subdomain::Lower => {
                    triangles.push([p00, p11, p10]);
                    triangles.push([p00, p01, p11]);
                }
            }
        }
    }
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(([idx(i, 0), idx(i + 1, 0)], BoundaryTag::Interface));
    }
    for i in 0..nx {
        let mid = 0.5 * (vertices[idx(i, ny)][0] + vertices[idx(i + 1, ny)][0]);
        boundary_edges.push(([idx(i, ny), idx(i + 1, ny)], tag_outer_edge(cfg, mid)));
    }
    for j in 0..ny {
        boundary_edges.push(([idx(0, j), idx(0, j + 1)], BoundaryTag::DirichletSource));
        boundary_edges.push(([idx(nx, j), idx(nx, j + 1)], BoundaryTag::DirichletDrain));
    }
    let interface_nodes = (0..=nx).collect();
    Ok(Mesh2D {
        subdomain,
        vertices,
        triangles,
        boundary_edges,
        interface_nodes,
        nx,
        ny,
        length: cfg.length,
        half_height: half,
    })
}

/// Uniform partition of the channel line into `N_gamma` intervals.
pub fn build_interface_grid(cfg: &DeviceConfig) -> Result<InterfaceGrid> {
    if cfg.n_gamma < 2 {
        return Err(Error::InvalidConfig(format!(
            "N_gamma = {} leaves no interior interface unknown",
            cfg.n_gamma
        )));
    }
    InterfaceGrid::uniform(cfg.length, cfg.n_gamma)
}

/// Partition of `y = 0` induced by the triangulation.
pub fn trace_partition(mesh: &Mesh2D) -> InterfaceGrid {
    let nodes = mesh.interface_nodes.iter().map(|&v| mesh.vertices[v][0]).collect();
    InterfaceGrid::new(nodes).expect("structured mesh trace is strictly increasing")
}

/// Scaled triangle diameter `sqrt(1/Nx^2 + (l/L)^2 / Ny^2)`.
pub fn scaled_mesh_diameter(cfg: &DeviceConfig) -> f64 {
    let ax = 1.0 / cfg.nx as f64;
    let ay = cfg.height / cfg.length / cfg.ny as f64;
    libm::sqrt(ax * ax + ay * ay)
}
