//! Error norms between solutions on nested grids, convergence rates and I-V
//! extraction.
//!
//! The relative `H1` errors are taken in the coordinates scaled by the channel
//! length `L`, the same scaling as the mesh parameter `h`: with `x^ = x / L`
//! the full norm is `|u|^2 = L^-d (|u|_0^2 + L^2 |grad u|_0^2)` and the
//! prefactor cancels in the ratio.

use alloc::format;
use alloc::vec::Vec;

use core::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::assembly::{assemble_load_2d, assemble_stiffness_2d, DofMap};
use crate::config::DeviceConfig;
use crate::error::{Error, Result};
use crate::mesh::{build_subdomain_mesh, InterfaceGrid, Mesh2D, Subdomain};
use crate::quadrature::triangle_rule;

/// Squared `L2` and `H1`-seminorm of the difference of two piecewise-linear
/// functions given on a fine grid and a coarse grid nested in it.
///
/// On every fine interval both functions are linear, so the integrals are
/// evaluated in closed form.
pub fn interface_difference_sq(
    coarse: &InterfaceGrid,
    u_coarse: &[f64],
    fine: &InterfaceGrid,
    u_fine: &[f64],
) -> Result<(f64, f64)> {
    if u_coarse.len() != coarse.n_nodes() || u_fine.len() != fine.n_nodes() {
        return Err(Error::DimensionMismatch("nodal values do not match their grids".into()));
    }
    if !coarse.is_nested_in(fine) {
        return Err(Error::NotNested("coarse channel grid is not contained in the fine one".into()));
    }
    let (mut l2, mut h1) = (0.0, 0.0);
    for k in 0..fine.n_intervals() {
        let (a, b) = fine.interval(k);
        let h = b - a;
        let mid = 0.5 * (a + b);
        // the coarse interval containing the fine one
        let kc = coarse.locate(mid);
        let (ca, cb) = coarse.interval(kc);
        let lin = |x: f64| u_coarse[kc] + (u_coarse[kc + 1] - u_coarse[kc]) * (x - ca) / (cb - ca);
        let e0 = u_fine[k] - lin(a);
        let e1 = u_fine[k + 1] - lin(b);
        l2 += h * (e0 * e0 + e0 * e1 + e1 * e1) / 3.0;
        let de = (e1 - e0) / h;
        h1 += de * de * h;
    }
    Ok((l2, h1))
}

/// Squared `L2` norm and `H1` seminorm of a piecewise-linear function.
pub fn interface_norm_sq(grid: &InterfaceGrid, u: &[f64]) -> (f64, f64) {
    let (mut l2, mut h1) = (0.0, 0.0);
    for k in 0..grid.n_intervals() {
        let (a, b) = grid.interval(k);
        let h = b - a;
        let (e0, e1) = (u[k], u[k + 1]);
        l2 += h * (e0 * e0 + e0 * e1 + e1 * e1) / 3.0;
        h1 += (e1 - e0) * (e1 - e0) / h;
    }
    (l2, h1)
}

/// Relative full-`H1` error `|u_ref - u|_1 / |u_ref|_1` on the channel.
pub fn h1_error_interface(
    coarse: &InterfaceGrid,
    u_coarse: &[f64],
    fine: &InterfaceGrid,
    u_ref: &[f64],
) -> Result<f64> {
    let (el2, eh1) = interface_difference_sq(coarse, u_coarse, fine, u_ref)?;
    let (nl2, nh1) = interface_norm_sq(fine, u_ref);
    let l2 = fine.length() * fine.length();
    relative(el2 + l2 * eh1, nl2 + l2 * nh1)
}

fn relative(err_sq: f64, norm_sq: f64) -> Result<f64> {
    if !(norm_sq > 0.0) {
        return Err(Error::InvalidConfig("reference has zero norm".into()));
    }
    Ok(libm::sqrt(err_sq / norm_sq))
}

type Polygon = Vec<[f64; 2]>;

/// Clips a convex polygon against the half-plane on the left of the directed
/// edge `a -> b` (counter-clockwise triangles keep their interior).
fn clip_half_plane(poly: &Polygon, a: [f64; 2], b: [f64; 2]) -> Polygon {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        let (sp, sq) = (side(p), side(q));
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Exact integral of the square of an affine function over a convex polygon,
/// by fanning into triangles and using the edge-midpoint rule.
fn integrate_affine_sq(poly: &Polygon, c: [f64; 3]) -> f64 {
    let f = |p: [f64; 2]| c[0] + c[1] * p[0] + c[2] * p[1];
    let mid = |p: [f64; 2], q: [f64; 2]| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    let mut acc = 0.0;
    for k in 1..poly.len().saturating_sub(1) {
        let (a, b, d) = (poly[0], poly[k], poly[k + 1]);
        let area = triangle_area(a, b, d).abs();
        let (m1, m2, m3) = (f(mid(a, b)), f(mid(b, d)), f(mid(d, a)));
        acc += area * (m1 * m1 + m2 * m2 + m3 * m3) / 3.0;
    }
    acc
}

fn polygon_area(poly: &Polygon) -> f64 {
    (1..poly.len().saturating_sub(1)).map(|k| triangle_area(poly[0], poly[k], poly[k + 1]).abs()).sum()
}

fn ccw(mesh: &Mesh2D, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.triangles[t];
    let p = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
    if triangle_area(p[0], p[1], p[2]) < 0.0 {
        [p[0], p[2], p[1]]
    } else {
        p
    }
}

/// Squared `L2` and `H1`-seminorm of `u_fine - u_coarse` on one oxide slab,
/// for structured meshes whose cell counts are integer multiples.
///
/// Each fine triangle is intersected with the coarse triangles of the coarse
/// cell containing it; on every piece both fields are affine and the
/// integrals are exact.
pub fn oxide_difference_sq(coarse: &Mesh2D, u_coarse: &[f64], fine: &Mesh2D, u_fine: &[f64]) -> Result<(f64, f64)> {
    if coarse.subdomain != fine.subdomain {
        return Err(Error::NotNested("meshes belong to different subdomains".into()));
    }
    if fine.nx() % coarse.nx() != 0 || fine.ny() % coarse.ny() != 0 {
        return Err(Error::NotNested(format!(
            "fine cells {}x{} are not a refinement of {}x{}",
            fine.nx(),
            fine.ny(),
            coarse.nx(),
            coarse.ny()
        )));
    }
    if u_coarse.len() != coarse.n_vertices() || u_fine.len() != fine.n_vertices() {
        return Err(Error::DimensionMismatch("nodal values do not match their meshes".into()));
    }
    let kx = fine.nx() / coarse.nx();
    let ky = fine.ny() / coarse.ny();
    let (mut l2, mut h1) = (0.0, 0.0);
    for j in 0..fine.ny() {
        for i in 0..fine.nx() {
            let coarse_tris = coarse.cell_triangles(i / kx, j / ky);
            for tf in fine.cell_triangles(i, j) {
                let (cf, _) = fine.linear_coefficients(tf, u_fine);
                let pf = ccw(fine, tf);
                for &tc in &coarse_tris {
                    let (cc, _) = coarse.linear_coefficients(tc, u_coarse);
                    let pc = ccw(coarse, tc);
                    let mut poly: Polygon = pf.to_vec();
                    for e in 0..3 {
                        poly = clip_half_plane(&poly, pc[e], pc[(e + 1) % 3]);
                        if poly.len() < 3 {
                            break;
                        }
                    }
                    if poly.len() < 3 {
                        continue;
                    }
                    let area = polygon_area(&poly);
                    if area <= 0.0 {
                        continue;
                    }
                    let d = [cf[0] - cc[0], cf[1] - cc[1], cf[2] - cc[2]];
                    l2 += integrate_affine_sq(&poly, d);
                    h1 += area * (d[1] * d[1] + d[2] * d[2]);
                }
            }
        }
    }
    Ok((l2, h1))
}

/// Squared `L2` norm and `H1` seminorm of a P1 field on one slab.
pub fn oxide_norm_sq(mesh: &Mesh2D, u: &[f64]) -> (f64, f64) {
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in 0..mesh.triangles.len() {
        let (c, _) = mesh.linear_coefficients(t, u);
        let poly = ccw(mesh, t).to_vec();
        l2 += integrate_affine_sq(&poly, c);
        h1 += polygon_area(&poly) * (c[1] * c[1] + c[2] * c[2]);
    }
    (l2, h1)
}

/// Relative combined `H1` error over both oxide slabs.
pub fn h1_error_2d(
    coarse: [&Mesh2D; 2],
    u_coarse: [&[f64]; 2],
    fine: [&Mesh2D; 2],
    u_ref: [&[f64]; 2],
) -> Result<f64> {
    let (mut err, mut norm) = (0.0, 0.0);
    for i in 0..2 {
        let (l2, h1) = oxide_difference_sq(coarse[i], u_coarse[i], fine[i], u_ref[i])?;
        let (n2, nh) = oxide_norm_sq(fine[i], u_ref[i]);
        let len = fine[i].length();
        err += l2 + len * len * h1;
        norm += n2 + len * len * nh;
    }
    relative(err, norm)
}

/// Relative sup-norm error over the fine nodes of both slabs and the point
/// where it is attained.
pub fn linf_error_2d(
    coarse: [&Mesh2D; 2],
    u_coarse: [&[f64]; 2],
    fine: [&Mesh2D; 2],
    u_ref: [&[f64]; 2],
) -> Result<(f64, [f64; 2])> {
    let mut worst = (0.0f64, [0.0, 0.0]);
    let mut scale = 0.0f64;
    for i in 0..2 {
        if u_coarse[i].len() != coarse[i].n_vertices() || u_ref[i].len() != fine[i].n_vertices() {
            return Err(Error::DimensionMismatch("nodal values do not match their meshes".into()));
        }
        for (v, p) in fine[i].vertices.iter().enumerate() {
            let e = (u_ref[i][v] - coarse[i].evaluate(u_coarse[i], *p)).abs();
            if e > worst.0 {
                worst = (e, *p);
            }
            scale = scale.max(u_ref[i][v].abs());
        }
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig("reference has zero sup norm".into()));
    }
    Ok((worst.0 / scale, worst.1))
}

/// Errors of one run against the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    /// Scaled mesh diameter.
    pub h: f64,
    pub e_1d: f64,
    pub e_2d: f64,
    pub e_linf: f64,
    pub e_rho: f64,
    pub argmax_location: [f64; 2],
}

/// Least-squares slope of `log(err)` against `log(h)`. Points with zero
/// error are skipped; at least three must remain.
pub fn convergence_slope(h: &[f64], err: &[f64]) -> Result<f64> {
    if h.len() != err.len() {
        return Err(Error::DimensionMismatch("h and error lists differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(err)
        .filter(|(hh, e)| **e > 0.0 && **hh > 0.0)
        .map(|(hh, e)| (libm::log(*hh), libm::log(*e)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!("{} usable points, need 3", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("all h values coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Slope over a list of records for the selected error.
pub fn record_slope(records: &[ErrorRecord], pick: impl Fn(&ErrorRecord) -> f64) -> Result<f64> {
    let h: Vec<f64> = records.iter().map(|r| r.h).collect();
    let e: Vec<f64> = records.iter().map(pick).collect();
    convergence_slope(&h, &e)
}

/// One row of an I-V characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvPoint {
    pub v_ds: f64,
    /// Terminal current per unit width (A/m), positive from drain to source.
    pub current: f64,
    /// Largest relative deviation of the interval fluxes from their mean.
    pub flux_spread: f64,
}

/// Sorts sweep output by bias.
pub fn extract_iv(points: &[IvPoint]) -> Vec<IvPoint> {
    let mut out = points.to_vec();
    out.sort_by(|a, b| a.v_ds.partial_cmp(&b.v_ds).unwrap_or(core::cmp::Ordering::Equal));
    out
}

/// Errors of one discrete solution of the manufactured problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedRecord {
    /// `1 / Nx`.
    pub h: f64,
    pub l2: f64,
    /// Full `H1` norm of the error.
    pub h1: f64,
}

/// P1 Poisson problem `-lap u = f` on the upper slab `[0, L] x [0, l/2]` with
/// the exact solution `u = sin(pi x / L) sin(2 pi y / l)`, which vanishes on
/// the whole boundary. Runs `Nx = nx0 2^k`, `Ny = ny0 2^k` for `k = 0..=levels`.
pub fn manufactured_poisson(cfg: &DeviceConfig, nx0: usize, ny0: usize, levels: usize) -> Result<Vec<ManufacturedRecord>> {
    let (len, height) = (cfg.length, cfg.height);
    let (kx, ky) = (PI / len, 2.0 * PI / height);
    let exact = move |x: f64, y: f64| libm::sin(kx * x) * libm::sin(ky * y);
    let grad = move |x: f64, y: f64| {
        [kx * libm::cos(kx * x) * libm::sin(ky * y), ky * libm::sin(kx * x) * libm::cos(ky * y)]
    };
    let source = move |x: f64, y: f64| (kx * kx + ky * ky) * exact(x, y);
    let rule = triangle_rule(6);
    let mut out = Vec::with_capacity(levels + 1);
    for k in 0..=levels {
        let (nx, ny) = (nx0 << k, ny0 << k);
        let mesh = build_subdomain_mesh(&cfg.with_grid(nx, ny, nx), Subdomain::Upper)?;
        let stiffness = assemble_stiffness_2d(&mesh, 1.0)?;
        let load = assemble_load_2d(&mesh.vertices, &mesh.triangles, 6, source)?;
        let values = (0..mesh.n_vertices())
            .map(|v| {
                let (i, j) = (v % (nx + 1), v / (nx + 1));
                (i == 0 || i == nx || j == 0 || j == ny).then_some(0.0)
            })
            .collect();
        let dofs = DofMap::new(values);
        let nf = dofs.n_free();
        let a = stiffness.submatrix(dofs.map(), nf, dofs.map(), nf).to_faer()?;
        let solver_err = |e: &dyn core::fmt::Debug| Error::Solver(format!("Cholesky failed: {e:?}"));
        let llt = a.as_ref().sp_cholesky(Side::Lower).map_err(|e| solver_err(&e))?;
        let rhs = dofs.gather(&load);
        let mut x = Mat::from_fn(nf, 1, |i, _| rhs[i]);
        llt.solve_in_place(x.as_mut());
        let u = dofs.scatter(&(0..nf).map(|i| x[(i, 0)]).collect::<Vec<_>>());
        let (mut l2, mut semi) = (0.0, 0.0);
        for t in 0..mesh.triangles.len() {
            let (c, area) = mesh.linear_coefficients(t, &u);
            let [p0, p1, p2] = mesh.triangles[t].map(|v| mesh.vertices[v]);
            for &(s, r, w) in &rule {
                let x = p0[0] + s * (p1[0] - p0[0]) + r * (p2[0] - p0[0]);
                let y = p0[1] + s * (p1[1] - p0[1]) + r * (p2[1] - p0[1]);
                let e = exact(x, y) - (c[0] + c[1] * x + c[2] * y);
                let g = grad(x, y);
                let wa = 2.0 * area.abs() * w;
                l2 += wa * e * e;
                semi += wa * ((g[0] - c[1]) * (g[0] - c[1]) + (g[1] - c[2]) * (g[1] - c[2]));
            }
        }
        out.push(ManufacturedRecord { h: 1.0 / nx as f64, l2: libm::sqrt(l2), h1: libm::sqrt(l2 + semi) });
    }
    Ok(out)
}
