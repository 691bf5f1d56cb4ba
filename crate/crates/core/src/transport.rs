//! Drift-diffusion transport on the channel: Bernoulli function,
//! Scharfetter-Gummel discretization, Boltzmann equilibrium and the Gummel
//! loop coupling transport to the electrostatics.
//!
//! Densities are scaled by `N+`. The scaled interval flux of the
//! Scharfetter-Gummel scheme is
//! `F_j = (B(delta_j) rho_{j+1} - B(-delta_j) rho_j) / h_j` with
//! `delta_j = (u_{j+1} - u_j) / U_T` and `h_j` in nm; the physical current per
//! unit width is `current_scale * F`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{assemble_interface_load, assemble_weighted_interface_mass, InterfaceUpdate};
use crate::config::DeviceConfig;
use crate::error::{Error, Result};
use crate::mesh::InterfaceGrid;
use crate::saddle::{Discretization, InterfaceSolver, MonolithicSolver, SchurSolver, SolutionFields, SolverKind};
use crate::sparse::norm_inf;

/// Largest `|u| / U_T` accepted by the density law.
pub const MAX_EXPONENT: f64 = 500.0;

/// `B(x) = x / (e^x - 1)`, with `B(0) = 1`.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
    } else {
        x / libm::expm1(x)
    }
}

/// Boltzmann density `n_plus * exp(u / U_T)` at every node.
pub fn equilibrium_density(u_gamma: &[f64], n_plus: f64, u_t: f64) -> Result<Vec<f64>> {
    if !(u_t > 0.0) {
        return Err(Error::InvalidConfig(format!("thermal voltage must be positive, got {u_t}")));
    }
    u_gamma
        .iter()
        .map(|&u| {
            let r = u / u_t;
            if !(r.abs() <= MAX_EXPONENT) {
                return Err(Error::DensityOverflow { ratio: r.abs() });
            }
            Ok(n_plus * libm::exp(r))
        })
        .collect()
}

/// Piecewise-constant doping: `n_plus` outside the junctions, `n_minus`
/// strictly between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopingProfile {
    pub n_plus: f64,
    pub n_minus: f64,
    pub junctions: (f64, f64),
}

impl DopingProfile {
    pub fn from_config(cfg: &DeviceConfig) -> Self {
        Self { n_plus: cfg.n_plus, n_minus: cfg.n_minus, junctions: cfg.junctions }
    }

    /// Doping in m^-2.
    pub fn value(&self, x: f64) -> f64 {
        let (a, b) = self.junctions;
        if x > a && x < b {
            self.n_minus
        } else {
            self.n_plus
        }
    }

    /// Doping in units of `N+`.
    pub fn scaled(&self, x: f64) -> f64 {
        self.value(x) / self.n_plus
    }

    pub fn breaks(&self) -> [f64; 2] {
        [self.junctions.0, self.junctions.1]
    }
}

/// Tridiagonal Scharfetter-Gummel system for the nodal density.
#[derive(Debug, Clone, PartialEq)]
pub struct SgSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Rows `F_{j-1} - F_j = 0` at interior nodes (an M-matrix), Dirichlet rows
/// at both ends.
pub fn assemble_sg_system(grid: &InterfaceGrid, u_gamma: &[f64], u_t: f64, bc: (f64, f64)) -> Result<SgSystem> {
    let n = grid.n_nodes();
    if u_gamma.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "potential has {} entries for {n} channel nodes",
            u_gamma.len()
        )));
    }
    if !(u_t > 0.0) {
        return Err(Error::InvalidConfig(format!("thermal voltage must be positive, got {u_t}")));
    }
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 1.0;
    rhs[0] = bc.0;
    diag[n - 1] = 1.0;
    rhs[n - 1] = bc.1;
    for j in 1..n - 1 {
        let (x0, x1) = grid.interval(j - 1);
        let (_, x2) = grid.interval(j);
        let (hl, hr) = (x1 - x0, x2 - x1);
        let dl = (u_gamma[j] - u_gamma[j - 1]) / u_t;
        let dr = (u_gamma[j + 1] - u_gamma[j]) / u_t;
        lower[j] = -bernoulli(-dl) / hl;
        diag[j] = bernoulli(dl) / hl + bernoulli(-dr) / hr;
        upper[j] = -bernoulli(dr) / hr;
    }
    Ok(SgSystem { lower, diag, upper, rhs })
}

/// Thomas algorithm.
pub fn solve_tridiagonal(sys: &SgSystem) -> Result<Vec<f64>> {
    let n = sys.diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = sys.diag[0];
    if piv == 0.0 {
        return Err(Error::Solver("zero pivot in tridiagonal solve".into()));
    }
    c[0] = sys.upper[0] / piv;
    d[0] = sys.rhs[0] / piv;
    for i in 1..n {
        piv = sys.diag[i] - sys.lower[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Solver("zero pivot in tridiagonal solve".into()));
        }
        c[i] = sys.upper[i] / piv;
        d[i] = (sys.rhs[i] - sys.lower[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Scaled Scharfetter-Gummel flux on every interval.
pub fn sg_fluxes(grid: &InterfaceGrid, u_gamma: &[f64], rho: &[f64], u_t: f64) -> Vec<f64> {
    (0..grid.n_intervals())
        .map(|j| {
            let (a, b) = grid.interval(j);
            let delta = (u_gamma[j + 1] - u_gamma[j]) / u_t;
            (bernoulli(delta) * rho[j + 1] - bernoulli(-delta) * rho[j]) / (b - a)
        })
        .collect()
}

/// Density and current of one transport solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    /// Scaled density.
    pub rho: Vec<f64>,
    /// Scaled flux per interval.
    pub fluxes: Vec<f64>,
    /// Mean scaled flux.
    pub flux: f64,
    /// Current per unit width, A/m.
    pub current: f64,
}

/// Solution of the Scharfetter-Gummel system in Slotboom form.
///
/// With `rho_j = e^{u_j/U_T} w_j` the flux reads
/// `F_j = D_j (w_{j+1} - w_j)` with `D_j = B(delta_j) e^{u_{j+1}/U_T} / h_j > 0`,
/// so a constant flux gives `w` as a convex combination of its end values
/// and the density stays positive without cancellation.
pub fn solve_sg(grid: &InterfaceGrid, u_gamma: &[f64], u_t: f64, bc: (f64, f64)) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    if u_gamma.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "potential has {} entries for {n} channel nodes",
            u_gamma.len()
        )));
    }
    if !(u_t > 0.0) {
        return Err(Error::InvalidConfig(format!("thermal voltage must be positive, got {u_t}")));
    }
    if let Some(r) = u_gamma.iter().map(|u| (u / u_t).abs()).find(|r| !(*r <= MAX_EXPONENT)) {
        return Err(Error::DensityOverflow { ratio: r });
    }
    // resistances 1 / D_j, summed from either end
    let r: Vec<f64> = (0..n - 1)
        .map(|j| {
            let (a, b) = grid.interval(j);
            let delta = (u_gamma[j + 1] - u_gamma[j]) / u_t;
            (b - a) * libm::exp(-u_gamma[j + 1] / u_t) / bernoulli(delta)
        })
        .collect();
    let mut head = vec![0.0; n];
    let mut tail = vec![0.0; n];
    for j in 0..n - 1 {
        head[j + 1] = head[j] + r[j];
        tail[n - 2 - j] = tail[n - 1 - j] + r[n - 2 - j];
    }
    let w0 = bc.0 * libm::exp(-u_gamma[0] / u_t);
    let wn = bc.1 * libm::exp(-u_gamma[n - 1] / u_t);
    let total = head[n - 1];
    Ok((0..n)
        .map(|j| libm::exp(u_gamma[j] / u_t) * (w0 * tail[j] + wn * head[j]) / total)
        .collect())
}

/// Solves the Scharfetter-Gummel problem with neutral contacts and checks that
/// the flux is the same on every interval.
pub fn solve_dd(grid: &InterfaceGrid, u_gamma: &[f64], cfg: &DeviceConfig) -> Result<DriftDiffusion> {
    let u_t = cfg.thermal_voltage();
    let rho = solve_sg(grid, u_gamma, u_t, (1.0, 1.0))?;
    if let Some(k) = rho.iter().position(|r| !(*r > 0.0)) {
        return Err(Error::Internal(format!("non-positive density {} at node {k}", rho[k])));
    }
    let fluxes = sg_fluxes(grid, u_gamma, &rho, u_t);
    let flux = fluxes.iter().sum::<f64>() / fluxes.len() as f64;
    // size of the individual terms, for the round-off part of the check
    let terms = (0..grid.n_intervals())
        .map(|j| {
            let (a, b) = grid.interval(j);
            let delta = (u_gamma[j + 1] - u_gamma[j]) / u_t;
            (bernoulli(delta) * rho[j + 1]).max(bernoulli(-delta) * rho[j]) / (b - a)
        })
        .fold(0.0, f64::max);
    let spread = fluxes.iter().map(|f| (f - flux).abs()).fold(0.0, f64::max);
    if spread > 1e-8 * flux.abs() + 1e-11 * terms {
        return Err(Error::Internal(format!("flux not constant: spread {spread:e}, mean {flux:e}")));
    }
    Ok(DriftDiffusion { rho, fluxes, flux, current: cfg.current_scale() * flux })
}

/// State of the channel unknowns during and after the Gummel loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    /// Density in units of `N+`.
    pub rho: Vec<f64>,
    pub u_gamma: Vec<f64>,
    /// Current per unit width (A/m); zero at equilibrium.
    pub current: f64,
    pub gummel_iter: usize,
    pub converged: bool,
    /// Sup-norm potential update of every iteration.
    pub history: Vec<f64>,
}

impl TransportState {
    /// Flat start `u = 0`, `rho = N+`.
    pub fn initial(n_nodes: usize) -> Self {
        Self {
            rho: vec![1.0; n_nodes],
            u_gamma: vec![0.0; n_nodes],
            current: 0.0,
            gummel_iter: 0,
            converged: false,
            history: Vec::new(),
        }
    }

    pub fn rho_physical(&self, n_plus: f64) -> Vec<f64> {
        self.rho.iter().map(|r| r * n_plus).collect()
    }
}

/// Whether the contacts are at the same potential, in which case the density
/// follows the Boltzmann law instead of a transport solve.
pub fn is_equilibrium(cfg: &DeviceConfig) -> bool {
    cfg.v_drain == cfg.v_source
}

/// Linearized channel update for a frozen density `rho`:
/// matrix `(s / U_T) M[rho]`, load `s (N_dop - rho) + (s / U_T) M[rho] u`.
pub fn gummel_update(disc: &Discretization, rho: &[f64], u_gamma: &[f64]) -> Result<InterfaceUpdate> {
    let cfg = &disc.cfg;
    let grid = &disc.grid;
    let s = cfg.source_scale();
    let u_t = cfg.thermal_voltage();
    let doping = DopingProfile::from_config(cfg);
    let weight: Vec<f64> = rho.iter().map(|r| s * r / u_t).collect();
    let mass = assemble_weighted_interface_mass(grid, &weight)?;
    let mut load = assemble_interface_load(
        grid,
        |x| s * (doping.scaled(x) - grid.interpolate(rho, x)),
        3,
        &doping.breaks(),
    )?;
    mass.mul_vec_acc(u_gamma, 1.0, &mut load);
    disc.reduced.interface_update(Some(&mass), &load)
}

/// Density and current from a new channel potential.
pub fn update_density(disc: &Discretization, u_gamma: &[f64]) -> Result<(Vec<f64>, f64)> {
    let cfg = &disc.cfg;
    if is_equilibrium(cfg) {
        Ok((equilibrium_density(u_gamma, 1.0, cfg.thermal_voltage())?, 0.0))
    } else {
        let dd = solve_dd(&disc.grid, u_gamma, cfg)?;
        Ok((dd.rho, dd.current))
    }
}

/// One Gummel iteration: linearized Poisson solve followed by the density
/// update. Returns the new state and the sup-norm potential change.
pub fn gummel_step(
    disc: &Discretization,
    solver: &mut dyn InterfaceSolver,
    state: &TransportState,
) -> Result<(TransportState, f64)> {
    let update = gummel_update(disc, &state.rho, &state.u_gamma)?;
    let u_new = solver.solve_channel(&update)?;
    let change = u_new.iter().zip(&state.u_gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (rho, current) = update_density(disc, &u_new)?;
    let mut history = state.history.clone();
    history.push(change);
    Ok((
        TransportState {
            rho,
            u_gamma: u_new,
            current,
            gummel_iter: state.gummel_iter + 1,
            converged: false,
            history,
        },
        change,
    ))
}

/// Runs the Gummel loop from `initial` until the potential update drops
/// below `gummel_tol`, then reconstructs all fields for the final density.
pub fn gummel_loop(
    disc: &Discretization,
    solver: &mut dyn InterfaceSolver,
    initial: TransportState,
) -> Result<(SolutionFields, TransportState)> {
    let cfg = &disc.cfg;
    let n = disc.grid.n_nodes();
    if initial.rho.len() != n || initial.u_gamma.len() != n {
        return Err(Error::DimensionMismatch("initial transport state does not match the channel grid".into()));
    }
    let mut state = initial;
    state.gummel_iter = 0;
    state.history.clear();
    state.converged = false;
    let mut last = f64::INFINITY;
    for _ in 0..cfg.gummel_max_iter {
        let (next, change) = gummel_step(disc, solver, &state)?;
        state = next;
        last = change;
        if change < cfg.gummel_tol {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        return Err(Error::NotConverged { iterations: state.gummel_iter, last_update: last, history: state.history });
    }
    let update = gummel_update(disc, &state.rho, &state.u_gamma)?;
    let fields = solver.solve_fields(&update)?;
    Ok((fields, state))
}

/// Self-consistent solution of one configuration (bias taken from
/// `V_D - V_S`), from a flat start or a warm start.
pub fn self_consistent_solve(
    cfg: &DeviceConfig,
    kind: SolverKind,
    warm: Option<&TransportState>,
) -> Result<(Discretization, SolutionFields, TransportState)> {
    let disc = Discretization::new(cfg)?;
    let initial = match warm {
        Some(s) => s.clone(),
        None => TransportState::initial(disc.grid.n_nodes()),
    };
    let alpha = disc.alpha();
    let (fields, state) = match kind {
        SolverKind::Schur => {
            let mut solver = SchurSolver::new(&disc.reduced, cfg.coupling, alpha)?;
            gummel_loop(&disc, &mut solver, initial)?
        }
        SolverKind::Monolithic => {
            let mut solver = MonolithicSolver::new(&disc.reduced, cfg.coupling, alpha)?;
            gummel_loop(&disc, &mut solver, initial)?
        }
    };
    Ok((disc, fields, state))
}

/// One converged point of a bias sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub v_ds: f64,
    pub current: f64,
    pub fields: SolutionFields,
    pub state: TransportState,
}

/// Bias continuation from 0 to `v_max` in steps of `cfg.dv_step`, warm
/// starting every point from the previous one.
pub fn voltage_sweep(cfg: &DeviceConfig, v_max: f64, kind: SolverKind) -> Result<Vec<SweepPoint>> {
    let steps = libm::round(v_max / cfg.dv_step);
    if !(steps >= 0.0) || (steps * cfg.dv_step - v_max).abs() > 1e-9 * cfg.dv_step.max(v_max.abs()) {
        return Err(Error::InvalidConfig(format!("V_max = {v_max} is not a multiple of dV = {}", cfg.dv_step)));
    }
    let steps = steps as usize;
    let mut out: Vec<SweepPoint> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let v = if k == steps { v_max } else { k as f64 * cfg.dv_step };
        let point_cfg = cfg.with_bias(v);
        let warm = out.last().map(|p| p.state.clone());
        let (_, fields, state) = self_consistent_solve(&point_cfg, kind, warm.as_ref())
            .map_err(|e| Error::Sweep { bias: v, source: alloc::boxed::Box::new(e) })?;
        out.push(SweepPoint { v_ds: v, current: state.current, fields, state });
    }
    Ok(out)
}

/// Sup norm of a nodal vector.
pub fn sup(x: &[f64]) -> f64 {
    norm_inf(x)
}
