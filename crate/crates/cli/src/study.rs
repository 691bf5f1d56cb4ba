//! Runs behind the `tables`, `converge`, `sweep` and `compare` commands.

use std::collections::HashMap;
use std::rc::Rc;

use layerfet_core::analysis::{h1_error_2d, h1_error_interface, linf_error_2d, ErrorRecord, IvPoint};
use layerfet_core::mesh::scaled_mesh_diameter;
use layerfet_core::saddle::{assemble_block_system, relative_sup_difference, schur_solve, solve_block, SolverKind};
use layerfet_core::transmission::{solve_transmission, transmission_sweep, vertical_slice, StripMesh, TransmissionSystem};
use layerfet_core::transport::{gummel_update, self_consistent_solve, sg_fluxes, voltage_sweep, TransportState};
use layerfet_core::{CouplingMode, DeviceConfig, Discretization, Result, SolutionFields};

use crate::config::RunConfig;

/// Biases of the three tables.
pub const TABLE_BIASES: [f64; 2] = [0.0, 0.04];

/// Coarsest grid of the refinement series `Nx = N_gamma = 60 * 2^i`,
/// `Ny = 4 * 2^i`.
pub const SERIES_BASE: (usize, usize) = (60, 4);
pub const SERIES_LEVELS: usize = 4;

/// One converged self-consistent solution.
pub struct Run {
    pub disc: Discretization,
    pub fields: SolutionFields,
    pub state: TransportState,
}

pub fn solve_point(cfg: &DeviceConfig, kind: SolverKind) -> Result<Run> {
    let (disc, fields, state) = self_consistent_solve(cfg, kind, None)?;
    Ok(Run { disc, fields, state })
}

/// Errors of `run` against a run on a nested finer grid.
pub fn error_record(run: &Run, reference: &Run) -> Result<ErrorRecord> {
    let (c, r) = (&run.disc, &reference.disc);
    let coarse = [&c.meshes[0], &c.meshes[1]];
    let fine = [&r.meshes[0], &r.meshes[1]];
    let u = [run.fields.u[0].as_slice(), run.fields.u[1].as_slice()];
    let u_ref = [reference.fields.u[0].as_slice(), reference.fields.u[1].as_slice()];
    let (e_linf, argmax_location) = linf_error_2d(coarse, u, fine, u_ref)?;
    Ok(ErrorRecord {
        h: scaled_mesh_diameter(&c.cfg),
        e_1d: h1_error_interface(&c.grid, &run.fields.u_gamma, &r.grid, &reference.fields.u_gamma)?,
        e_2d: h1_error_2d(coarse, u, fine, u_ref)?,
        e_linf,
        e_rho: h1_error_interface(&c.grid, &run.state.rho, &r.grid, &reference.state.rho)?,
        argmax_location,
    })
}

/// Relative sup difference of the monolithic and Schur solves of the final
/// linearized system of `run`, assembled in `mode`.
pub fn solver_equivalence(run: &Run, mode: CouplingMode) -> Result<f64> {
    let update = gummel_update(&run.disc, &run.state.rho, &run.state.u_gamma)?;
    let alpha = match mode {
        CouplingMode::Dirichlet => 0.0,
        CouplingMode::Robin => run.disc.cfg.robin_alpha(),
    };
    let system = assemble_block_system(&run.disc.reduced, mode, alpha, &update)?;
    let block = solve_block(&system)?;
    let schur = schur_solve(&run.disc.reduced, mode, alpha, &update)?;
    Ok(relative_sup_difference(&schur, &block))
}

/// Grids `(Nx, Ny, N_gamma)` of table 1, 2 or 3.
pub fn table_grids(table: usize) -> Vec<(usize, usize, usize)> {
    match table {
        1 => [8, 16, 32, 64].iter().map(|&ny| (60, ny, 60)).collect(),
        2 => [60, 120, 240, 480].iter().map(|&n| (n, 16, n)).collect(),
        3 => [30, 120, 240, 480, 960].iter().map(|&ng| (60, 16, ng)).collect(),
        _ => Vec::new(),
    }
}

/// One table entry; solver failures abort only their row.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub nx: usize,
    pub ny: usize,
    pub n_gamma: usize,
    pub v_ds: f64,
    pub outcome: std::result::Result<ErrorRecord, String>,
}

/// Convergence studies sharing their reference solutions.
pub struct Study {
    pub rc: RunConfig,
    references: HashMap<u64, Rc<Run>>,
}

impl Study {
    pub fn new(rc: RunConfig) -> Self {
        Self { rc, references: HashMap::new() }
    }

    pub fn config(&self, nx: usize, ny: usize, n_gamma: usize, v_ds: f64) -> DeviceConfig {
        self.rc.device.with_grid(nx, ny, n_gamma).with_bias(v_ds)
    }

    pub fn reference(&mut self, v_ds: f64) -> Result<Rc<Run>> {
        if let Some(r) = self.references.get(&v_ds.to_bits()) {
            return Ok(r.clone());
        }
        let (n, ny) = (self.rc.reference_nx, self.rc.reference_ny);
        let run = Rc::new(solve_point(&self.config(n, ny, n, v_ds), self.rc.solver)?);
        self.references.insert(v_ds.to_bits(), run.clone());
        Ok(run)
    }

    pub fn run(&self, nx: usize, ny: usize, n_gamma: usize, v_ds: f64) -> Result<Run> {
        solve_point(&self.config(nx, ny, n_gamma, v_ds), self.rc.solver)
    }

    /// Errors of one grid against the reference at the same bias.
    pub fn record(&mut self, nx: usize, ny: usize, n_gamma: usize, v_ds: f64) -> Result<ErrorRecord> {
        let reference = self.reference(v_ds)?;
        error_record(&self.run(nx, ny, n_gamma, v_ds)?, &reference)
    }

    pub fn table(&mut self, table: usize) -> Result<Vec<TableRow>> {
        let mut rows = Vec::new();
        for (nx, ny, n_gamma) in table_grids(table) {
            for v_ds in TABLE_BIASES {
                // a failed reference invalidates the whole table
                self.reference(v_ds)?;
                let outcome = self.record(nx, ny, n_gamma, v_ds).map_err(|e| e.to_string());
                rows.push(TableRow { nx, ny, n_gamma, v_ds, outcome });
            }
        }
        Ok(rows)
    }

    /// Refinement series `Nx = N_gamma = 60 * 2^i`, `Ny = 4 * 2^i`,
    /// `i < SERIES_LEVELS`, against the reference grid.
    pub fn series(&mut self, v_ds: f64) -> Result<Vec<(DeviceConfig, ErrorRecord)>> {
        let (nx0, ny0) = SERIES_BASE;
        let mut out = Vec::with_capacity(SERIES_LEVELS);
        for i in 0..SERIES_LEVELS {
            let (nx, ny) = (nx0 << i, ny0 << i);
            out.push((self.config(nx, ny, nx, v_ds), self.record(nx, ny, nx, v_ds)?));
        }
        Ok(out)
    }
}

/// Largest deviation of the interval fluxes from their mean, relative to
/// the mean; zero without current.
pub fn flux_spread(grid: &layerfet_core::InterfaceGrid, u: &[f64], rho: &[f64], u_t: f64) -> f64 {
    let f = sg_fluxes(grid, u, rho, u_t);
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    f.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean.abs()
}

/// I-V curve of the interface model. The reported current is
/// `-current_scale * flux`, positive for `V_DS > 0`.
pub fn interface_iv(cfg: &DeviceConfig, v_max: f64, kind: SolverKind) -> Result<Vec<IvPoint>> {
    let grid = layerfet_core::mesh::build_interface_grid(cfg)?;
    let u_t = cfg.thermal_voltage();
    Ok(voltage_sweep(cfg, v_max, kind)?
        .iter()
        .map(|p| IvPoint {
            v_ds: p.v_ds,
            current: 0.0 - p.current,
            flux_spread: flux_spread(&grid, &p.state.u_gamma, &p.state.rho, u_t),
        })
        .collect())
}

/// I-V curve of the transmission reference, same sign convention.
pub fn transmission_iv(rc: &RunConfig) -> Result<Vec<IvPoint>> {
    let mesh = StripMesh::new(&rc.device, rc.transmission_nx, rc.transmission_ny)?;
    let grid = mesh.midline_grid()?;
    let u_t = rc.device.thermal_voltage();
    let nodes = mesh.midline_nodes();
    Ok(transmission_sweep(&rc.device, &mesh, rc.v_max)?
        .iter()
        .map(|p| {
            let trace: Vec<f64> = nodes.iter().map(|&n| p.solution.u[n]).collect();
            IvPoint {
                v_ds: p.v_ds,
                current: 0.0 - p.solution.current,
                flux_spread: flux_spread(&grid, &trace, &p.solution.rho, u_t),
            }
        })
        .collect())
}

/// Vertical profile `(y, u)` of an interface-model solution at abscissa `x`:
/// lower slab, the channel value at `y = 0`, upper slab.
pub fn interface_slice(run: &Run, x: f64) -> Vec<(f64, f64)> {
    let [up, low] = &run.disc.meshes;
    let ny = up.ny();
    let mut out = Vec::with_capacity(2 * ny + 1);
    for j in (1..=ny).rev() {
        let y = low.vertices[low.vertex_index(0, j)][1];
        out.push((y, low.evaluate(&run.fields.u[1], [x, y])));
    }
    out.push((0.0, run.disc.grid.interpolate(&run.fields.u_gamma, x)));
    for j in 1..=ny {
        let y = up.vertices[up.vertex_index(0, j)][1];
        out.push((y, up.evaluate(&run.fields.u[0], [x, y])));
    }
    out
}

/// Dirichlet-coupled, Robin-coupled and transmission solutions at
/// `V_DS = 0`, compared on the vertical line `x = L/2`.
pub struct Comparison {
    pub slices: [Vec<(f64, f64)>; 3],
    /// `u(L/2, 0)` of the three models.
    pub midpoint: [f64; 3],
    /// `|u_trans(L/2, 0) - u_gamma(L/2)|` for Dirichlet and Robin coupling.
    pub gaps: [f64; 2],
}

pub fn compare(rc: &RunConfig) -> Result<Comparison> {
    let base = rc.device.with_bias(0.0);
    let x = 0.5 * base.length;
    let mut slices: [Vec<(f64, f64)>; 3] = Default::default();
    let mut midpoint = [0.0; 3];
    for (k, mode) in [CouplingMode::Dirichlet, CouplingMode::Robin].into_iter().enumerate() {
        let mut cfg = base.clone();
        cfg.coupling = mode;
        let run = solve_point(&cfg, rc.solver)?;
        midpoint[k] = run.disc.grid.interpolate(&run.fields.u_gamma, x);
        slices[k] = interface_slice(&run, x);
    }
    let mesh = StripMesh::new(&base, rc.transmission_nx, rc.transmission_ny)?;
    let mut system = TransmissionSystem::new(&base, mesh)?;
    let sol = solve_transmission(&mut system, None)?;
    midpoint[2] = system.grid.interpolate(&system.midline_trace(&sol.u), x);
    slices[2] = vertical_slice(&system.mesh, &sol.u, x);
    let gaps = [(midpoint[2] - midpoint[0]).abs(), (midpoint[2] - midpoint[1]).abs()];
    Ok(Comparison { slices, midpoint, gaps })
}
