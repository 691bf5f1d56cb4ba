//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and fails
//! if any criterion fails.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::rc::Rc;

use layerfet::study::{
    compare, error_record, interface_iv, solve_point, solver_equivalence, table_grids, transmission_iv, Run, Study,
    TABLE_BIASES,
};
use layerfet::RunConfig;
use layerfet_core::analysis::{convergence_slope, manufactured_poisson, ErrorRecord};
use layerfet_core::quadrature::gauss_legendre_unit;
use layerfet_core::saddle::{assemble_block_system, schur_solve, solve_block, BlockSystem, SolverKind};
use layerfet_core::transport::{bernoulli, gummel_update, sg_fluxes, solve_sg};
use layerfet_core::{CouplingMode, DeviceConfig, Discretization, InterfaceGrid, Result};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

const MODES: [CouplingMode; 2] = [CouplingMode::Dirichlet, CouplingMode::Robin];

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: impl AsRef<str>) {
        let tag = if ok { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{tag} criterion {id}: {}", detail.as_ref());
        let _ = out.flush();
        if !ok {
            self.failed.push(id.to_string());
        }
    }

    fn error(&mut self, id: &str, e: impl std::fmt::Display) {
        self.check(id, false, format!("solver error: {e}"));
    }
}

/// Converged runs keyed by grid and bias, plus the reference solutions.
struct Runs {
    study: Study,
    cache: HashMap<(usize, usize, usize, u64), Rc<Run>>,
}

impl Runs {
    fn get(&mut self, nx: usize, ny: usize, n_gamma: usize, v: f64) -> Result<Rc<Run>> {
        let key = (nx, ny, n_gamma, v.to_bits());
        if let Some(r) = self.cache.get(&key) {
            return Ok(r.clone());
        }
        let run = Rc::new(self.study.run(nx, ny, n_gamma, v)?);
        self.cache.insert(key, run.clone());
        Ok(run)
    }

    fn record(&mut self, nx: usize, ny: usize, n_gamma: usize, v: f64) -> Result<ErrorRecord> {
        let reference = self.study.reference(v)?;
        error_record(&*self.get(nx, ny, n_gamma, v)?, &reference)
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn list(x: &[f64]) -> String {
    let items: Vec<String> = x.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn table_2(runs: &mut Runs, rep: &mut Report) {
    let target = [1.9567e-1, 1.0079e-1, 4.9450e-2, 2.2167e-2];
    let mut h = Vec::new();
    let mut e = Vec::new();
    let mut ok = true;
    let mut detail = String::new();
    for (k, n) in [60, 120, 240, 480].into_iter().enumerate() {
        match runs.record(n, 16, n, 0.0) {
            Ok(r) => {
                ok &= within(r.e_1d, target[k], 0.10);
                detail += &format!("E_1D({n})={:.4e} (target {:.4e}); ", r.e_1d, target[k]);
                h.push(r.h);
                e.push(r.e_1d);
            }
            Err(err) => return rep.error("1", err),
        }
    }
    let slope = convergence_slope(&h, &e).unwrap_or(f64::NAN);
    ok &= (0.9..=1.15).contains(&slope);
    rep.check("1", ok, format!("{detail}slope {slope:.4} (need [0.9, 1.15])"));
}

fn table_1(runs: &mut Runs, rep: &mut Report) {
    let target = [1.9557e-1, 1.9567e-1, 1.9570e-1, 1.9571e-1];
    let mut e = Vec::new();
    let mut ok = true;
    let mut detail = String::new();
    for (k, ny) in [8, 16, 32, 64].into_iter().enumerate() {
        match runs.record(60, ny, 60, 0.0) {
            Ok(r) => {
                ok &= within(r.e_1d, target[k], 0.10);
                detail += &format!("E_1D(Ny={ny})={:.4e} (target {:.4e}); ", r.e_1d, target[k]);
                e.push(r.e_1d);
            }
            Err(err) => return rep.error("2", err),
        }
    }
    let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.iter().cloned().fold(0.0, f64::max);
    let variation = (hi - lo) / lo;
    ok &= variation < 5e-3;
    rep.check("2", ok, format!("{detail}variation {variation:.3e} (need < 5e-3)"));
}

fn table_3(runs: &mut Runs, rep: &mut Report) {
    let (r240, r960) = match (runs.record(60, 16, 240, 0.0), runs.record(60, 16, 960, 0.0)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return rep.error("3", e),
    };
    let ok = r240.e_1d < 1.9567e-1 && within(r240.e_1d, 5.3930e-2, 0.10) && within(r960.e_1d, 2.4381e-2, 0.15);
    rep.check(
        "3",
        ok,
        format!(
            "E_1D(N_gamma=240)={:.4e} (target 5.3930e-2 within 10%, below 1.9567e-1); E_1D(N_gamma=960)={:.4e} (target 2.4381e-2 within 15%)",
            r240.e_1d, r960.e_1d
        ),
    );
}

fn slopes(runs: &mut Runs, rep: &mut Report) {
    let mut ok = true;
    let mut detail = String::new();
    for v in TABLE_BIASES {
        let mut records = Vec::new();
        for i in 0..4 {
            let (n, ny) = (60 << i, 4 << i);
            match runs.record(n, ny, n, v) {
                Ok(r) => records.push(r),
                Err(e) => return rep.error("4", e),
            }
        }
        let h: Vec<f64> = records.iter().map(|r| r.h).collect();
        let slope = |pick: fn(&ErrorRecord) -> f64| {
            convergence_slope(&h, &records.iter().map(pick).collect::<Vec<_>>()).unwrap_or(f64::NAN)
        };
        let (s1, srho, s2) = (slope(|r| r.e_1d), slope(|r| r.e_rho), slope(|r| r.e_2d));
        let oxide = if v == 0.0 { 0.85..=1.15 } else { 0.7..=1.05 };
        ok &= (0.85..=1.15).contains(&s1) && (0.85..=1.15).contains(&srho) && oxide.contains(&s2);
        detail += &format!(
            "V={v}: interface {s1:.4}, density {srho:.4}, oxide {s2:.4} (need [{}, {}]); ",
            oxide.start(),
            oxide.end()
        );
    }
    rep.check("4", ok, detail.trim_end_matches("; "));
}

fn equivalence(runs: &mut Runs, rep: &mut Report) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for t in 1..=3 {
        for (nx, ny, ng) in table_grids(t) {
            for v in TABLE_BIASES {
                let run = match runs.get(nx, ny, ng, v) {
                    Ok(r) => r,
                    Err(e) => return rep.error("5", e),
                };
                for mode in MODES {
                    match solver_equivalence(&run, mode) {
                        Ok(d) => worst = worst.max(d),
                        Err(e) => return rep.error("5", e),
                    }
                    count += 1;
                }
            }
        }
    }
    rep.check("5", worst <= 1e-8, format!("{count} systems, largest relative sup difference {worst:.3e} (need <= 1e-8)"));
}

/// Largest `|b - M x|_r / (|b_r| + sum_j |M_rj x_j|)` over the rows of the
/// multiplier blocks.
fn multiplier_row_residual(system: &BlockSystem, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for k in [2, 3] {
        for r in system.layout.block(k) {
            let (cols, vals) = system.matrix.row(r);
            let mut res = system.rhs[r];
            let mut scale = system.rhs[r].abs();
            for (c, v) in cols.iter().zip(vals) {
                res -= v * x[*c];
                scale += (v * x[*c]).abs();
            }
            if scale > 0.0 {
                worst = worst.max(res.abs() / scale);
            }
        }
    }
    worst
}

fn invariance(runs: &mut Runs, rep: &mut Report) -> Result<()> {
    // equal potentials on every contact and no charge
    let c = 0.3;
    let mut dev = 0.0f64;
    for mode in MODES {
        let mut cfg = DeviceConfig::default();
        cfg.coupling = mode;
        (cfg.v_source, cfg.v_drain, cfg.v_gate) = (c, c, c);
        let d = Discretization::new(&cfg)?;
        let up = d.load_update(&vec![0.0; d.grid.n_nodes()])?;
        let sys = assemble_block_system(&d.reduced, mode, d.alpha(), &up)?;
        for f in [solve_block(&sys)?, schur_solve(&d.reduced, mode, d.alpha(), &up)?] {
            for v in f.u[0].iter().chain(&f.u[1]).chain(&f.u_gamma) {
                dev = dev.max((v - c).abs());
            }
        }
    }
    rep.check("6a", dev <= 1e-12, format!("constant contacts: largest deviation {dev:.3e} V (need <= 1e-12)"));

    let mut mirror = 0.0f64;
    for mode in MODES {
        for v in TABLE_BIASES {
            let mut cfg = runs.study.config(60, 16, 60, v);
            cfg.coupling = mode;
            let run = solve_point(&cfg, SolverKind::Schur)?;
            let f = &run.fields;
            let su = sup(&f.u[0]).max(sup(&f.u[1])).max(1.0);
            let sl = sup(&f.lambda[0]).max(sup(&f.lambda[1])).max(1.0);
            for (a, b) in f.u[0].iter().zip(&f.u[1]) {
                mirror = mirror.max((a - b).abs() / su);
            }
            for (a, b) in f.lambda[0].iter().zip(&f.lambda[1]) {
                mirror = mirror.max((a - b).abs() / sl);
            }
        }
    }
    rep.check("6b", mirror <= 1e-10, format!("mirror symmetry: largest relative defect {mirror:.3e} (need <= 1e-10)"));

    let mut residual = [0.0f64; 2];
    for (m, mode) in MODES.into_iter().enumerate() {
        for v in TABLE_BIASES {
            let mut cfg = runs.study.config(60, 16, 60, v);
            cfg.coupling = mode;
            let run = solve_point(&cfg, SolverKind::Schur)?;
            let update = gummel_update(&run.disc, &run.state.rho, &run.state.u_gamma)?;
            let system = assemble_block_system(&run.disc.reduced, mode, run.disc.alpha(), &update)?;
            let x = system.unknowns(&run.fields);
            residual[m] = residual[m].max(multiplier_row_residual(&system, &x));
        }
    }
    rep.check(
        "6c",
        residual[0] <= 1e-10 && residual[1] <= 1e-10,
        format!(
            "per-multiplier relative residuals: weak continuity {:.3e}, Robin {:.3e} (need <= 1e-10)",
            residual[0], residual[1]
        ),
    );

    let run = runs.get(60, 16, 60, 0.04)?;
    let disc = &run.disc;
    let update = gummel_update(disc, &run.state.rho, &run.state.u_gamma)?;
    let u_d = schur_solve(&disc.reduced, CouplingMode::Dirichlet, 0.0, &update)?.u_gamma;
    let alpha = disc.cfg.robin_alpha();
    let mut gaps = Vec::new();
    for s in [1.0, 1e-2, 1e-4, 1e-6] {
        let u_r = schur_solve(&disc.reduced, CouplingMode::Robin, alpha * s, &update)?.u_gamma;
        gaps.push(u_r.iter().zip(&u_d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let bound = 1e-4 * sup(&u_d);
    let last = gaps[3];
    rep.check(
        "6d",
        monotone && last <= bound,
        format!("alpha scaling: gaps {}, monotone {monotone}, last {last:.3e} (need <= {bound:.3e})", list(&gaps)),
    );
    Ok(())
}

/// `int_0^x e^{-u/U_T}` at every node, composite Gauss.
fn cumulative_weight(nodes: &[f64], u: impl Fn(f64) -> f64, u_t: f64) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len()];
    for j in 1..nodes.len() {
        let (a, b) = (nodes[j - 1], nodes[j]);
        let sub = 16;
        let mut s = 0.0;
        for k in 0..sub {
            let (p, q) = (a + (b - a) * k as f64 / sub as f64, a + (b - a) * (k + 1) as f64 / sub as f64);
            for &(t, w) in gauss_legendre_unit(5) {
                s += w * (q - p) * (-u(p + t * (q - p)) / u_t).exp();
            }
        }
        out[j] = out[j - 1] + s;
    }
    out
}

fn transport(runs: &mut Runs, rep: &mut Report) -> Result<()> {
    let cfg = runs.study.config(60, 16, 60, 0.0);
    let u_t = cfg.thermal_voltage();

    let run = runs.get(60, 16, 60, 0.0)?;
    let grid = &run.disc.grid;
    let fluxes = sg_fluxes(grid, &run.state.u_gamma, &run.state.rho, u_t);
    let worst = (0..fluxes.len())
        .map(|j| {
            let (a, b) = grid.interval(j);
            fluxes[j].abs() * (b - a)
        })
        .fold(0.0, f64::max);
    rep.check("7a", worst <= 1e-12, format!("equilibrium SG flux: largest |F| h = {worst:.3e} (need <= 1e-12)"));

    let mut rng = StdRng::seed_from_u64(0x5eed);
    let g = InterfaceGrid::uniform(cfg.length, 60)?;
    let mut bad = 0;
    let mut smallest = f64::INFINITY;
    for _ in 0..1000 {
        let u: Vec<f64> = (0..g.n_nodes()).map(|_| rng.random_range(-30.0..30.0) * u_t).collect();
        let rho = solve_sg(&g, &u, u_t, (1.0, 1.0))?;
        if !rho.iter().all(|r| *r > 0.0 && r.is_finite()) {
            bad += 1;
        }
        smallest = rho.iter().cloned().fold(smallest, f64::min);
    }
    rep.check("7b", bad == 0, format!("random potentials: {bad}/1000 trials with rho <= 0, smallest rho {smallest:.3e}"));

    let mut gap = 0.0f64;
    for k in 0..=10_000 {
        let x = -50.0 + 0.01 * k as f64;
        gap = gap.max((bernoulli(-x) - bernoulli(x) - x).abs());
    }
    rep.check("7c", gap <= 1e-14, format!("Bernoulli identity on [-50, 50]: largest |B(-x) - B(x) - x| {gap:.3e} (need <= 1e-14)"));

    // rho = e^{u/U_T} w with w' = F e^{-u/U_T}, w(0) = 1, w(L) = e^{-2}
    let len = cfg.length;
    let u = move |x: f64| u_t * (3.0 * (PI * x / len).sin() + 2.0 * x / len);
    let mut h = Vec::new();
    let mut err = Vec::new();
    for n in [20, 40, 80, 160, 320] {
        let g = InterfaceGrid::uniform(len, n)?;
        let nodes = g.nodes();
        let pot: Vec<f64> = nodes.iter().map(|&x| u(x)).collect();
        let rho = solve_sg(&g, &pot, u_t, (1.0, 1.0))?;
        let int = cumulative_weight(nodes, u, u_t);
        let flux = ((-2.0f64).exp() - 1.0) / int[n];
        let e = (0..=n)
            .map(|j| (rho[j] - (pot[j] / u_t).exp() * (1.0 + flux * int[j])).abs())
            .fold(0.0, f64::max);
        h.push(len / n as f64);
        err.push(e);
    }
    let order = convergence_slope(&h, &err)?;
    rep.check(
        "7d",
        order >= 1.9,
        format!("manufactured SG problem: sup errors {}, order {order:.4} (need >= 1.9)", list(&err)),
    );
    Ok(())
}

fn anisotropy(rep: &mut Report) -> Result<()> {
    let mut rc = RunConfig::default();
    rc.device = rc.device.with_grid(240, 16, 240);
    rc.device.eps_perp = 0.1;
    let weak = compare(&rc)?;
    rep.check(
        "8a",
        weak.gaps[1] < weak.gaps[0],
        format!("eps_perp = 0.1: gap Dirichlet {:.4e} V, Robin {:.4e} V (need Robin < Dirichlet)", weak.gaps[0], weak.gaps[1]),
    );
    rc.device.eps_perp = 6.9;
    let c = compare(&rc)?;
    let [gd, gr] = c.gaps;
    let factor3 = |g: f64, t: f64| g >= t / 3.0 && g <= 3.0 * t;
    rep.check(
        "8b",
        gd <= 1e-3 && gr <= 1e-3 && factor3(gd, 3.0e-5) && factor3(gr, 9.83e-5),
        format!(
            "eps_perp = 6.9: gap Dirichlet {gd:.4e} V (need [1.0e-5, 9.0e-5]), Robin {gr:.4e} V (need [3.277e-5, 2.949e-4])"
        ),
    );
    Ok(())
}

fn current_voltage(rep: &mut Report) -> Result<()> {
    let mut rc = RunConfig::default();
    rc.device = rc.device.with_grid(240, 16, 240);
    let reference = transmission_iv(&rc)?;
    let mut curves = vec![("transmission", reference.clone())];
    for mode in MODES {
        let mut cfg = rc.device.clone();
        cfg.coupling = mode;
        let name = if mode == CouplingMode::Dirichlet { "dirichlet" } else { "robin" };
        curves.push((name, interface_iv(&cfg, rc.v_max, SolverKind::Schur)?));
    }
    let mut zero_ok = true;
    let mut mono_ok = true;
    let mut detail = String::new();
    for (name, iv) in &curves {
        let last = iv.last().map_or(0.0, |p| p.current);
        let first = iv[0].current;
        zero_ok &= iv.len() == 11 && first.abs() <= 1e-10 * last.abs();
        let mono = iv.windows(2).all(|w| w[1].current > w[0].current);
        mono_ok &= mono;
        detail += &format!("{name}: I(0) = {first:.3e}, I(0.1) = {last:.4e} A/m, monotone {mono}; ");
    }
    rep.check("9a", zero_ok, format!("{}(need |I(0)| <= 1e-10 |I(0.1)|)", detail));
    rep.check("9b", mono_ok, "currents strictly increasing in 0.01 V steps up to 0.1 V");
    let mut worst = 0.0f64;
    for (_, iv) in &curves[1..] {
        for (p, q) in iv.iter().zip(&reference).skip(1) {
            worst = worst.max((p.current - q.current).abs() / q.current.abs());
        }
    }
    rep.check("9c", worst <= 0.05, format!("interface vs transmission I-V: largest relative difference {worst:.3e} (need <= 0.05)"));
    Ok(())
}

fn manufactured(rep: &mut Report) -> Result<()> {
    let records = manufactured_poisson(&DeviceConfig::default(), 15, 4, 4)?;
    let h: Vec<f64> = records.iter().map(|r| r.h).collect();
    let l2 = convergence_slope(&h, &records.iter().map(|r| r.l2).collect::<Vec<_>>())?;
    let h1 = convergence_slope(&h, &records.iter().map(|r| r.h1).collect::<Vec<_>>())?;
    rep.check(
        "10",
        (1.9..=2.1).contains(&l2) && (0.9..=1.1).contains(&h1),
        format!("L2 order {l2:.4} (need 2.0 +- 0.1), H1 order {h1:.4} (need 1.0 +- 0.1)"),
    );
    Ok(())
}

#[test]
fn acceptance() {
    let mut rep = Report { failed: Vec::new() };
    let mut runs = Runs { study: Study::new(RunConfig::default()), cache: HashMap::new() };

    table_2(&mut runs, &mut rep);
    table_1(&mut runs, &mut rep);
    table_3(&mut runs, &mut rep);
    slopes(&mut runs, &mut rep);
    equivalence(&mut runs, &mut rep);
    if let Err(e) = invariance(&mut runs, &mut rep) {
        rep.error("6", e);
    }
    if let Err(e) = transport(&mut runs, &mut rep) {
        rep.error("7", e);
    }
    if let Err(e) = anisotropy(&mut rep) {
        rep.error("8", e);
    }
    if let Err(e) = current_voltage(&mut rep) {
        rep.error("9", e);
    }
    if let Err(e) = manufactured(&mut rep) {
        rep.error("10", e);
    }
    assert!(rep.failed.is_empty(), "failed criteria: {:?}", rep.failed);
}
