use layerfet_core::saddle::{assemble_block_system, schur_solve, solve_block};
use layerfet_core::transport::{bernoulli, sg_fluxes, solve_sg};
use layerfet_core::{CouplingMode, DeviceConfig, Discretization, InterfaceGrid};
use proptest::prelude::*;

const U_T: f64 = 6.635346e-3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bernoulli_reflection(x in -50.0f64..50.0) {
        let gap = bernoulli(-x) - bernoulli(x) - x;
        prop_assert!(gap.abs() <= 1e-14 * x.abs().max(1.0), "x = {}, gap = {:e}", x, gap);
        prop_assert!(bernoulli(x) > 0.0);
    }

    #[test]
    fn sg_density_positive_with_constant_flux(u in prop::collection::vec(-30.0f64..30.0, 41)) {
        let grid = InterfaceGrid::uniform(60.0, 40).unwrap();
        let pot: Vec<f64> = u.iter().map(|v| v * U_T).collect();
        let rho = solve_sg(&grid, &pot, U_T, (1.0, 1.0)).unwrap();
        prop_assert!(rho.iter().all(|r| *r > 0.0 && r.is_finite()));
        let f = sg_fluxes(&grid, &pot, &rho, U_T);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        // the flux is a difference of terms up to e^30 in size
        let terms = (0..40)
            .map(|j| {
                let d = (pot[j + 1] - pot[j]) / U_T;
                (bernoulli(d) * rho[j + 1]).max(bernoulli(-d) * rho[j]) / 1.5
            })
            .fold(0.0f64, f64::max);
        prop_assert!(f.iter().all(|v| (v - mean).abs() <= 1e-8 * mean.abs() + 1e-11 * terms));
    }

    #[test]
    fn boltzmann_density_carries_no_flux(u in prop::collection::vec(-30.0f64..30.0, 21)) {
        let grid = InterfaceGrid::uniform(60.0, 20).unwrap();
        let pot: Vec<f64> = u.iter().map(|v| v * U_T).collect();
        let rho: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let scale = rho.iter().fold(0.0f64, |m, r| m.max(*r)) / 3.0;
        for f in sg_fluxes(&grid, &pot, &rho, U_T) {
            prop_assert!(f.abs() <= 1e-12 * scale, "{:e}", f);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn equal_contacts_reproduce_constants(c in -1.0f64..1.0, robin in any::<bool>()) {
        let mode = if robin { CouplingMode::Robin } else { CouplingMode::Dirichlet };
        let mut cfg = DeviceConfig::default().with_grid(12, 4, 24);
        cfg.coupling = mode;
        cfg.v_source = c;
        cfg.v_drain = c;
        cfg.v_gate = c;
        let d = Discretization::new(&cfg).unwrap();
        let up = d.load_update(&vec![0.0; d.grid.n_nodes()]).unwrap();
        let sys = assemble_block_system(&d.reduced, mode, d.alpha(), &up).unwrap();
        for f in [solve_block(&sys).unwrap(), schur_solve(&d.reduced, mode, d.alpha(), &up).unwrap()] {
            prop_assert!(f.u[0].iter().chain(&f.u[1]).chain(&f.u_gamma).all(|v| (v - c).abs() <= 1e-12));
        }
    }
}
