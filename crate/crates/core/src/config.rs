//! Device geometry, physical parameters and solver settings.

use alloc::format;

use crate::error::{Error, Result};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_8128e-12;
/// Metres per nanometre.
pub const NM: f64 = 1e-9;

/// How the oxide traces are tied to the channel potential on `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// `u_i = u_gamma` imposed weakly.
    Dirichlet,
    /// `(u_i - u_gamma) + alpha * eps_ox * grad(u_i).n_i = 0`.
    Robin,
}

/// All physical and geometric parameters of the device plus solver settings.
///
/// Lengths are in nm, permittivities in multiples of the vacuum permittivity,
/// surface densities in m^-2, mobility in m^2/(V s).
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    /// Longitudinal device length `L`.
    pub length: f64,
    /// Transversal device height `l` (both oxides together).
    pub height: f64,
    /// Effective dielectric thickness `d` of the channel layer.
    pub thickness: f64,
    /// Gate inset `x_G`: the gates cover `]x_G, L - x_G[`.
    pub gate_inset: f64,
    pub eps_ox: f64,
    /// In-plane channel permittivity.
    pub eps_par: f64,
    /// Out-of-plane channel permittivity.
    pub eps_perp: f64,
    /// Contact (source/drain) doping.
    pub n_plus: f64,
    /// Channel doping.
    pub n_minus: f64,
    /// Junction abscissae separating the three doping regions.
    pub junctions: (f64, f64),
    pub temperature: f64,
    pub mobility: f64,
    pub v_source: f64,
    pub v_drain: f64,
    pub v_gate: f64,
    pub coupling: CouplingMode,
    /// Width `a` of the Gaussian replacing the Dirac source in the
    /// transmission reference solver.
    pub smoothing_width: f64,
    pub nx: usize,
    pub ny: usize,
    pub n_gamma: usize,
    pub gummel_tol: f64,
    pub gummel_max_iter: usize,
    pub dv_step: f64,
}

impl Default for DeviceConfig {
    /// Graphene channel FET at 77 K.
    fn default() -> Self {
        Self {
            length: 60.0,
            height: 4.0,
            thickness: 0.2,
            gate_inset: 10.0,
            eps_ox: 3.9,
            eps_par: 13.9,
            eps_perp: 6.9,
            n_plus: 1e17,
            n_minus: 1e14,
            junctions: (20.0, 40.0),
            temperature: 77.0,
            mobility: 4.5e3 * 1e-4,
            v_source: 0.0,
            v_drain: 0.0,
            v_gate: 0.0,
            coupling: CouplingMode::Dirichlet,
            smoothing_width: 0.008,
            nx: 60,
            ny: 16,
            n_gamma: 60,
            gummel_tol: 1e-9,
            gummel_max_iter: 200,
            dv_step: 0.01,
        }
    }
}

fn invalid(msg: alloc::string::String) -> Error {
    Error::InvalidConfig(msg)
}

impl DeviceConfig {
    /// Checks every parameter invariant.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("L", self.length),
            ("l", self.height),
            ("d", self.thickness),
            ("eps_ox", self.eps_ox),
            ("eps_par", self.eps_par),
            ("eps_perp", self.eps_perp),
            ("N_minus", self.n_minus),
            ("T", self.temperature),
            ("mu", self.mobility),
            ("smoothing_a", self.smoothing_width),
            ("gummel_tol", self.gummel_tol),
            ("dV_step", self.dv_step),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(format!("{name} must be positive and finite, got {value}")));
            }
        }
        for (name, value) in [
            ("x_G", self.gate_inset),
            ("N_plus", self.n_plus),
            ("V_S", self.v_source),
            ("V_D", self.v_drain),
            ("V_G", self.v_gate),
        ] {
            if !value.is_finite() {
                return Err(invalid(format!("{name} must be finite, got {value}")));
            }
        }
        if self.thickness >= 0.5 * self.height {
            return Err(invalid(format!(
                "d = {} must be much smaller than l = {}",
                self.thickness, self.height
            )));
        }
        if !(self.gate_inset >= 0.0 && self.gate_inset < 0.5 * self.length) {
            return Err(invalid(format!("x_G = {} must lie in [0, L/2)", self.gate_inset)));
        }
        if self.n_plus < self.n_minus {
            return Err(invalid(format!(
                "N_plus = {} must not be below N_minus = {}",
                self.n_plus, self.n_minus
            )));
        }
        let (j1, j2) = self.junctions;
        if !(0.0 < j1 && j1 < j2 && j2 < self.length) {
            return Err(invalid(format!(
                "junctions ({j1}, {j2}) must be ordered and strictly inside (0, L)"
            )));
        }
        if self.nx < 1 || self.ny < 1 {
            return Err(invalid(format!("grid counts Nx = {}, Ny = {} must be >= 1", self.nx, self.ny)));
        }
        if self.n_gamma < 2 {
            return Err(invalid(format!("N_gamma = {} must be >= 2", self.n_gamma)));
        }
        if self.gummel_max_iter < 1 {
            return Err(invalid("gummel_max_iter must be >= 1".into()));
        }
        Ok(())
    }

    /// Robin coefficient `alpha = d / (2 eps_perp)`, in nm per vacuum permittivity.
    pub fn robin_alpha(&self) -> f64 {
        self.thickness / (2.0 * self.eps_perp)
    }

    /// Thermal potential `k_B T / q` in volts.
    pub fn thermal_voltage(&self) -> f64 {
        BOLTZMANN * self.temperature / ELEMENTARY_CHARGE
    }

    /// Composite source scale `q N+ / (eps_0 * 1 nm)` in V/nm.
    ///
    /// With densities measured in units of `N+` and permittivities in units of
    /// `eps_0`, the interface equation reads
    /// `-d eps_par u'' + oxide fluxes = source_scale * (N_dop - rho)`.
    pub fn source_scale(&self) -> f64 {
        ELEMENTARY_CHARGE * self.n_plus / VACUUM_PERMITTIVITY * NM
    }

    /// Current density unit `q mu U_T N+ / (1 nm)`, in A/m: the
    /// Scharfetter-Gummel flux of scaled densities over nm-sized intervals is
    /// multiplied by this to obtain a physical current per unit width.
    pub fn current_scale(&self) -> f64 {
        ELEMENTARY_CHARGE * self.mobility * self.thermal_voltage() * self.n_plus / NM
    }

    /// Channel permittivity seen by the effective 1D equation.
    pub fn channel_permittivity(&self) -> f64 {
        self.eps_par
    }

    /// Drain-source bias.
    pub fn v_ds(&self) -> f64 {
        self.v_drain - self.v_source
    }

    /// Copy of the configuration with the drain set to `V_S + v_ds`.
    pub fn with_bias(&self, v_ds: f64) -> Self {
        let mut cfg = self.clone();
        cfg.v_drain = cfg.v_source + v_ds;
        cfg
    }

    /// Copy with the given grid counts.
    pub fn with_grid(&self, nx: usize, ny: usize, n_gamma: usize) -> Self {
        let mut cfg = self.clone();
        cfg.nx = nx;
        cfg.ny = ny;
        cfg.n_gamma = n_gamma;
        cfg
    }

    /// Contact doping normalised to `N+` at abscissa `x`.
    pub fn scaled_doping(&self, x: f64) -> f64 {
        let (j1, j2) = self.junctions;
        if x > j1 && x < j2 {
            self.n_minus / self.n_plus
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = DeviceConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.mobility, 0.45);
    }

    #[test]
    fn thermal_voltage_at_77k() {
        // 1.380649e-23 * 77 / 1.602176634e-19
        let ut = DeviceConfig::default().thermal_voltage();
        assert!((ut - 6.635_346_6e-3).abs() < 1e-9, "{ut}");
    }

    #[test]
    fn robin_alpha_formula() {
        let mut cfg = DeviceConfig::default();
        cfg.eps_perp = 0.1;
        assert!((cfg.robin_alpha() - 0.2 / 0.2).abs() < 1e-15);
    }

    #[test]
    fn source_scale_value() {
        // q * 1e17 / eps0 = 1.8095e9 V/m = 1.8095 V/nm
        let s = DeviceConfig::default().source_scale();
        assert!((s - 1.809_512_7).abs() < 1e-6, "{s}");
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = DeviceConfig::default();
        cfg.nx = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = DeviceConfig::default();
        cfg.n_gamma = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = DeviceConfig::default();
        cfg.junctions = (40.0, 20.0);
        assert!(cfg.validate().is_err());
        let mut cfg = DeviceConfig::default();
        cfg.n_minus = 2e17;
        assert!(cfg.validate().is_err());
        let mut cfg = DeviceConfig::default();
        cfg.gate_inset = 30.0;
        assert!(cfg.validate().is_err());
    }
}
