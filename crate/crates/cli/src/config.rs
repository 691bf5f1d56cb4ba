//! INI-style run configuration.
//!
//! Three sections, `[device]`, `[solver]` and `[sweep]`, hold `key = value`
//! lines. `#` and `;` start comments. Keys missing from the file keep the
//! defaults of [`DeviceConfig::default`]. The mobility is read in cm^2/(V s).

use std::fmt;
use std::path::Path;

use layerfet_core::saddle::SolverKind;
use layerfet_core::{CouplingMode, DeviceConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Device parameters plus the settings of the study drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub device: DeviceConfig,
    /// Mobility as given, cm^2/(V s); `device.mobility` holds it in SI.
    pub mobility_cm2: f64,
    pub solver: SolverKind,
    /// Reference grid of the convergence studies (`Nx = N_gamma`, `Ny`).
    pub reference_nx: usize,
    pub reference_ny: usize,
    /// Transmission mesh: cells along the channel and per oxide slab.
    pub transmission_nx: usize,
    pub transmission_ny: usize,
    pub v_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            device: DeviceConfig::default(),
            mobility_cm2: 4.5e3,
            solver: SolverKind::Schur,
            reference_nx: 960,
            reference_ny: 64,
            transmission_nx: 960,
            transmission_ny: 16,
            v_max: 0.1,
        }
    }
}

type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;
type Getter = fn(&RunConfig) -> String;

struct Key {
    section: &'static str,
    name: &'static str,
    set: Setter,
    get: Getter,
}

fn float(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("'{v}' is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{v}' is not finite"))
    }
}

fn count(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("'{v}' is not a non-negative integer"))
}

fn show(x: f64) -> String {
    crate::output::num(x)
}

macro_rules! real {
    ($section:literal, $name:literal, $($field:ident).+) => {
        Key {
            section: $section,
            name: $name,
            set: |c, v| {
                c.$($field).+ = float(v)?;
                Ok(())
            },
            get: |c| show(c.$($field).+),
        }
    };
}

macro_rules! integer {
    ($section:literal, $name:literal, $($field:ident).+) => {
        Key {
            section: $section,
            name: $name,
            set: |c, v| {
                c.$($field).+ = count(v)?;
                Ok(())
            },
            get: |c| c.$($field).+.to_string(),
        }
    };
}

const KEYS: &[Key] = &[
    real!("device", "L", device.length),
    real!("device", "l", device.height),
    real!("device", "d", device.thickness),
    real!("device", "x_G", device.gate_inset),
    real!("device", "eps_ox", device.eps_ox),
    real!("device", "eps_par", device.eps_par),
    real!("device", "eps_perp", device.eps_perp),
    real!("device", "N_plus", device.n_plus),
    real!("device", "N_minus", device.n_minus),
    Key {
        section: "device",
        name: "junctions",
        set: |c, v| {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(format!("'{v}' is not a pair 'x1, x2'"));
            }
            c.device.junctions = (float(parts[0])?, float(parts[1])?);
            Ok(())
        },
        get: |c| format!("{}, {}", show(c.device.junctions.0), show(c.device.junctions.1)),
    },
    real!("device", "T", device.temperature),
    Key {
        section: "device",
        name: "mu",
        set: |c, v| {
            let mu = float(v)?;
            c.mobility_cm2 = mu;
            c.device.mobility = mu * 1e-4;
            Ok(())
        },
        get: |c| show(c.mobility_cm2),
    },
    real!("device", "V_S", device.v_source),
    real!("device", "V_D", device.v_drain),
    real!("device", "V_G", device.v_gate),
    real!("device", "smoothing_a", device.smoothing_width),
    Key {
        section: "solver",
        name: "coupling_mode",
        set: |c, v| {
            c.device.coupling = parse_mode(v)?;
            Ok(())
        },
        get: |c| mode_name(c.device.coupling).to_string(),
    },
    Key {
        section: "solver",
        name: "solver",
        set: |c, v| {
            c.solver = match v.to_ascii_lowercase().as_str() {
                "schur" => SolverKind::Schur,
                "monolithic" => SolverKind::Monolithic,
                _ => return Err(format!("'{v}' is neither 'schur' nor 'monolithic'")),
            };
            Ok(())
        },
        get: |c| match c.solver {
            SolverKind::Schur => "schur".into(),
            SolverKind::Monolithic => "monolithic".into(),
        },
    },
    integer!("solver", "Nx", device.nx),
    integer!("solver", "Ny", device.ny),
    integer!("solver", "N_gamma", device.n_gamma),
    real!("solver", "gummel_tol", device.gummel_tol),
    integer!("solver", "gummel_max_iter", device.gummel_max_iter),
    integer!("solver", "reference_nx", reference_nx),
    integer!("solver", "reference_ny", reference_ny),
    integer!("solver", "transmission_nx", transmission_nx),
    integer!("solver", "transmission_ny", transmission_ny),
    real!("sweep", "dV_step", device.dv_step),
    real!("sweep", "V_max", v_max),
];

pub fn parse_mode(v: &str) -> Result<CouplingMode, String> {
    match v.to_ascii_lowercase().as_str() {
        "dirichlet" => Ok(CouplingMode::Dirichlet),
        "robin" => Ok(CouplingMode::Robin),
        _ => Err(format!("'{v}' is neither 'dirichlet' nor 'robin'")),
    }
}

pub fn mode_name(m: CouplingMode) -> &'static str {
    match m {
        CouplingMode::Dirichlet => "dirichlet",
        CouplingMode::Robin => "robin",
    }
}

const SECTIONS: [&str; 3] = ["device", "solver", "sweep"];

impl RunConfig {
    /// Parses and validates a configuration file body.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<&str> = None;
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(n, format!("malformed section header '{line}'")))?
                    .trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .copied()
                        .find(|s| *s == name)
                        .ok_or_else(|| ConfigError::at(n, format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(n, format!("expected 'key = value', found '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| ConfigError::at(n, format!("key '{key}' outside of any section")))?;
            let entry = KEYS
                .iter()
                .find(|k| k.section == sec && k.name == key)
                .ok_or_else(|| ConfigError::at(n, format!("unknown key '{key}' in [{sec}]")))?;
            if seen.contains(&(sec, entry.name)) {
                return Err(ConfigError::at(n, format!("duplicate key '{key}' in [{sec}]")));
            }
            seen.push((sec, entry.name));
            (entry.set)(&mut cfg, value).map_err(|m| ConfigError::at(n, format!("{key}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override. `key` is either `section.key` or a
    /// bare key name.
    pub fn apply_override(&mut self, item: &str) -> Result<(), ConfigError> {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::general(format!("override '{item}' is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let entry = match key.split_once('.') {
            Some((sec, name)) => KEYS.iter().find(|k| k.section == sec && k.name == name),
            None => KEYS.iter().find(|k| k.name == key),
        }
        .ok_or_else(|| ConfigError::general(format!("override '{item}': unknown key '{key}'")))?;
        (entry.set)(self, value).map_err(|m| ConfigError::general(format!("override '{item}': {m}")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.device.validate().map_err(|e| ConfigError::general(e.to_string()))?;
        if !(self.v_max >= 0.0) {
            return Err(ConfigError::general(format!("V_max = {} must be >= 0", self.v_max)));
        }
        if self.reference_nx < 2 || self.reference_ny < 1 {
            return Err(ConfigError::general("reference grid is too small".to_string()));
        }
        if self.transmission_nx < 2 || self.transmission_ny < 1 {
            return Err(ConfigError::general("transmission mesh is too small".to_string()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|k| (format!("{}.{}", k.section, k.name), (k.get)(self))).collect()
    }
}
