//! Argument parsing, command dispatch and exit codes.

use std::ffi::OsString;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use layerfet_core::analysis::{convergence_slope, IvPoint};
use layerfet_core::Error;

use crate::config::{mode_name, parse_mode, ConfigError, RunConfig};
use crate::output::{create, finish, num, row, emit_solution_csv};
use crate::study::{compare, interface_iv, solve_point, transmission_iv, Study, TableRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// One self-consistent solve at the configured bias.
    Solve,
    /// I-V curve from 0 to V_max.
    Sweep,
    /// Refinement series against the reference grid.
    Converge,
    /// Interface models against the transmission reference.
    Compare,
    /// The three grid studies.
    Tables,
}

#[derive(Debug, Parser)]
#[command(name = "layerfet", version, about = "Interface-reduced Poisson / drift-diffusion solver for single-layer-channel transistors")]
pub struct Args {
    pub command: Command,
    /// INI configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides `key=value` (`section.key` or a bare key).
    #[arg(long = "set", value_name = "KEY=VALUE", num_args = 1.., action = clap::ArgAction::Append)]
    pub overrides: Vec<String>,
    /// Coupling of the oxides to the channel.
    #[arg(long, value_parser = parse_mode_arg)]
    pub mode: Option<layerfet_core::CouplingMode>,
    /// `compare` only: also sweep the I-V curves of all three models.
    #[arg(long)]
    pub iv: bool,
}

fn parse_mode_arg(s: &str) -> Result<layerfet_core::CouplingMode, String> {
    parse_mode(s)
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Solver(Error),
    Io(io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Solver(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "I/O error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Solver(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

fn is_divergence(e: &Error) -> bool {
    match e {
        Error::NotConverged { .. } | Error::DensityOverflow { .. } => true,
        Error::Sweep { source, .. } => is_divergence(source),
        _ => false,
    }
}

fn is_config(e: &Error) -> bool {
    match e {
        Error::InvalidConfig(_) => true,
        Error::Sweep { source, .. } => is_config(source),
        _ => false,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(e) if is_config(e) => 2,
            CliError::Solver(e) if is_divergence(e) => 3,
            _ => 1,
        }
    }
}

/// Resolves the configuration from file, overrides and `--mode`.
pub fn resolve(args: &Args) -> Result<RunConfig, ConfigError> {
    let mut rc = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        rc.apply_override(o)?;
    }
    if let Some(m) = args.mode {
        rc.device.coupling = m;
    }
    rc.validate()?;
    Ok(rc)
}

pub fn execute(args: &Args) -> Result<(), CliError> {
    let rc = resolve(args)?;
    std::fs::create_dir_all(&args.out)?;
    let header = rc.entries();
    let out = args.out.as_path();
    match args.command {
        Command::Solve => {
            let run = solve_point(&rc.device, rc.solver)?;
            emit_solution_csv(out, &header, &run.disc, &run.fields, &run.state)?;
            println!(
                "V_DS = {} V, mode {}: {} Gummel iterations, current {} A/m",
                rc.device.v_ds(),
                mode_name(rc.device.coupling),
                run.state.gummel_iter,
                num(0.0 - run.state.current)
            );
        }
        Command::Sweep => {
            let iv = interface_iv(&rc.device, rc.v_max, rc.solver)?;
            write_iv(&out.join("iv.csv"), &header, &iv)?;
            for p in &iv {
                println!("{:>8} V  {:>14.6e} A/m", num(p.v_ds), p.current);
            }
        }
        Command::Converge => {
            let v = rc.device.v_ds();
            let mut study = Study::new(rc.clone());
            let series = study.series(v)?;
            let mut w = create(
                &out.join("converge.csv"),
                &header,
                &["nx", "ny", "n_gamma", "v_ds", "h", "e_1d", "e_2d", "e_linf", "e_rho", "argmax_x", "argmax_y"],
            )?;
            for (cfg, r) in &series {
                row(
                    &mut w,
                    &[
                        cfg.nx as f64,
                        cfg.ny as f64,
                        cfg.n_gamma as f64,
                        v,
                        r.h,
                        r.e_1d,
                        r.e_2d,
                        r.e_linf,
                        r.e_rho,
                        r.argmax_location[0],
                        r.argmax_location[1],
                    ],
                )?;
            }
            finish(w)?;
            let h: Vec<f64> = series.iter().map(|s| s.1.h).collect();
            let pick = |f: fn(&layerfet_core::analysis::ErrorRecord) -> f64| -> Vec<f64> {
                series.iter().map(|s| f(&s.1)).collect()
            };
            for (name, e) in [
                ("E_1D", pick(|r| r.e_1d)),
                ("E_2D", pick(|r| r.e_2d)),
                ("E_Linf", pick(|r| r.e_linf)),
                ("E_rho", pick(|r| r.e_rho)),
            ] {
                println!("slope {name}: {:.4}", convergence_slope(&h, &e)?);
            }
        }
        Command::Compare => {
            let c = compare(&rc)?;
            for (name, slice) in ["dirichlet", "robin", "transmission"].iter().zip(&c.slices) {
                let mut w = create(&out.join(format!("slice_{name}.csv")), &header, &["y", "u"])?;
                for (y, u) in slice {
                    row(&mut w, &[*y, *u])?;
                }
                finish(w)?;
            }
            let mut w = create(&out.join("compare.csv"), &header, &["model", "u_mid", "gap"])?;
            let gaps = [num(c.gaps[0]), num(c.gaps[1]), num(0.0)];
            for (k, name) in ["dirichlet", "robin", "transmission"].iter().enumerate() {
                w.write_record([name.to_string(), num(c.midpoint[k]), gaps[k].clone()]).map_err(io::Error::from)?;
            }
            finish(w)?;
            println!("gap dirichlet {:.4e} V, robin {:.4e} V", c.gaps[0], c.gaps[1]);
            if args.iv {
                let mut curves = Vec::new();
                for mode in [layerfet_core::CouplingMode::Dirichlet, layerfet_core::CouplingMode::Robin] {
                    let mut cfg = rc.device.clone();
                    cfg.coupling = mode;
                    curves.push(interface_iv(&cfg, rc.v_max, rc.solver)?);
                }
                curves.push(transmission_iv(&rc)?);
                let mut w = create(
                    &out.join("iv_compare.csv"),
                    &header,
                    &["v_ds", "current_dirichlet", "current_robin", "current_transmission"],
                )?;
                for k in 0..curves[0].len() {
                    row(&mut w, &[curves[0][k].v_ds, curves[0][k].current, curves[1][k].current, curves[2][k].current])?;
                }
                finish(w)?;
            }
        }
        Command::Tables => {
            let mut study = Study::new(rc.clone());
            for t in 1..=3 {
                let rows = study.table(t)?;
                write_table(&out.join(format!("table{t}.csv")), &header, &rows)?;
                let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
                println!("table {t}: {} rows, {failed} failed", rows.len());
            }
        }
    }
    Ok(())
}

pub fn write_iv(path: &Path, header: &[(String, String)], iv: &[IvPoint]) -> io::Result<()> {
    let mut w = create(path, header, &["v_ds", "current", "flux_spread"])?;
    for p in iv {
        row(&mut w, &[p.v_ds, p.current, p.flux_spread])?;
    }
    finish(w)
}

pub fn write_table(path: &Path, header: &[(String, String)], rows: &[TableRow]) -> io::Result<()> {
    let mut w = create(
        path,
        header,
        &["nx", "ny", "n_gamma", "v_ds", "e_1d", "e_2d", "e_rho", "e_linf", "argmax_x", "argmax_y", "status"],
    )?;
    for r in rows {
        let mut rec = vec![r.nx.to_string(), r.ny.to_string(), r.n_gamma.to_string(), num(r.v_ds)];
        match &r.outcome {
            Ok(e) => {
                rec.extend([e.e_1d, e.e_2d, e.e_rho, e.e_linf, e.argmax_location[0], e.argmax_location[1]].map(num));
                rec.push("ok".into());
            }
            Err(msg) => {
                rec.extend(std::iter::repeat_n(String::new(), 6));
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Entry point of the binary.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("layerfet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
