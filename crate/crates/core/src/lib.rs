//! Finite-element solver for the interface-reduced Poisson problem of a
//! transistor whose channel is a single-layer material sandwiched between two
//! oxide slabs.
//!
//! The two oxide rectangles carry P1 Laplace problems, the channel is an
//! effective 1D Poisson equation on the line `y = 0`, and the three fields are
//! glued by Lagrange multipliers (plain continuity or a Robin condition). The
//! resulting 5x5 block saddle-point system is solved either monolithically or
//! through its interface Schur complement. Electron transport on the channel
//! is a Scharfetter-Gummel drift-diffusion model coupled by Gummel iteration,
//! and a resolved transmission-problem solver serves as a reference.
//!
//! The crate is `no_std` and only needs `alloc`. Units throughout: lengths in
//! nm, potentials in V, permittivities in multiples of the vacuum permittivity
//! and surface densities in units of the contact doping `N+`.
#![no_std]

extern crate alloc;

pub mod analysis;
pub mod assembly;
pub mod config;
pub mod error;
pub mod mesh;
pub mod quadrature;
pub mod saddle;
pub mod sparse;
pub mod transmission;
pub mod transport;

pub use config::{CouplingMode, DeviceConfig};
pub use error::{Error, Result};
pub use mesh::{BoundaryTag, InterfaceGrid, Mesh2D, Subdomain};
pub use saddle::{Discretization, SolutionFields};
