//! Numerical laboratory for the low-Mach, low-Alfvén-number limit of
//! compressible Navier–Stokes–Fourier–MHD.
//!
//! * [`thermo`] — equation of state, entropy, transport laws.
//! * [`fields`] — periodic-horizontal / bounded-vertical grids and calculus.
//! * [`obm`] — the limiting Oberbeck–Boussinesq–MHD solver.
//! * [`mhd`] — the primitive compressible solver on the 2.5D strip.
//! * [`relent`] — relative energy, coercivity and the ε-sweep harness.
//! * [`mms`] — manufactured solutions for both solvers.
//! * [`cli`] — configuration and the command front-end.

pub mod cli;
pub mod error;
pub mod fields;
pub mod mhd;
pub mod mms;
pub mod obm;
pub mod relent;
pub mod thermo;

pub use error::{Error, Result};
