//! Equilibria of coupled cubic Schrödinger systems on radial domains with
//! componentwise-prescribed nodal numbers, found by integrating the associated
//! parabolic flow on the boundary of the basin of attraction of the origin.

pub mod basin;
pub mod cli;
pub mod config;
pub mod error;
pub mod field;
pub mod flow;
pub mod grid;
pub mod io;
pub mod newton;
pub mod nodal;
pub mod search;
pub mod seeds;
pub mod system;
pub mod verify;

pub use error::{NodalError, Result};
