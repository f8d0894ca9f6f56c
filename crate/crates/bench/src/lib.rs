//! Library side of the `sbattn` command: matrix files, run settings, the
//! threshold sweep, entry histograms and the verification suite.

pub mod cli;
pub mod config;
pub mod dist;
pub mod io;
pub mod sweep;
pub mod verify;
