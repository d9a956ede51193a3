//! Closed-loop control of a grid-connected modular multilevel converter (MMC).
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! pieces: the Oustaloup fractional-order operator, the interval type-II fuzzy
//! gain scheduler, the FOPI/FOFPI current controllers, the MMC average model,
//! harmonic analysis, the whale optimization algorithm and the fixed-step
//! scenario runner that wires them together. File formats and the command line
//! live in the `mmctune` companion crate.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod controllers;
mod error;
pub mod fracorder;
pub mod it2fis;
pub mod mmcplant;
pub mod signals;
pub mod simkit;
pub mod woa;

pub use error::{Error, Result};
