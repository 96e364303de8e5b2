//! Bers quasiforms and classical differentials on Schottky-uniformized
//! Riemann surfaces.
//!
//! A genus-`g` surface is presented by `g` loxodromic generators pairing
//! `2g` disjoint disks. Everything downstream is built from the truncated
//! sewing matrices assembled in [`sewing`]: the Bers quasiform, the weight-N
//! bidifferential, the holomorphic spanning forms, the classical N=1 objects
//! in [`classical`], the determinant routes in [`zeta`] and the moduli
//! variation operators in [`varops`].

pub mod classical;
pub mod kernels;
pub mod mobius;
pub mod schottky;
pub mod sewing;
pub mod varops;
pub mod zeta;

mod error;

pub use error::{Error, Result};
pub use num_complex::Complex64 as Cx;
