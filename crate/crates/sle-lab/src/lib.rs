//! SLE with internal degrees of freedom.
//!
//! The library is organised in layers:
//!
//! * [`scalar`], [`series`], [`biseries`] — exact/float scalars and
//!   truncated formal series, the algebraic substrate;
//! * [`algebra`] — exact computations on graded modules (Virasoro Verma,
//!   Heisenberg Fock, level-1 affine sl₂ via the lattice realization);
//! * [`sde`] — the coupled Loewner + internal SDE system and its two
//!   integrators;
//! * [`martingales`] — closed-form local-martingale observables and the
//!   statistical drift certification;
//! * [`symmetry`] — the affine symmetry operators on the polynomial space
//!   of martingale generating functions;
//! * [`cli`] — experiment configuration, suite drivers, and report output.

pub mod algebra;
pub mod biseries;
pub mod cli;
pub mod martingales;
pub mod scalar;
pub mod sde;
pub mod series;
pub mod symmetry;
