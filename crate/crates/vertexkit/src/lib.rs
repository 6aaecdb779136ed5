//! Exact-arithmetic engine for the classical vertex group.
//!
//! The library is organized around a handful of algebraic layers:
//!
//! * [`hopf`] — the divided-power Hopf algebra `H = Q[T]` with basis
//!   `D(i) = T^i / i!`.
//! * [`series`] — truncated multivariate series over a coefficient module,
//!   with formal negative powers of variable differences and the
//!   expansion/substitution maps between them.
//! * [`vertexgroup`] — the ring of singular functions `K` (Laurent
//!   polynomials within a window) with its `H`-action, antipode and pairing.
//! * [`trees`] — rooted planar trees, refinement and grafting.
//! * [`multimaps`] — tree-indexed singular multilinear maps, their
//!   composition, refinement and conversion to/from vertex operators.
//! * [`valg`] — vertex algebras as data, axiom verification, and two
//!   built-in models (a weight-truncated free boson and a holomorphic
//!   truncated polynomial algebra).
//! * [`cli`] — the batch command-line front end.
//!
//! All arithmetic is over exact rationals; every equality assertion is made
//! inside an explicit truncation window so that finite truncation is never
//! silent.

pub mod cli;
pub mod hopf;
pub mod multimaps;
pub mod series;
pub mod trees;
pub mod util;
pub mod valg;
pub mod vertexgroup;

pub use util::Rat;
