//! Numerical laboratory for finite energy-measure spaces.
//!
//! Builds transport distances (static Kantorovich, dynamic Benamou-Brenier
//! type, Hamilton-Jacobi duals), heat semigroups and entropy functionals on
//! finite weighted graphs, and checks the inequalities that link them with
//! certified lower/upper bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod barrier;
pub mod certified;
pub mod dynamic;
pub mod error;
pub mod flows;
pub mod heat;
pub mod intrinsic;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod space;
pub mod spaces;
pub mod transport;

pub use certified::CertifiedInterval;
pub use error::{Error, Result};
pub use heat::SpectralSemigroup;
pub use space::{Density, FiniteEnergySpace, Function, MassVector};
pub use transport::ExtendedDistanceMatrix;
