//! Numerical laboratory for extensions of finite-dimensional normed spaces.
//!
//! The crate models quasi-linear maps and their factor systems, the twisted
//! sum they generate, the algebra of extensions (pushout, pullback, Baer sum,
//! congruence), Enflo's amplification operator with certified distance
//! estimates, and the classification of extensions of finite group
//! representations by a pair (factor system, cocycle).

pub mod enflo;
pub mod error;
pub mod extops;
pub mod grouprep;
pub mod linalg;
pub mod maps;
pub mod spaces;
pub mod twisted;

pub use enflo::{DistanceEstimate, GrowthParams};
pub use error::{Error, Result};
pub use extops::{Extension, RandomExtension, Selection, SelectionMode};
pub use grouprep::{Cocycle, FiniteGroup, Representation};
pub use linalg::{Matrix, Vector};
pub use maps::{parse_map, rho, FactorSystem, HomMap, RhoOf};
pub use spaces::{NormedSpace, ZeroSumConfig};
pub use twisted::{Pair, TwistedSpace};
