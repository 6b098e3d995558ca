//! Design-based estimation of the total treatment effect (TTE) in randomized
//! experiments with neighborhood interference.
//!
//! The crate covers the whole pipeline:
//!
//! * [`graph`]: directed interference graphs with mandatory self-loops and the
//!   Erdős–Rényi / soft random geometric generators.
//! * [`moments`]: Bernoulli designs and closed-form expectations of products of
//!   centered treatment weights.
//! * [`outcome`]: low-order interaction outcome models and synthetic coefficient
//!   generators.
//! * [`estimators`]: DM, Lin, SNIPE and its covariate-adjusted variants
//!   (Reg-SNIPE, VIM-SNIPE).
//! * [`oracle`]: exact moments by exhaustive enumeration of assignments.
//! * [`sim`]: the Monte Carlo harness and its CSV outputs.
//!
//! ```
//! use snipe::{estimators, toy};
//!
//! let (model, x, design) = toy::model();
//! // Treat units 0 and 1, leave unit 2 in control.
//! let z = vec![true, true, false];
//! let ds = toy::dataset(&model, &x, &design, z);
//! let est = estimators::snipe(&ds);
//! assert!((est.point_estimate - 3.0).abs() < 1e-12);
//! ```

pub mod error;
pub mod estimators;
pub mod graph;
pub mod linalg;
pub mod moments;
pub mod oracle;
pub mod outcome;
pub mod sim;
pub mod stats;
pub mod subset;
pub mod toy;
pub mod validate;

pub use error::{Error, Result};

pub use estimators::{Dataset, EstimateReport, Estimator};
pub use graph::Graph;
pub use moments::Design;
pub use outcome::InteractionModel;

pub use subset::Subset;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/graphs.md")]
    struct Graphs;
    #[doc = include_str!("../../../book/src/outcomes.md")]
    struct Outcomes;
    #[doc = include_str!("../../../book/src/snipe.md")]
    struct Snipe;
    #[doc = include_str!("../../../book/src/adjustment.md")]
    struct Adjustment;
    #[doc = include_str!("../../../book/src/oracle.md")]
    struct Oracle;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
}
