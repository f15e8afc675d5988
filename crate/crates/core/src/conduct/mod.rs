//! Monte-Carlo laboratory for detecting collusive conduct.
//!
//! `J` single-product firms face logit demand with an outside good and set
//! prices to maximize joint profit within their group of a partition. A
//! candidate conduct hypothesis is a partition; each one implies different
//! markups, and hence different cost residuals, from the same price and
//! share data.

mod market;
mod model;
mod partition;
mod study;

pub use market::{
    delta_matrix, foc_residual, logit_shares, markup, share_markup, solve_equilibrium_prices,
    Equilibrium, MarketPrimitives, EQUILIBRIUM_MAX_ITER, FOC_TOLERANCE,
};
pub use model::{
    build_instruments, default_conduct_box, simulate_panel, ConductModel, ConductScenario, Market,
    MarketPanel, COST_CHARS, DEMAND_CHARS,
};
pub use partition::{enumerate_partitions, Partition, MAX_FIRMS};
pub use study::{run_conduct_study, ChoiceRow, ConductCell, ConductStudy, ConductStudyConfig, ScoreRow};
