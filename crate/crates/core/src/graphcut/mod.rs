//! Graph-cut machinery for binary region refinement.

mod color_gmm;
mod grabcut;
mod maxflow;

pub use color_gmm::{fit_color_gmm, ColorComponent, ColorGmm, ColorGmmFit};
pub use grabcut::{
    fit_models, grabcut_refine, pairwise_terms, terminal_costs, GrabcutConfig, GrabcutOutput,
    GrabcutStep, GridEnergy, MAX_TERMINAL,
};
pub use maxflow::{max_flow, max_flow_with, FlowNetwork, MaxFlowResult, MaxFlowSolver};
