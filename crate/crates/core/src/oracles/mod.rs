//! Exact, independent reference computations.
//!
//! Nothing in here is used by the training code paths; these routines exist
//! to check them.

pub mod discrete;
pub mod gaussian;
pub mod numeric;

pub use discrete::{
    base_joint, kl_to_base, nonmemoryless_terminal_cost_check, product_coupling, random_problem,
    sinkhorn_static_sb, soc_tilted_joint, total_variation, DiscreteBridgeProblem,
    SinkhornSolution, TerminalCostCheck, TiltedJoint,
};
pub use gaussian::gaussian_bridge_conditioning;
pub use numeric::{finite_diff_grad, max_rel_err, quadrature};
