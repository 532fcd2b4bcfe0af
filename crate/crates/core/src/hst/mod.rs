//! Hierarchically well-separated trees: the induced metric, tree complexity,
//! construction from a finite metric, and reshaping for a horizon.

mod build;
mod reshape;
mod tree;

pub use build::{build_depth, build_hst, verify_dominance, DominanceReport, Violation};
pub use reshape::{
    check_conditions, check_conditions_with, reshape_traced, reshape_well_behaved, ConditionReport,
    ConditionSet, ReshapeStep,
};
pub use tree::{level_scale, HstTree, LevelTerm, TreeComplexity, TreeFile, TreeFileNode};
