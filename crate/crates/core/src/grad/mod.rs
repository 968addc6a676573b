//! Reverse-mode gradient of the episode objective with respect to the adapter
//! parameters and the prompt residual, plus a central-difference verifier.

mod objective;
pub mod ops;

pub use objective::{
    backward, backward_variant, fd_check, fd_check_with, forward_objective, forward_with_params, BackwardVariant,
    EpisodeConstants, FdReport, Gradients, Tape,
};
