//! Reverse-mode differentiation over coarse pipeline operators, and a
//! finite-difference oracle for checking the hand-written adjoints.

mod gradcheck;
pub mod ops;
mod tape;

pub use gradcheck::{finite_difference_check, BlockReport, GradCheckOptions, GradPair, GradientReport};
pub use tape::{DiffBuffer, Operator, Tape, Var};
