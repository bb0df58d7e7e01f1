#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attacks;
pub mod desk;
pub mod folding;
pub mod model;
pub mod numerics;
pub mod penalty_sqp;
pub mod qp;
pub mod verify;
