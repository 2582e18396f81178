//! Layered lithium-ion cell simulator with a regularized kinetic source
//! and a lifespan bound evaluator.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod lifespan;
pub mod linalg;
pub mod parabolic;
pub mod params;
pub mod reaction;
pub mod verify;
