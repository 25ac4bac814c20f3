//! Core of a desk-scale DETR-style detector trained with one primary
//! one-to-one branch and several low-rank auxiliary branches, each supervised
//! by its own one-to-many label assignment.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs and an explicit seed; file formats, the command line
//! and thread-level parallelism live in the `multiassign` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assignment;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
