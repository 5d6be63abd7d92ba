//! Simulation and analysis toolkit for a two-layer segmented microchip Paul
//! trap holding a single ⁴⁰Ca⁺ ion.

// `!(x > 0.0)` is the NaN-rejecting form used for input checks throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic;
pub mod config;
pub mod constants;
pub mod error;
pub mod estimators;
pub mod field;
pub mod geometry;
pub mod io;
pub mod numerics;
pub mod report;
pub mod rf;
pub mod sequence;
pub mod waveform;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/rf.md")]
    mod rf {}
    #[doc = include_str!("../../../book/src/atomic.md")]
    mod atomic {}
    #[doc = include_str!("../../../book/src/sequences.md")]
    mod sequences {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/waveforms.md")]
    mod waveforms {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
