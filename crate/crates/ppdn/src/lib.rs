//! Desk-scale pair-supervised training library.
//!
//! A small stack built around one idea: train a classifier on
//! (hard, easy) sample pairs where the easy sample's intermediate features
//! supervise the hard sample's, and suppress the easy branch's gradient so
//! the pull is one-directional.
//!
//! Layers of the stack:
//! - [`tensor`] / [`graph`]: dense f64 tensors and a recorded-tape
//!   reverse-mode differentiation engine with a gradient-gate primitive.
//! - [`gradcheck`]: central finite-difference validation of tape gradients,
//!   gate-aware.
//! - [`network`]: configurable MLP exposing logits and the Ω-enrolled hidden
//!   features per input.
//! - [`objective`]: the composite loss — normalized feature matching across
//!   the pair, two recognition cross-entropies, weight-norm penalty.
//! - [`optimizer`]: plain SGD and its peak-gradient-suppressed variant.
//! - [`descent`]: numerical checks that the suppressed direction still
//!   descends (aggregates A and B, the dot-product identity, the
//!   ‖B‖cosθ < ‖A‖ condition).
//! - [`synth`]: synthetic intensity-ramp sequences, pairing, evaluation
//!   slices, subject-disjoint k-fold splits, and peak auto-selection.

pub mod descent;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod network;
pub mod objective;
pub mod optimizer;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{GateMode, Graph, NodeId};
pub use tensor::{l2_normalize, Tensor};
