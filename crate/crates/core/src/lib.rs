//! Event-camera motion capture with blinking LED markers.
//!
//! Events are accumulated into a signed delta-time volume, blinking pixels
//! are identified by their period, clustered and tracked per marker, and the
//! rig pose is solved with SQPnP or EPnP. A synthetic event simulator
//! provides ground truth for the whole chain.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod detector;
pub mod event;
pub mod pipeline;
pub mod pose;
pub mod sdtv;
pub mod sim;
