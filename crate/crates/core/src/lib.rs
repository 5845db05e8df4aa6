//! Topological-graph navigation from a demonstration tour.
//!
//! A posed tour becomes a directed graph of frames. At run time a camera
//! observation is localized against the tour, a goal frame is chosen by a
//! multimodal model (or a stand-in), and a shortest-path policy emits one
//! robot-centric waypoint per step. A synthetic landmark world drives the
//! whole loop for evaluation.

pub mod eval;
pub mod geometry;
pub mod goalfinder;
pub mod localization;
pub mod policy;
pub mod sim;
pub mod topograph;
pub mod tour;
