//! From-scratch training and evaluation of end-to-end memory networks
//! (plain and gated) on bAbI-style question answering and goal-oriented
//! dialog response ranking, with full introspection of attention and gate
//! activations.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod datagen;
pub mod encoding;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;
