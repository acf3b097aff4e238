//! Shaped arrays, learnable parameters, reverse-mode differentiation and the
//! attention building blocks.

pub mod array;
pub mod attention;
pub mod blocks;
pub mod graph;
pub mod params;

pub use array::FeatureArray;
pub use attention::{attention, AttentionMask, EdgeSet, EdgeSetBuilder};
pub use blocks::{maxpool_polyline, InteractionBlock, LayerNorm, Linear, Mlp};
pub use graph::{Gradients, Graph, NllPoint, Var, PROB_FLOOR};
pub use params::{Init, ParamEntry, ParamId, ParameterSet};
