//! Collaborative stereo perception for a pair of aerial agents: simulation, relative
//! pose estimation, cross-agent association, joint triangulation and dense depth fitting.

pub mod densefit;
pub mod geom;
pub mod lsq;
pub mod seed;
pub mod sim;
pub mod triangulate;
pub mod relpose;
pub mod timesync;
pub mod assoc;
pub mod analysis;
pub mod io;
pub mod pipeline;
