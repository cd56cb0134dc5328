//! Full and pocket CNN architectures: graph construction, cost accounting,
//! a small reverse-mode autodiff engine for training them, the geometric
//! multigrid V-cycle they mirror, and memory/time profiling.

pub mod archgraph;
pub mod bench;
pub mod costmodel;
pub mod data;
pub mod io;
pub mod multigrid;
pub mod tensor;
pub mod trainer;
