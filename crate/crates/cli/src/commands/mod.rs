pub mod eval;
pub mod fitgrid;
pub mod generate;
pub mod matching;
pub mod posegraph;
pub mod propagate;
pub mod reconstruct;
