pub mod bagging;
pub mod cem;
pub mod cli;
pub mod data;
pub mod error;
pub mod frame;
pub mod gmm;
pub mod gmr;
pub mod manifold;
pub mod persist;
pub mod tpgmm;
