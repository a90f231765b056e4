pub mod nn;
pub mod physics;
pub mod signal;
pub mod sim;
pub mod sindy;
pub mod train;
pub mod uq;
