pub mod band;
pub mod control;
pub mod geometry;
pub mod param_space;
pub mod path;
pub mod sim;
pub mod supervisor;
pub mod tracking;
pub mod vehicle;
