pub mod comparison;
pub mod converse;
pub mod csvfmt;
pub mod experiment;
pub mod linalg;
pub mod lyapunov;
pub mod models;
pub mod probes;
pub mod systems;
