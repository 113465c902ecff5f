pub mod control;
pub mod env;
pub mod lattice;
pub mod optimizer;
pub mod robot;
