pub mod assembly;
pub mod checks;
pub mod components;
pub mod graph;
pub mod netlist;
pub mod ph_core;
pub mod solver;
