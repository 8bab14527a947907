pub mod algorithms;
pub mod comm;
pub mod data;
pub mod harness;
pub mod models;
pub mod rng;
pub mod robust;
pub mod topology;
