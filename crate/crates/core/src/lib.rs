pub mod autodiff;
pub mod envs;
pub mod models;
pub mod agent;
pub mod theory;
pub mod harness;
