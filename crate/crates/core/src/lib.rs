pub mod persona;
pub mod provider;
pub mod tree;
pub mod grounding;
pub mod embed;
pub mod pace;
pub mod baselines;
pub mod bench;
pub mod synthetic;
