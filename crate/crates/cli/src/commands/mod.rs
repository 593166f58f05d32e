//! One module per subcommand; each exposes its clap `Args` struct and a
//! `run` entry point.

pub mod atlas;
pub mod baseline;
pub mod finetune;
pub mod gen_data;
pub mod lr_scan;
pub mod render;
pub mod scan;
pub mod train;
pub mod viz_neurons;
