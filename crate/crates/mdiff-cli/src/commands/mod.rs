//! The five pipeline stages, one module per subcommand.

pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod report;
pub mod train;
