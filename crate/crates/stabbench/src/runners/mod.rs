//! The experiment runners behind the CLI subcommands.

mod sqrt;
mod sweep;
mod variance_table;

pub use sqrt::run_sqrt_divergence;
pub use sweep::{run_eps_sweep, run_gradscale_sweep};
pub use variance_table::{effective_valid_probability, run_variance_nan_table};
