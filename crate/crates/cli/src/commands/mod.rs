pub mod bolus;
pub mod data;
pub mod evaluate;
pub mod explain;
pub mod prepare;
pub mod train;

use std::path::PathBuf;

use crate::config::RunConfig;

/// What every command gets: the working directory and the resolved config.
pub struct Context {
    pub dir: PathBuf,
    pub cfg: RunConfig,
    pub quiet: bool,
}

impl Context {
    /// Progress line on stderr; stdout is reserved for machine-readable output.
    pub fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}
