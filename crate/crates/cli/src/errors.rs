use std::fmt;

/// A problem with the configuration document or the paths it references.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<pathssl_core::Error>() {
            return match e {
                pathssl_core::Error::Numerical(_) => EXIT_NUMERICAL,
                pathssl_core::Error::InfeasibleOverlap { .. } => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

/// Fails with a config error unless `path` exists.
pub fn require_path(path: &std::path::Path, what: &str) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError(format!("{what} {} does not exist", path.display())))
    }
}
