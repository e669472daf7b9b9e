//! Optional `--config <file>` support: a flat TOML table of parameter
//! defaults, overridden by any explicitly passed flag.

use std::path::Path;

use serde::de::DeserializeOwned;

use seldkit_core::{Error, Result};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            toml::from_str(&text).map_err(|e| Error::Serialization(format!(
                "config {}: {e}",
                p.display()
            )))
        }
    }
}

/// Flag beats config file beats built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
