pub mod export;
pub mod run;
pub mod verify;

use anyhow::{Context, Result};
use qflow_core::integrals::{parse_fcidump, parse_synthetic, IntegralStore};

use crate::FileFormat;

/// Decide the input format, preferring the explicit flag and falling back to
/// the file extension (".json" means synthetic JSON, anything else FCIDUMP).
pub fn resolve_format(path: &std::path::Path, flag: Option<FileFormat>) -> FileFormat {
    flag.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => FileFormat::Json,
            _ => FileFormat::Fcidump,
        }
    })
}

pub fn load_store(path: &std::path::Path, format: FileFormat) -> Result<IntegralStore> {
    let text = std::fs::read_to_string(path)
        .map_err(qflow_core::Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    let store = match format {
        FileFormat::Fcidump => parse_fcidump(&text)?,
        FileFormat::Json => parse_synthetic(&text)?,
    };
    Ok(store)
}

pub fn format_name(format: FileFormat) -> &'static str {
    match format {
        FileFormat::Fcidump => "fcidump",
        FileFormat::Json => "json",
    }
}
