//! Run manifests: every artifact of a run cross-references the manifest
//! hash, which covers the input and configuration but never timestamps, so
//! identical invocations produce byte-identical artifacts.

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub input_path: String,
    pub format: String,
    pub mode: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub code_version: String,
    pub config_hash: String,
    pub timestamp_unix: u64,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(
        input_path: &std::path::Path,
        format: &str,
        mode: &str,
        config_path: Option<&std::path::Path>,
        output_dir: &std::path::Path,
        config: serde_json::Value,
    ) -> Self {
        let hash = config_hash(&input_path.display().to_string(), format, mode, &config);
        RunManifest {
            schema_version: crate::SCHEMA_VERSION,
            input_path: input_path.display().to_string(),
            format: format.to_string(),
            mode: mode.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            output_dir: output_dir.display().to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
        }
    }
}

/// FNV-1a over the canonical configuration rendering.
pub fn config_hash(input: &str, format: &str, mode: &str, config: &serde_json::Value) -> String {
    let payload = format!("{input}\n{format}\n{mode}\n{config}");
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in payload.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
