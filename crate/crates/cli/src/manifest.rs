//! Run manifests and config-file resolution.
//!
//! A manifest records everything needed to reproduce a run: the subcommand,
//! the fully resolved configuration (after file + flag merging), a hash of
//! that configuration, and digests of the input files. Manifests carry no
//! timestamps or host details, so a re-run writes a byte-identical one.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Digest of one input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    tool_version: &'static str,
    subcommand: &'a str,
    config: &'a C,
    config_sha256: String,
    inputs: &'a [FileDigest],
    outputs: &'a [String],
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Digest of a file's contents, streamed.
pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex,
    })
}

/// Serializes the resolved config and writes `manifest.json` into `out_dir`.
pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    subcommand: &str,
    config: &C,
    inputs: &[FileDigest],
    outputs: &[String],
) -> Result<()> {
    let config_json = serde_json::to_vec(config)?;
    let manifest = Manifest {
        tool: "tstok",
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config,
        config_sha256: sha256_hex(&config_json),
        inputs,
        outputs,
    };
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Loads a config file. Accepts either a bare config object or a previously
/// written manifest (in which case its embedded `config` is used), so
/// `--config <run>/manifest.json` replays a run.
pub fn load_config<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let config_value = match value.get("config") {
        Some(inner) if value.get("subcommand").is_some() => inner.clone(),
        _ => value,
    };
    serde_json::from_value(config_value)
        .with_context(|| format!("interpreting config in {}", path.display()))
}

/// Output directory: explicit flag, else `$TSTOK_OUT/<subcommand>`, else
/// `runs/<subcommand>`. Created if missing.
pub fn resolve_out_dir(flag: Option<PathBuf>, subcommand: &str) -> Result<PathBuf> {
    let dir = flag.unwrap_or_else(|| {
        let root = std::env::var_os("TSTOK_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(subcommand)
    });
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}
