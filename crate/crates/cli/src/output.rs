//! Atomic file output and per-item seed derivation.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, Staged};

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).stage("write")?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).stage("write")?;
    std::fs::rename(&tmp, path).stage("write")
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).stage("write")?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Creates `out_dir` and records the resolved configuration in it.
pub fn prepare_out_dir(out_dir: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).stage("output")?;
    let mut text = cfg.to_json();
    text.push('\n');
    write_atomic(&out_dir.join("config.json"), text.as_bytes())
}

/// Seed for one work item: the first 8 bytes of
/// `SHA-256(master ‖ stage ‖ item)`, little-endian.
pub fn derive_seed(master: u64, stage: &str, item: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update(item.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// `dir/name` with characters unsafe in file names replaced.
pub fn item_path(dir: &Path, name: &str, ext: &str) -> PathBuf {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(format!("{safe}.{ext}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_item_specific() {
        let a = derive_seed(7, "generate", "img1#0");
        assert_eq!(a, derive_seed(7, "generate", "img1#0"));
        assert_ne!(a, derive_seed(7, "generate", "img1#1"));
        assert_ne!(a, derive_seed(8, "generate", "img1#0"));
        assert_ne!(derive_seed(7, "ab", "c"), derive_seed(7, "a", "bc"));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn item_paths_are_sanitized() {
        assert_eq!(
            item_path(Path::new("d"), "a/b c", "csv"),
            PathBuf::from("d/a_b_c.csv")
        );
    }
}
