//! Output manifests: every run lists its data files with content hashes so
//! reproductions can be compared byte for byte.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// FNV-1a over the file bytes; enough to pin accidental drift, and
/// dependency-free so the hash itself never changes definition.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Writes `manifest.txt` into `dir`: a header echoing the resolved
/// parameters, then `<hash>  <file>` lines sorted by file name. No
/// timestamps — identical runs must produce identical manifests.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    params: &[(String, String)],
    files: &[PathBuf],
) -> std::io::Result<PathBuf> {
    let mut body = String::new();
    writeln!(body, "command = {command}").unwrap();
    writeln!(body, "seed = {seed}").unwrap();
    for (k, v) in params {
        writeln!(body, "{k} = {v}").unwrap();
    }
    writeln!(body).unwrap();

    let mut rows: Vec<(String, u64)> = Vec::with_capacity(files.len());
    for file in files {
        let bytes = std::fs::read(file)?;
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((name, fnv1a64(&bytes)));
    }
    rows.sort();
    for (name, hash) in rows {
        writeln!(body, "{hash:016x}  {name}").unwrap();
    }

    let path = dir.join("manifest.txt");
    let mut out = std::fs::File::create(&path)?;
    out.write_all(body.as_bytes())?;
    Ok(path)
}
