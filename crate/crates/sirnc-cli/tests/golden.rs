//! Golden regression over every reproduction target.
//!
//! The qualitative figure families have no tabulated values to assert
//! against, so their exact curves are pinned by content hash instead: any
//! change to the emitted bytes must be deliberate. Regenerate the golden
//! list after an intentional change with
//!
//! ```sh
//! sirnc reproduce all --quiet --out /tmp/golden_gen
//! for d in /tmp/golden_gen/*/; do
//!   id=$(basename "$d")
//!   grep -E "^[0-9a-f]{16}  " "$d/manifest.txt" | sed "s|^|$id/|"
//! done | sort > crates/sirnc-cli/tests/golden_manifests.txt
//! ```
//!
//! The hashes cover deterministic double-precision arithmetic and libm
//! calls; they are expected to be stable on a given platform/toolchain
//! family, which is where regression runs happen.

use std::collections::BTreeSet;
use std::process::Command;

#[test]
fn reproduction_outputs_match_goldens() {
    let dir = std::env::temp_dir().join(format!("sirnc_golden_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sirnc"))
        .args(["reproduce", "all", "--quiet", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());

    let mut produced = BTreeSet::new();
    for entry in std::fs::read_dir(&dir).unwrap().filter_map(Result::ok) {
        let id = entry.file_name().to_string_lossy().into_owned();
        let manifest = std::fs::read_to_string(entry.path().join("manifest.txt")).unwrap();
        for line in manifest.lines() {
            let is_hash_row = line.len() > 18
                && line.as_bytes()[..16].iter().all(u8::is_ascii_hexdigit)
                && line[16..].starts_with("  ");
            if is_hash_row {
                produced.insert(format!("{id}/{line}"));
            }
        }
    }

    let golden: BTreeSet<String> = include_str!("golden_manifests.txt")
        .lines()
        .map(str::to_string)
        .collect();

    let missing: Vec<&String> = golden.difference(&produced).collect();
    let unexpected: Vec<&String> = produced.difference(&golden).collect();
    assert!(
        missing.is_empty() && unexpected.is_empty(),
        "golden mismatch\n  missing ({}):\n    {}\n  unexpected ({}):\n    {}\n\
         regenerate tests/golden_manifests.txt if the change is intentional",
        missing.len(),
        missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n    "),
        unexpected.len(),
        unexpected.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n    "),
    );
}
