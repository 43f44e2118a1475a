use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

// Code fingerprint: SHA-256 over the sorted (relative path, file digest) manifest of src/.
fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let src = root.join("src");
    let mut entries = Vec::new();
    for entry in WalkDir::new(&src).into_iter().filter_map(Result::ok) {
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let rel = path
            .strip_prefix(root)
            .expect("source under manifest dir")
            .to_string_lossy()
            .replace('\\', "/");
        let bytes = fs::read(path).expect("readable source file");
        entries.push((rel, to_hex(&Sha256::digest(&bytes))));
    }
    entries.sort();
    let mut manifest = Sha256::new();
    for (rel, digest) in &entries {
        manifest.update(rel.as_bytes());
        manifest.update([0u8]);
        manifest.update(digest.as_bytes());
        manifest.update(b"\n");
    }
    let fingerprint = to_hex(&manifest.finalize());
    println!("cargo:rustc-env=PHM_CODE_FINGERPRINT={fingerprint}");
    println!("cargo:rerun-if-changed=src");
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
