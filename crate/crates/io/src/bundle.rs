//! Result bundles: a manifest plus a reproducible ZIP archive.

use std::io::{Cursor, Read, Write};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::FormatError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl BundleFile {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_entry(name: &str, bytes: &[u8]) -> Value {
    json!({ "name": name, "sha256": sha256_hex(bytes), "bytes": bytes.len() })
}

/// Manifest text: `head` fields first, then every file with its digest, in
/// name order.
pub fn manifest_json(head: serde_json::Map<String, Value>, files: &[BundleFile]) -> Vec<u8> {
    let mut sorted: Vec<&BundleFile> = files.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut doc = head;
    doc.insert(
        "members".into(),
        Value::Array(sorted.iter().map(|f| digest_entry(&f.name, &f.bytes)).collect()),
    );
    let mut text = serde_json::to_vec_pretty(&Value::Object(doc)).expect("manifest serializes");
    text.push(b'\n');
    text
}

/// Packs files into a ZIP with members sorted by name and every timestamp
/// pinned to the format's epoch (1980-01-01 00:00:00).
pub fn bundle_zip(files: &[BundleFile]) -> Vec<u8> {
    assert!(!files.is_empty(), "a bundle needs at least one file");
    let mut sorted: Vec<&BundleFile> = files.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    for f in sorted {
        zip.start_file(f.name.as_str(), options).expect("in-memory zip");
        zip.write_all(&f.bytes).expect("in-memory zip");
    }
    zip.finish().expect("in-memory zip").into_inner()
}

/// Members of an archive in stored order.
pub fn unzip(bytes: &[u8]) -> Result<Vec<BundleFile>, FormatError> {
    let bad = |e: zip::result::ZipError| FormatError::InvalidDocument {
        what: "zip archive",
        reason: e.to_string(),
    };
    let mut archive = ZipArchive::new(Cursor::new(bytes)).map_err(bad)?;
    let mut out = Vec::with_capacity(archive.len());
    for i in 0..archive.len() {
        let mut f = archive.by_index(i).map_err(bad)?;
        let mut data = Vec::new();
        f.read_to_end(&mut data).map_err(|e| FormatError::InvalidDocument {
            what: "zip archive",
            reason: e.to_string(),
        })?;
        let name = f.name().map_err(bad)?.to_string();
        out.push(BundleFile::new(name, data));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_reproducible() {
        let files = vec![
            BundleFile::new("b.csv", b"2".to_vec()),
            BundleFile::new("a.csv", b"1".to_vec()),
        ];
        let z = bundle_zip(&files);
        assert_eq!(z, bundle_zip(&files));
        let back = unzip(&z).unwrap();
        assert_eq!(back.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(), ["a.csv", "b.csv"]);
        assert_eq!(back[1].bytes, b"2");
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
