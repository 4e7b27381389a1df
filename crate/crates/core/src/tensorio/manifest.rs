use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One clip (or feature tensor) listed in a manifest. `path` is relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: String,
    pub fold: u8,
    pub duration_s: f64,
    pub channel_count: usize,
    pub checksum: String,
}

/// Tab-separated dataset listing with a declared, ordered label set.
///
/// On disk the label set is a `#labels` line (tab-separated names); other
/// lines starting with `#` are comments. Without a `#labels` line the label
/// set is the order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub label_set: Vec<String>,
}

pub const FOLDS: u8 = 4;

impl DatasetManifest {
    pub fn new(label_set: Vec<String>) -> Self {
        DatasetManifest {
            entries: Vec::new(),
            label_set,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut declared: Option<Vec<String>> = None;
        let mut label_set: Vec<String> = Vec::new();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Manifest {
                line: line_no,
                message,
            };
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#labels") {
                if declared.is_some() || !entries.is_empty() {
                    return Err(err("#labels must appear once, before any record".into()));
                }
                let labels: Vec<String> = rest
                    .split('\t')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                let unique: HashSet<_> = labels.iter().collect();
                if unique.len() != labels.len() {
                    return Err(err("duplicate label in #labels".into()));
                }
                label_set = labels.clone();
                declared = Some(labels);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 tab-separated fields, found {}", fields.len())));
            }
            let path = fields[0].to_string();
            if path.is_empty() {
                return Err(err("empty path".into()));
            }
            let label = fields[1].to_string();
            match &declared {
                Some(d) if !d.contains(&label) => {
                    return Err(err(format!("unknown label {label:?}")));
                }
                None if !label_set.contains(&label) => label_set.push(label.clone()),
                _ => {}
            }
            let fold: u8 = fields[2]
                .parse()
                .ok()
                .filter(|f| *f < FOLDS)
                .ok_or_else(|| err(format!("bad fold_id {:?} (expected 0..=3)", fields[2])))?;
            let duration_s: f64 = fields[3]
                .parse()
                .ok()
                .filter(|d: &f64| d.is_finite() && *d >= 0.0)
                .ok_or_else(|| err(format!("bad duration {:?}", fields[3])))?;
            let channel_count: usize = fields[4]
                .parse()
                .ok()
                .filter(|c| *c >= 1)
                .ok_or_else(|| err(format!("bad channel_count {:?}", fields[4])))?;
            let checksum = fields[5].to_string();
            if checksum.is_empty() || !checksum.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(err(format!("bad checksum {checksum:?}")));
            }
            if !seen.insert(path.clone()) {
                return Err(err(format!("duplicate path {path:?}")));
            }
            entries.push(ManifestEntry {
                path,
                label,
                fold,
                duration_s,
                channel_count,
                checksum,
            });
        }
        Ok(DatasetManifest { entries, label_set })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.label_set.is_empty() {
            out.push_str("#labels");
            for l in &self.label_set {
                out.push('\t');
                out.push_str(l);
            }
            out.push('\n');
        }
        out.push_str("# path\tlabel\tfold\tduration_s\tchannels\tsha256\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.path, e.label, e.fold, e.duration_s, e.channel_count, e.checksum
            );
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_text()).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
