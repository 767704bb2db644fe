//! CSV dataset manifests.
//!
//! Format: header `clip_id,audio_path,split,labels`, one row per clip.
//! The labels cell is task-dependent: `;`-separated tokens for tag /
//! class / event-time payloads, a decimal for scalar regression targets,
//! or empty.

use super::AudioIoError;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn parse(token: &str, row: usize) -> Result<Self, AudioIoError> {
        match token {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(AudioIoError::UnknownSplit { token: other.to_string(), row }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub audio_path: PathBuf,
    pub split: Split,
    /// Raw labels cell; parsed per probe task.
    pub labels: Option<String>,
}

impl ManifestEntry {
    /// `;`-separated label tokens (empty cell -> empty list).
    pub fn label_tokens(&self) -> Vec<String> {
        self.labels
            .as_deref()
            .map(|s| {
                s.split(';')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Decimal scalar target.
    pub fn label_scalar(&self) -> Option<f64> {
        self.labels.as_deref().and_then(|s| s.trim().parse().ok())
    }

    /// `;`-separated decimal times in seconds, sorted ascending.
    pub fn label_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .label_tokens()
            .iter()
            .filter_map(|t| t.parse().ok())
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times
    }
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

/// Load and validate a manifest CSV. Relative audio paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, AudioIoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| AudioIoError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::Other, e),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| AudioIoError::MalformedRow { row: 0, reason: e.to_string() })?
        .clone();
    let expected = ["clip_id", "audio_path", "split", "labels"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(AudioIoError::BadHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let record =
            row.map_err(|e| AudioIoError::MalformedRow { row: row_no, reason: e.to_string() })?;
        if record.len() != 4 {
            return Err(AudioIoError::MalformedRow {
                row: row_no,
                reason: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let clip_id = record[0].trim().to_string();
        if clip_id.is_empty() {
            return Err(AudioIoError::MalformedRow {
                row: row_no,
                reason: "empty clip_id".into(),
            });
        }
        if !seen.insert(clip_id.clone()) {
            return Err(AudioIoError::DuplicateClipId(clip_id));
        }
        let raw_path = Path::new(record[1].trim());
        let audio_path = if raw_path.is_absolute() {
            raw_path.to_path_buf()
        } else {
            base.join(raw_path)
        };
        let split = Split::parse(record[2].trim(), row_no)?;
        let labels_cell = record[3].trim();
        let labels = if labels_cell.is_empty() {
            None
        } else {
            Some(labels_cell.to_string())
        };
        entries.push(ManifestEntry { clip_id, audio_path, split, labels });
    }
    Ok(DatasetManifest { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn two_unique_rows_parse() {
        let (_dir, path) = write_manifest(
            "clip_id,audio_path,split,labels\n\
             a,a.wav,train,\n\
             b,b.wav,valid,3.5\n",
        );
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        assert_eq!(manifest.entries[0].split, Split::Train);
        assert_eq!(manifest.entries[1].label_scalar(), Some(3.5));
    }

    #[test]
    fn duplicate_clip_id_is_rejected() {
        let (_dir, path) = write_manifest(
            "clip_id,audio_path,split,labels\n\
             a,a.wav,train,\n\
             a,b.wav,valid,\n",
        );
        assert!(matches!(
            load_manifest(&path),
            Err(AudioIoError::DuplicateClipId(id)) if id == "a"
        ));
    }

    #[test]
    fn unknown_split_is_rejected() {
        let (_dir, path) = write_manifest(
            "clip_id,audio_path,split,labels\n\
             a,a.wav,dev,\n",
        );
        assert!(matches!(
            load_manifest(&path),
            Err(AudioIoError::UnknownSplit { token, row: 1 }) if token == "dev"
        ));
    }

    #[test]
    fn multi_hot_tokens_parse() {
        let (_dir, path) = write_manifest(
            "clip_id,audio_path,split,labels\n\
             a,a.wav,train,rock;jazz\n",
        );
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.entries[0].label_tokens(), vec!["rock", "jazz"]);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let (_dir, path) = write_manifest("id,path,split,labels\na,a.wav,train,\n");
        assert!(matches!(load_manifest(&path), Err(AudioIoError::BadHeader(_))));
    }
}
