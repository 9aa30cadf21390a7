use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "val" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub dataset_tag: DatasetTag,
    pub split: Split,
}

#[derive(Deserialize)]
struct Row {
    id: String,
    path: String,
    dataset_tag: String,
    split: String,
}

/// Reads an `id,path,dataset_tag,split` CSV.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(path, e.to_string()))?;
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::data(path, e.to_string()))?;
        let ctx = |e: Error| Error::data(path, format!("row {}: {e}", line + 1));
        let p = PathBuf::from(&row.path);
        out.push(ManifestEntry {
            id: row.id,
            path: if p.is_absolute() { p } else { base.join(p) },
            dataset_tag: row.dataset_tag.parse().map_err(ctx)?,
            split: row.split.parse().map_err(ctx)?,
        });
    }
    Ok(out)
}

/// Writes entries with paths relative to `path`'s directory when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let err = |e: csv::Error| Error::data(path, e.to_string());
    w.write_record(["id", "path", "dataset_tag", "split"]).map_err(err)?;
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        w.write_record([
            e.id.as_str(),
            &rel.to_string_lossy(),
            &e.dataset_tag.to_string(),
            &e.split.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let entries = vec![
            ManifestEntry {
                id: "a".into(),
                path: dir.path().join("poses/a.json"),
                dataset_tag: DatasetTag::Pjm,
                split: Split::Train,
            },
            ManifestEntry {
                id: "b".into(),
                path: dir.path().join("b.json"),
                dataset_tag: DatasetTag::Synthetic,
                split: Split::Test,
            },
        ];
        write_manifest(&path, &entries).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("poses/a.json,PJM,train"), "{text}");
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn bad_tag_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "id,path,dataset_tag,split\na,a.json,XYZ,train\n").unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }
}
