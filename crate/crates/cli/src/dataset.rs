use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use notasign::data::{filter_frames, parse_pose_file, read_manifest, ManifestEntry, PartGrouping, Sample, Split};
use notasign::hamnosys::Vocabulary;
use notasign::training::TrainSample;

#[derive(Debug, Clone)]
pub struct Rejection {
    pub id: String,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub entry: ManifestEntry,
    /// After frame filtering, with the manifest's id and dataset tag.
    pub sample: Sample,
}

/// Reads and filters every entry; failures are collected rather than fatal.
pub fn load_entries(entries: &[ManifestEntry], min_confidence: f64) -> (Vec<Loaded>, Vec<Rejection>) {
    let mut ok = Vec::new();
    let mut rejected = Vec::new();
    for entry in entries {
        let loaded = parse_pose_file(&entry.path).and_then(|mut s| {
            s.id = entry.id.clone();
            s.dataset_tag = entry.dataset_tag;
            filter_frames(&s, min_confidence)
        });
        match loaded {
            Ok(sample) => ok.push(Loaded {
                entry: entry.clone(),
                sample,
            }),
            Err(e) => rejected.push(Rejection {
                id: entry.id.clone(),
                path: entry.path.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (ok, rejected)
}

/// Training-ready samples with their splits, optionally restricted to one
/// split. Any unusable entry is an error.
pub fn load_splits(
    manifest: &Path,
    only: Option<Split>,
    min_confidence: f64,
    vocab: &Vocabulary,
    grouping: &PartGrouping,
    max_tokens: usize,
) -> Result<Vec<(Split, TrainSample<f64>)>> {
    let mut entries = read_manifest(manifest)?;
    if let Some(split) = only {
        entries.retain(|e| e.split == split);
    }
    if entries.is_empty() {
        let scope = only.map(|s| format!("{s} samples")).unwrap_or("samples".into());
        bail!(notasign::Error::Dataset(format!("{} lists no {scope}", manifest.display())));
    }
    let (loaded, rejected) = load_entries(&entries, min_confidence);
    if let Some(r) = rejected.first() {
        bail!(notasign::Error::Dataset(format!(
            "{} of {} samples unusable, first: {}: {}",
            rejected.len(),
            entries.len(),
            r.id,
            r.reason
        )));
    }
    loaded
        .iter()
        .map(|l| Ok((l.entry.split, TrainSample::prepare(&l.sample, vocab, grouping, max_tokens)?)))
        .collect()
}

pub fn of_split(all: &[(Split, TrainSample<f64>)], split: Split) -> Vec<TrainSample<f64>> {
    all.iter()
        .filter(|(s, _)| *s == split)
        .map(|(_, t)| t.clone())
        .collect()
}
