use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};

use notasign::data::{
    complexity_score, normalize_pose, read_manifest, stratify, write_manifest, write_pose_file, ComplexityStats,
    DatasetTag, ManifestEntry, NormalizationRecord, Stratified,
};

use super::{create_dir, write_csv};
use crate::config::RunConfig;
use crate::dataset::{load_entries, Loaded, Rejection};

struct Accepted {
    loaded: Loaded,
    stats: ComplexityStats,
    record: NormalizationRecord,
}

/// Filters frames, keeps pose files in pixel space alongside their
/// normalization records, and assigns per-dataset complexity terciles.
pub fn run(manifest: &Path, out: &Path, min_confidence: f64) -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.paths.manifest = Some(manifest.to_path_buf());
    cfg.paths.output_dir = Some(out.to_path_buf());
    cfg.data.min_confidence = min_confidence;
    if !(0.0..=1.0).contains(&min_confidence) {
        bail!(crate::UsageError(format!("min_confidence {min_confidence} not in [0, 1]")));
    }

    let entries = read_manifest(manifest)?;
    let (loaded, mut rejected) = load_entries(&entries, min_confidence);
    let mut accepted = Vec::new();
    for l in loaded {
        let checked = normalize_pose(&l.sample.pose).and_then(|(_, record)| Ok((complexity_score(&l.sample.pose)?, record)));
        match checked {
            Ok((stats, record)) => accepted.push(Accepted { loaded: l, stats, record }),
            Err(e) => rejected.push(Rejection {
                id: l.entry.id.clone(),
                path: l.entry.path.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if accepted.is_empty() {
        bail!(notasign::Error::Dataset(format!(
            "all {} samples in {} were rejected",
            entries.len(),
            manifest.display()
        )));
    }

    let mut by_dataset: BTreeMap<DatasetTag, Vec<usize>> = BTreeMap::new();
    for (i, a) in accepted.iter().enumerate() {
        by_dataset.entry(a.loaded.entry.dataset_tag).or_default().push(i);
    }
    let mut strata: Vec<Option<Stratified>> = vec![None; accepted.len()];
    for (tag, idx) in &by_dataset {
        if idx.len() < 3 {
            eprintln!("warning: {tag} has {} samples, too few for terciles; leaving unbucketed", idx.len());
            continue;
        }
        let items: Vec<(String, ComplexityStats)> =
            idx.iter().map(|&i| (accepted[i].loaded.entry.id.clone(), accepted[i].stats)).collect();
        for (&i, s) in idx.iter().zip(stratify(&items)?) {
            strata[i] = Some(s);
        }
    }

    create_dir(&out.join("poses"))?;
    let mut prepared = Vec::with_capacity(accepted.len());
    for a in &accepted {
        let path = out.join("poses").join(format!("{}.json", a.loaded.entry.id));
        write_pose_file(&path, &a.loaded.sample)?;
        prepared.push(ManifestEntry {
            path,
            ..a.loaded.entry.clone()
        });
    }
    write_manifest(&out.join("manifest.csv"), &prepared)?;

    write_csv(
        &out.join("buckets.csv"),
        &["id", "dataset", "T", "E", "J", "C", "bucket"],
        accepted.iter().zip(&strata).map(|(a, s)| {
            vec![
                a.loaded.entry.id.clone(),
                a.loaded.entry.dataset_tag.to_string(),
                a.stats.frames.to_string(),
                a.stats.energy.to_string(),
                a.stats.jerk.to_string(),
                s.as_ref().map(|s| s.score.to_string()).unwrap_or_default(),
                s.as_ref().map(|s| s.bucket.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    write_csv(
        &out.join("normalization.csv"),
        &["id", "origin_x", "origin_y", "scale"],
        accepted.iter().map(|a| {
            vec![
                a.loaded.entry.id.clone(),
                a.record.origin_x.to_string(),
                a.record.origin_y.to_string(),
                a.record.scale.to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("rejections.csv"),
        &["id", "path", "reason"],
        rejected
            .iter()
            .map(|r| vec![r.id.clone(), r.path.display().to_string(), r.reason.clone()]),
    )?;
    cfg.echo(out)?;

    for r in &rejected {
        eprintln!("rejected {}: {}", r.id, r.reason);
    }
    eprintln!("prepared {} of {} samples into {}", accepted.len(), entries.len(), out.display());
    Ok(())
}
