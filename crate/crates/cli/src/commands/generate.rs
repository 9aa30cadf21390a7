use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;

use notasign::data::{
    denormalize_pose, filter_frames, normalize_pose, parse_pose_file, read_manifest, DatasetTag, NormalizationRecord,
    Sample, Split,
};
use notasign::model::SignModel;
use notasign::pose::{PoseSequence, POSE_DIM};
use notasign::training::checkpoint;

use super::{create_dir, write_csv};
use crate::config::RunConfig;
use crate::dataset::load_entries;
use crate::UsageError;

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Notation to generate; needs --first-frame.
    #[arg(long, conflicts_with = "manifest", requires = "first_frame")]
    pub hamnosys: Option<String>,
    /// Pose file whose first retained frame seeds the refinement.
    #[arg(long)]
    pub first_frame: Option<PathBuf>,
    #[arg(long, default_value = "generated")]
    pub id: String,
    /// Generate every listed sample, each from its own first frame.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Fixed frame count instead of the predicted length.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = notasign::data::DEFAULT_MIN_CONFIDENCE)]
    pub min_confidence: f64,
}

struct Request {
    id: String,
    notation: String,
    dataset_tag: DatasetTag,
    /// Normalized first frame and the transform back to pixels.
    seed: Result<(Vec<f64>, NormalizationRecord)>,
}

fn seed_frame(sample: &Sample, min_confidence: f64) -> Result<(Vec<f64>, NormalizationRecord)> {
    let filtered = filter_frames(sample, min_confidence)?;
    let (pose, record) = normalize_pose(&filtered.pose)?;
    Ok((pose.frame(0)[..POSE_DIM].to_vec(), record))
}

fn requests(a: &GenerateArgs) -> Result<Vec<Request>> {
    if let Some(notation) = &a.hamnosys {
        let path = a.first_frame.as_deref().expect("required by clap");
        let sample = parse_pose_file(path)?;
        return Ok(vec![Request {
            id: a.id.clone(),
            notation: notation.clone(),
            dataset_tag: sample.dataset_tag,
            seed: Ok(seed_frame(&sample, a.min_confidence)?),
        }]);
    }
    let Some(manifest) = &a.manifest else {
        bail!(UsageError("pass --hamnosys with --first-frame, or --manifest".into()));
    };
    let mut entries = read_manifest(manifest)?;
    if let Some(split) = a.split {
        entries.retain(|e| e.split == split);
    }
    // Frame filtering happens in `seed_frame`, so load unfiltered here.
    let (loaded, rejected) = load_entries(&entries, 0.0);
    let mut out: Vec<Request> = loaded
        .into_iter()
        .map(|l| Request {
            id: l.entry.id.clone(),
            notation: l.sample.hamnosys.clone(),
            dataset_tag: l.entry.dataset_tag,
            seed: seed_frame(&l.sample, a.min_confidence),
        })
        .collect();
    out.extend(rejected.into_iter().map(|r| Request {
        id: r.id,
        notation: String::new(),
        dataset_tag: DatasetTag::Synthetic,
        seed: Err(notasign::Error::Dataset(r.reason).into()),
    }));
    Ok(out)
}

fn generate_one(model: &SignModel<f64>, vocab: &notasign::hamnosys::Vocabulary, r: &Request, a: &GenerateArgs, dir: &Path) -> Result<(usize, f64)> {
    let (first, record) = match &r.seed {
        Ok(s) => s,
        Err(e) => bail!("{e:#}"),
    };
    let ids = vocab.tokenize_bounded(&r.notation, model.config.encoder.max_positions)?;
    let g = model.generate(&ids, first, a.frames)?;
    let pose = denormalize_pose(&PoseSequence::from_coords(g.coords)?, record);
    let sample = Sample {
        id: r.id.clone(),
        hamnosys: r.notation.clone(),
        pose,
        dataset_tag: r.dataset_tag,
    };
    notasign::data::write_pose_file(&dir.join(format!("{}.json", r.id)), &sample)?;
    Ok((g.frames, g.length_raw))
}

pub fn run(a: &GenerateArgs) -> Result<()> {
    let ckpt = checkpoint::load::<f64>(&a.checkpoint)?;
    if let Some(f) = a.frames {
        let b = ckpt.model.config.length_bounds;
        if !(b.l_min..=b.l_max).contains(&f) {
            bail!(UsageError(format!("--frames {f} outside [{}, {}]", b.l_min, b.l_max)));
        }
    }
    let reqs = requests(a)?;
    if reqs.is_empty() {
        bail!(notasign::Error::Dataset("nothing to generate".into()));
    }
    create_dir(&a.out)?;
    let mut rows = Vec::with_capacity(reqs.len());
    let mut failed = 0;
    for r in &reqs {
        match generate_one(&ckpt.model, &ckpt.vocabulary, r, a, &a.out) {
            Ok((frames, raw)) => rows.push(vec![r.id.clone(), frames.to_string(), raw.to_string(), String::new()]),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e:#}", r.id);
                rows.push(vec![r.id.clone(), String::new(), String::new(), format!("{e:#}")]);
            }
        }
    }
    write_csv(&a.out.join("generated.csv"), &["id", "frames", "length_raw", "error"], rows)?;
    let mut cfg = RunConfig {
        model: ckpt.model.config.clone(),
        ..RunConfig::default()
    };
    cfg.paths.manifest = a.manifest.clone();
    cfg.paths.output_dir = Some(a.out.clone());
    cfg.data.min_confidence = a.min_confidence;
    cfg.echo(&a.out)?;
    eprintln!("generated {} of {} sequences into {}", reqs.len() - failed, reqs.len(), a.out.display());
    if failed == reqs.len() {
        bail!(notasign::Error::Dataset(format!("all {failed} requests failed")));
    }
    Ok(())
}
