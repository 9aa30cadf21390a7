use std::path::{Path, PathBuf};

use anyhow::Result;

use notasign::data::Split;
use notasign::hamnosys::Vocabulary;
use notasign::training::ablation::{depth_specs, grid_specs, run_ablation, save_ablation_csv};
use notasign::training::{checkpoint, fit_with, save_log_csv, TrainSample};

use super::{create_dir, opt};
use crate::config::{Overrides, RunConfig};
use crate::dataset::{load_splits, of_split};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

struct Setup {
    cfg: RunConfig,
    vocab: Vocabulary,
    out: PathBuf,
    train: Vec<TrainSample<f64>>,
    valid: Vec<TrainSample<f64>>,
}

fn setup(o: &Overrides) -> Result<Setup> {
    let mut cfg = RunConfig::resolve(o)?;
    let vocab = cfg.vocabulary()?;
    cfg.finalize(&vocab)?;
    let grouping = cfg.grouping()?;
    let out = cfg.output_dir()?.to_path_buf();
    let all = load_splits(
        cfg.manifest()?,
        None,
        cfg.data.min_confidence,
        &vocab,
        &grouping,
        cfg.model.encoder.max_positions,
    )?;
    let train = of_split(&all, Split::Train);
    let valid = of_split(&all, Split::Dev);
    create_dir(&out)?;
    cfg.echo(&out)?;
    Ok(Setup {
        cfg,
        vocab,
        out,
        train,
        valid,
    })
}

fn valid_set(v: &[TrainSample<f64>]) -> Option<&[TrainSample<f64>]> {
    (!v.is_empty()).then_some(v)
}

pub fn run(o: &Overrides) -> Result<()> {
    let s = setup(o)?;
    eprintln!(
        "training on {} samples ({} validation), {} epochs",
        s.train.len(),
        s.valid.len(),
        s.cfg.train.epochs
    );
    let fitted = fit_with(&s.cfg.model, &s.train, valid_set(&s.valid), &s.cfg.train, |log, _| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  refine {:.6}  coarse {:.6}  len {:.6}  valid {}",
            log.epoch,
            log.loss_total,
            log.loss_refine,
            log.loss_coarse,
            log.loss_len,
            opt(log.valid_dtw)
        );
    })?;
    let report = &fitted.report;
    let epoch = report.best_epoch.unwrap_or(report.final_epoch());
    checkpoint::save(&s.out.join(CHECKPOINT_FILE), &fitted.model, &s.vocab, epoch, report.best_metric)?;
    save_log_csv(&s.out.join(LOG_FILE), &report.logs)?;
    eprintln!("saved epoch {epoch} to {}", s.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

pub fn ablate(o: &Overrides, depths: &[usize], skip_depth: bool) -> Result<()> {
    let s = setup(o)?;
    let mut specs = grid_specs(s.cfg.model.encoder.n_layers_text_pose);
    if !skip_depth {
        specs.extend(depth_specs(depths));
    }
    eprintln!("{} runs of {} epochs on {} samples", specs.len(), s.cfg.train.epochs, s.train.len());
    let rows = run_ablation(&s.cfg.model, &specs, &s.train, valid_set(&s.valid), &s.cfg.train, |r| {
        eprintln!(
            "{} {}: params {}  loss {:.6}  train nDTW {:.6}",
            r.study, r.variant, r.params, r.final_loss, r.train_ndtw
        );
    })?;
    let path: &Path = &s.out.join(ABLATION_FILE);
    save_ablation_csv(path, &rows)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
