use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use notasign::data::{DatasetTag, PartGrouping, Split};
use notasign::eval::{
    benchmark, count_params, distance_rank, dtw_mje, length_metrics, ndtw_mje, BenchItem, Benchmark, LengthErrors,
    RankResult,
};
use notasign::nn::Parameterized;
use notasign::pose::PoseSequence;
use notasign::training::checkpoint;

use super::{create_dir, write_csv};
use crate::config::RunConfig;
use crate::dataset::{load_splits, of_split};

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Score the ground truth against itself instead of generating.
    #[arg(long)]
    pub ground_truth: bool,
    /// Timed repetitions for the speed benchmark; 0 skips it.
    #[arg(long, default_value_t = 5)]
    pub bench_reps: usize,
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    #[arg(long, default_value_t = notasign::data::DEFAULT_MIN_CONFIDENCE)]
    pub min_confidence: f64,
}

#[derive(Debug, Serialize)]
struct SampleScore {
    id: String,
    dataset: DatasetTag,
    gt_frames: usize,
    pred_frames: usize,
    length_raw: f64,
    dtw_mje: f64,
    ndtw_mje: f64,
}

#[derive(Debug, Serialize)]
struct ScopeScore {
    /// A dataset tag or `overall`.
    scope: String,
    count: usize,
    dtw_mje: f64,
    ndtw_mje: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    checkpoint: PathBuf,
    split: Split,
    ground_truth: bool,
    params: usize,
    param_groups: Vec<(String, usize)>,
    scores: Vec<ScopeScore>,
    rank: RankResult,
    length: Vec<(String, LengthErrors)>,
    timing: Option<Benchmark>,
    samples: Vec<SampleScore>,
}

fn scope_scores(samples: &[SampleScore]) -> Vec<ScopeScore> {
    let mut groups: BTreeMap<DatasetTag, Vec<&SampleScore>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.dataset).or_default().push(s);
    }
    let summarize = |scope: String, rows: &[&SampleScore]| {
        let n = rows.len() as f64;
        ScopeScore {
            scope,
            count: rows.len(),
            dtw_mje: rows.iter().map(|r| r.dtw_mje).sum::<f64>() / n,
            ndtw_mje: rows.iter().map(|r| r.ndtw_mje).sum::<f64>() / n,
        }
    };
    let mut out: Vec<ScopeScore> = groups.iter().map(|(t, rows)| summarize(t.to_string(), rows)).collect();
    out.push(summarize("overall".into(), &samples.iter().collect::<Vec<_>>()));
    out
}

pub fn run(a: &EvaluateArgs) -> Result<()> {
    let ckpt = checkpoint::load::<f64>(&a.checkpoint)?;
    let model = &ckpt.model;
    let grouping = match &a.grouping {
        Some(p) => PartGrouping::load(p)?,
        None => PartGrouping::default(),
    };
    let all = load_splits(
        &a.manifest,
        Some(a.split),
        a.min_confidence,
        &ckpt.vocabulary,
        &grouping,
        model.config.encoder.max_positions,
    )?;
    let data = of_split(&all, a.split);

    let mut preds = Vec::with_capacity(data.len());
    let mut samples = Vec::with_capacity(data.len());
    for s in &data {
        let (pred, length_raw) = if a.ground_truth {
            (s.pose.clone(), s.frames() as f64)
        } else {
            let g = model.generate(&s.tokens, s.first_frame(), None)?;
            (PoseSequence::from_coords(g.coords)?, g.length_raw)
        };
        samples.push(SampleScore {
            id: s.id.clone(),
            dataset: s.dataset_tag,
            gt_frames: s.frames(),
            pred_frames: pred.frames(),
            length_raw,
            dtw_mje: dtw_mje(&pred, &s.pose)?.distance,
            ndtw_mje: ndtw_mje(&pred, &s.pose)?.distance,
        });
        preds.push(pred);
    }
    let labels: Vec<PoseSequence<f64>> = data.iter().map(|s| s.pose.clone()).collect();
    let rank = distance_rank(&preds, &labels)?;
    let length_items: Vec<(DatasetTag, f64, usize)> =
        samples.iter().map(|s| (s.dataset, s.length_raw, s.gt_frames)).collect();
    let length: Vec<(String, LengthErrors)> = length_metrics(&length_items, model.config.length_bounds)?
        .into_iter()
        .map(|(t, e)| (t.map_or("overall".into(), |t| t.to_string()), e))
        .collect();
    let timing = if a.bench_reps == 0 {
        None
    } else {
        let batch: Vec<BenchItem<'_, f64>> = data
            .iter()
            .map(|s| BenchItem {
                tokens: &s.tokens,
                first_frame: s.first_frame(),
                frames: s.frames(),
            })
            .collect();
        Some(benchmark(model, &batch, a.bench_reps)?)
    };

    let report = Report {
        checkpoint: a.checkpoint.clone(),
        split: a.split,
        ground_truth: a.ground_truth,
        params: model.param_count(),
        param_groups: count_params(model),
        scores: scope_scores(&samples),
        rank,
        length,
        timing,
        samples,
    };
    write_outputs(a, &report)?;

    let mut cfg = RunConfig {
        model: model.config.clone(),
        ..RunConfig::default()
    };
    cfg.paths.manifest = Some(a.manifest.clone());
    cfg.paths.output_dir = Some(a.out.clone());
    cfg.paths.grouping = a.grouping.clone();
    cfg.data.min_confidence = a.min_confidence;
    cfg.echo(&a.out)?;

    for s in &report.scores {
        eprintln!("{:<10} n={:<4} DTW-MJE {:.6}  nDTW-MJE {:.6}", s.scope, s.count, s.dtw_mje, s.ndtw_mje);
    }
    eprintln!(
        "rank-1 {:.3} / {:.3}, params {}",
        report.rank.pred_to_label[0], report.rank.label_to_pred[0], report.params
    );
    Ok(())
}

fn write_outputs(a: &EvaluateArgs, r: &Report) -> Result<()> {
    let out = &a.out;
    create_dir(out)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(r)?)?;
    write_csv(
        &out.join("metrics.csv"),
        &["scope", "count", "dtw_mje", "ndtw_mje"],
        r.scores
            .iter()
            .map(|s| vec![s.scope.clone(), s.count.to_string(), s.dtw_mje.to_string(), s.ndtw_mje.to_string()]),
    )?;
    write_csv(
        &out.join("samples.csv"),
        &["id", "dataset", "gt_frames", "pred_frames", "length_raw", "dtw_mje", "ndtw_mje"],
        r.samples.iter().map(|s| {
            vec![
                s.id.clone(),
                s.dataset.to_string(),
                s.gt_frames.to_string(),
                s.pred_frames.to_string(),
                s.length_raw.to_string(),
                s.dtw_mje.to_string(),
                s.ndtw_mje.to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("rank.csv"),
        &["k", "pred_to_label", "label_to_pred"],
        (0..r.rank.ks.len()).map(|i| {
            vec![
                r.rank.ks[i].to_string(),
                r.rank.pred_to_label[i].to_string(),
                r.rank.label_to_pred[i].to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("length.csv"),
        &["scope", "count", "mae_raw", "mse_raw", "mae_clipped", "mse_clipped"],
        r.length.iter().map(|(scope, e)| {
            vec![
                scope.clone(),
                e.count.to_string(),
                e.mae_raw.to_string(),
                e.mse_raw.to_string(),
                e.mae_clipped.to_string(),
                e.mse_clipped.to_string(),
            ]
        }),
    )?;
    let mut params: Vec<Vec<String>> = r.param_groups.iter().map(|(k, n)| vec![k.clone(), n.to_string()]).collect();
    params.push(vec!["total".into(), r.params.to_string()]);
    write_csv(&out.join("params.csv"), &["group", "params"], params)?;
    if let Some(t) = &r.timing {
        write_csv(
            &out.join("timing.csv"),
            &["batch_size", "inference_ms", "seconds_per_epoch"],
            [vec![t.batch_size.to_string(), t.inference_ms.to_string(), t.seconds_per_epoch.to_string()]],
        )?;
    }
    Ok(())
}
