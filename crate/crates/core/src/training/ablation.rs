//! FFN-kind × supervision grid and the KAN depth sweep.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit, reconstruction_items, TrainConfig, TrainSample};
use crate::encoder::FfnKind;
use crate::error::{Error, Result};
use crate::eval::{reconstruction_dtw, reconstruction_ndtw};
use crate::model::ModelConfig;
use crate::nn::Parameterized;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub study: String,
    pub variant: String,
    pub ffn: FfnKind,
    pub multiscale: bool,
    /// Text-pose encoder depth.
    pub layers: usize,
}

/// Rows A to D: MLP or KAN, each with and without coarse supervision.
pub fn grid_specs(layers: usize) -> Vec<AblationSpec> {
    [
        ("A", FfnKind::Mlp, false),
        ("B", FfnKind::Mlp, true),
        ("C", FfnKind::Kan, false),
        ("D", FfnKind::Kan, true),
    ]
    .into_iter()
    .map(|(v, ffn, multiscale)| AblationSpec {
        study: "grid".into(),
        variant: v.into(),
        ffn,
        multiscale,
        layers,
    })
    .collect()
}

/// KAN text-pose encoders of each depth, with and without coarse supervision.
pub fn depth_specs(depths: &[usize]) -> Vec<AblationSpec> {
    let mut out = Vec::new();
    for &layers in depths {
        for multiscale in [false, true] {
            out.push(AblationSpec {
                study: "depth".into(),
                variant: format!("kan{layers}{}", if multiscale { "_ms" } else { "" }),
                ffn: FfnKind::Kan,
                multiscale,
                layers,
            });
        }
    }
    out
}

pub const DEFAULT_DEPTHS: [usize; 3] = [4, 6, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub study: String,
    pub variant: String,
    pub ffn: FfnKind,
    pub multiscale: bool,
    pub layers: usize,
    pub params: usize,
    pub final_loss: f64,
    pub train_dtw: f64,
    /// Restricted to keypoints detected in the ground truth.
    pub train_ndtw: f64,
    pub valid_ndtw: Option<f64>,
    pub max_coarse_grad_norm: f64,
}

pub fn spec_config(base: &ModelConfig, spec: &AblationSpec) -> ModelConfig {
    let mut cfg = base.clone().with_ffn(spec.ffn);
    cfg.multiscale = spec.multiscale;
    cfg.encoder.n_layers_text_pose = spec.layers;
    cfg
}

/// Trains one model per spec with the same data and training settings.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    specs: &[AblationSpec],
    train: &[TrainSample<T>],
    valid: Option<&[TrainSample<T>]>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let train_items = reconstruction_items(train);
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let model_cfg = spec_config(base, spec);
        let fitted = fit(&model_cfg, train, valid, cfg).map_err(|e| match e {
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("ablation {}: {context}", spec.variant),
            },
            other => other,
        })?;
        let logs = &fitted.report.logs;
        let valid_ndtw = match valid.filter(|v| !v.is_empty()) {
            Some(v) => Some(reconstruction_ndtw(&fitted.model, &reconstruction_items(v))?),
            None => None,
        };
        let row = AblationRow {
            study: spec.study.clone(),
            variant: spec.variant.clone(),
            ffn: spec.ffn,
            multiscale: spec.multiscale,
            layers: spec.layers,
            params: fitted.model.param_count(),
            final_loss: logs.last().map_or(f64::NAN, |l| l.loss_total),
            train_dtw: reconstruction_dtw(&fitted.model, &train_items)?,
            train_ndtw: reconstruction_ndtw(&fitted.model, &train_items)?,
            valid_ndtw,
            max_coarse_grad_norm: logs.iter().map(|l| l.coarse_grad_norm).fold(0.0, f64::max),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "study",
        "variant",
        "ffn",
        "multiscale",
        "layers",
        "params",
        "final_loss",
        "train_dtw",
        "train_ndtw",
        "valid_ndtw",
        "max_coarse_grad_norm",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.study.clone(),
            r.variant.clone(),
            r.ffn.to_string(),
            if r.multiscale { "on" } else { "off" }.to_string(),
            r.layers.to_string(),
            r.params.to_string(),
            r.final_loss.to_string(),
            r.train_dtw.to_string(),
            r.train_ndtw.to_string(),
            r.valid_ndtw.map(|v| v.to_string()).unwrap_or_default(),
            r.max_coarse_grad_norm.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_ablation_csv(std::io::BufWriter::new(file), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::tests::{tiny_data, tiny_model};

    #[test]
    fn spec_lists() {
        let g = grid_specs(4);
        assert_eq!(g.iter().map(|s| s.variant.as_str()).collect::<Vec<_>>(), ["A", "B", "C", "D"]);
        assert_eq!(g[3].ffn, FfnKind::Kan);
        assert!(g[3].multiscale && !g[2].multiscale);
        let d = depth_specs(&DEFAULT_DEPTHS);
        assert_eq!(d.len(), 6);
        assert!(d.iter().all(|s| s.ffn == FfnKind::Kan));
    }

    #[test]
    fn grid_runs_and_single_scale_rows_have_no_coarse_gradient() {
        let data = tiny_data(3);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 3,
            record_wall_clock: false,
            ..TrainConfig::default()
        };
        let rows = run_ablation(&tiny_model(true), &grid_specs(1), &data, None, &cfg, |_| {}).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert_eq!(r.max_coarse_grad_norm == 0.0, !r.multiscale);
        }
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
