use std::path::Path;

use anyhow::{bail, Result};

use notasign::encoder::{EncoderStack, FeedForward};
use notasign::kan::{dominant_output, input_importance, rank_inputs, response_curve, KanFfn};
use notasign::training::checkpoint;

use super::{create_dir, write_csv};
use crate::config::RunConfig;
use crate::UsageError;

/// 121 points from −3 to 3 in steps of 0.05.
pub fn curve_grid() -> Vec<f64> {
    (0..=120).map(|i| (i as f64 - 60.0) / 20.0).collect()
}

fn kan_blocks<'a>(stack: &'a EncoderStack<f64>, label: &'static str, out: &mut Vec<(&'static str, usize, &'a KanFfn<f64>)>) {
    for (i, b) in stack.blocks.iter().enumerate() {
        if let FeedForward::Kan(k) = &b.ffn {
            out.push((label, i, k));
        }
    }
}

pub fn run(checkpoint_path: &Path, out: &Path, top: usize) -> Result<()> {
    let ckpt = checkpoint::load::<f64>(checkpoint_path)?;
    let model = &ckpt.model;
    let mut ffns = Vec::new();
    kan_blocks(&model.text.encoder, "text", &mut ffns);
    kan_blocks(&model.generator.encoder, "text_pose", &mut ffns);
    if ffns.is_empty() {
        bail!(UsageError(format!(
            "{} has MLP feed-forward layers only (text encoder {}, text-pose encoder {}); nothing to inspect",
            checkpoint_path.display(),
            model.config.encoder.text_ffn_kind,
            model.config.encoder.ffn_kind
        )));
    }

    let xs = curve_grid();
    let mut importance_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for (stack, block, ffn) in &ffns {
        for (li, layer) in ffn.layers.iter().enumerate() {
            let imp = input_importance(layer);
            let order = rank_inputs(&imp);
            for (rank, &dim) in order.iter().take(top).enumerate() {
                importance_rows.push(vec![
                    stack.to_string(),
                    block.to_string(),
                    li.to_string(),
                    rank.to_string(),
                    dim.to_string(),
                    imp[dim].to_string(),
                ]);
            }
            let dim = order[0];
            let channel = dominant_output(layer, dim)?;
            let ys = response_curve(ffn, li, dim, channel, &xs)?;
            for (x, y) in xs.iter().zip(ys) {
                curve_rows.push(vec![
                    stack.to_string(),
                    block.to_string(),
                    li.to_string(),
                    dim.to_string(),
                    channel.to_string(),
                    x.to_string(),
                    y.to_string(),
                ]);
            }
        }
    }
    create_dir(out)?;
    write_csv(
        &out.join("importance.csv"),
        &["encoder", "block", "layer", "rank", "input", "importance"],
        importance_rows,
    )?;
    write_csv(
        &out.join("response_curves.csv"),
        &["encoder", "block", "layer", "input", "output", "x", "y"],
        curve_rows,
    )?;
    let mut cfg = RunConfig {
        model: model.config.clone(),
        ..RunConfig::default()
    };
    cfg.paths.output_dir = Some(out.to_path_buf());
    cfg.echo(out)?;
    eprintln!("inspected {} KAN feed-forward blocks into {}", ffns.len(), out.display());
    Ok(())
}
